//! Bracketed scalar root finding.

use crate::{Error, Result};

/// Bisection on `[lo, hi]` until the bracket width falls below
/// `rel_tol · max(|lo|, |hi|)`.
///
/// The function must change sign over the bracket. An exact zero at either
/// end is returned as is.
pub fn bisect<F>(mut f: F, lo: f64, hi: f64, rel_tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameter {
            name: "bracket",
            reason: "must satisfy lo < hi with finite ends",
        });
    }
    let (mut a, mut b) = (lo, hi);
    let (mut fa, fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.is_nan() || fb.is_nan() || fa.signum() == fb.signum() {
        return Err(Error::NoRootInBracket { lo, hi });
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if b - a <= rel_tol * libm::fmax(libm::fabs(a), libm::fabs(b)) {
            return Ok(m);
        }
        let fm = f(m);
        if fm == 0.0 {
            return Ok(m);
        }
        if fm.is_nan() {
            return Err(Error::NoRootInBracket { lo, hi });
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}
