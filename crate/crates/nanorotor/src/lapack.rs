//! Thin safe wrappers over the two LAPACK eigensolvers the oracle needs.

use std::os::raw::{c_char, c_int};

use crate::oracle::OracleError;

fn to_int(n: usize) -> Result<c_int, OracleError> {
    c_int::try_from(n).map_err(|_| OracleError::Invalid(format!("dimension {n} exceeds LAPACK integer range")))
}

/// Eigen-decomposition of a dense real symmetric `n × n` matrix stored
/// column-major in `a`. On return `a` holds the eigenvectors as columns.
pub(crate) fn symmetric_eigen(a: &mut [f64], n: usize) -> Result<Vec<f64>, OracleError> {
    assert_eq!(a.len(), n * n);
    let ni = to_int(n)?;
    let mut w = vec![0.0; n];
    let mut info: c_int = 0;
    let (mut wq, mut iwq): (f64, c_int) = (0.0, 0);
    let jobz = b'V' as c_char;
    let uplo = b'U' as c_char;
    unsafe {
        lapack_sys::dsyevd_(
            &jobz, &uplo, &ni, a.as_mut_ptr(), &ni.max(1), w.as_mut_ptr(), &mut wq, &-1, &mut iwq, &-1, &mut info,
        );
    }
    if info != 0 {
        return Err(OracleError::Lapack { routine: "dsyevd", info });
    }
    let lwork = (wq as c_int).max(1);
    let liwork = iwq.max(1);
    let mut work = vec![0.0; lwork as usize];
    let mut iwork = vec![0 as c_int; liwork as usize];
    unsafe {
        lapack_sys::dsyevd_(
            &jobz,
            &uplo,
            &ni,
            a.as_mut_ptr(),
            &ni.max(1),
            w.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(OracleError::Lapack { routine: "dsyevd", info });
    }
    Ok(w)
}

/// All eigenpairs of the symmetric tridiagonal matrix with diagonal `d`
/// and off-diagonal `e` (`e.len() == d.len() − 1`) by the MRRR algorithm.
/// Returns eigenvalues and column-major eigenvectors.
pub(crate) fn tridiagonal_eigen(mut d: Vec<f64>, e: &[f64]) -> Result<(Vec<f64>, Vec<f64>), OracleError> {
    let n = d.len();
    assert!(e.len() + 1 == n || n == 0);
    if n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let ni = to_int(n)?;
    let mut ee = e.to_vec();
    ee.push(0.0);
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n * n];
    let mut isuppz = vec![0 as c_int; 2 * n];
    let (mut m, mut tryrac, mut info): (c_int, c_int, c_int) = (0, 1, 0);
    let lwork = to_int(18 * n)?;
    let liwork = to_int(10 * n)?;
    let mut work = vec![0.0; 18 * n];
    let mut iwork = vec![0 as c_int; 10 * n];
    let (jobz, range) = (b'V' as c_char, b'A' as c_char);
    unsafe {
        lapack_sys::dstemr_(
            &jobz,
            &range,
            &ni,
            d.as_mut_ptr(),
            ee.as_mut_ptr(),
            &0.0,
            &0.0,
            &0,
            &0,
            &mut m,
            w.as_mut_ptr(),
            z.as_mut_ptr(),
            &ni,
            &ni,
            isuppz.as_mut_ptr(),
            &mut tryrac,
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 || m != ni {
        return Err(OracleError::Lapack { routine: "dstemr", info });
    }
    Ok((w, z))
}
