//! Closed-form spin-echo probability.
//!
//! On each spin branch a libration mode evolves under
//! `H↑ = ω·n` or `H↓ = ω·n − (χ/2)(a + a†)²`. With `K₊ = a†²/2`,
//! `K₋ = a²/2`, `K₀ = (2n + 1)/4` the branch propagator factorizes as
//!
//! ```text
//! U↓(τ) = e^{iωτ/2} · exp(η·a†²/2) · η₀^{K₀} · exp(η·a²/2)
//! ```
//!
//! and the echo operator `U↓†U↑†U↓U↑` is `exp(φ·a†²/2)·θ^{K₀}·exp(ψ·a²/2)`.
//! Its thermal expectation is a Gaussian integral whose square root has
//! to be followed continuously in τ, which is why overlaps are evaluated
//! along paths ([`OverlapPath`]).

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::system::{Branch, DispersiveRates};
use crate::{Error, Result};

const I: Complex64 = Complex64::new(0.0, 1.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Normal-ordered factorization parameters of `U↓(τ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Su11Factor {
    pub eta: Complex64,
    pub eta0: Complex64,
    pub zeta: Complex64,
    pub lambda0: Complex64,
    pub lambda: Complex64,
    /// `η₀^{1/2}`, fixed unambiguously by the two-dimensional
    /// representation. `η₀ = half_power²`.
    pub half_power: Complex64,
}

/// Factorization of `exp(λ₀K₀ + λ(K₊ + K₋))` with `λ₀ = −2iτ(ω − χ)`,
/// `λ = iχτ`.
pub fn branch_factorization(freq: f64, chi: f64, tau: f64) -> Result<Su11Factor> {
    if !(freq > 0.0 && freq.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "freq",
            reason: "must be finite and positive",
        });
    }
    if !(tau >= 0.0 && tau.is_finite()) || !chi.is_finite() {
        return Err(Error::InvalidParameter {
            name: "tau",
            reason: "tau must be finite and non-negative, chi finite",
        });
    }
    let lambda0 = Complex64::new(0.0, -2.0 * tau * (freq - chi));
    let lambda = Complex64::new(0.0, chi * tau);
    let half = lambda0 / 2.0;
    let zeta = (half * half - lambda * lambda).sqrt();

    // m22 = cosh ζ − (λ₀/2)·sinh ζ/ζ is the lower-right entry of the 2×2
    // representation; η = λ·(sinh ζ/ζ)/m22, η₀ = 1/m22².
    let (eta, half_power) = if zeta.re.abs() < 20.0 {
        let sinhc = sinhc(zeta);
        let m22 = zeta.cosh() - half * sinhc;
        if m22.norm() < 1e-14 {
            return Err(Error::SingularFactorization { tau });
        }
        (lambda * sinhc / m22, ONE / m22)
    } else {
        // ζ² is real, so here ζ is real and cosh would overflow; divide
        // through by it.
        let zr = zeta.re;
        let tc = Complex64::from(libm::tanh(zr) / zr);
        let d = ONE - half * tc;
        if d.norm() < 1e-14 {
            return Err(Error::SingularFactorization { tau });
        }
        (lambda * tc / d, (ONE / d) * (1.0 / libm::cosh(zr)))
    };
    Ok(Su11Factor {
        eta,
        eta0: half_power * half_power,
        zeta,
        lambda0,
        lambda,
        half_power,
    })
}

fn sinhc(z: Complex64) -> Complex64 {
    if z.norm() < 1e-4 {
        let z2 = z * z;
        ONE + z2 / 6.0 + z2 * z2 / 120.0
    } else {
        z.sinh() / z
    }
}

/// Parameters of the echo operator `U↓†U↑†U↓U↑`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EchoKernel {
    pub phi: Complex64,
    pub theta: Complex64,
    pub psi: Complex64,
    /// Shared denominator `1 − |η|²·e^{2iωτ}`.
    pub denominator: Complex64,
}

pub fn echo_kernel(f: &Su11Factor, freq: f64, tau: f64) -> Result<EchoKernel> {
    let rot = (2.0 * I * freq * tau).exp();
    // 1 − |η|² = |η₀| exactly; using it avoids cancellation once |η| → 1.
    let half_turn = (I * freq * tau).exp();
    let one_minus_rot = -2.0 * I * libm::sin(freq * tau) * half_turn;
    let den = f.eta0.norm() + f.eta.norm_sqr() * one_minus_rot;
    if den.norm() < 1e-14 {
        return Err(Error::EchoPole { tau });
    }
    Ok(EchoKernel {
        phi: f.eta.conj() + f.eta0.conj() * f.eta * rot / den,
        theta: Complex64::from(f.eta0.norm_sqr()) / (den * den),
        psi: f.eta * rot.conj() + f.eta.conj() * f.eta0 / den,
        denominator: den,
    })
}

/// Thermal overlap together with the tracked square root it was built on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overlap {
    pub value: Complex64,
    /// The branch of `√Q` that was selected; feed it back as the reference
    /// for the next point on the path.
    pub root: Complex64,
}

/// `I = √g / √Q` with `g = |η₀| / (1 − |η|²e^{2iωτ})` and
/// `Q = [n̄(1 − g) + 1]² − n̄²·φψ`.
///
/// `√g` is the principal root (Re g > 0 always). The sign of `√Q` is the
/// one closest to `reference_root`, the root at the previous path point;
/// at τ = 0 it is 1.
pub fn thermal_overlap(k: &EchoKernel, f: &Su11Factor, n_bar: f64, reference_root: Complex64) -> Overlap {
    let g = Complex64::from(f.eta0.norm()) / k.denominator;
    let a = n_bar * (ONE - g) + ONE;
    let q = a * a - n_bar * n_bar * k.phi * k.psi;
    let mut root = q.sqrt();
    if (root - reference_root).norm() > (root + reference_root).norm() {
        root = -root;
    }
    Overlap {
        value: g.sqrt() / root,
        root,
    }
}

/// Evaluates the overlap of one mode along increasing τ, keeping the
/// square-root branch continuous from `I(0) = 1`.
#[derive(Debug, Clone)]
pub struct OverlapPath {
    freq: f64,
    chi: f64,
    n_bar: f64,
    tau: f64,
    root: Complex64,
    value: Complex64,
    max_step: f64,
}

impl OverlapPath {
    /// Largest tolerated phase jump of the tracked root between two steps.
    const MAX_TURN: f64 = PI / 8.0;

    pub fn new(freq: f64, chi: f64, n_bar: f64) -> Result<Self> {
        if !(n_bar >= 0.0 && n_bar.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "n_bar",
                reason: "must be finite and non-negative",
            });
        }
        branch_factorization(freq, chi, 0.0)?;
        let scale = freq.max(chi.abs()).max((freq - chi).abs());
        Ok(Self {
            freq,
            chi,
            n_bar,
            tau: 0.0,
            root: ONE,
            value: ONE,
            max_step: PI / (64.0 * scale),
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn value(&self) -> Complex64 {
        self.value
    }

    /// Moves the path to `tau` and returns the overlap there.
    ///
    /// Steps are at most `π/(64·max(ω, |χ|, |ω − χ|))` and are halved
    /// whenever the tracked root turns by more than π/8.
    pub fn advance_to(&mut self, tau: f64) -> Result<Complex64> {
        if !(tau >= self.tau) || !tau.is_finite() {
            return Err(Error::BranchTracking { tau });
        }
        let mut h = self.max_step;
        let min_step = self.max_step * 1e-9;
        while self.tau < tau {
            let t = if tau - self.tau <= h { tau } else { self.tau + h };
            let o = self.evaluate(t, self.root)?;
            let turn = (o.root / self.root).arg().abs();
            if turn > Self::MAX_TURN {
                if h < min_step {
                    return Err(Error::BranchTracking { tau: t });
                }
                h *= 0.5;
                continue;
            }
            self.tau = t;
            self.root = o.root;
            self.value = o.value;
            if turn < Self::MAX_TURN / 4.0 {
                h = (2.0 * h).min(self.max_step);
            }
        }
        Ok(self.value)
    }

    fn evaluate(&self, tau: f64, reference: Complex64) -> Result<Overlap> {
        let f = branch_factorization(self.freq, self.chi, tau)?;
        let k = echo_kernel(&f, self.freq, tau)?;
        Ok(thermal_overlap(&k, &f, self.n_bar, reference))
    }
}

/// Overlap at a single τ; the continuity path from 0 is built internally.
pub fn thermal_overlap_at(freq: f64, chi: f64, n_bar: f64, tau: f64) -> Result<Complex64> {
    OverlapPath::new(freq, chi, n_bar)?.advance_to(tau)
}

/// Occupation of a mode at `freq_beta` in equilibrium with a mode at
/// `freq_gamma` holding `n_gamma` quanta.
pub fn thermal_occupation_transfer(n_gamma: f64, freq_beta: f64, freq_gamma: f64) -> f64 {
    if n_gamma == 0.0 {
        return 0.0;
    }
    if freq_beta == freq_gamma {
        return n_gamma;
    }
    let r = freq_beta / freq_gamma;
    1.0 / libm::expm1(r * libm::log1p(1.0 / n_gamma))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalSpec {
    pub n_gamma: f64,
    pub n_beta: f64,
}

impl ThermalSpec {
    pub fn new(n_gamma: f64, n_beta: f64) -> Result<Self> {
        for (name, v) in [("n_gamma", n_gamma), ("n_beta", n_beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: "must be finite and non-negative",
                });
            }
        }
        Ok(Self { n_gamma, n_beta })
    }

    /// β occupation at the temperature of the γ mode.
    pub fn equal_temperature(n_gamma: f64, rates: &DispersiveRates) -> Result<Self> {
        Self::new(
            n_gamma,
            thermal_occupation_transfer(n_gamma, rates.freq_beta, rates.freq_gamma),
        )
    }
}

/// Markovian qubit dephasing, `Γ₂ = 2π/T₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DephasingSpec {
    /// s; infinite without dephasing.
    pub t2: f64,
    /// rad/s
    pub gamma2: f64,
}

impl DephasingSpec {
    pub fn none() -> Self {
        Self {
            t2: f64::INFINITY,
            gamma2: 0.0,
        }
    }

    pub fn from_t2(t2: f64) -> Result<Self> {
        if !(t2 > 0.0) {
            return Err(Error::InvalidParameter {
                name: "t2",
                reason: "must be positive",
            });
        }
        Ok(if t2.is_infinite() {
            Self::none()
        } else {
            Self {
                t2,
                gamma2: 2.0 * PI / t2,
            }
        })
    }

    pub fn from_rate(gamma2: f64) -> Result<Self> {
        if !(gamma2 >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "gamma2",
                reason: "must be non-negative",
            });
        }
        Ok(Self {
            t2: if gamma2 == 0.0 { f64::INFINITY } else { 2.0 * PI / gamma2 },
            gamma2,
        })
    }

    /// `e^{−2Γ₂τ}`, with the τ = 0 value fixed to 1 even for infinite Γ₂.
    pub fn decay(&self, tau: f64) -> f64 {
        if tau == 0.0 {
            1.0
        } else {
            libm::exp(-2.0 * self.gamma2 * tau)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbabilityPoint {
    pub tau: f64,
    pub p_up: f64,
    pub p_down: f64,
    pub overlap_beta: Complex64,
    pub overlap_gamma: Complex64,
}

impl ProbabilityPoint {
    /// `P↑ = 1/2 + (e^{−2Γ₂τ}/2)·Re(I_β·I_γ)`, `P↓ = 1 − P↑`.
    pub fn combine(tau: f64, overlap_beta: Complex64, overlap_gamma: Complex64, deph: &DephasingSpec) -> Self {
        let interference = (overlap_beta * overlap_gamma).re;
        let p_up = (0.5 + 0.5 * deph.decay(tau) * interference).clamp(0.0, 1.0);
        Self {
            tau,
            p_up,
            p_down: 1.0 - p_up,
            overlap_beta,
            overlap_gamma,
        }
    }
}

/// Probability at one τ.
pub fn protocol_probability(
    rates: &DispersiveRates,
    thermal: &ThermalSpec,
    deph: &DephasingSpec,
    tau: f64,
    include_beta: bool,
) -> Result<ProbabilityPoint> {
    Ok(protocol_trace(rates, thermal, deph, &[tau], include_beta)?[0])
}

/// Probabilities along a non-decreasing τ grid.
///
/// On the Δ < 0 branch the roles of the spin states are swapped; the echo
/// trace is then the complex conjugate of the Δ > 0 expression, so the
/// probability is unchanged in form.
pub fn protocol_trace(
    rates: &DispersiveRates,
    thermal: &ThermalSpec,
    deph: &DephasingSpec,
    taus: &[f64],
    include_beta: bool,
) -> Result<Vec<ProbabilityPoint>> {
    if include_beta && rates.branch == Branch::PositiveDelta && !rates.beta_stable() {
        return Err(Error::UnstableBeta {
            freq: rates.freq_beta,
            chi: rates.chi_beta,
        });
    }
    let mut gamma = OverlapPath::new(rates.freq_gamma, rates.chi_gamma, thermal.n_gamma)?;
    let mut beta = if include_beta {
        Some(OverlapPath::new(rates.freq_beta, rates.chi_beta, thermal.n_beta)?)
    } else {
        None
    };
    let mut out = Vec::with_capacity(taus.len());
    for &tau in taus {
        let ig = gamma.advance_to(tau)?;
        let ib = match beta.as_mut() {
            Some(p) => p.advance_to(tau)?,
            None => ONE,
        };
        out.push(ProbabilityPoint::combine(tau, ib, ig, deph));
    }
    Ok(out)
}
