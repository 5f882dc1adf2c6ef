//! Brute-force echo traces in a truncated number basis.
//!
//! The mode Hamiltonians are `h_up = ω·n` and
//! `h_down = ω·n − (χ/2)(a + a†)²`, built from the truncated lowering
//! matrix. The echo trace `Tr[U↓†U↑†U↓U↑ ρ]` of a thermal state is
//! computed by exact diagonalization, and the truncation is doubled until
//! the trace stops moving.
//!
//! For the convergence runs `h_down` is split into its even and odd
//! number-parity blocks, each tridiagonal. With `ρ` and `U↑` diagonal,
//!
//! ```text
//! Tr[U↓†U↑†U↓U↑ρ] = Σₙ pₙ e^{−iωnτ} Σₘ |(U↓)ₘₙ|² e^{iωmτ}
//! ```
//!
//! so only the columns of `U↓` with non-negligible thermal weight are
//! formed.

use nalgebra::DMatrix;
use nanorotor_core::su11::{branch_factorization, ProbabilityPoint, Su11Factor, ThermalSpec, DephasingSpec};
use nanorotor_core::system::{Branch, DispersiveRates};
use nanorotor_core::Complex64;
use rayon::prelude::*;

use crate::lapack;

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error(transparent)]
    Model(#[from] nanorotor_core::Error),
    #[error("invalid oracle input: {0}")]
    Invalid(String),
    #[error("LAPACK {routine} failed (info = {info})")]
    Lapack { routine: &'static str, info: i32 },
    #[error("thermal truncation at dim {dim} discards weight {loss:e} (limit 1e-6)")]
    TruncationLoss { dim: usize, loss: f64 },
    #[error("{mode} echo trace not converged at dim {} (last change {:e})", record.final_dim, record.last_change())]
    NotConverged { mode: Mode, record: ConvergenceRecord },
    #[error("matrix series did not converge in the truncated space")]
    SeriesNotConverged,
}

pub type Result<T> = std::result::Result<T, OracleError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Beta,
    Gamma,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Beta => "beta",
            Mode::Gamma => "gamma",
        })
    }
}

/// Largest thermal weight that truncation may discard.
pub const MAX_TRUNCATION_LOSS: f64 = 1e-6;
/// Thermal weights below this are not propagated.
const WEIGHT_CUTOFF: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct ModeMatrices {
    pub dim: usize,
    pub h_up: DMatrix<f64>,
    pub h_down: DMatrix<f64>,
    pub lowering: DMatrix<f64>,
}

pub fn build_mode_matrices(freq: f64, chi: f64, dim: usize) -> Result<ModeMatrices> {
    if dim < 2 {
        return Err(OracleError::Invalid(format!("dim must be at least 2, got {dim}")));
    }
    let lowering = DMatrix::from_fn(dim, dim, |i, j| if j == i + 1 { (j as f64).sqrt() } else { 0.0 });
    let x = &lowering + lowering.transpose();
    let number = DMatrix::from_fn(dim, dim, |i, j| if i == j { i as f64 } else { 0.0 });
    let h_up = &number * freq;
    let h_down = &h_up - (&x * &x) * (chi / 2.0);
    Ok(ModeMatrices {
        dim,
        h_up,
        h_down,
        lowering,
    })
}

/// `exp(−i·h·τ)` for a real symmetric `h`, by spectral decomposition.
pub fn propagator(h: &DMatrix<f64>, tau: f64) -> Result<DMatrix<Complex64>> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(OracleError::Invalid("propagator needs a square matrix".into()));
    }
    let scale = h.amax().max(1.0);
    if (h - h.transpose()).amax() > 1e-12 * scale {
        return Err(OracleError::Invalid("propagator needs a symmetric matrix".into()));
    }
    let mut v = h.as_slice().to_vec();
    let w = lapack::symmetric_eigen(&mut v, n)?;
    let v = DMatrix::from_vec(n, n, v);
    let phased = DMatrix::from_fn(n, n, |i, k| Complex64::from_polar(v[(i, k)], -w[k] * tau));
    let vc = v.map(Complex64::from);
    Ok(phased * vc.transpose())
}

/// Truncated thermal state of a single mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalDensity {
    /// Diagonal Boltzmann weights, summing to 1.
    pub weights: Vec<f64>,
    /// Weight of the levels at or beyond `dim` before renormalization.
    pub truncation_loss: f64,
}

impl ThermalDensity {
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.weights))
    }

    pub fn mean_occupation(&self) -> f64 {
        self.weights.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }
}

pub fn thermal_density(n_bar: f64, dim: usize) -> Result<ThermalDensity> {
    let d = thermal_weights(n_bar, dim)?;
    if d.truncation_loss > MAX_TRUNCATION_LOSS {
        return Err(OracleError::TruncationLoss {
            dim,
            loss: d.truncation_loss,
        });
    }
    Ok(d)
}

fn thermal_weights(n_bar: f64, dim: usize) -> Result<ThermalDensity> {
    if !(n_bar >= 0.0 && n_bar.is_finite()) || dim == 0 {
        return Err(OracleError::Invalid(format!("thermal state needs n_bar >= 0 and dim > 0 (n_bar = {n_bar}, dim = {dim})")));
    }
    let x = n_bar / (n_bar + 1.0);
    let mut weights: Vec<f64> = (0..dim).map(|n| x.powi(n as i32)).collect();
    let kept: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= kept;
    }
    Ok(ThermalDensity {
        weights,
        truncation_loss: x.powi(dim as i32),
    })
}

/// `Tr[U↓†U↑†U↓U↑ ρ]` with dense propagators.
pub fn echo_trace(m: &ModeMatrices, rho: &DMatrix<f64>, tau: f64) -> Result<Complex64> {
    if rho.shape() != (m.dim, m.dim) {
        return Err(OracleError::Invalid("density matrix shape does not match the mode".into()));
    }
    let down = propagator(&m.h_down, tau)?;
    let up = propagator(&m.h_up, tau)?;
    let echo = down.adjoint() * up.adjoint() * down * up;
    let rho = rho.map(Complex64::from);
    Ok((echo * rho).trace())
}

struct ParityBlock {
    levels: Vec<usize>,
    energies: Vec<f64>,
    /// Column-major eigenvectors, `levels.len()` square.
    vectors: Vec<f64>,
}

/// Eigen-decomposition of `h_down` split by number parity.
pub struct ParityPropagator {
    freq: f64,
    dim: usize,
    blocks: Vec<ParityBlock>,
}

impl ParityPropagator {
    pub fn new(freq: f64, chi: f64, dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(OracleError::Invalid(format!("dim must be at least 2, got {dim}")));
        }
        // Entries of the assembled (a + a†)² with the truncated edge.
        let x2_diag = |n: usize| if n + 1 < dim { (2 * n + 1) as f64 } else { n as f64 };
        let x2_off = |n: usize| (((n + 1) * (n + 2)) as f64).sqrt();
        let mut blocks = Vec::with_capacity(2);
        for parity in 0..2 {
            let levels: Vec<usize> = (parity..dim).step_by(2).collect();
            let d: Vec<f64> = levels.iter().map(|&n| freq * n as f64 - 0.5 * chi * x2_diag(n)).collect();
            let e: Vec<f64> = levels.iter().skip(1).map(|&n| -0.5 * chi * x2_off(n - 2)).collect();
            let (energies, vectors) = lapack::tridiagonal_eigen(d, &e)?;
            blocks.push(ParityBlock {
                levels,
                energies,
                vectors,
            });
        }
        Ok(Self { freq, dim, blocks })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Echo trace for diagonal weights `weights[n]` at every τ.
    pub fn echo_traces(&self, weights: &[f64], taus: &[f64]) -> Vec<Complex64> {
        taus.par_iter().map(|&tau| self.echo_trace_at(weights, tau)).collect()
    }

    fn echo_trace_at(&self, weights: &[f64], tau: f64) -> Complex64 {
        let mut total = Complex64::new(0.0, 0.0);
        for b in &self.blocks {
            let nb = b.levels.len();
            let cols: Vec<usize> = (0..nb)
                .filter(|&j| weights.get(b.levels[j]).is_some_and(|&p| p > WEIGHT_CUTOFF))
                .collect();
            if cols.is_empty() {
                continue;
            }
            let k = cols.len();
            // rhs[:, c] = e^{−iEτ} ⊙ (row j of V), real and imaginary halves.
            let mut rhs = vec![0.0; nb * 2 * k];
            for (c, &j) in cols.iter().enumerate() {
                for q in 0..nb {
                    let (s, co) = (-b.energies[q] * tau).sin_cos();
                    let v = b.vectors[j + q * nb];
                    rhs[q + c * nb] = v * co;
                    rhs[q + (c + k) * nb] = v * s;
                }
            }
            let mut u = vec![0.0; nb * 2 * k];
            unsafe {
                matrixmultiply::dgemm(
                    nb,
                    nb,
                    2 * k,
                    1.0,
                    b.vectors.as_ptr(),
                    1,
                    nb as isize,
                    rhs.as_ptr(),
                    1,
                    nb as isize,
                    0.0,
                    u.as_mut_ptr(),
                    1,
                    nb as isize,
                );
            }
            let phase: Vec<Complex64> = b
                .levels
                .iter()
                .map(|&m| Complex64::from_polar(1.0, self.freq * m as f64 * tau))
                .collect();
            for (c, &j) in cols.iter().enumerate() {
                let mut s = Complex64::new(0.0, 0.0);
                for m in 0..nb {
                    let (re, im) = (u[m + c * nb], u[m + (c + k) * nb]);
                    s += phase[m] * (re * re + im * im);
                }
                total += weights[b.levels[j]] * phase[j].conj() * s;
            }
        }
        total
    }
}

/// History of one mode's truncation doubling.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceRecord {
    pub dims_tried: Vec<usize>,
    /// Echo trace at each dim, at the grid point with the largest final
    /// change (the only point for single-τ queries).
    pub values: Vec<Complex64>,
    /// Largest change over the τ grid between successive dims.
    pub max_changes: Vec<f64>,
    pub converged: bool,
    pub final_dim: usize,
}

impl ConvergenceRecord {
    pub fn last_change(&self) -> f64 {
        self.max_changes.last().copied().unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSettings {
    /// Convergence threshold on the echo trace between successive dims.
    pub tol: f64,
    pub start_dim: usize,
    pub max_dim: usize,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            start_dim: 32,
            max_dim: 16384,
        }
    }
}

/// Converged echo traces of one mode on a τ grid.
pub fn converged_mode_trace(
    mode: Mode,
    freq: f64,
    chi: f64,
    n_bar: f64,
    taus: &[f64],
    settings: &OracleSettings,
) -> Result<(Vec<Complex64>, ConvergenceRecord)> {
    if settings.start_dim < 2 || settings.max_dim < settings.start_dim {
        return Err(OracleError::Invalid("need 2 <= start_dim <= max_dim".into()));
    }
    let mut traces: Vec<Vec<Complex64>> = Vec::new();
    let mut rec = ConvergenceRecord::default();
    let mut dim = settings.start_dim;
    let mut last_loss = 0.0;
    while dim <= settings.max_dim {
        let th = thermal_weights(n_bar, dim)?;
        if th.truncation_loss > MAX_TRUNCATION_LOSS {
            last_loss = th.truncation_loss;
            dim *= 2;
            continue;
        }
        let values = ParityPropagator::new(freq, chi, dim)?.echo_traces(&th.weights, taus);
        if let Some(prev) = traces.last() {
            let change = values
                .iter()
                .zip(prev)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            rec.max_changes.push(change);
        }
        rec.dims_tried.push(dim);
        rec.final_dim = dim;
        traces.push(values);
        if rec.last_change() < settings.tol {
            rec.converged = true;
            break;
        }
        dim *= 2;
    }
    if traces.is_empty() {
        return Err(OracleError::TruncationLoss {
            dim: settings.max_dim,
            loss: last_loss,
        });
    }
    let worst = if traces.len() >= 2 {
        let (a, b) = (&traces[traces.len() - 1], &traces[traces.len() - 2]);
        (0..taus.len())
            .max_by(|&i, &j| (a[i] - b[i]).norm().total_cmp(&(a[j] - b[j]).norm()))
            .unwrap_or(0)
    } else {
        0
    };
    if !taus.is_empty() {
        rec.values = traces.iter().map(|t| t[worst]).collect();
    }
    if !rec.converged {
        return Err(OracleError::NotConverged { mode, record: rec });
    }
    Ok((traces.pop().unwrap_or_default(), rec))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleTrace {
    pub points: Vec<ProbabilityPoint>,
    pub gamma: ConvergenceRecord,
    pub beta: Option<ConvergenceRecord>,
}

/// Oracle probabilities on a τ grid, both modes combined as in the closed
/// form.
pub fn oracle_trace(
    rates: &DispersiveRates,
    thermal: &ThermalSpec,
    deph: &DephasingSpec,
    taus: &[f64],
    include_beta: bool,
    settings: &OracleSettings,
) -> Result<OracleTrace> {
    if include_beta && rates.branch == Branch::PositiveDelta && !rates.beta_stable() {
        return Err(nanorotor_core::Error::UnstableBeta {
            freq: rates.freq_beta,
            chi: rates.chi_beta,
        }
        .into());
    }
    if taus.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(OracleError::Invalid("tau values must be finite and non-negative".into()));
    }
    let (tg, gamma) = converged_mode_trace(Mode::Gamma, rates.freq_gamma, rates.chi_gamma, thermal.n_gamma, taus, settings)?;
    let (tb, beta) = if include_beta {
        let (t, r) = converged_mode_trace(Mode::Beta, rates.freq_beta, rates.chi_beta, thermal.n_beta, taus, settings)?;
        (t, Some(r))
    } else {
        (vec![Complex64::new(1.0, 0.0); taus.len()], None)
    };
    let points = taus
        .iter()
        .zip(tg.iter().zip(&tb))
        .map(|(&tau, (&g, &b))| ProbabilityPoint::combine(tau, b, g, deph))
        .collect();
    Ok(OracleTrace { points, gamma, beta })
}

/// Oracle probability at a single τ.
pub fn oracle_probability(
    rates: &DispersiveRates,
    thermal: &ThermalSpec,
    deph: &DephasingSpec,
    tau: f64,
    include_beta: bool,
    settings: &OracleSettings,
) -> Result<(ProbabilityPoint, OracleTrace)> {
    let t = oracle_trace(rates, thermal, deph, &[tau], include_beta, settings)?;
    Ok((t.points[0], t))
}

/// Largest deviation, on the lowest `dim/2` block, between the spectral
/// `U↓` and the normal-ordered product
/// `e^{iωτ/2}·exp(η·a†²/2)·η₀^{(2n+1)/4}·exp(η·a²/2)`.
///
/// `η₀^{1/4}` is taken on the branch continuous from τ = 0.
pub fn verify_factorization(f: &Su11Factor, freq: f64, chi: f64, tau: f64, dim: usize) -> Result<f64> {
    if dim < 4 || dim % 2 != 0 {
        return Err(OracleError::Invalid(format!("dim must be even and at least 4, got {dim}")));
    }
    let m = build_mode_matrices(freq, chi, dim)?;
    let global = Complex64::from_polar(1.0, -freq * tau / 2.0);
    let spectral = propagator(&m.h_down, tau)?.map(|z| z * global);

    let quarter = quarter_power(freq, chi, tau, f.half_power)?;
    let lower = m.lowering.map(Complex64::from);
    let lower2 = &lower * &lower;
    let raise2 = lower2.transpose();
    let left = nilpotent_exp(&raise2, f.eta / 2.0)?;
    let right = nilpotent_exp(&lower2, f.eta / 2.0)?;
    let mut mid = DMatrix::<Complex64>::zeros(dim, dim);
    let mut p = quarter;
    for n in 0..dim {
        mid[(n, n)] = p;
        p *= f.half_power;
    }
    let product = left * mid * right;
    let h = dim / 2;
    let dev = (product.view((0, 0), (h, h)) - spectral.view((0, 0), (h, h)))
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    Ok(dev)
}

/// `√(η₀^{1/2})` followed continuously along `[0, tau]`, ending on the root
/// of `half_power` nearest the tracked value.
fn quarter_power(freq: f64, chi: f64, tau: f64, half_power: Complex64) -> Result<Complex64> {
    let scale = freq.max(chi.abs()).max((freq - chi).abs());
    let steps = ((tau * scale * 64.0 / std::f64::consts::PI).ceil() as usize).max(1);
    let mut q = Complex64::new(1.0, 0.0);
    for i in 1..=steps {
        let t = tau * i as f64 / steps as f64;
        let r = branch_factorization(freq, chi, t)?.half_power.sqrt();
        q = if (r - q).norm() <= (r + q).norm() { r } else { -r };
    }
    let r = half_power.sqrt();
    Ok(if (r - q).norm() <= (r + q).norm() { r } else { -r })
}

/// `exp(c·A)` for nilpotent `A`, summed until the terms vanish.
fn nilpotent_exp(a: &DMatrix<Complex64>, c: Complex64) -> Result<DMatrix<Complex64>> {
    let n = a.nrows();
    let mut sum = DMatrix::<Complex64>::identity(n, n);
    let mut term = sum.clone();
    for k in 1..=n {
        term = (&term * a) * (c / k as f64);
        let size = term.iter().map(|z| z.norm()).fold(0.0, f64::max);
        sum += &term;
        if size == 0.0 {
            return Ok(sum);
        }
        if !size.is_finite() {
            return Err(OracleError::SeriesNotConverged);
        }
    }
    Err(OracleError::SeriesNotConverged)
}
