//! Physical inputs, derived rates and special field values.
//!
//! All frequencies are angular (rad/s), fields in tesla, lengths in metres.

use core::f64::consts::{PI, SQRT_2};

use libm::{fabs, sqrt};

use crate::roots::bisect;
use crate::{quad, Error, Result, HBAR};

/// Electron gyromagnetic ratio used for the NV center, rad/(s·T).
pub const GAMMA_E: f64 = 1.76e11;
/// NV ground-state zero-field splitting, rad/s.
pub const D_NV: f64 = 2.0 * PI * 2.87e9;
/// Relative tolerance of every field-locating bisection.
pub const ROOT_REL_TOL: f64 = 1e-6;
/// Default `|Δ|` floor for [`dispersive_rates`], relative to `d_nv`.
pub const DEFAULT_DELTA_FLOOR_REL: f64 = 1e-6;
/// Default threshold of the dispersive validity conditions.
pub const DEFAULT_VALIDITY_THRESHOLD: f64 = 0.1;

/// How the particle mass is obtained from the semiaxes.
///
/// The moments of inertia always follow the homogeneous prolate spheroid
/// with symmetry semiaxis `a`: `I₃ = (2/5)·m·b²`, `I = (1/5)·m·(a² + b²)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MassModel {
    /// `m = (4/3)·π·ρ·a·b²`, the volume of the prolate spheroid itself.
    #[default]
    ProlateVolume,
    /// `m = (4/3)·π·ρ·a²·b`. Reproduces the critical field near 100 mT
    /// for the reference particle; see the README.
    OblateVolume,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    /// Major (symmetry) semiaxis, m.
    pub a: f64,
    /// Minor semiaxis, m.
    pub b: f64,
    /// kg/m³
    pub mass_density: f64,
    pub mass_model: MassModel,
}

impl Geometry {
    pub fn new(a: f64, b: f64, mass_density: f64) -> Result<Self> {
        let g = Self {
            a,
            b,
            mass_density,
            mass_model: MassModel::default(),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn with_mass_model(mut self, mass_model: MassModel) -> Self {
        self.mass_model = mass_model;
        self
    }

    pub fn validate(&self) -> Result<()> {
        positive("geometry.a", self.a)?;
        positive("geometry.b", self.b)?;
        positive("geometry.mass_density", self.mass_density)?;
        if self.b > self.a {
            return Err(Error::InvalidParameter {
                name: "geometry.b",
                reason: "minor semiaxis exceeds the major semiaxis",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapConfig {
    /// Dimensionless drive parameter ε.
    pub epsilon: f64,
    /// Trap asymmetry δ in `[0, 1)`.
    pub delta: f64,
    pub udc_over_uac: f64,
    /// AC drive angular frequency ω₀, rad/s.
    pub omega0: f64,
}

impl TrapConfig {
    pub fn new(epsilon: f64, delta: f64, udc_over_uac: f64, omega0: f64) -> Result<Self> {
        let t = Self {
            epsilon,
            delta,
            udc_over_uac,
            omega0,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        positive("trap.epsilon", self.epsilon)?;
        positive("trap.omega0", self.omega0)?;
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::InvalidParameter {
                name: "trap.delta",
                reason: "must lie in [0, 1)",
            });
        }
        if !(self.udc_over_uac >= 0.0 && self.udc_over_uac.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "trap.udc_over_uac",
                reason: "must be finite and non-negative",
            });
        }
        Ok(())
    }
}

/// `ε = U_ac·ΔQ / (I·ω₀²·ℓ₀²)` from electrode voltage, quadrupole
/// anisotropy, transverse inertia, drive frequency and trap length scale.
pub fn epsilon_from_drive(u_ac: f64, delta_q: f64, i_perp: f64, omega0: f64, l0: f64) -> f64 {
    u_ac * delta_q / (i_perp * omega0 * omega0 * l0 * l0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSpinConfig {
    /// Applied field B₀, T.
    pub b0: f64,
    /// rad/(s·T)
    pub gamma_e: f64,
    /// rad/s
    pub d_nv: f64,
}

impl FieldSpinConfig {
    pub fn new(b0: f64, gamma_e: f64, d_nv: f64) -> Result<Self> {
        let f = Self { b0, gamma_e, d_nv };
        f.validate()?;
        Ok(f)
    }

    /// NV constants at field `b0`.
    pub fn nv(b0: f64) -> Self {
        Self {
            b0,
            gamma_e: GAMMA_E,
            d_nv: D_NV,
        }
    }

    pub fn validate(&self) -> Result<()> {
        positive("field.b0", self.b0)?;
        positive("field.gamma_e", self.gamma_e)?;
        positive("field.d_nv", self.d_nv)
    }

    /// Field of the `|0⟩ ↔ |−1⟩` anti-crossing, `d_nv / gamma_e`.
    pub fn anti_crossing_field(&self) -> f64 {
        self.d_nv / self.gamma_e
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemConfig {
    pub geometry: Geometry,
    pub trap: TrapConfig,
    pub field: FieldSpinConfig,
}

impl SystemConfig {
    /// Reference particle: a = 100 nm, b = a/5, ρ = 3.5e3 kg/m³, ε = 1e-2,
    /// δ = 0.1, U_dc/U_ac = 5e-3, ω₀/2π = 5 MHz, NV spin constants.
    ///
    /// Uses [`MassModel::OblateVolume`].
    pub fn reference(b0: f64) -> Self {
        Self {
            geometry: Geometry {
                a: 100e-9,
                b: 20e-9,
                mass_density: 3.5e3,
                mass_model: MassModel::OblateVolume,
            },
            trap: TrapConfig {
                epsilon: 1e-2,
                delta: 0.1,
                udc_over_uac: 5e-3,
                omega0: 2.0 * PI * 5e6,
            },
            field: FieldSpinConfig::nv(b0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.trap.validate()?;
        self.field.validate()
    }

    pub fn with_b0(mut self, b0: f64) -> Self {
        self.field.b0 = b0;
        self
    }

    pub fn with_omega0(mut self, omega0: f64) -> Self {
        self.trap.omega0 = omega0;
        self
    }

    /// Signed qubit splitting `Δ = d_nv − γ_e·B₀`.
    pub fn qubit_splitting(&self) -> f64 {
        self.field.d_nv - self.field.gamma_e * self.field.b0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InertiaTensor {
    pub mass: f64,
    /// Transverse moment I.
    pub i_perp: f64,
    /// Moment about the symmetry axis, I₃.
    pub i_sym: f64,
}

pub fn derive_inertia(g: &Geometry) -> InertiaTensor {
    let volume = match g.mass_model {
        MassModel::ProlateVolume => 4.0 / 3.0 * PI * g.a * g.b * g.b,
        MassModel::OblateVolume => 4.0 / 3.0 * PI * g.a * g.a * g.b,
    };
    let mass = g.mass_density * volume;
    InertiaTensor {
        mass,
        i_perp: 0.2 * mass * (g.a * g.a + g.b * g.b),
        i_sym: 0.4 * mass * g.b * g.b,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrupoleEstimate {
    /// ΔQ in units of charge times m².
    pub value: f64,
    /// Set when b/a > 0.5, outside the small-b expansion.
    pub outside_expansion: bool,
}

/// Second-order expansion `ΔQ ≈ q·(a² + 2b²)/4`.
pub fn quadrupole_anisotropy_closed(g: &Geometry, q: f64) -> QuadrupoleEstimate {
    QuadrupoleEstimate {
        value: q * (g.a * g.a + 2.0 * g.b * g.b) / 4.0,
        outside_expansion: g.b > 0.5 * g.a,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureResult {
    pub value: f64,
    /// Order of the finer of the last two rules compared.
    pub order: usize,
    /// Last change between successive orders, relative to `|q|·a²`.
    pub relative_change: f64,
}

/// Surface integral of the quadrupole anisotropy of a uniformly charged
/// spheroid surface, by Gauss-Legendre quadrature in both surface angles.
///
/// The order is doubled from `quad_order` until successive estimates agree
/// to 1e-8 relative to `|q|·a²`; more than 1e-6 after six doublings is an
/// error. The polar coordinate enters as `ξ = cos θ`, which keeps the
/// integrand smooth when `b ≪ a`.
pub fn quadrupole_anisotropy_exact(g: &Geometry, q: f64, quad_order: usize) -> Result<QuadratureResult> {
    g.validate()?;
    if quad_order < 16 {
        return Err(Error::InvalidParameter {
            name: "quad_order",
            reason: "must be at least 16",
        });
    }
    let scale = fabs(q) * g.a * g.a;
    let mut order = quad_order;
    let mut prev = quadrupole_at_order(g, q, order);
    let mut change = f64::INFINITY;
    for _ in 0..6 {
        order *= 2;
        let next = quadrupole_at_order(g, q, order);
        change = if scale > 0.0 { fabs(next - prev) / scale } else { 0.0 };
        prev = next;
        if change < 1e-8 {
            break;
        }
    }
    if change > 1e-6 {
        return Err(Error::QuadratureNotConverged { relative: change });
    }
    Ok(QuadratureResult {
        value: prev,
        order,
        relative_change: change,
    })
}

fn quadrupole_at_order(g: &Geometry, q: f64, order: usize) -> f64 {
    let rule = quad::gauss_legendre(order);
    let e2 = (g.b / g.a) * (g.b / g.a);
    // ∫cos²φ dφ over one turn, by the same rule.
    let cos2 = quad::integrate(&rule, 0.0, 2.0 * PI, |p| libm::cos(p) * libm::cos(p));
    let mut num = 0.0;
    let mut den = 0.0;
    for (&x, &w) in rule.0.iter().zip(&rule.1) {
        let th = 0.5 * PI * (x + 1.0);
        let (s, c) = (libm::sin(th), libm::cos(th));
        let area = sqrt(s * s + e2 * c * c) * s * w;
        num += area * (2.0 * PI * c * c - e2 * s * s * cos2);
        den += area * 2.0 * PI;
    }
    q * g.a * g.a * num / den
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecularRates {
    pub omega_l: f64,
    /// Signed qubit splitting Δ.
    pub delta_q: f64,
    pub omega_alpha: f64,
    pub omega_beta: f64,
    pub omega_gamma: f64,
    pub beta0: f64,
    pub gamma0: f64,
    pub g_beta: f64,
    pub g_gamma: f64,
    pub xi_beta: f64,
}

pub fn secular_rates(s: &SystemConfig) -> Result<SecularRates> {
    s.validate()?;
    let inertia = derive_inertia(&s.geometry);
    let TrapConfig {
        epsilon: e,
        delta: d,
        udc_over_uac: u,
        omega0: w0,
    } = s.trap;
    let omega_l = s.field.gamma_e * s.field.b0;
    let omega_beta = w0 * sqrt(2.0 * d * e * u + 2.0 * d * d * e * e);
    if omega_beta <= 0.0 {
        return Err(Error::DegenerateTrap);
    }
    let omega_alpha = w0 * sqrt((1.0 + d / 3.0) * (3.0 * e * u + 4.5 * d * d * e * e));
    let omega_gamma = sqrt(HBAR * omega_l / inertia.i_sym);
    let beta0 = sqrt(HBAR / (2.0 * inertia.i_perp * omega_beta));
    let gamma0 = sqrt(HBAR / (SQRT_2 * inertia.i_sym * omega_gamma));
    Ok(SecularRates {
        omega_l,
        delta_q: s.qubit_splitting(),
        omega_alpha,
        omega_beta,
        omega_gamma,
        beta0,
        gamma0,
        g_beta: omega_l * beta0 / SQRT_2,
        g_gamma: omega_l * gamma0 / SQRT_2,
        xi_beta: omega_l * beta0 * beta0 / 2.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    /// Δ > 0: both modes trapped for `|↑⟩`, γ inverted for `|↓⟩`.
    PositiveDelta,
    /// Δ < 0: trapped for `|↓⟩`, inverted for `|↑⟩`.
    NegativeDelta,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersiveRates {
    pub branch: Branch,
    /// ω̃_β (Δ > 0) or Ω_β (Δ < 0).
    pub freq_beta: f64,
    /// ω̃_γ (Δ > 0) or Ω_γ (Δ < 0).
    pub freq_gamma: f64,
    /// χ_β or χ̃_β.
    pub chi_beta: f64,
    /// χ_γ or χ̃_γ.
    pub chi_gamma: f64,
    /// δω_β, defined on the Δ > 0 branch only.
    pub delta_omega_beta: Option<f64>,
}

impl DispersiveRates {
    /// ω̃_β > 2χ_β: the β mode stays trapped on the squeezing spin branch.
    pub fn beta_stable(&self) -> bool {
        self.freq_beta > 2.0 * self.chi_beta
    }
}

/// [`dispersive_rates_with_floor`] with the floor `1e-6·d_nv`.
pub fn dispersive_rates(s: &SystemConfig) -> Result<DispersiveRates> {
    dispersive_rates_with_floor(s, DEFAULT_DELTA_FLOOR_REL * s.field.d_nv)
}

/// Frequencies and spin-conditioned shifts of the β and γ modes in the
/// dispersive regime. `delta_floor` (rad/s) is the smallest accepted `|Δ|`.
pub fn dispersive_rates_with_floor(s: &SystemConfig, delta_floor: f64) -> Result<DispersiveRates> {
    let sec = secular_rates(s)?;
    let inertia = derive_inertia(&s.geometry);
    let (i, i3) = (inertia.i_perp, inertia.i_sym);
    let (wl, delta, wb) = (sec.omega_l, sec.delta_q, sec.omega_beta);
    if !(fabs(delta) > delta_floor) {
        return Err(Error::AntiCrossing {
            delta,
            floor: delta_floor,
        });
    }
    if delta > 0.0 {
        let x = HBAR * wl * (1.0 + wl / delta);
        let freq_beta = sqrt(wb * wb + x / i);
        let freq_gamma = sqrt(x / i3);
        Ok(DispersiveRates {
            branch: Branch::PositiveDelta,
            freq_beta,
            freq_gamma,
            chi_beta: x / (i * freq_beta),
            chi_gamma: HBAR * wl * (1.0 + 2.0 * wl / delta) / (2.0 * i3 * freq_gamma),
            delta_omega_beta: Some(sqrt(x / i)),
        })
    } else {
        let ad = fabs(delta);
        let radicand = wb * wb + HBAR * wl * (wl / ad - 1.0) / i;
        if radicand <= 0.0 {
            return Err(Error::ImaginaryFrequency {
                mode: "beta",
                radicand,
            });
        }
        let freq_beta = sqrt(radicand);
        let freq_gamma = sqrt(HBAR * wl * wl / (i3 * ad));
        Ok(DispersiveRates {
            branch: Branch::NegativeDelta,
            freq_beta,
            freq_gamma,
            chi_beta: (radicand - wb * wb) / freq_beta,
            chi_gamma: sqrt(2.0 * HBAR * wl * wl / (i3 * ad)) * (1.0 - ad / (2.0 * wl)),
            delta_omega_beta: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidityReport {
    pub epsilon_ok: bool,
    pub udc_ratio_ok: bool,
    /// `|ω_L/Δ|·⟨β²⟩`, `(ω_L/Δ)²·⟨γ²⟩` and `I₃·ω_γ²·⟨γ²⟩/(4ħ|Δ|)`.
    pub dispersive_terms: [f64; 3],
    pub dispersive_ok: bool,
    pub beta_stable: bool,
}

/// [`validity_report_thermal`] with zero-point variances.
pub fn validity_report(s: &SystemConfig, threshold: f64) -> Result<ValidityReport> {
    validity_report_thermal(s, threshold, 0.0, 0.0)
}

/// Checks the secular and dispersive approximations.
///
/// The angular variances are the zero-point values scaled by `2n̄ + 1`.
/// At Δ = 0 the dispersive terms are infinite. The ε and U_dc/U_ac checks
/// use the same threshold.
pub fn validity_report_thermal(
    s: &SystemConfig,
    threshold: f64,
    n_beta: f64,
    n_gamma: f64,
) -> Result<ValidityReport> {
    let sec = secular_rates(s)?;
    let i3 = derive_inertia(&s.geometry).i_sym;
    let var_b = sec.beta0 * sec.beta0 * (2.0 * n_beta + 1.0);
    let var_g = sec.gamma0 * sec.gamma0 * (2.0 * n_gamma + 1.0);
    let ad = fabs(sec.delta_q);
    let r = sec.omega_l / ad;
    let terms = [
        r * var_b,
        r * r * var_g,
        i3 * sec.omega_gamma * sec.omega_gamma * var_g / (4.0 * HBAR * ad),
    ];
    let dispersive_ok = terms.iter().all(|t| *t < threshold);
    let beta_stable = dispersive_rates(s).map(|d| d.beta_stable()).unwrap_or(false);
    Ok(ValidityReport {
        epsilon_ok: s.trap.epsilon < threshold,
        udc_ratio_ok: s.trap.udc_over_uac < threshold,
        dispersive_terms: terms,
        dispersive_ok,
        beta_stable,
    })
}

/// Field bracket strictly below the anti-crossing, `[1e-4, 1 − 1e-5]·B_ac`.
pub fn lower_branch_bracket(s: &SystemConfig) -> (f64, f64) {
    let b = s.field.anti_crossing_field();
    (1e-4 * b, (1.0 - 1e-5) * b)
}

/// Field bracket strictly above the anti-crossing, `[1 + 1e-5, 2]·B_ac`.
pub fn upper_branch_bracket(s: &SystemConfig) -> (f64, f64) {
    let b = s.field.anti_crossing_field();
    ((1.0 + 1e-5) * b, 2.0 * b)
}

/// Root of Δ(B₀) inside `bracket`.
pub fn find_anti_crossing(s: &SystemConfig, bracket: (f64, f64)) -> Result<f64> {
    let f = s.field;
    bisect(|b| f.d_nv - f.gamma_e * b, bracket.0, bracket.1, ROOT_REL_TOL)
}

/// Field at which ω̃_β = 2χ_β on the Δ > 0 branch.
pub fn find_bstar(s: &SystemConfig, bracket: (f64, f64)) -> Result<f64> {
    require_branch(s, bracket, Branch::PositiveDelta)?;
    bisect(
        |b| match dispersive_rates(&s.with_b0(b)) {
            Ok(r) => r.freq_beta - 2.0 * r.chi_beta,
            Err(_) => f64::NAN,
        },
        bracket.0,
        bracket.1,
        ROOT_REL_TOL,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RatioOrientation {
    /// freq_gamma / freq_beta
    GammaOverBeta,
    /// freq_beta / freq_gamma
    BetaOverGamma,
}

pub fn frequency_ratio(r: &DispersiveRates, orientation: RatioOrientation) -> f64 {
    match orientation {
        RatioOrientation::GammaOverBeta => r.freq_gamma / r.freq_beta,
        RatioOrientation::BetaOverGamma => r.freq_beta / r.freq_gamma,
    }
}

/// Field at which the mode frequency ratio equals the integer `n`.
pub fn find_resonance_fields(
    s: &SystemConfig,
    n: u32,
    orientation: RatioOrientation,
    branch: Branch,
    bracket: (f64, f64),
) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: "must be at least 1",
        });
    }
    require_branch(s, bracket, branch)?;
    bisect(
        |b| match dispersive_rates(&s.with_b0(b)) {
            Ok(r) => frequency_ratio(&r, orientation) - n as f64,
            Err(_) => f64::NAN,
        },
        bracket.0,
        bracket.1,
        ROOT_REL_TOL,
    )
}

fn require_branch(s: &SystemConfig, bracket: (f64, f64), branch: Branch) -> Result<()> {
    let bac = s.field.anti_crossing_field();
    let ok = match branch {
        Branch::PositiveDelta => bracket.1 < bac,
        Branch::NegativeDelta => bracket.0 > bac,
    };
    if ok && bracket.0 > 0.0 {
        Ok(())
    } else {
        Err(Error::BracketOffBranch {
            lo: bracket.0,
            hi: bracket.1,
        })
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: "must be finite and positive",
        })
    }
}
