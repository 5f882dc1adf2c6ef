//! Declarative parameter sweeps, figure presets and the CSV table format.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nanorotor_core::su11::{protocol_probability, protocol_trace, DephasingSpec, ThermalSpec};
use nanorotor_core::system::{
    dispersive_rates_with_floor, find_bstar, frequency_ratio, lower_branch_bracket, secular_rates,
    validity_report, Branch, DispersiveRates, RatioOrientation, SecularRates, SystemConfig,
    DEFAULT_DELTA_FLOOR_REL, DEFAULT_VALIDITY_THRESHOLD,
};
use rayon::prelude::*;

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("invalid sweep: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, SweepError> {
    Err(SweepError::Invalid(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    pub scale: Scale,
}

impl Range {
    pub fn linear(start: f64, stop: f64, points: usize) -> Self {
        Self {
            start,
            stop,
            points,
            scale: Scale::Linear,
        }
    }

    pub fn log(start: f64, stop: f64, points: usize) -> Self {
        Self {
            start,
            stop,
            points,
            scale: Scale::Log,
        }
    }

    pub fn validate(&self, what: &str) -> Result<(), SweepError> {
        if self.points < 2 {
            return invalid(format!("{what}: at least 2 points required"));
        }
        if !(self.start.is_finite() && self.stop.is_finite() && self.start < self.stop) {
            return invalid(format!("{what}: start must be below stop"));
        }
        if self.scale == Scale::Log && self.start <= 0.0 {
            return invalid(format!("{what}: log scale needs a positive start"));
        }
        Ok(())
    }

    /// Grid values; the end points are reproduced exactly.
    pub fn values(&self) -> Vec<f64> {
        let last = self.points - 1;
        (0..self.points)
            .map(|i| {
                if i == 0 {
                    return self.start;
                }
                if i == last {
                    return self.stop;
                }
                let t = i as f64 / last as f64;
                match self.scale {
                    Scale::Linear => self.start + (self.stop - self.start) * t,
                    Scale::Log => (self.start.ln() + (self.stop.ln() - self.start.ln()) * t).exp(),
                }
            })
            .collect()
    }
}

impl fmt::Display for Range {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let scale = match self.scale {
            Scale::Linear => "linear",
            Scale::Log => "log",
        };
        write!(f, "start={} stop={} points={} scale={scale}", self.start, self.stop, self.points)
    }
}

/// Swept parameter. B₀ in T, τ in [`TauUnit`], T₂ in s, ω₀ given as ω₀/2π in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variable {
    B0,
    Tau,
    NGamma,
    T2,
    Omega0,
    /// B₀ from the main range (outer loop) times ω₀/2π from `omega0`.
    Grid2D { omega0: Range },
}

impl Variable {
    fn label(&self) -> &'static str {
        match self {
            Variable::B0 => "b0",
            Variable::Tau => "tau",
            Variable::NGamma => "n_gamma",
            Variable::T2 => "t2",
            Variable::Omega0 => "omega0",
            Variable::Grid2D { .. } => "grid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauUnit {
    Seconds,
    /// Multiples of π/ω̃_γ.
    HalfPeriods,
}

/// Output quantity; frequencies are emitted as ω/2π in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    OmegaL,
    Delta,
    OmegaAlpha,
    OmegaBeta,
    OmegaGamma,
    GBeta,
    GGamma,
    XiBeta,
    GBetaRatio,
    GGammaRatio,
    FreqBeta,
    FreqGamma,
    ChiBeta,
    ChiGamma,
    DeltaOmegaBeta,
    DeltaOmegaBetaRatio,
    Ratio(RatioOrientation),
    ValidityBeta,
    ValidityGamma,
    ValidityCurvature,
    BStar,
    PUp,
    PStar,
}

const QUANTITIES: &[(Quantity, &str, &str)] = &[
    (Quantity::OmegaL, "omega_l/2pi", "Hz"),
    (Quantity::Delta, "delta/2pi", "Hz"),
    (Quantity::OmegaAlpha, "omega_alpha/2pi", "Hz"),
    (Quantity::OmegaBeta, "omega_beta/2pi", "Hz"),
    (Quantity::OmegaGamma, "omega_gamma/2pi", "Hz"),
    (Quantity::GBeta, "g_beta/2pi", "Hz"),
    (Quantity::GGamma, "g_gamma/2pi", "Hz"),
    (Quantity::XiBeta, "xi_beta/2pi", "Hz"),
    (Quantity::GBetaRatio, "g_beta/omega_beta", "1"),
    (Quantity::GGammaRatio, "g_gamma/omega_gamma", "1"),
    (Quantity::FreqBeta, "freq_beta/2pi", "Hz"),
    (Quantity::FreqGamma, "freq_gamma/2pi", "Hz"),
    (Quantity::ChiBeta, "chi_beta/2pi", "Hz"),
    (Quantity::ChiGamma, "chi_gamma/2pi", "Hz"),
    (Quantity::DeltaOmegaBeta, "delta_omega_beta/2pi", "Hz"),
    (Quantity::DeltaOmegaBetaRatio, "delta_omega_beta/omega_beta", "1"),
    (Quantity::Ratio(RatioOrientation::GammaOverBeta), "freq_gamma/freq_beta", "1"),
    (Quantity::Ratio(RatioOrientation::BetaOverGamma), "freq_beta/freq_gamma", "1"),
    (Quantity::ValidityBeta, "validity_beta", "1"),
    (Quantity::ValidityGamma, "validity_gamma", "1"),
    (Quantity::ValidityCurvature, "validity_curvature", "1"),
    (Quantity::BStar, "b_star", "T"),
    (Quantity::PUp, "p_up", "1"),
    (Quantity::PStar, "p_star", "1"),
];

impl Quantity {
    fn entry(&self) -> &'static (Quantity, &'static str, &'static str) {
        QUANTITIES.iter().find(|e| e.0 == *self).expect("every quantity is registered")
    }

    pub fn key(&self) -> &'static str {
        self.entry().1
    }

    pub fn unit(&self) -> &'static str {
        self.entry().2
    }

    fn probability(&self) -> bool {
        matches!(self, Quantity::PUp | Quantity::PStar)
    }

    /// Whether the value relies on the dispersive approximation at the row's B₀.
    fn needs_dispersive(&self) -> bool {
        !matches!(
            self,
            Quantity::OmegaL
                | Quantity::Delta
                | Quantity::OmegaAlpha
                | Quantity::OmegaBeta
                | Quantity::OmegaGamma
                | Quantity::GBeta
                | Quantity::GGamma
                | Quantity::XiBeta
                | Quantity::GBetaRatio
                | Quantity::GGammaRatio
                | Quantity::BStar
        )
    }

    fn parse_key(s: &str) -> Option<Self> {
        QUANTITIES
            .iter()
            .find(|(_, k, _)| *k == s || k.strip_suffix("/2pi") == Some(s))
            .map(|e| e.0)
    }
}

/// Output column. Probability columns may pin their own n_γ and T₂;
/// unset values come from the sweep options or the swept variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Column {
    pub quantity: Quantity,
    pub n_gamma: Option<f64>,
    pub t2: Option<f64>,
}

impl Column {
    pub fn new(quantity: Quantity) -> Self {
        Self {
            quantity,
            n_gamma: None,
            t2: None,
        }
    }

    pub fn with_n_gamma(mut self, n: f64) -> Self {
        self.n_gamma = Some(n);
        self
    }

    pub fn with_t2(mut self, t2: f64) -> Self {
        self.t2 = Some(t2);
        self
    }

    pub fn name(&self) -> String {
        let mut params = Vec::new();
        if let Some(n) = self.n_gamma {
            params.push(format!("n_gamma={n}"));
        }
        if let Some(t) = self.t2 {
            params.push(format!("t2={t}"));
        }
        if params.is_empty() {
            self.quantity.key().to_string()
        } else {
            format!("{}({})", self.quantity.key(), params.join(";"))
        }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Column {
    type Err = SweepError;

    /// Accepts `key`, `key/2pi` and `p_star(n_gamma=10;t2=5e-4)`.
    fn from_str(s: &str) -> Result<Self, SweepError> {
        let s = s.trim();
        let (key, params) = match s.split_once('(') {
            Some((k, rest)) => match rest.strip_suffix(')') {
                Some(p) => (k, Some(p)),
                None => return invalid(format!("column '{s}': unbalanced parenthesis")),
            },
            None => (s, None),
        };
        let Some(quantity) = Quantity::parse_key(key) else {
            let known: Vec<_> = QUANTITIES.iter().map(|e| e.1).collect();
            return invalid(format!("unknown column '{key}' (known: {})", known.join(", ")));
        };
        let mut col = Column::new(quantity);
        for p in params.into_iter().flat_map(|p| p.split(';')) {
            let Some((k, v)) = p.split_once('=') else {
                return invalid(format!("column '{s}': expected key=value, got '{p}'"));
            };
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| SweepError::Invalid(format!("column '{s}': bad number '{v}'")))?;
            match k.trim() {
                "n_gamma" => col.n_gamma = Some(v),
                "t2" => col.t2 = Some(v),
                other => return invalid(format!("column '{s}': unknown parameter '{other}'")),
            }
        }
        Ok(col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub include_beta: bool,
    /// Rows on the other branch are flagged.
    pub branch: Option<Branch>,
    pub n_gamma: f64,
    /// `None`: β at the temperature of γ.
    pub n_beta: Option<f64>,
    /// s; infinite for no dephasing.
    pub t2: f64,
    pub tau_unit: TauUnit,
    pub validity_threshold: f64,
    /// Smallest accepted |Δ| relative to the zero-field splitting.
    pub delta_floor_rel: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            include_beta: true,
            branch: None,
            n_gamma: 1.0,
            n_beta: None,
            t2: f64::INFINITY,
            tau_unit: TauUnit::HalfPeriods,
            validity_threshold: DEFAULT_VALIDITY_THRESHOLD,
            delta_floor_rel: DEFAULT_DELTA_FLOOR_REL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: SystemConfig,
    pub variable: Variable,
    pub range: Range,
    pub outputs: Vec<Column>,
    pub options: SweepOptions,
    /// Free-form lines carried into the provenance header.
    pub notes: Vec<String>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SweepError> {
        self.base
            .validate()
            .map_err(|e| SweepError::Invalid(format!("base system: {e}")))?;
        self.range.validate(self.variable.label())?;
        if let Variable::Grid2D { omega0 } = &self.variable {
            omega0.validate("omega0")?;
        }
        if self.outputs.is_empty() {
            return invalid("no output columns");
        }
        let o = &self.options;
        if !(o.n_gamma >= 0.0 && o.n_gamma.is_finite()) {
            return invalid("n_gamma must be finite and non-negative");
        }
        if let Some(nb) = o.n_beta {
            if !(nb >= 0.0 && nb.is_finite()) {
                return invalid("n_beta must be finite and non-negative");
            }
        }
        if !(o.t2 > 0.0) {
            return invalid("t2 must be positive");
        }
        if !(o.validity_threshold > 0.0) || !(o.delta_floor_rel > 0.0) {
            return invalid("tolerances must be positive");
        }
        match self.variable {
            Variable::B0 | Variable::Grid2D { .. } | Variable::Omega0 if self.range.start <= 0.0 => {
                return invalid(format!("{} range must be positive", self.variable.label()));
            }
            Variable::Tau | Variable::NGamma if self.range.start < 0.0 => {
                return invalid(format!("{} range must be non-negative", self.variable.label()));
            }
            Variable::T2 if self.range.start <= 0.0 => return invalid("t2 range must be positive"),
            _ => {}
        }
        for c in &self.outputs {
            self.check_column(c)?;
        }
        Ok(())
    }

    fn check_column(&self, c: &Column) -> Result<(), SweepError> {
        let q = c.quantity;
        let var = self.variable;
        let bad = |why: &str| invalid(format!("column '{c}' {why} for a {} sweep", var.label()));
        if !q.probability() && (c.n_gamma.is_some() || c.t2.is_some()) {
            return invalid(format!("column '{c}' takes no parameters"));
        }
        if let Some(n) = c.n_gamma {
            if !(n >= 0.0 && n.is_finite()) {
                return invalid(format!("column '{c}': n_gamma must be finite and non-negative"));
            }
        }
        if let Some(t) = c.t2 {
            if !(t > 0.0) {
                return invalid(format!("column '{c}': t2 must be positive"));
            }
        }
        match var {
            Variable::Tau if q != Quantity::PUp => bad("is constant in tau"),
            Variable::Tau => Ok(()),
            _ if q == Quantity::PUp => bad("needs a tau sweep; use p_star"),
            Variable::NGamma | Variable::T2 if q != Quantity::PStar => bad("does not depend on the swept value"),
            Variable::NGamma if c.n_gamma.is_some() => bad("pins the swept n_gamma"),
            Variable::T2 if c.t2.is_some() => bad("pins the swept t2"),
            Variable::B0 | Variable::Grid2D { .. } if q == Quantity::BStar => bad("is independent of b0"),
            _ => Ok(()),
        }
    }

    fn provenance(&self) -> Vec<String> {
        let b = &self.base;
        let o = &self.options;
        let mut p = vec![format!("nanorotor {}", env!("CARGO_PKG_VERSION"))];
        p.extend(self.notes.iter().cloned());
        p.push(format!("variable {} {}", self.variable.label(), self.range));
        if let Variable::Grid2D { omega0 } = &self.variable {
            p.push(format!("variable omega0/2pi {omega0}"));
        }
        let cols: Vec<String> = self.outputs.iter().map(Column::name).collect();
        p.push(format!("columns {}", cols.join(" ")));
        p.push(format!(
            "geometry a={} b={} mass_density={} mass_model={:?}",
            b.geometry.a, b.geometry.b, b.geometry.mass_density, b.geometry.mass_model
        ));
        p.push(format!(
            "trap epsilon={} delta={} udc_over_uac={} omega0={}",
            b.trap.epsilon, b.trap.delta, b.trap.udc_over_uac, b.trap.omega0
        ));
        p.push(format!(
            "field b0={} gamma_e={} d_nv={}",
            b.field.b0, b.field.gamma_e, b.field.d_nv
        ));
        let n_beta = o.n_beta.map_or_else(|| "equal_temperature".to_string(), |n| n.to_string());
        p.push(format!(
            "options include_beta={} branch={} n_gamma={} n_beta={n_beta} t2={} tau_unit={} validity_threshold={} delta_floor_rel={}",
            o.include_beta,
            match o.branch {
                None => "auto",
                Some(Branch::PositiveDelta) => "positive",
                Some(Branch::NegativeDelta) => "negative",
            },
            o.n_gamma,
            o.t2,
            match o.tau_unit {
                TauUnit::Seconds => "s",
                TauUnit::HalfPeriods => "half_period",
            },
            o.validity_threshold,
            o.delta_floor_rel
        ));
        p
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnHeader {
    pub name: String,
    pub unit: String,
}

impl ColumnHeader {
    fn new(name: impl Into<String>, unit: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            unit: unit.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointFailure {
    pub row: usize,
    pub column: String,
    pub message: String,
}

/// Rows hold one value per column; the last column is the `valid` flag (0 or 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<ColumnHeader>,
    pub rows: Vec<Vec<f64>>,
    pub provenance: Vec<String>,
    pub failures: Vec<PointFailure>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn valid(&self) -> Vec<bool> {
        match self.column_index("valid") {
            Some(i) => self.rows.iter().map(|r| r[i] == 1.0).collect(),
            None => vec![true; self.rows.len()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Parallel,
    Sequential,
}

pub fn run_sweep(spec: &SweepSpec) -> Result<Table, SweepError> {
    run_sweep_with(spec, Execution::Parallel)
}

pub fn run_sweep_with(spec: &SweepSpec, exec: Execution) -> Result<Table, SweepError> {
    spec.validate()?;
    let mut columns = Vec::new();
    match spec.variable {
        Variable::B0 => columns.push(ColumnHeader::new("b0", "T")),
        Variable::Tau => {
            columns.push(ColumnHeader::new("tau", "s"));
            columns.push(ColumnHeader::new("tau/half_period", "1"));
        }
        Variable::NGamma => columns.push(ColumnHeader::new("n_gamma", "1")),
        Variable::T2 => columns.push(ColumnHeader::new("t2", "s")),
        Variable::Omega0 => columns.push(ColumnHeader::new("omega0/2pi", "Hz")),
        Variable::Grid2D { .. } => {
            columns.push(ColumnHeader::new("b0", "T"));
            columns.push(ColumnHeader::new("omega0/2pi", "Hz"));
        }
    }
    for c in &spec.outputs {
        columns.push(ColumnHeader::new(c.name(), c.quantity.unit()));
    }
    columns.push(ColumnHeader::new("valid", "1"));

    let evaluated = match spec.variable {
        Variable::Tau => tau_rows(spec, exec),
        _ => {
            let points = grid_points(spec);
            let eval = |(coords, ctx): &(Vec<f64>, PointCtx)| eval_point(spec, coords, ctx);
            match exec {
                Execution::Parallel => points.par_iter().map(eval).collect(),
                Execution::Sequential => points.iter().map(eval).collect(),
            }
        }
    };

    let mut rows = Vec::with_capacity(evaluated.len());
    let mut failures = Vec::new();
    for (i, ev) in evaluated.into_iter().enumerate() {
        let finite = ev.values.iter().all(|v| v.is_finite());
        let mut row = ev.values;
        row.push(if ev.ok && finite { 1.0 } else { 0.0 });
        rows.push(row);
        failures.extend(ev.failures.into_iter().map(|(column, message)| PointFailure { row: i, column, message }));
    }
    let mut provenance = spec.provenance();
    let flagged = rows.iter().filter(|r| r[r.len() - 1] == 0.0).count();
    provenance.push(format!("flagged rows {flagged} of {}", rows.len()));
    Ok(Table {
        columns,
        rows,
        provenance,
        failures,
    })
}

#[derive(Debug, Clone, Copy)]
struct PointCtx {
    system: SystemConfig,
    n_gamma: f64,
    t2: f64,
}

struct Evaluated {
    values: Vec<f64>,
    ok: bool,
    failures: Vec<(String, String)>,
}

fn grid_points(spec: &SweepSpec) -> Vec<(Vec<f64>, PointCtx)> {
    let ctx = PointCtx {
        system: spec.base,
        n_gamma: spec.options.n_gamma,
        t2: spec.options.t2,
    };
    let xs = spec.range.values();
    match spec.variable {
        Variable::B0 => xs
            .iter()
            .map(|&b| (vec![b], PointCtx { system: ctx.system.with_b0(b), ..ctx }))
            .collect(),
        Variable::NGamma => xs.iter().map(|&n| (vec![n], PointCtx { n_gamma: n, ..ctx })).collect(),
        Variable::T2 => xs.iter().map(|&t| (vec![t], PointCtx { t2: t, ..ctx })).collect(),
        Variable::Omega0 => xs
            .iter()
            .map(|&f| (vec![f], PointCtx { system: ctx.system.with_omega0(TWO_PI * f), ..ctx }))
            .collect(),
        Variable::Grid2D { omega0 } => {
            let fs = omega0.values();
            xs.iter()
                .flat_map(|&b| {
                    fs.iter().map(move |&f| {
                        let system = ctx.system.with_b0(b).with_omega0(TWO_PI * f);
                        (vec![b, f], PointCtx { system, ..ctx })
                    })
                })
                .collect()
        }
        Variable::Tau => unreachable!("tau sweeps are evaluated as traces"),
    }
}

fn rates(spec: &SweepSpec, s: &SystemConfig) -> nanorotor_core::Result<DispersiveRates> {
    dispersive_rates_with_floor(s, spec.options.delta_floor_rel * s.field.d_nv)
}

fn thermal(spec: &SweepSpec, n_gamma: f64, r: &DispersiveRates) -> nanorotor_core::Result<ThermalSpec> {
    match spec.options.n_beta {
        Some(nb) => ThermalSpec::new(n_gamma, nb),
        None => ThermalSpec::equal_temperature(n_gamma, r),
    }
}

/// Row validity shared by both evaluation paths: branch override and, when a
/// column relies on it, the zero-point dispersive criterion.
fn row_ok(spec: &SweepSpec, s: &SystemConfig) -> bool {
    if let Some(b) = spec.options.branch {
        let actual = if s.qubit_splitting() > 0.0 {
            Branch::PositiveDelta
        } else {
            Branch::NegativeDelta
        };
        if actual != b {
            return false;
        }
    }
    if spec.outputs.iter().any(|c| c.quantity.needs_dispersive()) {
        return validity_report(s, spec.options.validity_threshold)
            .map(|v| v.dispersive_ok)
            .unwrap_or(false);
    }
    true
}

fn eval_point(spec: &SweepSpec, coords: &[f64], ctx: &PointCtx) -> Evaluated {
    let s = &ctx.system;
    let sec = secular_rates(s);
    let disp = rates(spec, s);
    let mut values = coords.to_vec();
    let mut failures = Vec::new();
    for c in &spec.outputs {
        match eval_quantity(spec, c, ctx, &sec, &disp) {
            Ok(v) => values.push(v),
            Err(e) => {
                values.push(f64::NAN);
                failures.push((c.name(), e));
            }
        }
    }
    Evaluated {
        values,
        ok: row_ok(spec, s),
        failures,
    }
}

fn eval_quantity(
    spec: &SweepSpec,
    c: &Column,
    ctx: &PointCtx,
    sec: &nanorotor_core::Result<SecularRates>,
    disp: &nanorotor_core::Result<DispersiveRates>,
) -> Result<f64, String> {
    let sec = || sec.as_ref().map_err(|e| e.to_string());
    let disp = || disp.as_ref().map_err(|e| e.to_string());
    let s = &ctx.system;
    Ok(match c.quantity {
        Quantity::OmegaL => sec()?.omega_l / TWO_PI,
        Quantity::Delta => sec()?.delta_q / TWO_PI,
        Quantity::OmegaAlpha => sec()?.omega_alpha / TWO_PI,
        Quantity::OmegaBeta => sec()?.omega_beta / TWO_PI,
        Quantity::OmegaGamma => sec()?.omega_gamma / TWO_PI,
        Quantity::GBeta => sec()?.g_beta / TWO_PI,
        Quantity::GGamma => sec()?.g_gamma / TWO_PI,
        Quantity::XiBeta => sec()?.xi_beta / TWO_PI,
        Quantity::GBetaRatio => sec()?.g_beta / sec()?.omega_beta,
        Quantity::GGammaRatio => sec()?.g_gamma / sec()?.omega_gamma,
        Quantity::FreqBeta => disp()?.freq_beta / TWO_PI,
        Quantity::FreqGamma => disp()?.freq_gamma / TWO_PI,
        Quantity::ChiBeta => disp()?.chi_beta / TWO_PI,
        Quantity::ChiGamma => disp()?.chi_gamma / TWO_PI,
        Quantity::DeltaOmegaBeta | Quantity::DeltaOmegaBetaRatio => {
            let d = disp()?
                .delta_omega_beta
                .ok_or_else(|| "delta_omega_beta is defined for positive splitting only".to_string())?;
            if c.quantity == Quantity::DeltaOmegaBeta {
                d / TWO_PI
            } else {
                d / sec()?.omega_beta
            }
        }
        Quantity::Ratio(o) => frequency_ratio(disp()?, o),
        Quantity::ValidityBeta | Quantity::ValidityGamma | Quantity::ValidityCurvature => {
            let v = validity_report(s, spec.options.validity_threshold).map_err(|e| e.to_string())?;
            let i = match c.quantity {
                Quantity::ValidityBeta => 0,
                Quantity::ValidityGamma => 1,
                _ => 2,
            };
            v.dispersive_terms[i]
        }
        Quantity::BStar => find_bstar(s, lower_branch_bracket(s)).map_err(|e| e.to_string())?,
        Quantity::PStar => {
            let r = disp()?;
            let th = thermal(spec, c.n_gamma.unwrap_or(ctx.n_gamma), r).map_err(|e| e.to_string())?;
            let deph = DephasingSpec::from_t2(c.t2.unwrap_or(ctx.t2)).map_err(|e| e.to_string())?;
            protocol_probability(r, &th, &deph, PI / r.freq_gamma, spec.options.include_beta)
                .map_err(|e| e.to_string())?
                .p_up
        }
        Quantity::PUp => unreachable!("p_up columns belong to tau sweeps"),
    })
}

/// τ sweeps: one in-order trace per column, columns evaluated concurrently.
fn tau_rows(spec: &SweepSpec, exec: Execution) -> Vec<Evaluated> {
    let s = &spec.base;
    let grid = spec.range.values();
    let n = grid.len();
    let disp = rates(spec, s);
    let half = disp.as_ref().map(|r| PI / r.freq_gamma).unwrap_or(f64::NAN);
    let (taus, units): (Vec<f64>, Vec<f64>) = match spec.options.tau_unit {
        TauUnit::Seconds => (grid.clone(), grid.iter().map(|t| t / half).collect()),
        TauUnit::HalfPeriods => (grid.iter().map(|k| k * half).collect(), grid.clone()),
    };
    let trace = |c: &Column| -> Result<Vec<f64>, String> {
        let r = disp.as_ref().map_err(|e| e.to_string())?;
        let th = thermal(spec, c.n_gamma.unwrap_or(spec.options.n_gamma), r).map_err(|e| e.to_string())?;
        let deph = DephasingSpec::from_t2(c.t2.unwrap_or(spec.options.t2)).map_err(|e| e.to_string())?;
        let pts = protocol_trace(r, &th, &deph, &taus, spec.options.include_beta).map_err(|e| e.to_string())?;
        Ok(pts.iter().map(|p| p.p_up).collect())
    };
    let traces: Vec<Result<Vec<f64>, String>> = match exec {
        Execution::Parallel => spec.outputs.par_iter().map(trace).collect(),
        Execution::Sequential => spec.outputs.iter().map(trace).collect(),
    };
    let ok = row_ok(spec, s);
    (0..n)
        .map(|i| {
            let mut values = vec![taus[i], units[i]];
            let mut failures = Vec::new();
            for (c, t) in spec.outputs.iter().zip(&traces) {
                match t {
                    Ok(v) => values.push(v[i]),
                    Err(e) => {
                        values.push(f64::NAN);
                        failures.push((c.name(), e.clone()));
                    }
                }
            }
            Evaluated { values, ok, failures }
        })
        .collect()
}

/// Figure identifiers accepted by [`preset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FigureId {
    Fig1c,
    Fig1d,
    Fig1e,
    Fig2c,
    Fig2d,
    Fig2e,
    Fig2f,
    FigS1,
    FigS2a,
    FigS2b,
    FigS2c,
    FigS2d,
    FigS3a,
    FigS3b,
    FigS3c,
}

impl FigureId {
    pub const ALL: [FigureId; 15] = [
        FigureId::Fig1c,
        FigureId::Fig1d,
        FigureId::Fig1e,
        FigureId::Fig2c,
        FigureId::Fig2d,
        FigureId::Fig2e,
        FigureId::Fig2f,
        FigureId::FigS1,
        FigureId::FigS2a,
        FigureId::FigS2b,
        FigureId::FigS2c,
        FigureId::FigS2d,
        FigureId::FigS3a,
        FigureId::FigS3b,
        FigureId::FigS3c,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FigureId::Fig1c => "fig1c",
            FigureId::Fig1d => "fig1d",
            FigureId::Fig1e => "fig1e",
            FigureId::Fig2c => "fig2c",
            FigureId::Fig2d => "fig2d",
            FigureId::Fig2e => "fig2e",
            FigureId::Fig2f => "fig2f",
            FigureId::FigS1 => "figS1",
            FigureId::FigS2a => "figS2a",
            FigureId::FigS2b => "figS2b",
            FigureId::FigS2c => "figS2c",
            FigureId::FigS2d => "figS2d",
            FigureId::FigS3a => "figS3a",
            FigureId::FigS3b => "figS3b",
            FigureId::FigS3c => "figS3c",
        }
    }
}

impl fmt::Display for FigureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FigureId {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self, SweepError> {
        FigureId::ALL
            .iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s))
            .copied()
            .ok_or_else(|| {
                let ids: Vec<_> = FigureId::ALL.iter().map(|f| f.as_str()).collect();
                SweepError::Invalid(format!("unknown figure '{s}' (valid: {})", ids.join(", ")))
            })
    }
}

/// Occupations used for the per-n_γ curve families.
pub const N_GAMMA_FAMILY: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];
/// Dephasing times used for the per-T₂ curve families, s.
pub const T2_FAMILY: [f64; 4] = [0.1e-3, 0.5e-3, 1e-3, 5e-3];

/// Sweep reproducing one figure panel on top of `base`.
///
/// Only the field (and ω₀ for the 2-D grids) is overwritten; everything else
/// comes from `base`.
pub fn preset(id: FigureId, base: &SystemConfig) -> SweepSpec {
    use Quantity::*;
    let col = Column::new;
    let b0_at = |b: f64| base.with_b0(b);
    let mut notes = vec![format!("preset {id}")];
    let opts = SweepOptions::default();
    let (system, variable, range, outputs, options) = match id {
        FigureId::Fig1c => (
            *base,
            Variable::B0,
            Range::linear(10e-3, 200e-3, 191),
            vec![col(OmegaAlpha), col(OmegaBeta), col(OmegaGamma)],
            opts,
        ),
        FigureId::Fig1d => (*base, Variable::B0, Range::linear(10e-3, 200e-3, 191), vec![col(Delta)], opts),
        FigureId::Fig1e => (
            *base,
            Variable::B0,
            Range::linear(10e-3, 200e-3, 191),
            vec![col(GBeta), col(GGamma), col(GBetaRatio), col(GGammaRatio)],
            opts,
        ),
        FigureId::Fig2c => (
            b0_at(90e-3),
            Variable::Tau,
            Range::linear(0.0, 3.0, 301),
            vec![col(PUp)],
            SweepOptions {
                include_beta: false,
                n_gamma: 1.0,
                ..opts
            },
        ),
        FigureId::Fig2d => {
            notes.push("range chosen to contain the integer ratio fields below the beta instability".into());
            (
                *base,
                Variable::B0,
                Range::linear(30e-3, 99e-3, 691),
                N_GAMMA_FAMILY.iter().map(|&n| col(PStar).with_n_gamma(n)).collect(),
                SweepOptions { t2: 0.5e-3, ..opts },
            )
        }
        FigureId::Fig2e => (
            b0_at(90e-3),
            Variable::Tau,
            Range::linear(0.9, 1.1, 201),
            N_GAMMA_FAMILY.iter().map(|&n| col(PUp).with_n_gamma(n)).collect(),
            SweepOptions { t2: 0.5e-3, ..opts },
        ),
        FigureId::Fig2f => (
            b0_at(90e-3),
            Variable::Tau,
            Range::linear(0.9, 1.1, 201),
            T2_FAMILY.iter().map(|&t| col(PUp).with_t2(t)).collect(),
            SweepOptions { n_gamma: 100.0, ..opts },
        ),
        FigureId::FigS1 => {
            notes.push("range chosen to contain the anti-crossing".into());
            (
                *base,
                Variable::B0,
                Range::linear(10e-3, 200e-3, 1901),
                vec![col(ValidityBeta), col(ValidityGamma), col(ValidityCurvature)],
                opts,
            )
        }
        FigureId::FigS2a => (
            *base,
            Variable::B0,
            Range::log(0.1e-3, 100e-3, 301),
            vec![col(FreqBeta), col(FreqGamma), col(ChiBeta), col(ChiGamma), col(DeltaOmegaBeta)],
            SweepOptions {
                branch: Some(Branch::PositiveDelta),
                ..opts
            },
        ),
        FigureId::FigS2b => {
            notes.push("b_star searched below the anti-crossing".into());
            (*base, Variable::Omega0, Range::linear(1e6, 10e6, 91), vec![col(BStar)], opts)
        }
        FigureId::FigS2c => (
            *base,
            Variable::B0,
            Range::linear(104e-3, 200e-3, 193),
            vec![col(FreqBeta), col(FreqGamma), col(ChiBeta), col(ChiGamma)],
            SweepOptions {
                branch: Some(Branch::NegativeDelta),
                ..opts
            },
        ),
        FigureId::FigS2d => (
            *base,
            Variable::B0,
            Range::linear(104e-3, 200e-3, 193),
            vec![col(Ratio(RatioOrientation::GammaOverBeta))],
            SweepOptions {
                branch: Some(Branch::NegativeDelta),
                ..opts
            },
        ),
        FigureId::FigS3a => (
            *base,
            Variable::Grid2D {
                omega0: Range::linear(1e6, 10e6, 46),
            },
            Range::linear(10e-3, 100e-3, 91),
            vec![col(DeltaOmegaBetaRatio)],
            opts,
        ),
        FigureId::FigS3b => (
            *base,
            Variable::Grid2D {
                omega0: Range::linear(1e6, 10e6, 46),
            },
            Range::linear(10e-3, 100e-3, 91),
            vec![col(PStar)],
            SweepOptions {
                n_gamma: 1000.0,
                t2: 0.5e-3,
                ..opts
            },
        ),
        FigureId::FigS3c => (
            *base,
            Variable::B0,
            Range::linear(30e-3, 99e-3, 691),
            T2_FAMILY.iter().map(|&t| col(PStar).with_t2(t)).collect(),
            SweepOptions { n_gamma: 100.0, ..opts },
        ),
    };
    if matches!(id, FigureId::Fig2d | FigureId::Fig2e) {
        notes.push("n_gamma family 1 10 100 1000".into());
    }
    if matches!(id, FigureId::Fig2f | FigureId::FigS3c) {
        notes.push("t2 family 1e-4 5e-4 1e-3 5e-3 s".into());
    }
    SweepSpec {
        base: system,
        variable,
        range,
        outputs,
        options,
        notes,
    }
}

fn format_value(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.8e}")
    }
}

/// CSV text of `t`: `#` provenance lines, a `name[unit]` header, values in
/// scientific notation with 9 significant digits, the flag as 0/1.
pub fn render_table(t: &Table) -> String {
    let mut out = String::new();
    for line in &t.provenance {
        for l in line.lines() {
            out.push_str("# ");
            out.push_str(l);
            out.push('\n');
        }
    }
    let header: Vec<String> = t.columns.iter().map(|c| format!("{}[{}]", c.name, c.unit)).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    let flag = t.column_index("valid");
    for row in &t.rows {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if Some(i) == flag {
                    if v == 1.0 { "1" } else { "0" }.to_string()
                } else {
                    format_value(v)
                }
            })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_table(t: &Table, path: &Path) -> Result<(), SweepError> {
    fs::write(path, render_table(t)).map_err(|source| SweepError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_table(path: &Path) -> Result<Table, SweepError> {
    let text = fs::read_to_string(path).map_err(|source| SweepError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_table(&text).map_err(|message| SweepError::Parse {
        path: path.to_path_buf(),
        message,
    })
}

pub fn parse_table(text: &str) -> Result<Table, String> {
    let provenance = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| l.trim_start_matches('#').trim_start().to_string())
        .collect();
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let columns = rdr
        .headers()
        .map_err(|e| e.to_string())?
        .iter()
        .map(|h| {
            let (name, unit) = h
                .strip_suffix(']')
                .and_then(|h| h.rsplit_once('['))
                .ok_or_else(|| format!("header '{h}' is not name[unit]"))?;
            Ok(ColumnHeader::new(name, unit))
        })
        .collect::<Result<Vec<_>, String>>()?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let row = rec
            .iter()
            .map(|c| c.parse::<f64>().map_err(|_| format!("bad number '{c}'")))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(Table {
        columns,
        rows,
        provenance,
        failures: Vec::new(),
    })
}
