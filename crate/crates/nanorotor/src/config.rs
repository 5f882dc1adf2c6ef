//! Run configuration: sectioned TOML files, command-line overrides and sweep
//! spec files.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use nanorotor_core::su11::DephasingSpec;
use nanorotor_core::system::{
    Branch, FieldSpinConfig, Geometry, MassModel, SystemConfig, TrapConfig, DEFAULT_DELTA_FLOOR_REL,
    DEFAULT_VALIDITY_THRESHOLD,
};
use toml::{Table, Value};

use crate::sweep::{Column, Range, Scale, SweepOptions, SweepSpec, TauUnit, Variable};

/// Environment variable naming the default configuration file.
pub const CONFIG_ENV: &str = "NANOROTOR_CONFIG";

/// The reference configuration shipped with the binary.
pub const BUNDLED_FIG1: &str = include_str!("../configs/fig1.cfg");

const KEYS: &[(&str, &[&str])] = &[
    ("geometry", &["a", "b", "mass_density", "mass_model"]),
    ("trap", &["epsilon", "delta", "udc_over_uac", "omega0", "omega0_over_2pi"]),
    ("field", &["b0", "gamma_e", "d_nv", "d_nv_over_2pi"]),
    ("thermal", &["n_gamma", "n_beta"]),
    ("dephasing", &["t2"]),
    ("protocol", &["include_beta", "branch"]),
    ("output", &["dir"]),
];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("missing key '{0}'")]
    Missing(String),
    #[error("key '{key}': {message}")]
    Value { key: String, message: String },
    #[error("unknown key '{0}'")]
    Unknown(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn value_err<T>(key: &str, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Value {
        key: key.to_string(),
        message: message.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalSettings {
    pub n_gamma: f64,
    /// `None`: β at the temperature of γ.
    pub n_beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub thermal: ThermalSettings,
    pub dephasing: DephasingSpec,
    pub include_beta: bool,
    pub branch: Branch,
    pub output_dir: PathBuf,
    /// Command-line overrides as `section.key = value`, in the order applied.
    pub overrides: Vec<(String, String)>,
}

/// Splits `--name value` and `--name=value` pairs whose name is a
/// configuration key (`section.key`, or a bare key; hyphens read as
/// underscores) out of `args`. Returns the remaining arguments and the
/// overrides.
pub fn extract_overrides(args: &[String]) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let a = &args[i];
        let parsed = a.strip_prefix("--").and_then(|flag| {
            let (name, inline) = match flag.split_once('=') {
                Some((n, v)) => (n, Some(v.to_string())),
                None => (flag, None),
            };
            resolve_key(&name.replace('-', "_")).map(|k| (k, inline))
        });
        match parsed {
            Some((key, Some(v))) => {
                overrides.push((key, v));
                i += 1;
            }
            Some((key, None)) if i + 1 < args.len() => {
                overrides.push((key, args[i + 1].clone()));
                i += 2;
            }
            _ => {
                rest.push(a.clone());
                i += 1;
            }
        }
    }
    (rest, overrides)
}

/// Full `section.key` for a qualified or bare key name.
pub fn resolve_key(name: &str) -> Option<String> {
    if let Some((section, key)) = name.split_once('.') {
        return KEYS
            .iter()
            .any(|(s, keys)| *s == section && keys.contains(&key))
            .then(|| name.to_string());
    }
    let hits: Vec<_> = KEYS.iter().filter(|(_, keys)| keys.contains(&name)).collect();
    match hits.as_slice() {
        [(s, _)] => Some(format!("{s}.{name}")),
        _ => None,
    }
}

pub fn parse_toml(text: &str, origin: &str) -> Result<Table, ConfigError> {
    text.parse::<Table>().map_err(|e| ConfigError::Parse {
        origin: origin.to_string(),
        message: e.to_string().trim().to_string(),
    })
}

fn read_file(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Configuration table from `path`, else from `$NANOROTOR_CONFIG`, else the
/// bundled reference file.
pub fn load_table(path: Option<&Path>) -> Result<(Table, String), ConfigError> {
    let path = path
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from));
    match path {
        Some(p) => {
            let origin = p.display().to_string();
            Ok((parse_toml(&read_file(&p)?, &origin)?, origin))
        }
        None => Ok((parse_toml(BUNDLED_FIG1, "fig1.cfg")?, "bundled fig1.cfg".to_string())),
    }
}

/// Copies every section of `top` over `base`, key by key. Sections named in
/// `skip` are left out.
pub fn merge(base: &mut Table, top: &Table, skip: &[&str]) {
    for (section, v) in top {
        if skip.contains(&section.as_str()) {
            continue;
        }
        match (base.get_mut(section), v) {
            (Some(Value::Table(b)), Value::Table(t)) => {
                for (k, v) in t {
                    insert_key(b, k, v.clone());
                }
            }
            _ => {
                base.insert(section.clone(), v.clone());
            }
        }
    }
}

/// Inserts `key`, dropping its alternative spelling (`x` vs `x_over_2pi`).
fn insert_key(t: &mut Table, key: &str, v: Value) {
    let alt = match key.strip_suffix("_over_2pi") {
        Some(base) => base.to_string(),
        None => format!("{key}_over_2pi"),
    };
    t.remove(&alt);
    t.insert(key.to_string(), v);
}

fn parse_override_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn apply_overrides(table: &mut Table, overrides: &[(String, String)]) -> Result<(), ConfigError> {
    for (key, raw) in overrides {
        let full = resolve_key(key).ok_or_else(|| ConfigError::Unknown(key.clone()))?;
        let (section, k) = full.split_once('.').expect("resolved keys are qualified");
        let entry = table
            .entry(section.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        let Value::Table(t) = entry else {
            return value_err(section, "expected a section");
        };
        insert_key(t, k, parse_override_value(raw));
    }
    Ok(())
}

struct Reader<'a> {
    table: &'a Table,
}

impl Reader<'_> {
    fn section(&self, name: &str) -> Option<&Table> {
        match self.table.get(name) {
            Some(Value::Table(t)) => Some(t),
            _ => None,
        }
    }

    fn get(&self, section: &str, key: &str) -> Option<&Value> {
        self.section(section).and_then(|t| t.get(key))
    }

    fn opt_f64(&self, section: &str, key: &str) -> Result<Option<f64>, ConfigError> {
        let name = format!("{section}.{key}");
        match self.get(section, key) {
            None => Ok(None),
            Some(Value::Float(x)) => Ok(Some(*x)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(Value::String(s)) => match s.trim().parse::<f64>() {
                Ok(x) => Ok(Some(x)),
                Err(_) => value_err(&name, format!("expected a number, got '{s}'")),
            },
            Some(v) => value_err(&name, format!("expected a number, got {}", v.type_str())),
        }
    }

    fn f64(&self, section: &str, key: &str) -> Result<f64, ConfigError> {
        self.opt_f64(section, key)?
            .ok_or_else(|| ConfigError::Missing(format!("{section}.{key}")))
    }

    /// Angular frequency given either as `key` (rad/s) or `key_over_2pi` (Hz).
    fn angular(&self, section: &str, key: &str) -> Result<f64, ConfigError> {
        let hz_key = format!("{key}_over_2pi");
        match (self.opt_f64(section, key)?, self.opt_f64(section, &hz_key)?) {
            (Some(_), Some(_)) => value_err(&format!("{section}.{key}"), format!("conflicts with {section}.{hz_key}")),
            (Some(w), None) => Ok(w),
            (None, Some(f)) => Ok(2.0 * PI * f),
            (None, None) => Err(ConfigError::Missing(format!("{section}.{key}"))),
        }
    }

    fn opt_bool(&self, section: &str, key: &str) -> Result<Option<bool>, ConfigError> {
        match self.get(section, key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(Value::String(s)) if s == "true" || s == "false" => Ok(Some(s == "true")),
            Some(v) => value_err(&format!("{section}.{key}"), format!("expected true or false, got {v}")),
        }
    }

    fn opt_str(&self, section: &str, key: &str) -> Result<Option<&str>, ConfigError> {
        match self.get(section, key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(v) => value_err(&format!("{section}.{key}"), format!("expected a string, got {v}")),
        }
    }
}

fn check_known(table: &Table) -> Result<(), ConfigError> {
    for (section, v) in table {
        let Some((_, keys)) = KEYS.iter().find(|(s, _)| s == section) else {
            return Err(ConfigError::Unknown(section.clone()));
        };
        let Value::Table(t) = v else {
            return value_err(section, "expected a section");
        };
        for k in t.keys() {
            if !keys.contains(&k.as_str()) {
                return Err(ConfigError::Unknown(format!("{section}.{k}")));
            }
        }
    }
    Ok(())
}

pub fn parse_branch(key: &str, s: &str) -> Result<Branch, ConfigError> {
    match s {
        "positive" => Ok(Branch::PositiveDelta),
        "negative" => Ok(Branch::NegativeDelta),
        _ => value_err(key, format!("expected 'positive' or 'negative', got '{s}'")),
    }
}

impl RunConfig {
    /// Loads the configuration file (see [`load_table`]) and applies
    /// `overrides` on top.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let (mut table, _) = load_table(path)?;
        apply_overrides(&mut table, overrides)?;
        let mut cfg = Self::from_table(&table)?;
        cfg.overrides = overrides.to_vec();
        Ok(cfg)
    }

    pub fn from_table(table: &Table) -> Result<Self, ConfigError> {
        check_known(table)?;
        let r = Reader { table };
        let mass_model = match r.opt_str("geometry", "mass_model")? {
            None | Some("prolate_volume") => MassModel::ProlateVolume,
            Some("oblate_volume") => MassModel::OblateVolume,
            Some(other) => {
                return value_err(
                    "geometry.mass_model",
                    format!("expected 'prolate_volume' or 'oblate_volume', got '{other}'"),
                )
            }
        };
        let geometry = Geometry::new(r.f64("geometry", "a")?, r.f64("geometry", "b")?, r.f64("geometry", "mass_density")?)
            .map_err(|e| ConfigError::Value {
                key: "geometry".into(),
                message: e.to_string(),
            })?
            .with_mass_model(mass_model);
        let trap = TrapConfig::new(
            r.f64("trap", "epsilon")?,
            r.f64("trap", "delta")?,
            r.f64("trap", "udc_over_uac")?,
            r.angular("trap", "omega0")?,
        )
        .map_err(|e| ConfigError::Value {
            key: "trap".into(),
            message: e.to_string(),
        })?;
        let field = FieldSpinConfig::new(r.f64("field", "b0")?, r.f64("field", "gamma_e")?, r.angular("field", "d_nv")?)
            .map_err(|e| ConfigError::Value {
                key: "field".into(),
                message: e.to_string(),
            })?;
        let n_gamma = r.opt_f64("thermal", "n_gamma")?.unwrap_or(1.0);
        let n_beta = r.opt_f64("thermal", "n_beta")?;
        for (k, v) in [("thermal.n_gamma", Some(n_gamma)), ("thermal.n_beta", n_beta)] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return value_err(k, "must be finite and non-negative");
                }
            }
        }
        let t2 = r.opt_f64("dephasing", "t2")?.unwrap_or(f64::INFINITY);
        let dephasing = DephasingSpec::from_t2(t2).or_else(|e| value_err("dephasing.t2", e.to_string()))?;
        let branch = match r.opt_str("protocol", "branch")? {
            None => Branch::PositiveDelta,
            Some(s) => parse_branch("protocol.branch", s)?,
        };
        Ok(Self {
            system: SystemConfig { geometry, trap, field },
            thermal: ThermalSettings { n_gamma, n_beta },
            dephasing,
            include_beta: r.opt_bool("protocol", "include_beta")?.unwrap_or(true),
            branch,
            output_dir: PathBuf::from(r.opt_str("output", "dir")?.unwrap_or(".")),
            overrides: Vec::new(),
        })
    }
}

/// Sweep spec file: a `[sweep]` section plus optional system sections that
/// replace the corresponding keys of the run configuration.
///
/// Precedence, lowest first: configuration file, spec file, command line.
pub fn load_sweep_spec(
    path: &Path,
    config: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<(SweepSpec, RunConfig), ConfigError> {
    let origin = path.display().to_string();
    let spec_table = parse_toml(&read_file(path)?, &origin)?;
    let (mut table, _) = load_table(config)?;
    merge(&mut table, &spec_table, &["sweep"]);
    apply_overrides(&mut table, overrides)?;
    let mut run = RunConfig::from_table(&table)?;
    run.overrides = overrides.to_vec();
    let Some(Value::Table(sweep)) = spec_table.get("sweep") else {
        return Err(ConfigError::Missing("sweep".into()));
    };
    let spec = sweep_from_table(sweep, &run)?;
    Ok((spec, run))
}

fn range_from(r: &Reader, section: &str, scale_default: Scale) -> Result<Range, ConfigError> {
    let points = r.f64(section, "points")?;
    if !(points >= 0.0 && points.fract() == 0.0) {
        return value_err(&format!("{section}.points"), "must be a whole number");
    }
    let scale = match r.opt_str(section, "scale")? {
        None => scale_default,
        Some("linear") => Scale::Linear,
        Some("log") => Scale::Log,
        Some(s) => return value_err(&format!("{section}.scale"), format!("expected 'linear' or 'log', got '{s}'")),
    };
    Ok(Range {
        start: r.f64(section, "start")?,
        stop: r.f64(section, "stop")?,
        points: points as usize,
        scale,
    })
}

pub fn sweep_from_table(sweep: &Table, run: &RunConfig) -> Result<SweepSpec, ConfigError> {
    const SWEEP_KEYS: &[&str] = &[
        "variable",
        "start",
        "stop",
        "points",
        "scale",
        "columns",
        "include_beta",
        "branch",
        "n_gamma",
        "n_beta",
        "t2",
        "tau_unit",
        "validity_threshold",
        "delta_floor_rel",
        "omega0",
        "notes",
    ];
    for k in sweep.keys() {
        if !SWEEP_KEYS.contains(&k.as_str()) {
            return Err(ConfigError::Unknown(format!("sweep.{k}")));
        }
    }
    let mut wrapped = Table::new();
    wrapped.insert("sweep".into(), Value::Table(sweep.clone()));
    if let Some(Value::Table(g)) = sweep.get("omega0") {
        wrapped.insert("sweep.omega0".into(), Value::Table(g.clone()));
    }
    let r = Reader { table: &wrapped };
    let range = range_from(&r, "sweep", Scale::Linear)?;
    let variable = match r.opt_str("sweep", "variable")? {
        Some("b0") => Variable::B0,
        Some("tau") => Variable::Tau,
        Some("n_gamma") => Variable::NGamma,
        Some("t2") => Variable::T2,
        Some("omega0") => Variable::Omega0,
        Some("grid") => Variable::Grid2D {
            omega0: range_from(&r, "sweep.omega0", Scale::Linear)?,
        },
        Some(s) => {
            return value_err(
                "sweep.variable",
                format!("expected one of b0, tau, n_gamma, t2, omega0, grid; got '{s}'"),
            )
        }
        None => return Err(ConfigError::Missing("sweep.variable".into())),
    };
    let outputs = match sweep.get("columns") {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::String(s) => s.parse::<Column>().or_else(|e| value_err("sweep.columns", e.to_string())),
                other => value_err("sweep.columns", format!("expected strings, got {other}")),
            })
            .collect::<Result<Vec<_>, _>>()?,
        Some(other) => return value_err("sweep.columns", format!("expected an array, got {other}")),
        None => return Err(ConfigError::Missing("sweep.columns".into())),
    };
    let tau_unit = match r.opt_str("sweep", "tau_unit")? {
        None | Some("half_period") => TauUnit::HalfPeriods,
        Some("s") => TauUnit::Seconds,
        Some(s) => return value_err("sweep.tau_unit", format!("expected 's' or 'half_period', got '{s}'")),
    };
    let branch = match r.opt_str("sweep", "branch")? {
        None | Some("auto") => None,
        Some(s) => Some(parse_branch("sweep.branch", s)?),
    };
    let notes = match sweep.get("notes") {
        None => Vec::new(),
        Some(Value::String(s)) => vec![s.clone()],
        Some(other) => return value_err("sweep.notes", format!("expected a string, got {other}")),
    };
    let options = SweepOptions {
        include_beta: r.opt_bool("sweep", "include_beta")?.unwrap_or(run.include_beta),
        branch,
        n_gamma: r.opt_f64("sweep", "n_gamma")?.unwrap_or(run.thermal.n_gamma),
        n_beta: r.opt_f64("sweep", "n_beta")?.or(run.thermal.n_beta),
        t2: r.opt_f64("sweep", "t2")?.unwrap_or(run.dephasing.t2),
        tau_unit,
        validity_threshold: r
            .opt_f64("sweep", "validity_threshold")?
            .unwrap_or(DEFAULT_VALIDITY_THRESHOLD),
        delta_floor_rel: r.opt_f64("sweep", "delta_floor_rel")?.unwrap_or(DEFAULT_DELTA_FLOOR_REL),
    };
    Ok(SweepSpec {
        base: run.system,
        variable,
        range,
        outputs,
        options,
        notes,
    })
}
