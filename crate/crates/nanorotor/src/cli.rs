//! The `nanorotor` command line.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 computation
//! domain error, 4 oracle non-convergence or oracle disagreement.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nanorotor_core::su11::{protocol_trace, ThermalSpec};
use nanorotor_core::system::{
    dispersive_rates, find_anti_crossing, find_bstar, lower_branch_bracket, secular_rates, validity_report, Branch,
    DispersiveRates, SystemConfig, DEFAULT_VALIDITY_THRESHOLD,
};

use crate::config::{extract_overrides, load_sweep_spec, load_table, RunConfig};
use crate::oracle::{oracle_trace, OracleError, OracleSettings};
use crate::sweep::{preset, run_sweep, Column, ColumnHeader, FigureId, Table};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_COMPUTE: i32 = 3;
pub const EXIT_ORACLE: i32 = 4;

const OVERRIDE_HELP: &str = "\
Configuration keys can be overridden on the command line as
`--<section>.<key> <value>` or, when the key name is unique, `--<key> <value>`
(for example `--field.b0 90e-3`, `--b0 90e-3`, `--t2 0.5e-3`).
Without --config the file named by NANOROTOR_CONFIG is read, and without
that the bundled reference configuration.";

#[derive(Debug, Parser)]
#[command(name = "nanorotor", version, about = "Spin-echo protocol for a levitated nanorotor", after_help = OVERRIDE_HELP)]
struct Cli {
    /// Configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides output.dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Derived rates, validity checks, anti-crossing and critical field.
    Params {
        /// Also write params.csv.
        #[arg(long)]
        csv: bool,
    },
    /// Closed-form probability trace, written to echo.csv.
    Echo(EchoArgs),
    /// Closed form against the Fock-space oracle, written to oracle.csv.
    Oracle(OracleArgs),
    /// Run a sweep spec file; writes <stem>.csv.
    Sweep { spec: PathBuf },
    /// Run a figure preset; writes <id>.csv.
    Figure(FigureArgs),
}

#[derive(Debug, Args)]
struct TauGrid {
    /// First τ in s; must be 0.
    #[arg(long, default_value_t = 0.0)]
    tau_start: f64,
    /// Last τ in s [default: 1.2π/ω̃_γ].
    #[arg(long, conflicts_with = "half_periods")]
    tau_stop: Option<f64>,
    /// Last τ in units of π/ω̃_γ.
    #[arg(long)]
    half_periods: Option<f64>,
    /// Number of grid points.
    #[arg(long)]
    points: Option<usize>,
    /// Leave the β mode out.
    #[arg(long)]
    no_beta: bool,
}

#[derive(Debug, Args)]
struct EchoArgs {
    #[command(flatten)]
    grid: TauGrid,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[command(flatten)]
    grid: TauGrid,
    /// Convergence and comparison tolerance.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Largest Fock dimension tried.
    #[arg(long, default_value_t = OracleSettings::default().max_dim)]
    dim_cap: usize,
    /// First Fock dimension tried.
    #[arg(long, default_value_t = OracleSettings::default().start_dim)]
    dim_start: usize,
}

#[derive(Debug, Args)]
struct FigureArgs {
    id: String,
    /// Replace the n_γ values of the per-occupation curves.
    #[arg(long, value_delimiter = ',')]
    n_gamma_family: Option<Vec<f64>>,
    /// Replace the T₂ values (s) of the per-dephasing curves.
    #[arg(long, value_delimiter = ',')]
    t2_family: Option<Vec<f64>>,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

fn fail(code: i32, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    fail(EXIT_CONFIG, e.to_string())
}

fn compute_err(e: impl std::fmt::Display) -> Failure {
    fail(EXIT_COMPUTE, e.to_string())
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run(args: Vec<String>) -> i32 {
    let (rest, overrides) = extract_overrides(&args);
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(&cli, &overrides) {
        Ok(out) => {
            print!("{out}");
            EXIT_OK
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

struct Context {
    run: RunConfig,
    origin: String,
    out_dir: PathBuf,
}

fn context(cli: &Cli, overrides: &[(String, String)]) -> Result<Context, Failure> {
    let run = RunConfig::load(cli.config.as_deref(), overrides).map_err(config_err)?;
    let (_, origin) = load_table(cli.config.as_deref()).map_err(config_err)?;
    let out_dir = cli.out.clone().unwrap_or_else(|| run.output_dir.clone());
    Ok(Context { run, origin, out_dir })
}

fn dispatch(cli: &Cli, overrides: &[(String, String)]) -> Result<String, Failure> {
    match &cli.command {
        Command::Params { csv } => cmd_params(&context(cli, overrides)?, *csv),
        Command::Echo(a) => cmd_echo(&context(cli, overrides)?, a),
        Command::Oracle(a) => cmd_oracle(&context(cli, overrides)?, a),
        Command::Sweep { spec } => cmd_sweep(cli, overrides, spec),
        Command::Figure(a) => cmd_figure(&context(cli, overrides)?, a),
    }
}

fn write_output(dir: &Path, name: &str, t: &Table) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir).map_err(|e| config_err(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    crate::sweep::write_table(t, &path).map_err(config_err)?;
    Ok(path)
}

fn provenance(ctx: &Context, command: &str) -> Vec<String> {
    let s = &ctx.run.system;
    let mut p = vec![
        format!("nanorotor {}", env!("CARGO_PKG_VERSION")),
        format!("command {command}"),
        format!("config {}", ctx.origin),
    ];
    for (k, v) in &ctx.run.overrides {
        p.push(format!("override {k}={v}"));
    }
    p.push(format!(
        "geometry a={} b={} mass_density={} mass_model={:?}",
        s.geometry.a, s.geometry.b, s.geometry.mass_density, s.geometry.mass_model
    ));
    p.push(format!(
        "trap epsilon={} delta={} udc_over_uac={} omega0={}",
        s.trap.epsilon, s.trap.delta, s.trap.udc_over_uac, s.trap.omega0
    ));
    p.push(format!("field b0={} gamma_e={} d_nv={}", s.field.b0, s.field.gamma_e, s.field.d_nv));
    p
}

struct Row<'a>(&'a mut String);

impl Row<'_> {
    fn rate(&mut self, name: &str, w: f64) {
        let _ = writeln!(self.0, "  {name:<24}{w:>16.6e} rad/s {:>16.6e} Hz", w / (2.0 * PI));
    }

    fn value(&mut self, name: &str, v: f64, unit: &str) {
        let _ = writeln!(self.0, "  {name:<24}{v:>16.6e} {unit}");
    }
}

fn cmd_params(ctx: &Context, csv: bool) -> Result<String, Failure> {
    let s = &ctx.run.system;
    let mut out = String::new();
    let sec = secular_rates(s).map_err(compute_err)?;
    let _ = writeln!(out, "field B0 = {:.6e} T", s.field.b0);
    let _ = writeln!(out, "secular rates");
    let mut r = Row(&mut out);
    r.rate("omega_L", sec.omega_l);
    r.rate("Delta", sec.delta_q);
    r.rate("omega_alpha", sec.omega_alpha);
    r.rate("omega_beta", sec.omega_beta);
    r.rate("omega_gamma", sec.omega_gamma);
    r.rate("g_beta", sec.g_beta);
    r.rate("g_gamma", sec.g_gamma);
    r.rate("xi_beta", sec.xi_beta);
    r.value("beta0", sec.beta0, "rad");
    r.value("gamma0", sec.gamma0, "rad");

    let anti = find_anti_crossing(s, (1e-9 * s.field.anti_crossing_field(), 2.0 * s.field.anti_crossing_field()));
    let bstar = find_bstar(s, lower_branch_bracket(s));
    let _ = writeln!(out, "fields");
    let mut r = Row(&mut out);
    match &anti {
        Ok(b) => r.value("anti-crossing", *b, "T"),
        Err(e) => {
            let _ = writeln!(r.0, "  anti-crossing           none ({e})");
        }
    }
    match &bstar {
        Ok(b) => r.value("B_star", *b, "T"),
        Err(e) => {
            let _ = writeln!(r.0, "  B_star                  none below the anti-crossing ({e})");
        }
    }

    let validity = validity_report(s, DEFAULT_VALIDITY_THRESHOLD).map_err(compute_err)?;
    let _ = writeln!(out, "validity (threshold {DEFAULT_VALIDITY_THRESHOLD})");
    let mut r = Row(&mut out);
    r.value("|wL/D| beta0^2", validity.dispersive_terms[0], "");
    r.value("(wL/D)^2 gamma0^2", validity.dispersive_terms[1], "");
    r.value("I3 wg^2 gamma0^2/4hD", validity.dispersive_terms[2], "");
    let _ = writeln!(
        out,
        "  epsilon ok {}  udc ok {}  dispersive ok {}  beta stable {}",
        validity.epsilon_ok, validity.udc_ratio_ok, validity.dispersive_ok, validity.beta_stable
    );

    let disp = dispersive_rates(s);
    match &disp {
        Ok(d) => {
            let branch = match d.branch {
                Branch::PositiveDelta => "Delta > 0",
                Branch::NegativeDelta => "Delta < 0",
            };
            let _ = writeln!(out, "dispersive rates ({branch})");
            let mut r = Row(&mut out);
            r.rate("freq_beta", d.freq_beta);
            r.rate("freq_gamma", d.freq_gamma);
            r.rate("chi_beta", d.chi_beta);
            r.rate("chi_gamma", d.chi_gamma);
            if let Some(dw) = d.delta_omega_beta {
                r.rate("delta_omega_beta", dw);
            }
        }
        Err(e) => {
            let _ = writeln!(out, "dispersive rates unavailable: {e}");
        }
    }

    if csv {
        let two_pi = 2.0 * PI;
        let d = disp.as_ref().ok();
        let nan = f64::NAN;
        let cells: Vec<(&str, &str, f64)> = vec![
            ("b0", "T", s.field.b0),
            ("omega_l/2pi", "Hz", sec.omega_l / two_pi),
            ("delta/2pi", "Hz", sec.delta_q / two_pi),
            ("omega_alpha/2pi", "Hz", sec.omega_alpha / two_pi),
            ("omega_beta/2pi", "Hz", sec.omega_beta / two_pi),
            ("omega_gamma/2pi", "Hz", sec.omega_gamma / two_pi),
            ("g_beta/2pi", "Hz", sec.g_beta / two_pi),
            ("g_gamma/2pi", "Hz", sec.g_gamma / two_pi),
            ("xi_beta/2pi", "Hz", sec.xi_beta / two_pi),
            ("freq_beta/2pi", "Hz", d.map_or(nan, |d| d.freq_beta / two_pi)),
            ("freq_gamma/2pi", "Hz", d.map_or(nan, |d| d.freq_gamma / two_pi)),
            ("chi_beta/2pi", "Hz", d.map_or(nan, |d| d.chi_beta / two_pi)),
            ("chi_gamma/2pi", "Hz", d.map_or(nan, |d| d.chi_gamma / two_pi)),
            (
                "delta_omega_beta/2pi",
                "Hz",
                d.and_then(|d| d.delta_omega_beta).map_or(nan, |w| w / two_pi),
            ),
            ("validity_beta", "1", validity.dispersive_terms[0]),
            ("validity_gamma", "1", validity.dispersive_terms[1]),
            ("validity_curvature", "1", validity.dispersive_terms[2]),
            ("b_anti_crossing", "T", anti.as_ref().copied().unwrap_or(nan)),
            ("b_star", "T", bstar.as_ref().copied().unwrap_or(nan)),
        ];
        let mut columns: Vec<ColumnHeader> = cells
            .iter()
            .map(|(n, u, _)| ColumnHeader {
                name: n.to_string(),
                unit: u.to_string(),
            })
            .collect();
        columns.push(ColumnHeader {
            name: "valid".into(),
            unit: "1".into(),
        });
        let mut row: Vec<f64> = cells.iter().map(|c| c.2).collect();
        row.push(if validity.dispersive_ok && disp.is_ok() { 1.0 } else { 0.0 });
        let t = Table {
            columns,
            rows: vec![row],
            provenance: provenance(ctx, "params"),
            failures: Vec::new(),
        };
        let path = write_output(&ctx.out_dir, "params.csv", &t)?;
        let _ = writeln!(out, "wrote {}", path.display());
    }
    if let Err(e) = disp {
        print!("{out}");
        return Err(compute_err(e));
    }
    Ok(out)
}

struct Prepared {
    rates: DispersiveRates,
    thermal: ThermalSpec,
    taus: Vec<f64>,
    half: f64,
    include_beta: bool,
    valid: bool,
}

fn prepare(ctx: &Context, grid: &TauGrid, default_points: usize) -> Result<Prepared, Failure> {
    let s: &SystemConfig = &ctx.run.system;
    if grid.tau_start != 0.0 {
        return Err(fail(
            EXIT_CONFIG,
            "the tau grid must start at 0 so the square-root branch can be followed",
        ));
    }
    let delta = s.qubit_splitting();
    match ctx.run.branch {
        Branch::PositiveDelta if delta < 0.0 => {
            return Err(fail(
                EXIT_CONFIG,
                "qubit splitting is negative at this field; set protocol.branch = \"negative\"",
            ))
        }
        Branch::NegativeDelta if delta > 0.0 => {
            return Err(fail(
                EXIT_CONFIG,
                "qubit splitting is positive at this field but protocol.branch is \"negative\"",
            ))
        }
        _ => {}
    }
    let rates = dispersive_rates(s).map_err(compute_err)?;
    let thermal = match ctx.run.thermal.n_beta {
        Some(nb) => ThermalSpec::new(ctx.run.thermal.n_gamma, nb),
        None => ThermalSpec::equal_temperature(ctx.run.thermal.n_gamma, &rates),
    }
    .map_err(config_err)?;
    let half = PI / rates.freq_gamma;
    let stop = match (grid.tau_stop, grid.half_periods) {
        (Some(t), _) => t,
        (None, Some(k)) => k * half,
        (None, None) => 1.2 * half,
    };
    let points = grid.points.unwrap_or(default_points);
    if points < 2 || !(stop > 0.0 && stop.is_finite()) {
        return Err(fail(EXIT_CONFIG, "the tau grid needs at least 2 points and a positive end"));
    }
    let taus = (0..points)
        .map(|i| if i + 1 == points { stop } else { stop * i as f64 / (points - 1) as f64 })
        .collect();
    let valid = validity_report(s, DEFAULT_VALIDITY_THRESHOLD)
        .map(|v| v.dispersive_ok)
        .unwrap_or(false);
    Ok(Prepared {
        rates,
        thermal,
        taus,
        half,
        include_beta: ctx.run.include_beta && !grid.no_beta,
        valid,
    })
}

fn header(name: &str, unit: &str) -> ColumnHeader {
    ColumnHeader {
        name: name.into(),
        unit: unit.into(),
    }
}

fn trace_provenance(ctx: &Context, command: &str, p: &Prepared) -> Vec<String> {
    let mut prov = provenance(ctx, command);
    prov.push(format!(
        "thermal n_gamma={} n_beta={} include_beta={}",
        p.thermal.n_gamma, p.thermal.n_beta, p.include_beta
    ));
    prov.push(format!("dephasing t2={}", ctx.run.dephasing.t2));
    prov
}

fn cmd_echo(ctx: &Context, a: &EchoArgs) -> Result<String, Failure> {
    let p = prepare(ctx, &a.grid, 241)?;
    let pts = protocol_trace(&p.rates, &p.thermal, &ctx.run.dephasing, &p.taus, p.include_beta).map_err(compute_err)?;
    let flag = if p.valid { 1.0 } else { 0.0 };
    let t = Table {
        columns: vec![
            header("tau", "s"),
            header("tau/half_period", "1"),
            header("p_up", "1"),
            header("p_down", "1"),
            header("valid", "1"),
        ],
        rows: pts.iter().map(|q| vec![q.tau, q.tau / p.half, q.p_up, q.p_down, flag]).collect(),
        provenance: trace_provenance(ctx, "echo", &p),
        failures: Vec::new(),
    };
    let path = write_output(&ctx.out_dir, "echo.csv", &t)?;
    let last = pts.last().expect("grid has at least two points");
    let mut out = String::new();
    let _ = writeln!(out, "wrote {} ({} rows)", path.display(), pts.len());
    let _ = writeln!(out, "half period pi/freq_gamma = {:.6e} s", p.half);
    let _ = writeln!(out, "final tau {:.6e} s  P_up {:.9}", last.tau, last.p_up);
    if !p.valid {
        let _ = writeln!(out, "warning: dispersive approximation not satisfied at this field");
    }
    Ok(out)
}

fn cmd_oracle(ctx: &Context, a: &OracleArgs) -> Result<String, Failure> {
    let p = prepare(ctx, &a.grid, 50)?;
    if !(a.tol >= 0.0) {
        return Err(fail(EXIT_CONFIG, "--tol must be non-negative"));
    }
    let closed = protocol_trace(&p.rates, &p.thermal, &ctx.run.dephasing, &p.taus, p.include_beta).map_err(compute_err)?;
    let settings = OracleSettings {
        tol: a.tol,
        start_dim: a.dim_start,
        max_dim: a.dim_cap,
    };
    let oracle = match oracle_trace(&p.rates, &p.thermal, &ctx.run.dephasing, &p.taus, p.include_beta, &settings) {
        Ok(o) => o,
        Err(OracleError::NotConverged { mode, record }) => {
            return Err(fail(
                EXIT_ORACLE,
                format!(
                    "oracle for the {mode} mode did not converge: dims {:?}, changes {:?}",
                    record.dims_tried, record.max_changes
                ),
            ))
        }
        Err(OracleError::TruncationLoss { dim, loss }) => {
            return Err(fail(
                EXIT_ORACLE,
                format!("thermal weight lost at the dimension cap {dim}: {loss:.3e}"),
            ))
        }
        Err(OracleError::Invalid(m)) => return Err(fail(EXIT_CONFIG, m)),
        Err(e) => return Err(compute_err(e)),
    };
    let flag = if p.valid { 1.0 } else { 0.0 };
    let mut max_diff: f64 = 0.0;
    let rows = closed
        .iter()
        .zip(&oracle.points)
        .map(|(c, o)| {
            let d = (c.p_up - o.p_up).abs();
            max_diff = max_diff.max(d);
            vec![c.tau, c.tau / p.half, c.p_up, o.p_up, d, flag]
        })
        .collect();
    let t = Table {
        columns: vec![
            header("tau", "s"),
            header("tau/half_period", "1"),
            header("p_up_closed", "1"),
            header("p_up_oracle", "1"),
            header("abs_diff", "1"),
            header("valid", "1"),
        ],
        rows,
        provenance: trace_provenance(ctx, "oracle", &p),
        failures: Vec::new(),
    };
    let path = write_output(&ctx.out_dir, "oracle.csv", &t)?;
    let mut out = String::new();
    let _ = writeln!(out, "wrote {}", path.display());
    let _ = writeln!(out, "gamma dims {:?} final {}", oracle.gamma.dims_tried, oracle.gamma.final_dim);
    if let Some(b) = &oracle.beta {
        let _ = writeln!(out, "beta dims {:?} final {}", b.dims_tried, b.final_dim);
    }
    let _ = writeln!(out, "max |difference| {max_diff:.3e} (tol {:.3e})", a.tol);
    if max_diff < a.tol {
        Ok(out)
    } else {
        print!("{out}");
        Err(fail(EXIT_ORACLE, "closed form and oracle differ by more than the tolerance"))
    }
}

fn cmd_sweep(cli: &Cli, overrides: &[(String, String)], spec_path: &Path) -> Result<String, Failure> {
    let (spec, run) = load_sweep_spec(spec_path, cli.config.as_deref(), overrides).map_err(config_err)?;
    let table = run_sweep(&spec).map_err(config_err)?;
    let out_dir = cli.out.clone().unwrap_or(run.output_dir);
    let stem = spec_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sweep".into());
    let path = write_output(&out_dir, &format!("{stem}.csv"), &table)?;
    Ok(summary(&path, &table))
}

fn summary(path: &Path, t: &Table) -> String {
    let flagged = t.valid().iter().filter(|v| !**v).count();
    let mut out = format!("wrote {} ({} rows, {flagged} flagged)\n", path.display(), t.rows.len());
    if let Some(f) = t.failures.first() {
        let _ = writeln!(out, "first failure: row {} column {}: {}", f.row, f.column, f.message);
    }
    out
}

fn cmd_figure(ctx: &Context, a: &FigureArgs) -> Result<String, Failure> {
    let id: FigureId = a.id.parse().map_err(config_err)?;
    let mut spec = preset(id, &ctx.run.system);
    let mut head = vec![format!("config {}", ctx.origin)];
    head.extend(ctx.run.overrides.iter().map(|(k, v)| format!("override {k}={v}")));
    spec.notes.splice(0..0, head);
    if let Some(family) = &a.n_gamma_family {
        replace_family(&mut spec.outputs, family, |c| c.n_gamma.is_some(), |c, v| c.with_n_gamma(v))?;
        spec.notes.push(format!("n_gamma family replaced by {family:?}"));
    }
    if let Some(family) = &a.t2_family {
        replace_family(&mut spec.outputs, family, |c| c.t2.is_some(), |c, v| c.with_t2(v))?;
        spec.notes.push(format!("t2 family replaced by {family:?}"));
    }
    let table = run_sweep(&spec).map_err(config_err)?;
    let path = write_output(&ctx.out_dir, &format!("{id}.csv"), &table)?;
    Ok(summary(&path, &table))
}

fn replace_family(
    outputs: &mut Vec<Column>,
    family: &[f64],
    member: impl Fn(&Column) -> bool,
    make: impl Fn(Column, f64) -> Column,
) -> Result<(), Failure> {
    let Some(first) = outputs.iter().position(&member) else {
        return Err(fail(EXIT_CONFIG, "this figure has no such curve family"));
    };
    let template = outputs[first];
    outputs.retain(|c| !member(c));
    for (i, &v) in family.iter().enumerate() {
        outputs.insert(first + i, make(template, v));
    }
    Ok(())
}
