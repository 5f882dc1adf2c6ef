use std::f64::consts::PI;

use nanorotor::sweep::*;
use nanorotor_core::su11::{protocol_probability, DephasingSpec, ThermalSpec};
use nanorotor_core::system::{
    dispersive_rates, find_bstar, find_resonance_fields, lower_branch_bracket, Branch, RatioOrientation,
    SystemConfig,
};
use proptest::prelude::*;

fn base() -> SystemConfig {
    SystemConfig::reference(90e-3)
}

fn spec(variable: Variable, range: Range, cols: &[&str]) -> SweepSpec {
    SweepSpec {
        base: base(),
        variable,
        range,
        outputs: cols.iter().map(|c| c.parse().unwrap()).collect(),
        options: SweepOptions::default(),
        notes: Vec::new(),
    }
}

fn local_maxima(x: &[f64], y: &[f64]) -> Vec<f64> {
    (1..y.len() - 1)
        .filter(|&i| y[i] > y[i - 1] && y[i] >= y[i + 1])
        .map(|i| x[i])
        .collect()
}

#[test]
fn delta_changes_sign_once() {
    let t = run_sweep(&preset(FigureId::Fig1d, &base())).unwrap();
    let b = t.column("b0").unwrap();
    let d = t.column("delta/2pi").unwrap();
    let crossings: Vec<usize> = (1..d.len()).filter(|&i| d[i - 1] > 0.0 && d[i] <= 0.0).collect();
    assert_eq!(crossings.len(), 1);
    assert!(d.iter().all(|v| *v != 0.0));
    let i = crossings[0];
    assert!(b[i - 1] < 102.4588e-3 && 102.4588e-3 < b[i]);
}

#[test]
fn echo_preset_revives() {
    let t = run_sweep(&preset(FigureId::Fig2c, &base())).unwrap();
    let k = t.column("tau/half_period").unwrap();
    let p = t.column("p_up").unwrap();
    assert_eq!(p[0], 1.0);
    for target in [1.0, 2.0, 3.0] {
        let i = k.iter().position(|v| (v - target).abs() < 1e-12).unwrap();
        assert!(p[i] > 1.0 - 1e-9, "k={target}: {}", p[i]);
    }
    assert!(t.valid().iter().all(|v| *v));
}

#[test]
fn degenerate_ranges_rejected() {
    let one = spec(Variable::B0, Range::linear(0.05, 0.06, 1), &["omega_gamma"]);
    assert!(matches!(run_sweep(&one), Err(SweepError::Invalid(_))));
    let flat = spec(Variable::B0, Range::linear(0.05, 0.05, 10), &["omega_gamma"]);
    assert!(run_sweep(&flat).is_err());
    let log0 = spec(Variable::B0, Range::log(0.0, 0.05, 10), &["omega_gamma"]);
    assert!(run_sweep(&log0).is_err());
}

#[test]
fn incomputable_columns_rejected() {
    let r = Range::linear(0.05, 0.06, 3);
    for (var, col) in [
        (Variable::B0, "p_up"),
        (Variable::B0, "b_star"),
        (Variable::Tau, "omega_gamma"),
        (Variable::NGamma, "omega_gamma"),
        (Variable::NGamma, "p_star(n_gamma=3)"),
        (Variable::T2, "p_star(t2=1e-3)"),
        (Variable::B0, "omega_gamma(n_gamma=3)"),
    ] {
        assert!(spec(var, r, &[col]).validate().is_err(), "{col} on {var:?}");
    }
    assert!("no_such_column".parse::<Column>().is_err());
    assert!("p_star(n_gamma=1".parse::<Column>().is_err());
    assert!("p_star(q=1)".parse::<Column>().is_err());
}

#[test]
fn column_names_round_trip() {
    for name in [
        "omega_l/2pi",
        "delta/2pi",
        "g_gamma/omega_gamma",
        "freq_beta/freq_gamma",
        "freq_gamma/freq_beta",
        "delta_omega_beta/omega_beta",
        "validity_curvature",
        "b_star",
        "p_up(n_gamma=100)",
        "p_star(n_gamma=1000;t2=0.0005)",
        "p_star(t2=0.001)",
    ] {
        let c: Column = name.parse().unwrap();
        assert_eq!(c.name(), name);
    }
    let short: Column = "omega_gamma".parse().unwrap();
    assert_eq!(short.name(), "omega_gamma/2pi");
}

#[test]
fn figure_ids_parse() {
    for id in FigureId::ALL {
        assert_eq!(id.as_str().parse::<FigureId>().unwrap(), id);
        preset(id, &base()).validate().unwrap();
    }
    let err = "fig9z".parse::<FigureId>().unwrap_err().to_string();
    assert!(err.contains("fig1c") && err.contains("figS3c"));
}

#[test]
fn header_only_table() {
    let t = Table {
        columns: vec![ColumnHeader {
            name: "b0".into(),
            unit: "T".into(),
        }],
        rows: Vec::new(),
        provenance: vec!["note".into()],
        failures: Vec::new(),
    };
    assert_eq!(render_table(&t), "# note\nb0[T]\n");
}

#[test]
fn csv_round_trip() {
    let t = run_sweep(&preset(FigureId::FigS2a, &base())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    write_table(&t, &path).unwrap();
    let back = read_table(&path).unwrap();
    assert_eq!(back.columns, t.columns);
    assert_eq!(back.provenance, t.provenance);
    assert_eq!(back.rows.len(), t.rows.len());
    for (a, b) in t.rows.iter().zip(&back.rows) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 5e-9 * x.abs(), "{x} vs {y}");
        }
    }
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# nanorotor "));
    assert!(!text.contains('\r'));
    let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
    assert!(header.ends_with(",valid[1]"));
}

#[test]
fn io_errors_name_the_path() {
    let t = run_sweep(&preset(FigureId::Fig1d, &base())).unwrap();
    let err = write_table(&t, std::path::Path::new("/nonexistent/dir/x.csv")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/dir/x.csv"));
}

#[test]
fn deterministic_and_order_independent() {
    for id in [FigureId::Fig2d, FigureId::Fig2e, FigureId::FigS1, FigureId::FigS3b] {
        let s = preset(id, &base());
        let par = render_table(&run_sweep_with(&s, Execution::Parallel).unwrap());
        let seq = render_table(&run_sweep_with(&s, Execution::Sequential).unwrap());
        let again = render_table(&run_sweep(&s).unwrap());
        assert_eq!(par, seq, "{id}");
        assert_eq!(par, again, "{id}");
    }
}

#[test]
fn failed_points_are_flagged() {
    let bac = base().field.anti_crossing_field();
    let s = spec(Variable::B0, Range::linear(bac - 1e-3, bac + 1e-3, 3), &["freq_gamma", "omega_gamma"]);
    let t = run_sweep(&s).unwrap();
    assert_eq!(t.valid(), vec![true, false, true]);
    assert!(t.rows[1][1].is_nan());
    assert!(t.rows[1][2].is_finite());
    assert_eq!(t.failures.len(), 1);
    assert_eq!(t.failures[0].row, 1);
    assert!(render_table(&t).contains(",NaN,"));
}

#[test]
fn branch_override_flags_other_side() {
    let mut s = spec(Variable::B0, Range::linear(50e-3, 150e-3, 11), &["omega_gamma"]);
    s.options.branch = Some(Branch::NegativeDelta);
    let t = run_sweep(&s).unwrap();
    let b = t.column("b0").unwrap();
    for (b, v) in b.iter().zip(t.valid()) {
        assert_eq!(v, *b > 105e-3, "b0 {b}");
    }
}

#[test]
fn libration_scaling_on_grid() {
    let t = run_sweep(&preset(FigureId::Fig1c, &base())).unwrap();
    let b = t.column("b0").unwrap();
    let wg = t.column("omega_gamma/2pi").unwrap();
    let wb = t.column("omega_beta/2pi").unwrap();
    let c0 = wg[0] / b[0].sqrt();
    for i in 0..b.len() {
        assert!((wg[i] / b[i].sqrt() / c0 - 1.0).abs() < 1e-12);
        assert_eq!(wb[i], wb[0]);
    }
    let t = run_sweep(&preset(FigureId::Fig1e, &base())).unwrap();
    let gb = t.column("g_beta/2pi").unwrap();
    let gg = t.column("g_gamma/2pi").unwrap();
    for i in 0..b.len() {
        assert!((gb[i] / b[i] / (gb[0] / b[0]) - 1.0).abs() < 1e-12);
        assert!((gg[i] / b[i].powf(0.75) / (gg[0] / b[0].powf(0.75)) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn validity_region_is_one_interval_around_crossing() {
    let t = run_sweep(&preset(FigureId::FigS1, &base())).unwrap();
    let b = t.column("b0").unwrap();
    let bad: Vec<usize> = t.valid().iter().enumerate().filter(|(_, v)| !**v).map(|(i, _)| i).collect();
    assert!(!bad.is_empty());
    assert!(bad.windows(2).all(|w| w[1] == w[0] + 1));
    let bac = base().field.anti_crossing_field();
    assert!(b[bad[0]] < bac && bac < b[*bad.last().unwrap()]);
}

#[test]
fn bstar_preset_matches_root_finder() {
    let t = run_sweep(&preset(FigureId::FigS2b, &base())).unwrap();
    let f = t.column("omega0/2pi").unwrap();
    let bs = t.column("b_star").unwrap();
    let i = f.iter().position(|v| *v == 5e6).unwrap();
    let s = base();
    assert_eq!(bs[i], find_bstar(&s, lower_branch_bracket(&s)).unwrap());
    let finite: Vec<f64> = bs.iter().copied().filter(|v| v.is_finite()).collect();
    assert!(finite.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn tau_units_agree() {
    let r = dispersive_rates(&base()).unwrap();
    let half = PI / r.freq_gamma;
    let a = spec(Variable::Tau, Range::linear(0.0, 2.0, 21), &["p_up(n_gamma=10)"]);
    let mut b = spec(Variable::Tau, Range::linear(0.0, 2.0 * half, 21), &["p_up(n_gamma=10)"]);
    b.options.tau_unit = TauUnit::Seconds;
    let (ta, tb) = (run_sweep(&a).unwrap(), run_sweep(&b).unwrap());
    let (pa, pb) = (ta.column("p_up(n_gamma=10)").unwrap(), tb.column("p_up(n_gamma=10)").unwrap());
    for (x, y) in pa.iter().zip(&pb) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn pstar_matches_direct_evaluation() {
    let mut s = spec(Variable::NGamma, Range::log(1.0, 1000.0, 4), &["p_star"]);
    s.options.t2 = 0.5e-3;
    let t = run_sweep(&s).unwrap();
    let r = dispersive_rates(&base()).unwrap();
    for row in &t.rows {
        let th = ThermalSpec::equal_temperature(row[0], &r).unwrap();
        let p = protocol_probability(&r, &th, &DephasingSpec::from_t2(0.5e-3).unwrap(), PI / r.freq_gamma, true)
            .unwrap();
        assert_eq!(row[1], p.p_up);
    }
}

#[test]
fn pstar_peaks_at_integer_ratio_fields() {
    let s = base();
    let mut sw = spec(Variable::B0, Range::linear(30e-3, 99e-3, 691), &["p_star(n_gamma=1000)"]);
    sw.options.t2 = f64::INFINITY;
    let t = run_sweep(&sw).unwrap();
    let b = t.column("b0").unwrap();
    let p = t.column("p_star(n_gamma=1000)").unwrap();
    let maxima = local_maxima(&b, &p);
    let step = b[1] - b[0];
    for n in [1, 2] {
        let root = find_resonance_fields(&s, n, RatioOrientation::BetaOverGamma, Branch::PositiveDelta, (30e-3, 99e-3))
            .unwrap();
        let nearest = maxima.iter().map(|m| (m - root).abs()).fold(f64::INFINITY, f64::min);
        assert!(nearest <= step, "n={n}: root {root}, maxima {maxima:?}");
    }
}

proptest! {
    #[test]
    fn range_grids_are_increasing(start in 1e-3f64..1.0, width in 1e-3f64..10.0, points in 2usize..400, log in any::<bool>()) {
        let r = if log { Range::log(start, start + width, points) } else { Range::linear(start, start + width, points) };
        let v = r.values();
        prop_assert_eq!(v.len(), points);
        prop_assert_eq!(v[0], start);
        prop_assert_eq!(v[points - 1], start + width);
        prop_assert!(v.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn rendered_values_parse_back(x in prop::num::f64::NORMAL) {
        let t = Table {
            columns: vec![ColumnHeader { name: "x".into(), unit: "1".into() }],
            rows: vec![vec![x]],
            provenance: Vec::new(),
            failures: Vec::new(),
        };
        let back = parse_table(&render_table(&t)).unwrap();
        prop_assert!((back.rows[0][0] - x).abs() <= 5e-9 * x.abs());
    }
}
