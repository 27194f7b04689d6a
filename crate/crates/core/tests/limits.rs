mod common;

use std::f64::consts::PI;

use torusmix::composite::{FieldSpec, FractalSpec};
use torusmix::limits::*;
use torusmix::schedule::{ratio, QuadIndex};
use torusmix::transport::{compile_flow, Datum, ScalarSampler};
use torusmix::{GridField, Norm, TorusPoint};

fn still_program() -> torusmix::transport::FlowProgram {
    let f = FieldSpec::Still { horizon: ratio(1, 1) };
    compile_flow(&f, &f.domain_end()).unwrap()
}

fn single_mode_config(n: usize) -> CalibrationConfig {
    let mut cfg = CalibrationConfig::new(n);
    cfg.battery = vec![Datum::SinX1];
    cfg
}

#[test]
fn calibrated_viscosity_matches_heat_decay_oracle() {
    let n = 32;
    let cfg = single_mode_config(n);
    let l1 = GridField::from_fn(n, |a, b| Datum::SinX1.value(&TorusPoint::new(a, b))).norm(Norm::L1);
    assert!((l1 - 2.0 / PI).abs() < 1e-2);
    for tol in [0.05, 0.1, 0.3] {
        let star = -(1.0 - tol / l1).ln() / (4.0 * PI * PI);
        let c = calibrate_nu(&still_program(), 1.0, tol, None, &cfg).unwrap();
        assert!(c.nu <= star * (1.0 + 1e-9) && c.nu > 0.5 * star, "tol={tol}: {} vs {star}", c.nu);
        assert!(c.distance <= tol);
        let want = l1 * (1.0 - (-4.0 * PI * PI * c.nu).exp());
        assert!((c.distance - want).abs() < 1e-6, "{} vs {want}", c.distance);
    }
}

#[test]
fn constant_battery_takes_largest_viscosity() {
    let mut cfg = CalibrationConfig::new(16);
    cfg.battery = vec![Datum::Constant(0.4)];
    let field = FieldSpec::Fractal(FractalSpec::canonical(2));
    let prog = compile_flow(&field, &field.domain_end()).unwrap();
    let c = calibrate_nu(&prog, 1.0, 0.05, None, &cfg).unwrap();
    assert_eq!(c.nu, 1.0);
    let c = calibrate_nu(&prog, 1.0, 0.05, Some(1.0), &cfg).unwrap();
    assert_eq!(c.nu, 0.5);
}

#[test]
fn relaxing_tolerance_never_shrinks_viscosity() {
    let cfg = single_mode_config(16);
    let prog = still_program();
    let mut last = 0.0;
    for tol in [0.02, 0.05, 0.1, 0.2, 0.4] {
        let nu = calibrate_nu(&prog, 1.0, tol, None, &cfg).unwrap().nu;
        assert!(nu >= last);
        last = nu;
    }
}

#[test]
fn unattainable_tolerance_reports_curve() {
    let mut cfg = single_mode_config(16);
    cfg.grid = vec![1.0, 0.5];
    match calibrate_nu(&still_program(), 1.0, 0.01, None, &cfg) {
        Err(LimitsError::Unattainable { curve, best, .. }) => {
            assert_eq!(curve.len(), 2);
            assert!(best > 0.01);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn epsilon_budget_is_at_most_half_delta() {
    let deltas = [0.3, 0.01, 0.2, 0.05];
    for k in 1..=deltas.len() {
        let e = epsilon_budget(&deltas[..k]);
        assert!(e <= 0.5 * deltas[k - 1]);
        let brute = (0..k).map(|j| deltas[k - 1 - j] / 2f64.powi(j as i32 + 1)).fold(f64::INFINITY, f64::min);
        assert_eq!(e, brute);
    }
}

#[test]
fn leak_constant_matches_quadrature() {
    let c = common::leak_constant_oracle();
    assert!((c - leak_constant()).abs() <= 1e-10, "{c}");
    assert!((common::erf_tail(0.0) - PI.sqrt() / 2.0).abs() <= 1e-12);
}

#[test]
fn measured_leak_is_dominated() {
    let before = QuadIndex::new(1, 1, 2, 1).unwrap();
    let after = QuadIndex::new(2, 1, 1, 1).unwrap();
    let f0 = Datum::SmoothSign { eps: 1.0 / 64.0 };
    let d = measure_swap_leak(&f0, before, after, 1e-3, 64, 6).unwrap();
    assert!(d <= swap_leak_bound(1e-3, 2, 1.0), "{d}");
    assert!(d > 0.0);
    assert!(measure_swap_leak(&f0, before, QuadIndex::new(2, 2, 1, 1).unwrap(), 1e-3, 32, 2).is_err());
}

#[test]
fn constant_datum_vv_experiment_passes() {
    let mut cfg = VvConfig::new(3, 32);
    cfg.calibration.battery = vec![Datum::Constant(0.25)];
    let (report, out) = run_vv_experiment(&Datum::Constant(0.25), &cfg).unwrap();
    assert_eq!(out.gap, 0.0);
    assert!(report.passed(), "{}", report.render_text());
    assert!(out.nus.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn constant_datum_mixing_experiment_passes() {
    let mut cfg = MixConfig::new(2, 16);
    cfg.calibration.battery = vec![Datum::Constant(-1.0)];
    let (report, out) = run_mixing_experiment(&Datum::Constant(-1.0), &cfg).unwrap();
    assert!(report.passed(), "{}", report.render_text());
    assert!(out.variance.iter().all(|v| v.1 <= 1e-24));
}

#[test]
fn experiments_reject_shallow_depth() {
    assert!(matches!(run_vv_experiment(&Datum::SinX1, &VvConfig::new(2, 16)), Err(LimitsError::Setup(_))));
    assert!(matches!(run_mixing_experiment(&Datum::SinX1, &MixConfig::new(1, 16)), Err(LimitsError::Setup(_))));
}

#[test]
fn report_round_trips_through_json() {
    let report = ExperimentReport {
        experiment: "vv".into(),
        params: serde_json::json!({"n": 64, "nus": [0.5, 0.125]}),
        criteria: vec![
            Criterion::new("a", 0.1, "<=", 0.2, Some(Provenance { n: 64, dt_max: 0.125, nu: 0.5 })),
            Criterion::new("b", 1.0, ">", 2.0, None),
        ],
        artifacts: vec!["out/report.json".into()],
    };
    let back: ExperimentReport = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(back, report);
    assert!(!back.passed());
    let text = back.render_text();
    assert!(text.contains("[PASS] a") && text.contains("[FAIL] b"));
}
