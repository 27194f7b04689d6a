use std::f64::consts::PI;

use proptest::prelude::*;
use torusmix::ade::*;
use torusmix::composite::{FieldSpec, FractalSpec, MixSpec};
use torusmix::schedule::ratio;
use torusmix::transport::{compile_flow, snapshot, Datum, FlowProgram, ScalarSampler};
use torusmix::{GridField, Norm, TorusPoint};

fn still(t: i64) -> FlowProgram {
    let f = FieldSpec::Still { horizon: ratio(t, 1) };
    compile_flow(&f, &f.domain_end()).unwrap()
}

fn sample<S: ScalarSampler>(f0: &S, n: usize) -> GridField {
    GridField::from_fn(n, |a, b| f0.value(&TorusPoint::new(a, b)))
}

#[test]
fn heat_only_mode_decays_exponentially() {
    let n = 64;
    let nu = 0.01;
    let f0 = GridField::from_fn(n, |x, y| (2.0 * PI * x).cos() + 0.5 * (2.0 * PI * (x + 2.0 * y)).sin());
    let out = solve(&f0, &still(1), 1.0, &[0.25, 0.5, 1.0], &SolverConfig::new(n, nu)).unwrap();
    for (t, g) in &out.snapshots {
        let want = GridField::from_fn(n, |x, y| {
            (-4.0 * PI * PI * nu * t).exp() * (2.0 * PI * x).cos()
                + 0.5 * (-20.0 * PI * PI * nu * t).exp() * (2.0 * PI * (x + 2.0 * y)).sin()
        });
        assert!(g.distance(&want, Norm::Linf).unwrap() < 1e-6, "t={t}");
    }
}

#[test]
fn transport_invariants_on_fractal_field() {
    let n = 256;
    let field = FieldSpec::Fractal(FractalSpec::canonical(2));
    let prog = compile_flow(&field, &field.domain_end()).unwrap();
    let f0 = sample(&Datum::SmoothSign { eps: 1.0 / 64.0 }, n);
    let out = solve(&f0, &prog, prog.horizon_f(), &[], &SolverConfig::new(n, 1e-3)).unwrap();
    let tr = &out.trace;
    assert!(tr.mass_drift() <= 1e-12, "mass {}", tr.mass_drift());
    assert!(tr.max_l2_increase() <= 1e-10, "l2 {}", tr.max_l2_increase());
    assert!(tr.energy_residual() <= 1e-4, "energy {}", tr.energy_residual());
    let (lo, hi) = tr.initial_range;
    for v in out.final_field.values() {
        assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
    }
}

#[test]
fn trace_residual_vanishes_for_constants() {
    let n = 64;
    let field = FieldSpec::Mix(MixSpec::minimal(2).unwrap());
    let prog = compile_flow(&field, &ratio(13, 1)).unwrap();
    let mut cfg = SolverConfig::new(n, 1e-3);
    cfg.record_fields = true;
    let out = solve(&sample(&Datum::SinX1, n), &prog, 13.0, &[], &cfg).unwrap();
    let r = trace_residual(&out.trace, &TestFunction::constant(1.0)).unwrap();
    assert!(r <= 1e-12, "{r}");
}

#[test]
fn trace_residual_small_for_heat_only() {
    let n = 64;
    let mut cfg = SolverConfig::new(n, 0.01);
    cfg.record_fields = true;
    cfg.dt_max = Some(1e-3);
    let out = solve(&sample(&Datum::SinX1, n), &still(1), 1.0, &[], &cfg).unwrap();
    let phi = TestFunction {
        terms: vec![TestTerm { j1: 1, j2: 0, sine: false, poly: vec![1.0] }],
    };
    let r = trace_residual(&out.trace, &phi).unwrap();
    assert!(r <= 1e-6, "{r}");
    let phi = TestFunction {
        terms: vec![TestTerm { j1: 1, j2: 0, sine: true, poly: vec![1.0, 0.5] }],
    };
    let r = trace_residual(&out.trace, &phi).unwrap();
    assert!(r <= 1e-6, "{r}");
}

#[test]
fn trace_residual_shrinks_under_refinement() {
    let field = FieldSpec::Fractal(FractalSpec::canonical(2));
    let prog = compile_flow(&field, &field.domain_end()).unwrap();
    let phi = TestFunction {
        terms: vec![
            TestTerm { j1: 1, j2: 0, sine: true, poly: vec![1.0] },
            TestTerm { j1: 0, j2: 1, sine: false, poly: vec![0.5, 1.0] },
        ],
    };
    let mut res = Vec::new();
    for n in [32usize, 64, 128] {
        let mut cfg = SolverConfig::new(n, 1e-3);
        cfg.record_fields = true;
        cfg.dt_max = Some(1.0 / n as f64);
        let out = solve(&sample(&Datum::SinX1, n), &prog, prog.horizon_f(), &[], &cfg).unwrap();
        res.push(trace_residual(&out.trace, &phi).unwrap());
    }
    assert!(res[2] < res[1] && res[1] < res[0], "{res:?}");
}

#[test]
fn small_viscosity_tracks_transport() {
    let n = 256;
    let field = FieldSpec::Fractal(FractalSpec::canonical(1));
    let prog = compile_flow(&field, &field.domain_end()).unwrap();
    let f0 = Datum::SmoothSign { eps: 1.0 / 16.0 };
    let out = solve(&sample(&f0, n), &prog, 1.0, &[1.0], &SolverConfig::new(n, 1e-9)).unwrap();
    let exact = snapshot(&prog, &f0, 1.0, n).unwrap();
    let d = out.snapshot_at(1.0).unwrap().distance(&exact, Norm::L1).unwrap();
    assert!(d <= 5e-2, "{d}");
}

#[test]
fn substep_respects_cap() {
    let mut cfg = SolverConfig::new(32, 0.1);
    assert_eq!(cfg.substep(0), 0.25);
    assert_eq!(cfg.substep(3), 1.0 / 32.0);
    cfg.dt_max = Some(0.01);
    assert_eq!(cfg.substep(0), 0.01);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn heat_step_dissipates_and_keeps_mass(seed in 0u64..1000, nu in 1e-4f64..1e-1, dt in 1e-3f64..1.0) {
        let n = 16;
        let f = GridField::from_fn(n, |x, y| ((seed as f64 + 1.0) * x * 7.3 + y * 3.1).sin() * (x - y).cos());
        let (g, loss) = heat_step(&f, nu, dt);
        prop_assert!((g.mass() - f.mass()).abs() <= 1e-13);
        prop_assert!(g.norm(Norm::L2) <= f.norm(Norm::L2) + 1e-14);
        let e0 = f.norm(Norm::L2).powi(2);
        let e1 = g.norm(Norm::L2).powi(2);
        prop_assert!((e0 - e1 - loss).abs() <= 1e-12);
    }

    #[test]
    fn interpolation_stays_in_local_range(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let n = 16;
        let f = GridField::from_fn(n, |x, y| if (x * 4.0).floor() as i64 % 2 == (y * 4.0).floor() as i64 % 2 { 1.0 } else { -1.0 });
        let v = interpolate(&f, a, b, Interpolation::MonotoneCubic);
        prop_assert!((-1.0..=1.0).contains(&v));
    }
}
