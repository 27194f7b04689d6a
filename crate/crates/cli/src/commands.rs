use std::fs;
use std::path::{Path, PathBuf};

use num_bigint::BigInt;
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use torusmix::composite::FieldSpec;
use torusmix::flows::{cancellation_compose, swap_endpoint, swap_map, ShearSpec, SwapSpec};
use torusmix::limits::{
    run_mixing_experiment, run_vv_experiment, Criterion, ExperimentReport, LimitsError, MixConfig, VvConfig,
};
use torusmix::schedule::{
    epoch_limit, generate_schedule, ratio, total_duration, write_schedule_csv, QuadIndex, Rational,
    ScheduleFamily,
};
use torusmix::transport::{compile_flow, snapshot, Datum, FlowProgram, ScalarSampler};
use torusmix::ade::{Solver, SolverConfig};
use torusmix::composite::FractalSpec;
use torusmix::{Exact, GridField, Norm, TorusPoint};

use crate::config::{parse_datum, parse_field, parse_number, Config};
use crate::output::{require_dir, write_with_meta};
use crate::CliError;

fn parse_rational(s: &str) -> Result<Rational, CliError> {
    let bad = || CliError::Usage(format!("bad rational {s:?}"));
    let s = s.trim();
    match s.split_once('/') {
        Some((a, b)) => {
            let a: BigInt = a.trim().parse().map_err(|_| bad())?;
            let b: BigInt = b.trim().parse().map_err(|_| bad())?;
            if b == BigInt::from(0) {
                return Err(bad());
            }
            Ok(Rational::new(a, b))
        }
        None => {
            let (int, frac) = s.split_once('.').unwrap_or((s, ""));
            let digits: BigInt = format!("{int}{frac}").parse().map_err(|_| bad())?;
            Ok(Rational::new(digits, BigInt::from(10).pow(frac.len() as u32)))
        }
    }
}

fn parse_quad(s: &str) -> Result<QuadIndex, CliError> {
    let inner = s.trim().trim_start_matches('(').trim_end_matches(')');
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    let bad = || CliError::Usage(format!("quadruple must look like (k,m,i,n), got {s:?}"));
    if parts.len() != 4 {
        return Err(bad());
    }
    let k = parts[0].parse().map_err(|_| bad())?;
    let m = parts[1].parse().map_err(|_| bad())?;
    let i = parts[2].parse().map_err(|_| bad())?;
    let n = parts[3].parse().map_err(|_| bad())?;
    QuadIndex::new(k, m, i, n).map_err(|e| CliError::Usage(e.to_string()))
}

fn out_dir(cfg: &Config) -> Result<PathBuf, CliError> {
    let dir = PathBuf::from(cfg.require("out")?);
    require_dir(&dir)?;
    Ok(dir)
}

pub fn schedule(cfg: &Config) -> Result<(), CliError> {
    let family = cfg.get("family").unwrap_or("dyadic");
    let k = cfg.get("k").unwrap_or("0");
    let fam = match family {
        "dyadic" => {
            let depth: usize = k
                .parse()
                .map_err(|_| CliError::Usage(format!("dyadic depth must be an integer, got {k:?}")))?;
            let taus = match cfg.get("tau").unwrap_or("auto") {
                "auto" => FractalSpec::canonical(depth).taus(),
                list => {
                    let t: Vec<Rational> = list.split(',').map(parse_rational).collect::<Result<_, _>>()?;
                    if t.len() != depth {
                        return Err(CliError::Usage(format!("{} durations for depth {depth}", t.len())));
                    }
                    t
                }
            };
            ScheduleFamily::Dyadic { taus }
        }
        "quad" => {
            let prefix = if k.contains(',') {
                Some(parse_quad(k)?)
            } else {
                let depth: u32 = k
                    .parse()
                    .map_err(|_| CliError::Usage(format!("quad bound must be a depth or (k,m,i,n), got {k:?}")))?;
                (depth > 0).then(|| QuadIndex::depth_bound(depth))
            };
            ScheduleFamily::Quad { prefix }
        }
        other => return Err(CliError::Usage(format!("unknown family {other:?}"))),
    };
    let entries = generate_schedule(&fam).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut csv = Vec::new();
    write_schedule_csv(&entries, &mut csv).map_err(|e| CliError::Io(e.to_string()))?;
    let total = total_duration(&entries);
    match cfg.get("out") {
        Some(p) => {
            let path = PathBuf::from(p);
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                require_dir(parent)?;
            }
            write_with_meta(&path, &csv, &cfg.to_json(), json!({"intervals": entries.len(), "total": total.to_string()}))?;
        }
        None => print!("{}", String::from_utf8_lossy(&csv)),
    }
    eprintln!("intervals: {}", entries.len());
    eprintln!("total active time: {total}");
    Ok(())
}

fn load_common(cfg: &Config) -> Result<(FieldSpec, Datum, usize), CliError> {
    let field = parse_field(cfg.require("field")?)?;
    let datum = parse_datum(cfg.get("datum").unwrap_or("sin"))?;
    Ok((field, datum, cfg.grid_size()?))
}

fn compile(field: &FieldSpec) -> Result<FlowProgram, CliError> {
    compile_flow(field, &field.domain_end()).map_err(|e| CliError::Usage(e.to_string()))
}

fn to_exact(r: &Rational) -> Result<Exact, CliError> {
    torusmix::coord::exact_from_rational(r)
        .ok_or_else(|| CliError::Usage(format!("time {r} does not fit exact coordinates")))
}

/// Snapshot with the pullback computed in exact arithmetic at the cell
/// centres.
fn exact_snapshot<S: ScalarSampler>(prog: &FlowProgram, f0: &S, t: &Exact, n: usize) -> Result<GridField, CliError> {
    use rayon::prelude::*;
    let den = 2 * n as i128;
    let values = (0..n * n)
        .into_par_iter()
        .map(|id| {
            let p = TorusPoint::new(
                Ratio::new(2 * (id % n) as i128 + 1, den),
                Ratio::new(2 * (id / n) as i128 + 1, den),
            );
            prog.inverse_point(*t, &p).map(|q| f0.value(&q.to_f64()))
        })
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(GridField::from_values(n, values).expect("n * n values"))
}

fn tmxf_bytes(f: &GridField) -> Vec<u8> {
    let mut b = Vec::new();
    f.write_tmxf(&mut b).expect("in-memory write");
    b
}

pub fn transport(cfg: &Config) -> Result<(), CliError> {
    let (field, datum, n) = load_common(cfg)?;
    let dir = out_dir(cfg)?;
    let prog = compile(&field)?;
    let exact: bool = cfg.parse_or("exact", false)?;
    let raw_times = cfg.get("times").unwrap_or("0");
    let times = raw_times
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(parse_rational)
        .collect::<Result<Vec<_>, _>>()?;
    for t in &times {
        let tf = torusmix::coord::rational_f64(t);
        if tf < 0.0 || tf > prog.horizon_f() {
            return Err(CliError::Usage(format!(
                "time {t} is outside the horizon [0, {}]",
                prog.horizon()
            )));
        }
    }
    let mut written = Vec::new();
    for (j, t) in times.iter().enumerate() {
        let snap = if exact {
            exact_snapshot(&prog, &datum, &to_exact(t)?, n)?
        } else {
            let tf = torusmix::coord::rational_f64(t);
            snapshot(&prog, &datum, tf, n).map_err(|e| CliError::Usage(e.to_string()))?
        };
        let path = dir.join(format!("snapshot_{j}.tmxf"));
        write_with_meta(
            &path,
            &tmxf_bytes(&snap),
            &cfg.to_json(),
            json!({"t": t.to_string(), "field": field.to_string(), "n": n}),
        )?;
        written.push(path);
    }
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

pub fn solve(cfg: &Config) -> Result<(), CliError> {
    let (field, datum, n) = load_common(cfg)?;
    let dir = out_dir(cfg)?;
    let prog = compile(&field)?;
    let nus: Vec<f64> = cfg
        .require("nu")?
        .split(',')
        .map(|s| parse_number(s).ok_or_else(|| CliError::Usage(format!("bad viscosity {s:?}"))))
        .collect::<Result<_, _>>()?;
    let t_end = match cfg.get("t_end") {
        Some(s) => parse_number(s).ok_or_else(|| CliError::Usage(format!("bad t_end {s:?}")))?,
        None => prog.horizon_f(),
    };
    let times = cfg.times("times")?;
    let f0 = GridField::from_fn(n, |a, b| datum.value(&TorusPoint::new(a, b)));
    for (idx, &nu) in nus.iter().enumerate() {
        let mut sc = SolverConfig::new(n, nu);
        if let Some(dt) = cfg.get("dt_max") {
            sc.dt_max = Some(parse_number(dt).ok_or_else(|| CliError::Usage(format!("bad dt_max {dt:?}")))?);
        }
        let out = Solver::new(sc.clone())
            .and_then(|mut s| s.solve(&f0, &prog, t_end, &times))
            .map_err(|e| CliError::Failed(e.to_string()))?;
        let info = |extra: serde_json::Value| {
            json!({"nu": nu, "n": n, "dt_max": sc.dt_max, "field": field.to_string(), "extra": extra})
        };
        write_with_meta(
            &dir.join(format!("final_{idx}.tmxf")),
            &tmxf_bytes(&out.final_field),
            &cfg.to_json(),
            info(json!({"t": t_end})),
        )?;
        let mut csv = Vec::new();
        out.trace.write_csv(&mut csv).map_err(|e| CliError::Io(e.to_string()))?;
        write_with_meta(&dir.join(format!("trace_{idx}.csv")), &csv, &cfg.to_json(), info(json!(null)))?;
        for (j, (t, f)) in out.snapshots.iter().enumerate() {
            write_with_meta(
                &dir.join(format!("snapshot_{idx}_{j}.tmxf")),
                &tmxf_bytes(f),
                &cfg.to_json(),
                info(json!({"t": t})),
            )?;
        }
        println!(
            "nu={nu:e} mass_drift={:.3e} energy_residual={:.3e} l1_final={:.6}",
            out.trace.mass_drift(),
            out.trace.energy_residual(),
            out.final_field.norm(Norm::L1)
        );
    }
    Ok(())
}

fn failure_report(kind: &str, err: &LimitsError) -> ExperimentReport {
    let curve = match err {
        LimitsError::Unattainable { curve, .. } => json!(curve),
        _ => json!(null),
    };
    ExperimentReport {
        experiment: kind.to_string(),
        params: json!({"error": err.to_string(), "curve": curve}),
        criteria: vec![Criterion::new("calibration", 0.0, ">=", 1.0, None)],
        artifacts: Vec::new(),
    }
}

pub fn experiment(cfg: &Config) -> Result<(), CliError> {
    let dir = out_dir(cfg)?;
    let kind = cfg.get("experiment").unwrap_or("vv").to_string();
    let datum = parse_datum(cfg.get("datum").unwrap_or(if kind == "mixing" { "smooth-sign" } else { "sin" }))?;
    let n = cfg.grid_size()?;
    if cfg.get("nu").is_some_and(|v| v != "auto") {
        return Err(CliError::Usage("experiments calibrate their viscosities; use nu = auto".into()));
    }
    let battery = match cfg.get("battery") {
        Some(list) => Some(
            list.split(';')
                .filter(|s| !s.trim().is_empty())
                .map(|s| parse_datum(s.trim()))
                .collect::<Result<Vec<_>, _>>()?,
        ),
        None => None,
    };
    let result = match kind.as_str() {
        "vv" => {
            let mut vc = VvConfig::new(cfg.depth(3)? as usize, n);
            if let Some(b) = battery {
                vc.calibration.battery = b;
            }
            run_vv_experiment(&datum, &vc).map(|r| r.0)
        }
        "mixing" => {
            let mut mc = MixConfig::new(cfg.depth(2)?, n);
            if let Some(b) = battery {
                mc.calibration.battery = b;
            }
            run_mixing_experiment(&datum, &mc).map(|r| r.0)
        }
        other => return Err(CliError::Usage(format!("unknown experiment {other:?}"))),
    };
    let report = match result {
        Ok(r) => r,
        Err(LimitsError::Setup(msg)) => return Err(CliError::Usage(msg)),
        Err(e) => failure_report(&kind, &e),
    };
    let path = dir.join("report.json");
    let mut report = report;
    report.artifacts.push(path.display().to_string());
    write_with_meta(&path, report.to_json().as_bytes(), &cfg.to_json(), json!({"datum": format!("{datum:?}")}))?;
    print!("{}", report.render_text());
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Failed("one or more criteria failed".into()))
    }
}

pub fn report(path: &Path, format: &str) -> Result<(), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let rep: ExperimentReport =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    match format {
        "text" => print!("{}", rep.render_text()),
        "json" => println!("{}", rep.to_json()),
        other => return Err(CliError::Usage(format!("unknown format {other:?}"))),
    }
    if rep.passed() {
        Ok(())
    } else {
        Err(CliError::Failed("stored report has failing criteria".into()))
    }
}

fn dyadic(rng: &mut ChaCha8Rng, bits: u32) -> Exact {
    let den = 1i128 << bits;
    Ratio::new(2 * rng.gen_range(0..den / 2) + 1, den)
}

pub fn verify(cfg: &Config) -> Result<(), CliError> {
    let seed: u64 = cfg.parse_or("seed", 0)?;
    let samples: usize = cfg.parse_or("samples", 2000)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();

    // dyadic budget and quad horizon
    for depth in 1..=10usize {
        let taus = (1..=depth as i32).map(|k| torusmix::schedule::pow2(-2 * k)).collect();
        let e = generate_schedule(&ScheduleFamily::Dyadic { taus }).map_err(|e| CliError::Failed(e.to_string()))?;
        if total_duration(&e) != ratio(1, 1) - torusmix::schedule::pow2(-(depth as i32)) {
            failures.push(format!("dyadic budget at depth {depth}"));
        }
    }
    if epoch_limit() != ratio(42, 1) {
        failures.push("quad horizon".into());
    }

    // four-fold shear cancellation on exact points
    for _ in 0..samples {
        let l1 = rng.gen_range(1..=64u64);
        let l2 = rng.gen_range(1..=64u64);
        let i1 = rng.gen_range(1..=2u8);
        let odd = 2 * rng.gen_range(0..(l2 as i64)) + 1;
        let tau1 = ratio(odd, 2 * l2 as i64);
        let tau2 = ratio(1, 4 * l1 as i64);
        let a = ShearSpec::new(i1, l1).expect("valid");
        let b = ShearSpec::new(3 - i1, l2).expect("valid");
        let x = TorusPoint::new(dyadic(&mut rng, 40), dyadic(&mut rng, 40));
        match cancellation_compose(&a, &tau1, &b, &tau2, &x) {
            Ok(y) if y == x => {}
            _ => failures.push(format!("cancellation L1={l1} L2={l2} tau1={tau1}")),
        }
    }

    // swap flow endpoint equals the digit swap
    for _ in 0..samples {
        let k = rng.gen_range(1..=4u32);
        let l = rng.gen_range(k + 1..=8);
        let i = rng.gen_range(1..=2u8);
        let n = rng.gen_range(1..=(1u64 << (k / 2)));
        let s = SwapSpec::new(i, k, n, l).expect("valid");
        let x = TorusPoint::new(dyadic(&mut rng, 30), dyadic(&mut rng, 30));
        let y = swap_map(&s, s.duration::<Exact>(), &x).map_err(|e| CliError::Failed(e.to_string()))?;
        if y != swap_endpoint(&s, &x) {
            failures.push(format!("swap endpoint {s:?}"));
        }
    }

    // exact transport preserves L^p norms
    let prog = compile(&FieldSpec::Mix(torusmix::composite::MixSpec::minimal(2).expect("valid")))?;
    let f0 = Datum::SmoothSign { eps: 1.0 / 64.0 };
    let base = GridField::from_fn(64, |a, b| f0.value(&TorusPoint::new(a, b)));
    for t in [12.0, 21.0, 50.0] {
        let s = snapshot(&prog, &f0, t, 64).map_err(|e| CliError::Failed(e.to_string()))?;
        for p in [Norm::L1, Norm::L2, Norm::Linf] {
            if (s.norm(p) - base.norm(p)).abs() > 1e-8 {
                failures.push(format!("norm {p:?} at t={t}"));
            }
        }
    }

    if failures.is_empty() {
        println!("verify: all checks passed (seed {seed}, {samples} samples)");
        Ok(())
    } else {
        for f in &failures {
            println!("FAIL {f}");
        }
        Err(CliError::Failed(format!("{} checks failed", failures.len())))
    }
}
