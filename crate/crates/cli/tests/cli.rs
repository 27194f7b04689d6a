use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use torusmix::transport::{Datum, ScalarSampler};
use torusmix::{GridField, TorusPoint};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_torusmix"))
        .args(args)
        .env("TORUSMIX_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_field(p: &Path) -> GridField {
    GridField::read_tmxf(fs::File::open(p).unwrap()).unwrap()
}

#[test]
fn dyadic_schedule_counts() {
    let o = run(&["schedule", "--family", "dyadic", "--K", "2", "--tau", "auto"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 7);
    assert!(stderr(&o).contains("intervals: 6"));
    assert!(stderr(&o).contains("total active time: 3/4"));
}

#[test]
fn quad_schedule_by_tuple_and_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("quad.csv");
    let o = run(&["schedule", "--family", "quad", "--K", "(2,1,1,1)", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next().unwrap(), "payload,start_num,start_den,duration_num,duration_den");
    assert_eq!(text.lines().count(), 4);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("quad.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["info"]["intervals"], 3);
}

#[test]
fn bad_schedule_arguments_are_usage_errors() {
    assert_eq!(run(&["schedule", "--family", "quad", "--K", "(1,2,1,1)"]).status.code(), Some(1));
    assert_eq!(run(&["schedule", "--family", "spiral"]).status.code(), Some(1));
    assert_eq!(run(&["schedule", "--family", "dyadic", "--K", "1", "--tau", "1/2"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn transport_time_zero_is_the_datum() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "transport", "--field", "mix:2", "--datum", "bump:0.3,0.6,0.12", "--n", "32", "--times", "0", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let got = read_field(&dir.path().join("snapshot_0.tmxf"));
    let d = Datum::Bump { c1: 0.3, c2: 0.6, sigma: 0.12 };
    assert_eq!(got, GridField::from_fn(32, |a, b| d.value(&TorusPoint::new(a, b))));
}

#[test]
fn mirrored_transport_is_symmetric_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        vec![
            "transport".to_string(),
            "--field=mirrored:2".into(),
            "--datum=smooth-sign".into(),
            "--n=32".into(),
            "--times=21,79,50".into(),
            format!("--out={out}"),
            "--set".into(),
            "exact=true".into(),
        ]
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for p in [&a, &b] {
        fs::create_dir(p).unwrap();
        let argv = args(p.to_str().unwrap());
        let o = run(&argv.iter().map(String::as_str).collect::<Vec<_>>());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(a.join("snapshot_0.tmxf")).unwrap(), fs::read(a.join("snapshot_1.tmxf")).unwrap());
    for j in 0..3 {
        let name = format!("snapshot_{j}.tmxf");
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
        let meta: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(a.join(format!("{name}.meta.json"))).unwrap()).unwrap();
        assert_eq!(meta["sha256"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn invalid_runs_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["transport", "--field", "fractal:2", "--times", "0,2", "--n", "16", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    let missing = dir.path().join("nope");
    let o = run(&["transport", "--field", "fractal:2", "--times", "0", "--n", "16", "--out", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!missing.exists());
    let o = run(&["transport", "--field", "fractal:2", "--n", "12", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn solve_writes_trace_and_final_fields() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "solve", "--field", "fractal:2", "--datum", "sin", "--n", "32", "--nu", "1e-3,1/512", "--times", "0.5", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for idx in 0..2 {
        let f = read_field(&dir.path().join(format!("final_{idx}.tmxf")));
        assert_eq!(f.n(), 32);
        let trace = fs::read_to_string(dir.path().join(format!("trace_{idx}.csv"))).unwrap();
        assert!(trace.starts_with("t,mass,l1,l2,linf,cumulative_dissipation"));
        assert!(dir.path().join(format!("snapshot_{idx}_0.tmxf")).exists());
    }
    assert_eq!(stdout(&o).lines().count(), 2);
}

#[test]
fn constant_experiment_passes_and_report_rerenders() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "experiment", "--kind", "mixing", "--K", "2", "--n", "16", "--datum", "constant:0.5", "--set", "battery=constant:0.5",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}\n{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("[PASS] variance_50_ratio"));
    let report = dir.path().join("report.json");
    let o = run(&["report", report.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("experiment: mixing"));
    let o = run(&["report", report.to_str().unwrap(), "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["criteria"].as_array().unwrap().iter().all(|c| c["pass"] == true));
}

#[test]
fn failing_report_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    fs::write(
        &path,
        r#"{"experiment":"vv","params":{},"criteria":[{"name":"x","value":1.0,"threshold":0.5,"comparison":"<=","pass":false}],"artifacts":[]}"#,
    )
    .unwrap();
    let o = run(&["report", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("[FAIL] x"));
}

#[test]
fn experiment_rejects_fixed_viscosity() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["experiment", "--kind", "vv", "--set", "nu=0.1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn verify_passes() {
    let o = run(&["verify", "--seed", "3", "--samples", "300"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("all checks passed"));
}

#[test]
fn config_file_with_include_and_override() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("out")).unwrap();
    fs::write(dir.path().join("base.cfg"), "field = mix:2\ndatum = sin\nn = 64\n").unwrap();
    fs::write(dir.path().join("run.cfg"), "include = base.cfg\nn = 16 # small\ntimes = 12\n").unwrap();
    let out = dir.path().join("out");
    let cfg = dir.path().join("run.cfg");
    let o = run(&["--config", cfg.to_str().unwrap(), "--set", "datum=checkerboard:2", "transport", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let f = read_field(&out.join("snapshot_0.tmxf"));
    assert_eq!(f.n(), 16);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("snapshot_0.tmxf.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["datum"], "checkerboard:2");
    assert_eq!(meta["config"]["n"], "16");
}
