use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn st_meta(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_st-meta"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .env_remove("ST_META_OUT")
        .output()
        .expect("cannot launch st-meta")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn single_criterion_selftest_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = st_meta(dir.path(), &["selftest", "--criterion", "1"]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert!(stdout(&out).contains("criterion  1 PASS"));
}

#[test]
fn unknown_config_key_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "[stage1]\ntau_s = 1e-9\n").unwrap();
    let out = st_meta(dir.path(), &["--config", cfg.to_str().unwrap(), "simulate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tau_s"));
}

#[test]
fn infeasible_invert_target_exits_three_with_time() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("target.csv");
    // a 0.9 V step over 1 ns needs |v + tau0 v'| well above M = 1 V
    fs::write(&target, "t,v\n0,0\n1e-9,0.9\n2e-9,0.9\n").unwrap();
    let out = st_meta(dir.path(), &["invert", "--target", target.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("validity violation at t = "), "{err}");
}

#[test]
fn cascade_hysteresis_outer_points_are_stage_one_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let out = st_meta(dir.path(), &["--no-timestamp", "--stages", "2", "hysteresis"]);
    assert!(out.status.success(), "{}", stdout(&out));
    let mut rdr = csv::Reader::from_path(dir.path().join("hysteresis_switch_points.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (stage, dir_col, v) = (col("stage"), col("direction"), col("v_in"));
    let mut seen = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        if &rec[stage] != "2" {
            continue;
        }
        let x: f64 = rec[v].parse().unwrap();
        // reference stage: V_H = -V_L = k M - 1/A
        let expect = if &rec[dir_col] == "up" { 0.499 } else { -0.499 };
        assert!((x - expect).abs() < 1e-4 * 0.998, "{} switch at {x}", &rec[dir_col]);
        seen += 1;
    }
    assert_eq!(seen, 2);
}

#[test]
fn reruns_without_timestamp_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = st_meta(dir.path(), &["--no-timestamp", "pulses"]);
        assert!(out.status.success(), "{}", stdout(&out));
    }
    for name in ["pulses.csv", "pulses.txt"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs between runs");
    }
}

#[test]
fn timestamped_names_carry_the_stamp() {
    let dir = tempfile::tempdir().unwrap();
    let out = st_meta(dir.path(), &["late"]);
    assert!(out.status.success(), "{}", stdout(&out));
    let names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(names.iter().any(|n| n.starts_with("late_") && n.ends_with(".csv")), "{names:?}");
}
