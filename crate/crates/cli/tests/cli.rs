use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn vcstar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vcstar"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Deterministic pseudo-random panel file of `p` features over `t` days.
fn write_stream(dir: &Path, name: &str, p: usize, t: usize, salt: u64) -> PathBuf {
    let mut x = salt.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1);
    let mut next = || {
        x = x.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1_442_695_040_888_963_407);
        (x >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut text = String::from("day");
    for i in 0..p {
        write!(text, ",f{i}").unwrap();
    }
    text.push('\n');
    for d in 1..=t {
        write!(text, "{d}").unwrap();
        for _ in 0..p {
            // Sum of uniforms: roughly normal.
            let v: f64 = (0..6).map(|_| next()).sum::<f64>() - 3.0;
            write!(text, ",{v:.6}").unwrap();
        }
        text.push('\n');
    }
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn read(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap()
}

#[test]
fn preprocess_segment_cases() {
    let tmp = tempfile::tempdir().unwrap();
    let clean = write_stream(tmp.path(), "clean.csv", 3, 20, 1);
    let out = tmp.path().join("a");
    let o = vcstar(&["preprocess", "--input", s(&clean), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("clean-seg01.tsv").exists());
    assert!(read(&out, "segments.tsv").lines().count() == 2);
    assert_eq!(manifest(&out)["notes"]["segments"], 1);

    let short = write_stream(tmp.path(), "short.csv", 3, 13, 2);
    let out = tmp.path().join("b");
    let o = vcstar(&["preprocess", "--input", s(&short), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("no segment"), "{}", stderr(&o));
    assert_eq!(manifest(&out)["notes"]["segments"], 0);
    assert_eq!(manifest(&out)["notes"]["dropped_days"], 13);

    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "day,a,b\n1,0.5,0.1\n2,0.2,oops\n").unwrap();
    let out = tmp.path().join("c");
    let o = vcstar(&["preprocess", "--input", s(&bad), "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    let msg = stderr(&o);
    assert!(msg.contains("line 3") && msg.contains("column 3"), "{msg}");
    assert!(manifest(&out)["notes"]["error"].is_string());
}

#[test]
fn detect_is_reproducible_and_thread_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let y = write_stream(tmp.path(), "s1.csv", 4, 30, 7);
    let run = |out: &Path, threads: &str| {
        let o = vcstar(&[
            "detect", "--input", s(&y), "--method", "vcstar", "--reps", "99", "--seed", "5",
            "--threads", threads, "--out", s(out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run(&a, "1");
    run(&b, "2");
    assert_eq!(read(&a, "detections.tsv"), read(&b, "detections.tsv"));
    assert_eq!(read(&a, "summary.tsv"), read(&b, "summary.tsv"));

    let c = tmp.path().join("c");
    let o = vcstar(&["rerun", "--manifest", s(&a.join("manifest.json")), "--out", s(&c)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read(&a, "detections.tsv"), read(&c, "detections.tsv"));
    let m = manifest(&a);
    assert_eq!(m["command"], "detect");
    assert_eq!(m["seed"], 5);
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["outputs"], serde_json::json!(["detections.tsv", "summary.tsv"]));

    // A changed input blocks the rerun.
    write_stream(tmp.path(), "s1.csv", 4, 30, 8);
    let o = vcstar(&["rerun", "--manifest", s(&a.join("manifest.json")), "--out", s(&c)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("changed"));
}

#[test]
fn wide_stream_forces_phi() {
    let tmp = tempfile::tempdir().unwrap();
    let y = write_stream(tmp.path(), "wide.csv", 12, 14, 3);
    let out = tmp.path().join("o");
    let o = vcstar(&[
        "detect", "--input", s(&y), "--method", "vcstar", "--phi", "0.5", "--reps", "50", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(manifest(&out)["notes"]["phi_forced_streams"], serde_json::json!(["wide"]));
    assert!(read(&out, "summary.tsv").contains("\ttrue"));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let y = write_stream(tmp.path(), "s.csv", 2, 20, 1);
    let out = tmp.path().join("o");
    let cases: Vec<Vec<&str>> = vec![
        vec!["detect", "--input", s(&y), "--method", "bogus", "--out", s(&out)],
        vec!["simulate", "--preset", "figure-1", "--reps", "0", "--out", s(&out)],
        vec!["simulate", "--out", s(&out)],
        vec!["detect", "--input", s(&y), "--method", "vc", "--alpha", "1.5", "--out", s(&out)],
        vec!["frobnicate"],
    ];
    for args in cases {
        let o = vcstar(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
    }
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "schema_version = 99\n").unwrap();
    let o = vcstar(&["--config", s(&cfg), "detect", "--input", s(&y), "--method", "vc", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    std::fs::write(&cfg, "schema_version = 1\nunknown_key = 3\n").unwrap();
    let o = vcstar(&["--config", s(&cfg), "detect", "--input", s(&y), "--method", "vc", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn config_values_apply_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let y = write_stream(tmp.path(), "s.csv", 3, 25, 4);
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "schema_version = 1\nseed = 11\nalpha = 0.1\n[detect]\nb = 40\n").unwrap();
    let out = tmp.path().join("o");
    let o = vcstar(&["--config", s(&cfg), "detect", "--input", s(&y), "--method", "hotelling", "--reps", "30", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = manifest(&out);
    assert_eq!(m["seed"], 11);
    assert_eq!(m["resolved"]["alpha"], 0.1);
    assert_eq!(m["resolved"]["b"], 30);
    assert_eq!(m["config"]["detect"]["b"], 40);
}

#[test]
fn figure_1_preset_row_count_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |out: &Path| {
        let o = vcstar(&[
            "simulate", "--preset", "figure-1", "--method", "hotelling", "--kinds", "mean_only",
            "--no-calibrate", "--reps", "3", "--null-b", "5", "--seed", "2", "--out", s(out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        read(out, "power.tsv")
    };
    let a = run(&tmp.path().join("a"));
    assert_eq!(a.lines().count(), 1 + 3 * 2 * 6);
    assert_eq!(a, run(&tmp.path().join("b")));
}

#[test]
fn calibrate_then_simulate_recovers_target_power() {
    let tmp = tempfile::tempdir().unwrap();
    let cal = tmp.path().join("cal");
    let o = vcstar(&[
        "calibrate", "--t", "20", "--p", "5", "--k-star", "4", "--seed", "9", "--out", s(&cal),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let body: Value = serde_json::from_str(&read(&cal, "calibration.json")).unwrap();
    let effect = body["result"]["effect"].as_f64().unwrap();

    let grid = tmp.path().join("grid.tsv");
    std::fs::write(
        &grid,
        format!("T\tp\tk_star\trho\tchange_kind\teffect\tomega\tphi\tseed\n20\t5\t4\t0\tmean_only\t{effect}\t1\t1\t0\n"),
    )
    .unwrap();
    let sim = tmp.path().join("sim");
    let o = vcstar(&[
        "simulate", "--grid", s(&grid), "--method", "vcstar", "--no-calibrate", "--seed", "10", "--out", s(&sim),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = read(&sim, "power.tsv");
    let mut lines = table.lines();
    let header: Vec<&str> = lines.next().unwrap().split('\t').collect();
    let row: Vec<&str> = lines.next().unwrap().split('\t').collect();
    let power: f64 = row[header.iter().position(|h| *h == "power").unwrap()].parse().unwrap();
    assert!((0.75..=0.85).contains(&power), "re-simulated power {power}");
}

#[test]
fn select_phi_wide_panel_is_one() {
    let tmp = tempfile::tempdir().unwrap();
    let y = write_stream(tmp.path(), "wide.csv", 8, 6, 5);
    let out = tmp.path().join("o");
    let o = vcstar(&["select-phi", "--input", s(&y), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let body: Value = serde_json::from_str(&read(&out, "phi.json")).unwrap();
    assert_eq!(body["phi"], 1.0);
    assert_eq!(body["forced"], true);
}

#[test]
fn null_dist_threshold_and_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    let run = |out: &Path| {
        let o = vcstar(&[
            "null-dist", "--method", "cusum", "--t", "30", "--p", "3", "--reps", "200", "--cache", s(&cache),
            "--out", s(out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        (read(out, "null.tsv"), manifest(out)["notes"]["threshold"].as_f64().unwrap())
    };
    let (a, thr) = run(&tmp.path().join("a"));
    assert_eq!(a.lines().count(), 201);
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 1);
    let (b, thr_b) = run(&tmp.path().join("b"));
    assert_eq!((a, thr), (b, thr_b));
}

#[test]
fn reports() {
    let tmp = tempfile::tempdir().unwrap();
    let log = tmp.path().join("log.tsv");
    std::fs::write(
        &log,
        "stream_id\tday_index\tcalendar_date\tmethod\tstatistic\tp_value\tdb\tT_at_test\trun_start\n\
         s1\t12\t\tvcstar\t3.5\t0.01\t7\t15\t1\n\
         s2\t20\t\tvcstar\t2.5\t0.02\t7\t22\t1\n",
    )
    .unwrap();
    let out = tmp.path().join("sim");
    let o = vcstar(&["report", "similarity", "--left", s(&log), "--right", s(&log), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(manifest(&out)["notes"]["similarity"], 1.0);

    let summary = tmp.path().join("summary.tsv");
    std::fs::write(
        &summary,
        "stream_id\tmethod\tdays\ttests\tdetections\tphi_forced\ns1\tvcstar\t40\t30\t2\tfalse\ns2\tvcstar\t60\t50\t1\tfalse\n",
    )
    .unwrap();
    let out = tmp.path().join("rates");
    let o = vcstar(&["report", "rates", "--summary", s(&summary), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!((manifest(&out)["notes"]["pooled_rate"].as_f64().unwrap() - 0.03).abs() < 1e-12);

    let table = tmp.path().join("t.csv");
    std::fs::write(&table, "a,b\n1,2\n2,4\n3,5\n4,9\n5,10\n").unwrap();
    let out = tmp.path().join("sp");
    let o = vcstar(&["report", "spearman", "--table", s(&table), "--x", "a", "--y", "b", "--reps", "200", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(manifest(&out)["notes"]["rho"], 1.0);
}

#[test]
fn tune_lambda_scores_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let y = write_stream(tmp.path(), "s.csv", 3, 35, 6);
    let out = tmp.path().join("o");
    let o = vcstar(&["tune-lambda", "--input", s(&y), "--grid", "0,1,inf", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read(&out, "lambda.tsv").lines().count(), 4);
    let best = &manifest(&out)["notes"]["best_lambda"];
    assert!(best.is_number() || best == "inf", "{best}");
}
