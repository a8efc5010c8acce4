use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn shepherd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shepherd")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn batch_writes_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = shepherd(&["batch", "--strategy", "shepherd", "--trials", "4", "--seed", "1", "--out", "r1"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("r1");
    for f in ["summary.json", "curve.csv", "tti.csv", "timeline.csv", "trials.jsonl", "effective_config.json"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let summary = json(&dir.join("summary.json"));
    assert_eq!(summary["n_trials"], 4);
    let rate = summary["success_rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&rate));
    let cfg = json(&dir.join("effective_config.json"));
    assert_eq!(cfg["seed_base"], 1);
    assert_eq!(cfg["scenario"]["params"]["tau_chase"], 5.0);
}

#[test]
fn effective_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let a = shepherd(&["batch", "--trials", "3", "--seed", "7", "--loss", "0.3", "--out", "a"], tmp.path());
    assert!(a.status.success());
    let b = shepherd(&["batch", "--config", "a/effective_config.json", "--out", "b"], tmp.path());
    assert!(b.status.success(), "{}", String::from_utf8_lossy(&b.stderr));
    for f in ["summary.json", "curve.csv", "tti.csv", "timeline.csv", "trials.jsonl", "effective_config.json"] {
        assert_eq!(fs::read(tmp.path().join("a").join(f)).unwrap(), fs::read(tmp.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_value = shepherd(&["trial", "--set", "capture_radius=-1"], tmp.path());
    assert_eq!(bad_value.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_value.stderr).contains("capture_radius"));

    let bad_key = shepherd(&["trial", "--set", "params.nope=1"], tmp.path());
    assert_eq!(bad_key.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_key.stderr).contains("scenario.params.nope"));

    fs::write(tmp.path().join("typo.json"), r#"{"scenario": {"n_target": 2}}"#).unwrap();
    let typo = shepherd(&["trial", "--config", "typo.json"], tmp.path());
    assert_eq!(typo.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&typo.stderr).contains("scenario.n_target"));

    let missing = shepherd(&["trial", "--config", "absent.json"], tmp.path());
    assert_eq!(missing.status.code(), Some(2));

    let unknown_strategy = shepherd(&["trial", "--strategy", "swarm"], tmp.path());
    assert_eq!(unknown_strategy.status.code(), Some(2));
}

#[test]
fn refuses_non_empty_output_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(shepherd(&["coverage", "--out", "c1"], tmp.path()).status.success());
    let again = shepherd(&["coverage", "--out", "c1"], tmp.path());
    assert_eq!(again.status.code(), Some(1));
    assert!(shepherd(&["coverage", "--out", "c1", "--force"], tmp.path()).status.success());
}

#[test]
fn coverage_condition_holds_at_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let out = shepherd(&["coverage", "--out", "c1"], tmp.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("holds"));
    let csv = fs::read_to_string(tmp.path().join("c1/coverage.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("dt,r_formation,r_intercept,condition_holds,escape_prob_bound"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&first[..4], &["0.1", "40", "25", "true"]);
    // 65 / (√2 · 35) ≈ 1.313 s: the condition fails from 1.4 s on.
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let dt: f64 = cols[0].parse().unwrap();
        assert_eq!(cols[3] == "true", dt <= 1.3132, "{line}");
    }
}

#[test]
fn trial_trace_respects_motion_limits() {
    let tmp = tempfile::tempdir().unwrap();
    let out = shepherd(&["trial", "--seed", "5", "--trace"], tmp.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut n = 0;
    for line in text.lines() {
        let r: serde_json::Value = serde_json::from_str(line).unwrap();
        let v = &r["vel"];
        let speed = (v["x"].as_f64().unwrap().powi(2) + v["y"].as_f64().unwrap().powi(2) + v["z"].as_f64().unwrap().powi(2)).sqrt();
        // Records carry 9 significant digits.
        assert!(speed <= r["v_max"].as_f64().unwrap() * (1.0 + 1e-8), "{line}");
        assert!(r["accel"].as_f64().unwrap() <= r["a_max"].as_f64().unwrap() * (1.0 + 1e-8), "{line}");
        n += 1;
    }
    assert!(n > 100);
}

#[test]
fn trial_with_out_dir_and_timeline_reexport() {
    let tmp = tempfile::tempdir().unwrap();
    let t = shepherd(&["trial", "--seed", "3", "--trace", "--out", "t1"], tmp.path());
    assert!(t.status.success());
    assert!(tmp.path().join("t1/result.json").is_file());
    assert!(tmp.path().join("t1/trace.jsonl").is_file());

    assert!(shepherd(&["batch", "--trials", "3", "--out", "b1"], tmp.path()).status.success());
    let tl = shepherd(&["timeline", "b1", "--out", "tl"], tmp.path());
    assert!(tl.status.success());
    assert_eq!(
        fs::read(tmp.path().join("tl/timeline.csv")).unwrap(),
        fs::read(tmp.path().join("b1/timeline.csv")).unwrap()
    );
    assert!(tmp.path().join("tl/phase_durations.json").is_file());
}

#[test]
fn sweeps_write_per_entry_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let s = shepherd(&["sweep-targets", "--trials", "2", "--levels", "1,2", "--out", "s"], tmp.path());
    assert!(s.status.success(), "{}", String::from_utf8_lossy(&s.stderr));
    let csv = fs::read_to_string(tmp.path().join("s/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("level,strategy,success,ci_lo,ci_hi\n"));
    for d in ["shepherd_target_count_1", "traditional_target_count_2"] {
        assert!(tmp.path().join("s").join(d).join("summary.json").is_file(), "{d}");
    }
    let one = shepherd(&["sweep-loss", "--trials", "2", "--levels", "0.5", "--strategy", "traditional", "--out", "l"], tmp.path());
    assert!(one.status.success());
    assert_eq!(fs::read_to_string(tmp.path().join("l/sweep.csv")).unwrap().lines().count(), 2);
}
