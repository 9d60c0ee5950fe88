use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn trapnls(dir: &Path, config: Option<&str>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_trapnls"));
    if let Some(text) = config {
        let path = dir.join("config.json");
        fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.arg("--output").arg(dir).args(args);
    cmd.env_remove("TRAPNLS_CACHE_DIR").env("RUST_LOG", "info");
    cmd.output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const PAST_THRESHOLD: &str = r#"{"problem": {"N": 1, "p": 7, "omega": 2}}"#;

#[test]
fn ground_state_default_writes_outputs() {
    let dir = TempDir::new().unwrap();
    let out = trapnls(dir.path(), None, &["ground-state"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let line = stdout(&out);
    assert!(line.starts_with("R(phi) = "), "{line}");
    assert!(line.contains("[criterion-not-met]"), "{line}");
    let summary = json(&dir.path().join("ground_state.json"));
    // independent shooting oracle for (N, p, omega) = (1, 7, 1)
    let amp = summary["amplitude"].as_f64().unwrap();
    assert!((amp - 1.3319634979).abs() < 1e-7, "amplitude {amp}");
    let r = summary["report"]["second_var"].as_f64().unwrap();
    assert!((r - 0.158).abs() < 1e-3, "R {r}");
    let profile = fs::read_to_string(dir.path().join("ground_state.csv")).unwrap();
    assert_eq!(profile.lines().next(), Some("r,phi"));
    assert_eq!(profile.lines().count(), 2050);
    let functionals = fs::read_to_string(dir.path().join("functionals.csv")).unwrap();
    assert_eq!(functionals.lines().count(), 2);
}

#[test]
fn cached_rerun_is_identical() {
    let dir = TempDir::new().unwrap();
    let first = trapnls(dir.path(), None, &["ground-state"]);
    assert_eq!(code(&first), 0);
    assert!(!stderr(&first).contains("cache hit"));
    let names = ["ground_state.csv", "functionals.csv", "ground_state.json"];
    let before: Vec<Vec<u8>> = names
        .iter()
        .map(|n| fs::read(dir.path().join(n)).unwrap())
        .collect();
    let second = trapnls(dir.path(), None, &["ground-state"]);
    assert_eq!(code(&second), 0);
    assert!(stderr(&second).contains("cache hit"), "{}", stderr(&second));
    for (n, b) in names.iter().zip(&before) {
        assert_eq!(&fs::read(dir.path().join(n)).unwrap(), b, "{n} changed");
    }
    assert_eq!(stdout(&first), stdout(&second));
}

#[test]
fn cache_dir_env_override() {
    let dir = TempDir::new().unwrap();
    let cache = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_trapnls"))
        .args(["--quiet", "ground-state", "--output"])
        .arg(dir.path())
        .env("TRAPNLS_CACHE_DIR", cache.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).is_empty());
    assert_eq!(fs::read_dir(cache.path()).unwrap().count(), 1);
    assert!(!dir.path().join("cache").exists());
}

#[test]
fn tampered_cache_is_resolved() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&trapnls(dir.path(), None, &["ground-state"])), 0);
    let expected = fs::read(dir.path().join("ground_state.csv")).unwrap();
    let entry = fs::read_dir(dir.path().join("cache"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let text = fs::read_to_string(&entry).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let k = lines.len() / 2;
    let (r, _) = lines[k].split_once(',').unwrap();
    lines[k] = format!("{r},0.5");
    fs::write(&entry, lines.join("\n") + "\n").unwrap();
    let out = trapnls(dir.path(), None, &["ground-state"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(
        stderr(&out).contains("discarding cache entry"),
        "{}",
        stderr(&out)
    );
    assert_eq!(
        fs::read(dir.path().join("ground_state.csv")).unwrap(),
        expected
    );
}

#[test]
fn invalid_frequency_is_config_error() {
    let dir = TempDir::new().unwrap();
    let out = trapnls(
        dir.path(),
        Some(r#"{"problem": {"N": 1, "p": 7, "omega": -2}}"#),
        &["ground-state"],
    );
    assert_eq!(code(&out), 1);
    assert!(
        stderr(&out).contains("frequency omega = -2"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn unknown_config_key_is_config_error() {
    let dir = TempDir::new().unwrap();
    let out = trapnls(
        dir.path(),
        Some(r#"{"grid": {"r_max": 12, "J": 2048, "dr": 1}}"#),
        &["ground-state"],
    );
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("unknown field"), "{}", stderr(&out));
}

#[test]
fn bad_arguments_exit_one_and_help_exits_zero() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        code(&trapnls(dir.path(), None, &["verify", "--only", "nope"])),
        1
    );
    assert_eq!(code(&trapnls(dir.path(), None, &["evolve"])), 1);
    assert_eq!(
        code(&trapnls(dir.path(), None, &["evolve", "--lambda", "-1"])),
        1
    );
    assert_eq!(code(&trapnls(dir.path(), None, &["--help"])), 0);
}

#[test]
fn solver_failure_exits_two() {
    let dir = TempDir::new().unwrap();
    let cfg =
        r#"{"problem": {"N": 1, "p": 7, "omega": 1}, "solver": {"max_iter": 2, "refine": false}}"#;
    let out = trapnls(dir.path(), Some(cfg), &["ground-state"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(
        stderr(&out).contains("did not converge"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn evolve_blowup_past_threshold() {
    let dir = TempDir::new().unwrap();
    let out = trapnls(
        dir.path(),
        Some(PAST_THRESHOLD),
        &["evolve", "--lambda", "1.2"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let s = json(&dir.path().join("evolve_summary.json"));
    assert_eq!(s["status"], "blowup_detected");
    assert_eq!(s["initial_membership"]["in_b"], "yes");
    // time-step halving oracle gives T = 0.124741; spatial refinement 0.124747
    let t = s["blowup_time"].as_f64().unwrap();
    assert!((t - 0.12474).abs() < 1e-4, "T = {t}");
    assert!(s["virial_max_rel_err"].as_f64().unwrap() < 1e-3);
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.lines().last().unwrap().contains("blowup_detected"));
}

#[test]
fn evolve_standing_wave_completes() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"problem": {"N": 1, "p": 7, "omega": 2}, "evolve": {"t_end": 0.05}}"#;
    let out = trapnls(dir.path(), Some(cfg), &["evolve", "--lambda", "1.0"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let s = json(&dir.path().join("evolve_summary.json"));
    assert_eq!(s["status"], "completed");
    assert!(s["blowup_time"].is_null());
    assert!(s["mass_drift"].as_f64().unwrap().abs() < 1e-10);
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let header: Vec<&str> = trace.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "max_abs").unwrap();
    let amps: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(col).unwrap().parse().unwrap())
        .collect();
    let (lo, hi) = amps
        .iter()
        .fold((f64::INFINITY, 0f64), |(a, b), v| (a.min(*v), b.max(*v)));
    assert!((hi - lo) / hi < 1e-6, "modulus varies: [{lo}, {hi}]");
}

#[test]
fn membership_contradiction_exits_three() {
    let dir = TempDir::new().unwrap();
    let out = trapnls(
        dir.path(),
        Some(PAST_THRESHOLD),
        &["evolve", "--lambda", "1.2", "--inject-fault", "mass"],
    );
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("not in B"), "{}", stderr(&out));
}

#[test]
fn sweep_locates_threshold() {
    let dir = TempDir::new().unwrap();
    let out = trapnls(dir.path(), Some(PAST_THRESHOLD), &["sweep"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = json(&dir.path().join("threshold.json"));
    assert_eq!(r["threshold"].as_f64().unwrap(), 0.09375);
    // grid refinement J = 4096 gives the same crossing to 1e-12
    let w0 = r["omega0"].as_f64().unwrap();
    assert!((w0 - 1.10574).abs() < 1e-2 * (w0 + 1.0), "omega0 {w0}");
    let csv = fs::read_to_string(dir.path().join("ratios.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("omega,ratio"));
    assert_eq!(csv.lines().count(), 13);
    let svg = fs::read_to_string(dir.path().join("ratios.svg")).unwrap();
    assert!(svg.contains("<polyline") && svg.contains("threshold 0.093750"));
}

#[test]
fn sweep_without_crossing_exits_zero() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"sweep": {"omega_lo": 2, "omega_hi": 50, "points": 4}}"#;
    let out = trapnls(dir.path(), Some(cfg), &["sweep"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = json(&dir.path().join("threshold.json"));
    assert!(r["omega0"].is_null());
    assert!(!r["verdict"].as_str().unwrap().is_empty());
}

#[test]
fn verify_suite_passes_past_threshold() {
    let dir = TempDir::new().unwrap();
    let out = trapnls(dir.path(), Some(PAST_THRESHOLD), &["verify"]);
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), stderr(&out));
    for id in [
        "identities",
        "criterion_equiv",
        "bom",
        "varcha",
        "key",
        "g_scan",
    ] {
        let r = json(&dir.path().join(format!("lemma_{id}.json")));
        assert_eq!(r["passed"], true, "{id}");
    }
}

#[test]
fn verify_below_threshold_reports_hypothesis() {
    let dir = TempDir::new().unwrap();
    let out = trapnls(dir.path(), None, &["verify", "--only", "key"]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("key"));
    let r = json(&dir.path().join("lemma_key.json"));
    assert!(r["error"].as_str().unwrap().contains("hypothesis"));
}

#[test]
fn verify_g_scan_only() {
    let dir = TempDir::new().unwrap();
    let out = trapnls(dir.path(), None, &["verify", "--only", "g_scan"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = json(&dir.path().join("lemma_g_scan.json"));
    let min = r["worst_margin"].as_f64().unwrap();
    assert!(min > 0.0 && min < 1e-10, "min {min}");
    assert!(!dir.path().join("lemma_key.json").exists());
    assert!(!dir
        .path()
        .join("cache")
        .read_dir()
        .is_ok_and(|mut d| d.next().is_some()));
}

#[test]
fn fault_injection_fails_identities() {
    let dir = TempDir::new().unwrap();
    let out = trapnls(
        dir.path(),
        Some(PAST_THRESHOLD),
        &["verify", "--only", "identities", "--inject-fault", "energy"],
    );
    assert_eq!(code(&out), 4);
    assert!(
        stderr(&out).contains("failed lemma checks: identities"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn seed_flag_is_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for d in [&a, &b] {
        let out = trapnls(
            d.path(),
            Some(PAST_THRESHOLD),
            &["--seed", "7", "verify", "--only", "varcha"],
        );
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let read = |d: &TempDir| fs::read(d.path().join("lemma_varcha.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    let c = TempDir::new().unwrap();
    trapnls(
        c.path(),
        Some(PAST_THRESHOLD),
        &["--seed", "8", "verify", "--only", "varcha"],
    );
    assert_ne!(read(&a), read(&c));
}
