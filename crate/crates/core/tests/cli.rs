use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use powermfg::scenario_io::{read_capacities, read_exploitability, read_prices, Manifest};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_powermfg"));
    c.env_remove("POWERMFG_OUT");
    c
}

fn desk(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("scenarios/desk/{name}.toml"))
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn run_short(name: &str, out: &Path, iters: usize) -> Output {
    bin()
        .args(["run", "--scenario"])
        .arg(desk(name))
        .arg("--out")
        .arg(out)
        .args(["--iters", &iters.to_string()])
        .output()
        .unwrap()
}

#[test]
fn calibrate_prints_uk_parameters() {
    let o = bin()
        .args([
            "calibrate",
            "--cost-mean",
            "33.4",
            "--cost-std",
            "11.0",
            "--factor-mean",
            "0.4261",
            "--factor-std",
            "0.0443",
        ])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let m = Manifest::parse(&text);
    let delta: f64 = m.get("cir.delta").unwrap().parse().unwrap();
    let delta_bar: f64 = m.get("jacobi.delta_bar").unwrap().parse().unwrap();
    assert!((delta - 1.90335).abs() < 1e-5);
    assert!((delta_bar - 0.08995).abs() < 1e-5);
    let err: f64 = m.get("cir.roundtrip_mean_rel_err").unwrap().parse().unwrap();
    assert!(err < 1e-4);
}

#[test]
fn calibrate_rejects_infeasible_moments() {
    let o = bin()
        .args(["calibrate", "--factor-mean", "0.5", "--factor-std", "0.6"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn calibrate_without_moments_is_input_error() {
    let o = bin().arg("calibrate").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_scenario_exits_with_input_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["run", "--scenario", "no/such/file.toml", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_argument_exits_with_input_code() {
    let o = bin().args(["run", "--bogus"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_scenario_exits_with_input_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[scenario]\nname = 3\n").unwrap();
    let o = bin()
        .args(["run", "--scenario"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn short_run_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("base");
    let o = run_short("baseline", &out, 3);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "prices.csv",
        "capacities.csv",
        "exploitability.csv",
        "omega.csv",
        "eta.csv",
        "eta_bar.csv",
        "config.toml",
        "manifest.txt",
        "timing.txt",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let m = Manifest::read(&out).unwrap();
    assert_eq!(m.get("result.iterations"), Some("3"));
    assert_eq!(m.get("result.termination"), Some("max_iterations"));
    let delta: f64 = m.get("derived.cir.delta").unwrap().parse().unwrap();
    assert!((delta - 1.90335).abs() < 1e-5);
    assert_eq!(read_exploitability(&out).unwrap().len(), 3);
    let caps = read_capacities(&out).unwrap();
    assert_eq!(caps.len(), 21);
    let prices = read_prices(&out).unwrap();
    assert_eq!(prices.series.len(), 2);
    assert!(prices.series.values().all(|s| s.len() == 21));
}

#[test]
fn manifest_is_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run_short("baseline", &a, 4).status.code(), Some(0));
    assert_eq!(run_short("baseline", &b, 4).status.code(), Some(0));
    let ma = std::fs::read_to_string(a.join("manifest.txt")).unwrap();
    let mb = std::fs::read_to_string(b.join("manifest.txt")).unwrap();
    assert_eq!(ma, mb);
}

#[test]
fn out_root_environment_variable_sets_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .env("POWERMFG_OUT", dir.path())
        .args(["run", "--iters", "1", "--scenario"])
        .arg(desk("baseline"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("desk_baseline/manifest.txt").is_file());
}

#[test]
fn seeding_from_previous_run_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    assert_eq!(run_short("baseline", &first, 2).status.code(), Some(0));
    let o = bin()
        .args(["run", "--iters", "1", "--scenario"])
        .arg(desk("baseline"))
        .arg("--out")
        .arg(dir.path().join("second"))
        .arg("--seed-flows")
        .arg(&first)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn compare_reports_directions() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("base"), dir.path().join("subsidy"));
    assert_eq!(run_short("baseline", &a, 5).status.code(), Some(0));
    assert_eq!(run_short("scenario1", &b, 5).status.code(), Some(0));
    let csv = dir.path().join("cmp/compare.csv");
    let o = bin()
        .args(["compare", "--runs"])
        .arg(&a)
        .arg(&b)
        .arg("--out")
        .arg(&csv)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("highest final renewable entry:"));
    assert!(text.contains("highest final peak price:"));
    let table = std::fs::read_to_string(&csv).unwrap();
    let header = table.lines().next().unwrap();
    assert!(header.contains("subsidy.delta_renewable_entered_gw"));
    assert_eq!(table.lines().count(), 22);
}

#[test]
fn compare_of_missing_run_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["compare", "--runs"])
        .arg(dir.path().join("x"))
        .arg(dir.path().join("y"))
        .arg("--out")
        .arg(dir.path().join("c.csv"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oracle_check_passes_on_desk_scenario() {
    let o = bin()
        .args(["oracle-check", "--instances", "10", "--scenario"])
        .arg(desk("baseline"))
        .output()
        .unwrap();
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 4);
}

#[test]
fn oracle_check_detects_corrupted_transition() {
    let o = bin()
        .args(["oracle-check", "--instances", "4", "--corrupt-transition", "--scenario"])
        .arg(desk("baseline"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    let text = stdout(&o);
    assert!(text.contains("FAIL transition-m-matrix"));
    assert!(text.contains("FAIL lp-dp-agreement"));
}

#[test]
fn zero_threads_is_rejected() {
    let o = bin().args(["--threads", "0", "calibrate"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
