use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rnpm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rnpm"))
        .args(args)
        .output()
        .expect("spawn rnpm")
}

fn run_ok(args: &[&str]) {
    let out = rnpm(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn last_row(csv: &str) -> Vec<(String, f64)> {
    let mut lines = csv.lines();
    let names: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    let last = lines.last().unwrap();
    names
        .into_iter()
        .zip(last.split(',').map(|x| x.parse().unwrap()))
        .collect()
}

#[test]
fn trajectories_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        run_ok(&["traj", "--figure", "fig2", "--seed", "7", "--out", d.to_str().unwrap()]);
    }
    for f in ["series.csv", "events.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let s = summary(&a);
    assert_eq!(s["seed"], 7);
    assert_eq!(s["time_unit"], "1/kappa");
    // the feedback rotation undoes the record phase
    assert!((s["results"]["feedback_sx"].as_f64().unwrap() - 1.0).abs() < 1e-3);
}

#[test]
fn invalid_parameters_exit_with_one_and_name_every_field() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rnpm(&[
        "protocol",
        "--eta",
        "1.2",
        "--k",
        "0",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    for field in ["eta_plus", "eta_minus", "k"] {
        assert!(err.contains(&format!("error: {field}:")), "{err}");
    }
    assert!(!tmp.path().join("summary.json").exists());

    assert_eq!(rnpm(&["me", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(rnpm(&["--help"]).status.code(), Some(0));
    let out = rnpm(&["protocol", "--qubits", "1", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let out = rnpm(&["traj", "--drive-width", "0.1", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn too_small_cutoff_is_a_parameter_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rnpm(&[
        "me",
        "--alpha",
        "3",
        "--cutoff",
        "4",
        "--qubits",
        "1",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unmonitored_decay_follows_closed_form() {
    let tmp = tempfile::tempdir().unwrap();
    run_ok(&["me", "--figure", "fig2", "--out", tmp.path().to_str().unwrap()]);
    let row = last_row(&fs::read_to_string(tmp.path().join("series.csv")).unwrap());
    let get = |k: &str| row.iter().find(|(n, _)| n == k).unwrap().1;
    assert_eq!(get("t"), 10.0);
    // |alpha| = chi = kappa = 1: the coherence decays to exp(-0.8) cos(0.4)
    let want_sx = (-0.8f64).exp() * 0.4f64.cos();
    assert!((get("sx") - want_sx).abs() < 1e-4, "{} vs {want_sx}", get("sx"));
    let s = summary(tmp.path());
    assert_eq!(s["engine"], "master-equation");
    assert_eq!(s["system"]["fock_cutoff"], 12);
}

#[test]
fn even_preset_ensemble_splits_uniform_input_evenly() {
    let tmp = tempfile::tempdir().unwrap();
    run_ok(&[
        "ensemble",
        "--figure",
        "fig4-even",
        "--n",
        "2000",
        "--seed",
        "1",
        "--dt",
        "5e-3",
        "--sample-every",
        "100",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    let s = summary(tmp.path());
    let r = &s["results"];
    let mean = r["mean_p_minus1"].as_f64().unwrap();
    assert!((mean - 0.5).abs() < 0.05, "{mean}");
    let counts: u64 = r["photon_counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["runs"].as_u64().unwrap())
        .sum();
    assert_eq!(counts, 2000);
    let csv = fs::read_to_string(tmp.path().join("series.csv")).unwrap();
    assert!(csv.starts_with("t,rate_plus,rate_minus,xx,yy,zz,rate_plus_stderr"));
}

#[test]
fn presets_are_recorded_in_the_summary() {
    let tmp = tempfile::tempdir().unwrap();
    run_ok(&[
        "protocol",
        "--figure",
        "fig4-odd",
        "--seed",
        "3",
        "--dt",
        "5e-3",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    let s = summary(tmp.path());
    assert_eq!(s["figure"], "fig4-odd");
    assert_eq!(s["qubits"], 2);
    assert_eq!(s["protocol"]["k"], 1);
    assert_eq!(s["system"]["eta_plus"], 1.0);
    assert_eq!(s["protocol"]["observe_until"], 4.0);
    let r = &s["results"];
    assert!(r["n_minus"].as_u64().unwrap() >= 1);
    assert_eq!(r["outcome"], "odd");
    assert!((r["phi_minus"].as_f64().unwrap() - std::f64::consts::PI).abs() < 1e-12);
    // an odd outcome leaves the Bell state with zz = -1
    assert!((r["final"]["zz"].as_f64().unwrap() + 1.0).abs() < 1e-9);
    assert!(tmp.path().join("events.csv").exists());
}

#[test]
fn explicit_flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.conf");
    fs::write(
        &cfg,
        "# one qubit\nqubits = 1\nchi = 0.5\nt_end = 2   # short\nseed = 4\n",
    )
    .unwrap();
    let out = tmp.path().join("o");
    run_ok(&[
        "me",
        "--config",
        cfg.to_str().unwrap(),
        "--chi",
        "0.25",
        "--out",
        out.to_str().unwrap(),
    ]);
    let s = summary(&out);
    assert_eq!(s["system"]["chi"], 0.25);
    assert_eq!(s["t_end"], 2.0);
    assert_eq!(s["seed"], 4);

    fs::write(&cfg, "chi 0.5\n").unwrap();
    assert_eq!(rnpm(&["me", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn figure_writes_both_engines() {
    let tmp = tempfile::tempdir().unwrap();
    run_ok(&[
        "figure",
        "--figure",
        "fig2",
        "--seed",
        "1",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    for sub in ["trajectory", "master_equation"] {
        let d = tmp.path().join(sub);
        assert!(
            d.join("series.csv").exists() && d.join("summary.json").exists(),
            "{sub}"
        );
    }
    assert!(tmp.path().join("trajectory/events.csv").exists());
}
