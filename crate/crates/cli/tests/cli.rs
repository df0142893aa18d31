use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn pdhg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdhg"))
        .args(args)
        .current_dir(dir)
        .env_remove("PDHG_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn solve_converges_on_bilinear_with_small_steps() {
    let dir = TempDir::new().unwrap();
    let out = pdhg(
        dir.path(),
        &["solve", "--problem", "bilinear", "--theta", "1", "--tau", "0.5", "--sigma", "0.5"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report(&out);
    assert_eq!(r["verdict"], "converged");
    assert_eq!(r["config"]["tau"], 0.5);
    assert_eq!(r["regime"]["regime"], "interior");
    let trace = dir.path().join("out/solve_trace.csv");
    assert!(trace.exists());
    assert_eq!(r["paths"]["trace_csv"], "out/solve_trace.csv");
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/solve_report.json")).unwrap())
        .unwrap();
    assert_eq!(saved, r);
    let header = std::fs::read_to_string(&trace).unwrap();
    assert!(header.starts_with("k,dx,dy,dx2\n"));
}

#[test]
fn solve_reports_divergence_with_exit_two() {
    let dir = TempDir::new().unwrap();
    let out = pdhg(
        dir.path(),
        &["solve", "--problem", "bilinear", "--theta", "1", "--tau", "2", "--sigma", "1", "--regime", "off"],
    );
    assert_eq!(out.status.code(), Some(2));
    let r = report(&out);
    assert_eq!(r["verdict"], "diverged");
    assert!(r["diverged_at"].as_u64().unwrap() > 0);
    assert!(stderr(&out).contains("diverged"));
}

#[test]
fn regime_violations_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let out = pdhg(dir.path(), &["solve", "--theta", "0.4"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("θ ≥ 1/2"), "{}", stderr(&out));

    let out = pdhg(dir.path(), &["solve", "--problem", "bilinear", "--tau", "2", "--sigma", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("4/(1+2θ)"));

    let out = pdhg(dir.path(), &["solve", "--tau", "0.5", "--sigma", "0.5", "--regime", "sometimes"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(pdhg(dir.path(), &["solve", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(pdhg(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(pdhg(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn certify_bilinear_classical_steps() {
    let dir = TempDir::new().unwrap();
    let out = pdhg(
        dir.path(),
        &["certify", "--problem", "bilinear", "--theta", "1", "--tau", "1", "--sigma", "1"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report(&out);
    assert_eq!(r["certificates"]["passed"], true);
    assert!(r["certificates"]["summary"]["max_lyapunov_residual"].as_f64().unwrap() <= 1e-10);
    assert!(dir.path().join("out/certify_certificates.csv").exists());
}

#[test]
fn certify_lasso_interior_has_nonnegative_envelope_margin() {
    let dir = TempDir::new().unwrap();
    let out = pdhg(dir.path(), &["certify", "--problem", "lasso", "--seed", "3", "--tol", "0", "--max-iter", "2000"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report(&out);
    assert_eq!(r["verdict"], "max_iter_reached");
    assert!(r["certificates"]["summary"]["ergodic_envelope_margin"].as_f64().unwrap() >= 0.0);
    let rows = read_csv(&dir.path().join("out/certify_certificates.csv"));
    assert_eq!(rows.len(), 1999);
}

#[test]
fn corrupted_certificate_exits_three() {
    let dir = TempDir::new().unwrap();
    let out = pdhg(dir.path(), &["certify", "--problem", "lasso", "--corrupt-f-sign"]);
    assert_eq!(out.status.code(), Some(3));
    let r = report(&out);
    assert_eq!(r["certificates"]["passed"], false);
    assert!(stderr(&out).contains("certificate violation at iteration"));
}

#[test]
fn boundary_bilinear_two_step_differences_vanish() {
    let dir = TempDir::new().unwrap();
    let out = pdhg(dir.path(), &["boundary", "--problem", "bilinear", "--theta", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report(&out);
    assert_eq!(r["iterations"], 10_000);
    assert_eq!(r["regime"]["regime"], "boundary");
    assert!(r["boundary"]["final_step_pair_distance"].as_f64().unwrap() <= 1e-8);
    let rows = read_csv(&dir.path().join("out/boundary_series.csv"));
    assert!(!rows.is_empty());
    for row in &rows {
        let partial: f64 = row[2].parse().unwrap();
        let bound: f64 = row[3].parse().unwrap();
        assert!(partial <= bound);
    }
}

#[test]
fn boundary_rejects_theta_one_half() {
    let dir = TempDir::new().unwrap();
    let out = pdhg(dir.path(), &["boundary", "--theta", "0.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("θ > 1/2"));
}

#[test]
fn default_sweep_separates_the_regions() {
    let dir = TempDir::new().unwrap();
    let out = pdhg(dir.path(), &["sweep"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report(&out);
    assert_eq!(r["rows"], 441);
    let rows = read_csv(&dir.path().join("out/sweep_tightness.csv"));
    assert_eq!(rows.len(), 441);
    for row in &rows {
        let theta: f64 = row[0].parse().unwrap();
        let ts: f64 = row[1].parse().unwrap();
        let bound = 4.0 / (1.0 + 2.0 * theta);
        if ts < bound - 1e-6 {
            assert_eq!(row[8], "convergent", "θ={theta} τσ={ts}");
        } else if ts > bound + 1e-6 {
            assert_eq!(row[8], "divergent", "θ={theta} τσ={ts}");
        }
    }
}

#[test]
fn sweep_on_lasso_adds_empirical_verdicts() {
    let dir = TempDir::new().unwrap();
    let out = pdhg(
        dir.path(),
        &["sweep", "--problem", "lasso", "--theta-steps", "3", "--ts-steps", "4", "--iterations", "3000"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rows = read_csv(&dir.path().join("out/sweep_verdicts.csv"));
    assert_eq!(rows.len(), 12);
    assert_eq!(report(&out)["rows"], 12);
}

#[test]
fn flags_override_config_and_env_sets_output_directory() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "problem = bilinear\ntau = 0.5\nsigma = 0.5\ntheta = 1\nmax_iter = 50\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pdhg"))
        .args(["solve", "--config", cfg.to_str().unwrap(), "--tau", "0.25"])
        .current_dir(dir.path())
        .env("PDHG_OUT_DIR", "artifacts")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = report(&out);
    assert_eq!(r["config"]["tau"], 0.25);
    assert_eq!(r["config"]["sigma"], 0.5);
    assert_eq!(r["config"]["max_iter"], 50);
    assert!(dir.path().join("artifacts/solve_trace.csv").exists());
}

#[test]
fn reruns_reproduce_csv_bytes() {
    let dir = TempDir::new().unwrap();
    let args = ["certify", "--problem", "tv", "--seed", "4", "--tol", "0", "--max-iter", "300"];
    let read = |name: &str| std::fs::read(dir.path().join("out").join(name)).unwrap();
    assert_eq!(pdhg(dir.path(), &args).status.code(), Some(0));
    let (a, b) = (read("certify_certificates.csv"), read("certify_trace.csv"));
    assert_eq!(pdhg(dir.path(), &args).status.code(), Some(0));
    assert_eq!(a, read("certify_certificates.csv"));
    assert_eq!(b, read("certify_trace.csv"));
    assert!(!a.contains(&b'\r') && !a.contains(&b'"'));
}
