use std::io::Write;

use anyhow::{bail, Result};
use ndarray::Array1;
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use pdhg_core::certificates::{write_certificate_csv, CertificateLog, Certifier};
use pdhg_core::solver::{run, validate_config, write_trace_csv, RegimeCheck, RunOptions, StopRule, Termination};
use pdhg_core::spectral::{linspace, open_grid, tightness_map, write_tightness_csv};
use pdhg_core::{RunResult, SolverConfig};

use crate::args::{
    certify_requested, load_setup, solver_config, BoundaryArgs, CertifyArgs, ProblemArgs, Setup, SolveArgs, SweepArgs,
};
use crate::report::{
    certificates_json, config_json, create_out_dir, csv_file, finish_csv, num, regime_json, run_json, verdict,
    write_report,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DIVERGED: u8 = 2;
pub const EXIT_CERTIFICATE: u8 = 3;

/// Slack on the boundary partial-sum bound, relative to `1 + bound`.
const BOUNDARY_BOUND_TOL: f64 = 1e-8;

pub struct Outcome {
    pub report: Value,
    pub code: u8,
    /// Printed to stderr.
    pub message: Option<String>,
}

fn start_options(args: &ProblemArgs, setup: &Setup, stop: StopRule) -> Result<RunOptions> {
    let start = match &args.start {
        Some(s) => s.clone(),
        None => setup.config.get("start").unwrap_or("ones").to_string(),
    };
    let (n, m) = (setup.problem.op.in_dim(), setup.problem.op.out_dim());
    let (x0, y0) = match start.as_str() {
        "ones" => (Array1::ones(n), Array1::ones(m)),
        "zeros" => (Array1::zeros(n), Array1::zeros(m)),
        other => bail!("unknown start {other:?} (expected ones or zeros)"),
    };
    Ok(RunOptions {
        stop,
        x0: Some(x0),
        y0: Some(y0),
        ..Default::default()
    })
}

fn base_report(command: &str, cfg: &SolverConfig, setup: &Setup, result: &RunResult) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("command".into(), json!(command));
    m.insert("config".into(), config_json(cfg, &setup.problem.name));
    m.insert("regime".into(), regime_json(&result.regime));
    if let Value::Object(run) = run_json(result) {
        m.extend(run);
    }
    m
}

fn first_violation(log: &CertificateLog) -> Option<String> {
    log.violations.first().map(|v| {
        format!(
            "certificate violation at iteration {}: {} = {:e} (tolerance {:e}); {} violations in total",
            v.k,
            v.check,
            v.value,
            v.tolerance,
            log.violations.len()
        )
    })
}

fn exit_code(termination: &Termination, log: Option<&CertificateLog>) -> (u8, Option<String>) {
    if let Some(msg) = log.and_then(first_violation) {
        return (EXIT_CERTIFICATE, Some(msg));
    }
    match termination {
        Termination::Diverged { k, norm } => (
            EXIT_DIVERGED,
            Some(format!("diverged at iteration {k} (iterate norm {norm:e})")),
        ),
        _ => (EXIT_OK, None),
    }
}

/// Runs the solver with an optional certifier built from the problem's
/// reference saddle point.
fn certified_run(
    setup: &Setup,
    cfg: &SolverConfig,
    opts: &RunOptions,
    certify: bool,
    corrupt: bool,
) -> Result<RunResult> {
    validate_config(cfg)?;
    let p = &setup.problem;
    let gstar = p.gstar();
    let reference = if certify { Some(p.saddle_ref()?) } else { None };
    let certifier = match &reference {
        Some(r) => {
            let c = Certifier::new(r, p.f.as_ref(), gstar.as_ref(), &p.op)?;
            Some(if corrupt { c.with_corrupted_f_sign() } else { c })
        }
        None => None,
    };
    Ok(run(p.f.as_ref(), gstar.as_ref(), &p.op, cfg, opts, certifier.as_ref())?)
}

pub fn solve(args: &SolveArgs) -> Result<Outcome> {
    let setup = load_setup(&args.problem)?;
    let (cfg, stop) = solver_config(&args.steps, &setup)?;
    let certify = certify_requested(args.certify, &setup.config)?;
    let opts = start_options(&args.problem, &setup, stop)?;
    let result = certified_run(&setup, &cfg, &opts, certify, false)?;

    let dir = &setup.out_dir;
    create_out_dir(dir)?;
    let (trace_path, mut w) = csv_file(dir, "solve_trace.csv")?;
    write_trace_csv(&mut w, &result.trace, result.certificates.as_ref())?;
    finish_csv(w)?;

    let mut report = base_report("solve", &cfg, &setup, &result);
    if let Some(log) = &result.certificates {
        report.insert("certificates".into(), certificates_json(log));
    }
    let (code, message) = exit_code(&result.termination, result.certificates.as_ref());
    let report = write_report(dir, "solve_report.json", report, vec![("trace_csv", trace_path)])?;
    Ok(Outcome { report, code, message })
}

pub fn certify(args: &CertifyArgs) -> Result<Outcome> {
    let setup = load_setup(&args.problem)?;
    let (cfg, stop) = solver_config(&args.steps, &setup)?;
    let opts = start_options(&args.problem, &setup, stop)?;
    let result = certified_run(&setup, &cfg, &opts, true, args.corrupt_f_sign)?;
    let log = result.certificates.as_ref().expect("certified run");

    let dir = &setup.out_dir;
    create_out_dir(dir)?;
    let (cert_path, mut w) = csv_file(dir, "certify_certificates.csv")?;
    write_certificate_csv(&mut w, &log.records)?;
    finish_csv(w)?;
    let (trace_path, mut w) = csv_file(dir, "certify_trace.csv")?;
    write_trace_csv(&mut w, &result.trace, Some(log))?;
    finish_csv(w)?;

    let mut report = base_report("certify", &cfg, &setup, &result);
    report.insert("certificates".into(), certificates_json(log));
    let (code, message) = exit_code(&result.termination, Some(log));
    let report = write_report(
        dir,
        "certify_report.json",
        report,
        vec![("certificates_csv", cert_path), ("trace_csv", trace_path)],
    )?;
    Ok(Outcome { report, code, message })
}

pub fn sweep(args: &SweepArgs) -> Result<Outcome> {
    if args.theta_steps == 0 || args.ts_steps == 0 || args.iterations == 0 {
        bail!("--theta-steps, --ts-steps and --iterations must be positive");
    }
    if !(args.theta_min <= args.theta_max) || !(args.ts_max > 0.0) {
        bail!("need theta-min ≤ theta-max and ts-max > 0");
    }
    let setup = load_setup(&args.problem)?;
    let thetas = linspace(args.theta_min, args.theta_max, args.theta_steps);
    let products = open_grid(args.ts_max, args.ts_steps);
    let rows = tightness_map(&thetas, &products, args.iterations)?;

    let dir = &setup.out_dir;
    create_out_dir(dir)?;
    let (map_path, mut w) = csv_file(dir, "sweep_tightness.csv")?;
    write_tightness_csv(&mut w, &rows)?;
    finish_csv(w)?;

    let above = |theta: f64, ts: f64| ts * (1.0 + 2.0 * theta) >= 4.0;
    let mismatches = rows.iter().filter(|r| !r.consistent()).count();
    let convergent_above = rows
        .iter()
        .filter(|r| above(r.theta, r.tau_sigma))
        .filter(|r| r.verdict_empirical == pdhg_core::spectral::Verdict::Convergent)
        .count();

    let mut report = Map::new();
    report.insert("command".into(), json!("sweep"));
    report.insert(
        "grid".into(),
        json!({
            "theta": [num(args.theta_min), num(args.theta_max), args.theta_steps],
            "tau_sigma_max": num(args.ts_max),
            "tau_sigma_steps": args.ts_steps,
            "iterations": args.iterations,
        }),
    );
    report.insert("rows".into(), json!(rows.len()));
    report.insert("off_boundary_mismatches".into(), json!(mismatches));
    report.insert("convergent_at_or_above_bound".into(), json!(convergent_above));
    let mut paths = vec![("tightness_csv", map_path)];

    let p = &setup.problem;
    if p.name != "bilinear" {
        let gstar = p.gstar();
        let op_norm = p.op.norm_estimate();
        let points: Vec<(f64, f64)> = thetas
            .iter()
            .flat_map(|&t| products.iter().map(move |&s| (t, s)))
            .collect();
        let opts = start_options(&args.problem, &setup, StopRule::default())?;
        let results = points
            .par_iter()
            .map(|&(theta, rho)| {
                let cfg = SolverConfig::with_step_product(rho, theta, op_norm)
                    .max_iter(args.iterations)
                    .regime_check(RegimeCheck::Off);
                run(p.f.as_ref(), gstar.as_ref(), &p.op, &cfg, &opts, None).map(|r| (theta, rho, r))
            })
            .collect::<pdhg_core::Result<Vec<_>>>()?;
        let (path, mut w) = csv_file(dir, "sweep_verdicts.csv")?;
        writeln!(w, "theta,step_product,verdict,iterations,dx,dy")?;
        let mut counts = Map::new();
        for (theta, rho, r) in &results {
            let (dx, dy) = r.last_residual().unwrap_or((0.0, 0.0));
            let v = verdict(&r.termination);
            writeln!(w, "{theta},{rho},{v},{},{dx:e},{dy:e}", r.iterations)?;
            let c = counts.entry(v).or_insert(json!(0));
            *c = json!(c.as_u64().unwrap_or(0) + 1);
        }
        finish_csv(w)?;
        report.insert("problem".into(), json!(p.name));
        report.insert("problem_verdicts".into(), Value::Object(counts));
        paths.push(("verdicts_csv", path));
    }

    let report = write_report(dir, "sweep_report.json", report, paths)?;
    Ok(Outcome {
        report,
        code: EXIT_OK,
        message: None,
    })
}

pub fn boundary(args: &BoundaryArgs) -> Result<Outcome> {
    let theta = args.theta;
    if !(theta > 0.5) || !theta.is_finite() {
        bail!(
            "boundary run requires θ > 1/2, got θ = {theta}: the coefficient (2θ−1)/(4τ(1+2θ)) vanishes \
             and the summability bound is undefined"
        );
    }
    let setup = load_setup(&args.problem)?;
    let op_norm = setup.problem.op.norm_estimate();
    let cfg = SolverConfig::with_step_product(4.0 / (1.0 + 2.0 * theta), theta, op_norm).max_iter(args.max_iter);
    let opts = start_options(&args.problem, &setup, StopRule::max_iter_only())?;
    let result = certified_run(&setup, &cfg, &opts, true, false)?;
    let log = result.certificates.as_ref().expect("certified run");

    let v0 = log.summary.v0;
    let bound = v0 * 4.0 * cfg.tau * (1.0 + 2.0 * theta) / (2.0 * theta - 1.0);
    let dir = &setup.out_dir;
    create_out_dir(dir)?;
    let (series_path, mut w) = csv_file(dir, "boundary_series.csv")?;
    writeln!(w, "k,step_pair_distance,partial_sum,bound")?;
    let mut partial = 0.0;
    let mut worst: Option<(usize, f64)> = None;
    let mut last = None;
    for row in &result.trace {
        let Some(d) = row.dx2 else { continue };
        partial += d * d;
        last = Some(d);
        writeln!(w, "{},{d:e},{partial:e},{bound:e}", row.k)?;
        if partial > bound + BOUNDARY_BOUND_TOL * (1.0 + bound) && worst.is_none() {
            worst = Some((row.k, partial));
        }
    }
    finish_csv(w)?;
    let (cert_path, mut w) = csv_file(dir, "boundary_certificates.csv")?;
    write_certificate_csv(&mut w, &log.records)?;
    finish_csv(w)?;

    let mut report = base_report("boundary", &cfg, &setup, &result);
    report.insert(
        "boundary".into(),
        json!({
            "v0": num(v0),
            "bound": num(bound),
            "partial_sum": num(partial),
            "final_step_pair_distance": last.map_or(Value::Null, num),
            "bound_holds": worst.is_none(),
        }),
    );
    report.insert("certificates".into(), certificates_json(log));
    let (mut code, mut message) = exit_code(&result.termination, Some(log));
    if let Some((k, s)) = worst {
        code = EXIT_CERTIFICATE;
        message = Some(format!(
            "partial sum {s:e} exceeds the bound {bound:e} at iteration {k}"
        ));
    }
    let report = write_report(
        dir,
        "boundary_report.json",
        report,
        vec![("series_csv", series_path), ("certificates_csv", cert_path)],
    )?;
    Ok(Outcome { report, code, message })
}
