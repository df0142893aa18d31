use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::{json, Map, Value};

use pdhg_core::certificates::{CertificateLog, CertificateSummary};
use pdhg_core::solver::{RegimeReport, Termination};
use pdhg_core::{RunResult, SolverConfig};

pub const DIVERGED: &str = "diverged";

/// A number, or the string `"diverged"` when it is not finite.
pub fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(DIVERGED)
    }
}

pub fn config_json(cfg: &SolverConfig, problem: &str) -> Value {
    json!({
        "problem": problem,
        "tau": num(cfg.tau),
        "sigma": num(cfg.sigma),
        "theta": num(cfg.theta),
        "op_norm": num(cfg.op_norm),
        "step_product": num(cfg.step_product()),
        "max_iter": cfg.max_iter,
        "regime_check": cfg.regime_check,
    })
}

pub fn regime_json(r: &RegimeReport) -> Value {
    json!({
        "regime": r.regime.to_string(),
        "step_product": num(r.step_product),
        "step_bound": num(r.step_bound),
        "theta_tight": r.theta_tight,
        "step_tight": r.step_tight,
    })
}

pub fn verdict(t: &Termination) -> &'static str {
    match t {
        Termination::Converged => "converged",
        Termination::MaxIter => "max_iter_reached",
        Termination::Diverged { .. } => DIVERGED,
    }
}

pub fn run_json(result: &RunResult) -> Value {
    let (dx, dy) = result.last_residual().unwrap_or((0.0, 0.0));
    let s = &result.final_state;
    let mut v = json!({
        "iterations": result.iterations,
        "verdict": verdict(&result.termination),
        "final_residuals": { "dx": num(dx), "dy": num(dy) },
        "final_norms": {
            "x": num(pdhg_core::spaces::norm(&s.x)),
            "y": num(pdhg_core::spaces::norm(&s.y)),
        },
    });
    if let Termination::Diverged { k, norm } = result.termination {
        v["diverged_at"] = json!(k);
        v["diverged_norm"] = num(norm);
    }
    v
}

pub fn summary_json(s: &CertificateSummary) -> Value {
    let boundary = s.boundary.map_or(Value::Null, |b| {
        json!({
            "partial_sum": num(b.partial_sum),
            "bound": num(b.bound),
            "max_residual": num(b.max_residual),
            "last_step_pair_distance": num(b.last_step_pair_distance),
        })
    });
    json!({
        "records": s.records,
        "v0": num(s.v0),
        "min_f": num(s.min_f),
        "min_g": num(s.min_g),
        "min_gap": num(s.min_gap),
        "min_v": num(s.min_v),
        "max_lyapunov_residual": num(s.max_lyapunov_residual),
        "max_interpolation_residual": num(s.max_interpolation_residual),
        "max_gap_identity_error": num(s.max_gap_identity_error),
        "telescoped_bound_margin": num(s.telescoped_bound_margin),
        "ergodic_envelope_margin": num(s.ergodic_envelope_margin),
        "boundary": boundary,
        "violations": s.violations,
    })
}

/// Summary plus the first few violations.
pub fn certificates_json(log: &CertificateLog) -> Value {
    let violations: Vec<Value> = log
        .violations
        .iter()
        .take(20)
        .map(|v| json!({ "k": v.k, "check": v.check, "value": num(v.value), "tolerance": num(v.tolerance) }))
        .collect();
    json!({
        "passed": log.passed(),
        "summary": summary_json(&log.summary),
        "first_violations": violations,
        "evaluation_error": log.evaluation_error,
    })
}

pub fn create_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Opens `dir/name` for buffered writing.
pub fn csv_file(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok((path, BufWriter::new(f)))
}

pub fn finish_csv(mut w: BufWriter<File>) -> Result<()> {
    w.flush()?;
    Ok(())
}

/// Adds `paths`, writes the report next to the other artifacts and returns it.
pub fn write_report(dir: &Path, name: &str, mut report: Map<String, Value>, paths: Vec<(&str, PathBuf)>) -> Result<Value> {
    let report_path = dir.join(name);
    let mut p: Map<String, Value> = paths
        .into_iter()
        .map(|(k, v)| (k.to_string(), json!(v.display().to_string())))
        .collect();
    p.insert("report_json".into(), json!(report_path.display().to_string()));
    report.insert("paths".into(), Value::Object(p));
    let report = Value::Object(report);
    let text = serde_json::to_string_pretty(&report)?;
    std::fs::write(&report_path, text + "\n").with_context(|| format!("writing {}", report_path.display()))?;
    Ok(report)
}
