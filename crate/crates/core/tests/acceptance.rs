#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Every tolerance is pinned below.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ndarray::{array, Array1};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pdhg_core::certificates::{eval_coefficients, CertificateLog, Certifier, SaddleRef};
use pdhg_core::functions::{
    check_subgradient_inequality, from_name, inclusion_samples, FunctionParams, ProxFunction,
};
use pdhg_core::problems::{bilinear_counterexample, lasso_toy, tv_denoise_toy, ProblemInstance};
use pdhg_core::solver::{run, step_bound, RunOptions, RunResult, SolverConfig, StopRule};
use pdhg_core::spaces::dist;
use pdhg_core::spectral::{eigenvalues, linspace, open_grid, tightness_map, Verdict, EMPIRICAL_ITERATIONS};

const TIGHTNESS_RUNTIME: Duration = Duration::from_secs(10);
const LYAPUNOV_RUNTIME: Duration = Duration::from_secs(30);
const EIGEN_TOL: f64 = 1e-12;
const LYAPUNOV_TOL: f64 = 1e-8;
const LYAPUNOV_FLOOR_TOL: f64 = 1e-10;
const MIN_CERTIFIED: usize = 500;
const ENVELOPE_SLACK: f64 = 1e-8;
const GAP_IDENTITY_TOL: f64 = 1e-10;
const INTERPOLATION_TOL: f64 = 1e-8;
const COEFF_EDGE_TOL: f64 = 1e-12;
const BOUNDARY_FINAL_STEP: f64 = 1e-6;
const SEQUENCE_RESIDUAL: f64 = 1e-8;
const SEQUENCE_DISTANCE: f64 = 1e-6;
const PROX_ORACLE_TOL: f64 = 1e-4;
const CERT_ITERATIONS: usize = 10_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Certified {
    name: &'static str,
    result: RunResult,
    elapsed: Duration,
}

impl Certified {
    fn log(&self) -> &CertificateLog {
        self.result.certificates.as_ref().expect("certified run")
    }
}

fn certified_run(
    name: &'static str,
    problem: &ProblemInstance,
    saddle: &SaddleRef,
    cfg: SolverConfig,
    x0: Option<Array1<f64>>,
    y0: Option<Array1<f64>>,
) -> Certified {
    let gstar = problem.gstar();
    let certifier = Certifier::new(saddle, problem.f.as_ref(), gstar.as_ref(), &problem.op).unwrap();
    let opts = RunOptions {
        stop: StopRule::max_iter_only(),
        x0,
        y0,
        ..Default::default()
    };
    let start = Instant::now();
    let result = run(
        problem.f.as_ref(),
        gstar.as_ref(),
        &problem.op,
        &cfg,
        &opts,
        Some(&certifier),
    )
    .unwrap();
    Certified {
        name,
        result,
        elapsed: start.elapsed(),
    }
}

fn interior_cfg(problem: &ProblemInstance, step_product: f64, theta: f64) -> SolverConfig {
    SolverConfig::with_step_product(step_product, theta, problem.op.norm_estimate()).max_iter(CERT_ITERATIONS)
}

struct Fixtures {
    bilinear: ProblemInstance,
    lasso: ProblemInstance,
    tv: ProblemInstance,
    bilinear_ref: SaddleRef,
    lasso_ref: SaddleRef,
    tv_ref: SaddleRef,
}

fn fixtures() -> Fixtures {
    let bilinear = bilinear_counterexample();
    let lasso = lasso_toy(5, 5, 1, 0.1).unwrap();
    let tv = tv_denoise_toy(8, 8, 7, 0.1).unwrap();
    Fixtures {
        bilinear_ref: bilinear.saddle_ref().unwrap(),
        lasso_ref: lasso.saddle_ref().unwrap(),
        tv_ref: tv.saddle_ref().unwrap(),
        bilinear,
        lasso,
        tv,
    }
}

fn interior_runs(fx: &Fixtures) -> Vec<Certified> {
    vec![
        certified_run(
            "bilinear",
            &fx.bilinear,
            &fx.bilinear_ref,
            SolverConfig::new(1.0, 1.0, 1.0, 1.0).max_iter(CERT_ITERATIONS),
            Some(array![1.0]),
            Some(array![1.0]),
        ),
        certified_run(
            "lasso 5x5",
            &fx.lasso,
            &fx.lasso_ref,
            interior_cfg(&fx.lasso, 1.2, 1.0),
            None,
            None,
        ),
        certified_run(
            "tv 8x8",
            &fx.tv,
            &fx.tv_ref,
            interior_cfg(&fx.tv, 1.2, 1.0),
            None,
            None,
        ),
    ]
}

fn criterion_tightness() -> Outcome {
    let thetas = linspace(0.5, 2.0, 21);
    let ts = open_grid(2.0, 21);
    let start = Instant::now();
    let rows = tightness_map(&thetas, &ts, EMPIRICAL_ITERATIONS).unwrap();
    let elapsed = start.elapsed();
    let mismatched = rows.iter().filter(|r| !r.consistent()).count();
    let at_or_above: Vec<_> = rows
        .iter()
        .filter(|r| r.tau_sigma * (1.0 + 2.0 * r.theta) >= 4.0 - 4.0 * EIGEN_TOL)
        .collect();
    let converged_above = at_or_above
        .iter()
        .filter(|r| r.verdict_empirical == Verdict::Convergent || r.verdict_analytic() == Verdict::Convergent)
        .count();
    let pass = rows.len() == 441 && mismatched == 0 && converged_above == 0 && elapsed <= TIGHTNESS_RUNTIME;
    outcome(
        pass,
        format!(
            "{} rows, {} off-boundary mismatches, {} of {} points with τσ ≥ 4/(1+2θ) convergent, {:.2?} (limit {:?})",
            rows.len(),
            mismatched,
            converged_above,
            at_or_above.len(),
            elapsed,
            TIGHTNESS_RUNTIME
        ),
    )
}

fn criterion_boundary_eigenvalue() -> Outcome {
    let (_, at) = eigenvalues(1.0, 4.0 / 3.0, 1.0);
    let (_, beyond) = eigenvalues(1.0, 1.5, 1.0);
    let err = (at.re + 1.0).abs().max(at.im.abs());
    let pass = err <= EIGEN_TOL && beyond.im == 0.0 && beyond.re < -1.0;
    outcome(
        pass,
        format!("τσ=4/3: |λ₂+1| = {err:.1e}; τσ=1.5: λ₂ = {:.6}", beyond.re),
    )
}

fn criterion_lyapunov(runs: &[Certified]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut total = Duration::ZERO;
    for c in runs {
        let log = c.log();
        let v0 = log.summary.v0;
        let worst = log
            .records
            .iter()
            .map(|r| r.residual - LYAPUNOV_TOL * (1.0 + v0.abs()))
            .fold(f64::NEG_INFINITY, f64::max);
        let floor = log
            .records
            .iter()
            .map(|r| -r.lyapunov - LYAPUNOV_FLOOR_TOL * (1.0 + v0.abs()))
            .fold(f64::NEG_INFINITY, f64::max);
        let ok = log.records.len() >= MIN_CERTIFIED && worst <= 0.0 && floor <= 0.0;
        pass &= ok;
        total += c.elapsed;
        parts.push(format!(
            "{}: {} iters, max residual {:.1e}, min V {:.1e}",
            c.name,
            log.records.len(),
            log.summary.max_lyapunov_residual,
            log.summary.min_v
        ));
    }
    pass &= total <= LYAPUNOV_RUNTIME;
    outcome(pass, format!("{}; {:.2?} (limit {:?})", parts.join("; "), total, LYAPUNOV_RUNTIME))
}

fn criterion_envelope(runs: &[Certified]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for c in runs {
        let log = c.log();
        let v0 = log.summary.v0;
        let mut worst = f64::INFINITY;
        for &(k, gap) in &log.ergodic_gaps {
            let kk = k as f64;
            worst = worst.min(v0 + kk * ENVELOPE_SLACK - kk * gap);
        }
        let ok = log.ergodic_gaps.len() >= CERT_ITERATIONS && worst >= 0.0;
        pass &= ok;
        parts.push(format!("{}: K ≤ {}, min margin {:.3e}", c.name, log.ergodic_gaps.len(), worst));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_gap_identity(runs: &[Certified]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for c in runs {
        let log = c.log();
        let worst = log
            .records
            .iter()
            .map(|r| (r.f_gap + r.g_gap - r.gap).abs() / (1.0 + r.gap.abs()))
            .fold(0.0, f64::max);
        pass &= !log.records.is_empty() && worst <= GAP_IDENTITY_TOL;
        parts.push(format!("{}: max rel err {:.1e}", c.name, worst));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_interpolation(runs: &[Certified]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for c in runs {
        let log = c.log();
        let worst = log
            .records
            .iter()
            .flat_map(|r| r.interpolation)
            .fold(f64::NEG_INFINITY, f64::max);
        pass &= !log.records.is_empty() && worst <= INTERPOLATION_TOL;
        parts.push(format!("{}: max residual {:.1e}", c.name, worst));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_coefficients() -> Outcome {
    let thetas = linspace(0.5, 5.0, 50);
    let mut checked = 0;
    let mut failures = 0;
    let mut worst_edge = 0.0f64;
    let mut min_interior = f64::INFINITY;
    for &theta in &thetas {
        let bound = step_bound(theta);
        for j in 1..=50 {
            let rho = bound * j as f64 / 50.0;
            let theta_edge = theta == 0.5;
            let step_edge = j == 50;
            if theta_edge && step_edge {
                continue;
            }
            let t = rho.sqrt();
            let c = eval_coefficients(t, t, theta, 1.0).unwrap();
            checked += 1;
            let Some(nonneg) = c.coeff_nonneg else {
                failures += 1;
                continue;
            };
            if !(c.coeff_pos > 0.0) {
                failures += 1;
            }
            if theta_edge || step_edge {
                worst_edge = worst_edge.max(nonneg.abs());
                if nonneg.abs() > COEFF_EDGE_TOL {
                    failures += 1;
                }
            } else {
                min_interior = min_interior.min(nonneg);
                if !(nonneg > COEFF_EDGE_TOL) {
                    failures += 1;
                }
            }
        }
    }
    outcome(
        failures == 0 && checked == 2499,
        format!(
            "{checked} admissible points, {failures} failures, max |coeff_nonneg| on edges {worst_edge:.1e}, min interior {min_interior:.3e}"
        ),
    )
}

fn criterion_boundary(fx: &Fixtures) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for theta in [0.75, 1.0, 1.5] {
        let rho = step_bound(theta);
        let runs = [
            certified_run(
                "bilinear",
                &fx.bilinear,
                &fx.bilinear_ref,
                interior_cfg(&fx.bilinear, rho, theta),
                Some(array![1.0]),
                Some(array![1.0]),
            ),
            certified_run("tv 8x8", &fx.tv, &fx.tv_ref, interior_cfg(&fx.tv, rho, theta), None, None),
        ];
        for c in &runs {
            let log = c.log();
            let cfg = interior_cfg(if c.name == "bilinear" { &fx.bilinear } else { &fx.tv }, rho, theta);
            let bound = log.summary.v0 * 4.0 * cfg.tau * (1.0 + 2.0 * theta) / (2.0 * theta - 1.0);
            let mut partial = 0.0;
            let mut max_ratio = 0.0f64;
            let mut last = f64::NAN;
            for row in &c.result.trace {
                if let Some(d) = row.dx2 {
                    partial += d * d;
                    max_ratio = max_ratio.max(partial / bound);
                    last = d;
                }
            }
            let boundary_violations = log
                .violations
                .iter()
                .filter(|v| v.check.starts_with("boundary"))
                .count();
            let ok = c.result.iterations == CERT_ITERATIONS
                && log.summary.boundary.is_some()
                && boundary_violations == 0
                && max_ratio <= 1.0
                && last <= BOUNDARY_FINAL_STEP;
            pass &= ok;
            parts.push(format!(
                "θ={theta} {}: max Σ/bound {:.3}, final ‖x_(k+2)−x_k‖ {:.1e}",
                c.name, max_ratio, last
            ));
        }
    }
    outcome(pass, parts.join("; "))
}

fn criterion_sequence(fx: &Fixtures) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let cases: [(&str, &ProblemInstance, &SaddleRef, Option<Array1<f64>>, bool); 3] = [
        ("bilinear", &fx.bilinear, &fx.bilinear_ref, Some(array![1.0]), true),
        ("lasso 5x5", &fx.lasso, &fx.lasso_ref, None, true),
        ("tv 8x8", &fx.tv, &fx.tv_ref, None, false),
    ];
    for (theta, rho) in [(1.0, 1.2), (0.75, 1.5), (2.0, 0.7)] {
        for (name, p, s, start, compare_dual) in &cases {
            let gstar = p.gstar();
            let cfg = SolverConfig::with_step_product(rho, theta, p.op.norm_estimate()).max_iter(200_000);
            let opts = RunOptions {
                stop: StopRule::tolerance(1e-13),
                x0: start.clone(),
                y0: start.clone(),
                ..Default::default()
            };
            let r = run(p.f.as_ref(), gstar.as_ref(), &p.op, &cfg, &opts, None).unwrap();
            let (dx, dy) = r.last_residual().unwrap_or((0.0, 0.0));
            let mut d = dist(&r.final_state.x, &s.x_star);
            if *compare_dual {
                d = d.max(dist(&r.final_state.y, &s.y_star));
            }
            let ok = dx + dy <= SEQUENCE_RESIDUAL && d <= SEQUENCE_DISTANCE;
            pass &= ok;
            parts.push(format!("θ={theta},τσ‖L‖²={rho} {name}: {} iters, dist {d:.1e}", r.iterations));
        }
    }
    outcome(pass, parts.join("; "))
}

fn grid_argmin(obj: impl Fn(f64) -> f64, center: f64, radius: f64) -> f64 {
    let mut lo = center - radius;
    let mut hi = center + radius;
    let mut best = center;
    for _ in 0..6 {
        let n = 2000;
        let step = (hi - lo) / n as f64;
        let mut best_val = f64::INFINITY;
        for i in 0..=n {
            let y = lo + step * i as f64;
            let v = obj(y);
            if v < best_val {
                best_val = v;
                best = y;
            }
        }
        lo = best - 2.0 * step;
        hi = best + 2.0 * step;
    }
    best
}

fn criterion_prox_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 4;
    let mut worst = 0.0f64;
    let mut inclusion_failures = 0;
    let mut instances = 0;
    let names = [
        "zero",
        "l1",
        "sq_l2",
        "box",
        "conjugate_of:zero",
        "conjugate_of:l1",
        "conjugate_of:sq_l2",
        "conjugate_of:box",
    ];
    for name in names {
        for trial in 0..100 {
            let scale: f64 = rng.random_range(0.1..2.0);
            let weight: f64 = rng.random_range(0.2..3.0);
            let target = Array1::from_shape_fn(n, |_| rng.random_range(-2.0..2.0));
            let lo = Array1::from_shape_fn(n, |_| rng.random_range(-2.0..0.0));
            let hi = &lo + &Array1::from_shape_fn(n, |_| rng.random_range(0.0..2.0));
            let params = FunctionParams {
                scale: Some(scale),
                weight: Some(weight),
                target: Some(target.clone()),
                lo: Some(lo.clone()),
                hi: Some(hi.clone()),
            };
            let f: Arc<dyn ProxFunction> = from_name(name, &params, n).unwrap();
            let tau: f64 = rng.random_range(0.05..3.0);
            let x = Array1::from_shape_fn(n, |_| rng.random_range(-4.0..4.0));
            let p = f.prox(tau, &x);

            for i in 0..n {
                let (t, l, h) = (target[i], lo[i], hi[i]);
                let xi = x[i];
                let expect = match name {
                    "zero" => grid_argmin(|y| (y - xi).powi(2) / (2.0 * tau), xi, 10.0),
                    "l1" => grid_argmin(|y| scale * y.abs() + (y - xi).powi(2) / (2.0 * tau), xi, 10.0),
                    "sq_l2" => grid_argmin(
                        |y| 0.5 * weight * (y - t).powi(2) + (y - xi).powi(2) / (2.0 * tau),
                        xi,
                        10.0,
                    ),
                    "box" => xi.clamp(l, h),
                    "conjugate_of:zero" => 0.0,
                    "conjugate_of:l1" => xi.clamp(-scale, scale),
                    "conjugate_of:sq_l2" => grid_argmin(
                        |u| u * t + u * u / (2.0 * weight) + (u - xi).powi(2) / (2.0 * tau),
                        xi,
                        10.0,
                    ),
                    "conjugate_of:box" => grid_argmin(
                        |u| (l * u).max(h * u) + (u - xi).powi(2) / (2.0 * tau),
                        xi,
                        10.0,
                    ),
                    _ => unreachable!(),
                };
                worst = worst.max((p[i] - expect).abs());
            }

            let s = (&x - &p) / tau;
            let samples = inclusion_samples(&p, 1000, 7 + trial as u64, &[]);
            let check = check_subgradient_inequality(f.as_ref(), &p, &s, &samples).unwrap();
            if !check.holds || !f.eval(&p).is_finite() {
                inclusion_failures += 1;
            }
            instances += 1;
        }
    }
    outcome(
        worst <= PROX_ORACLE_TOL && inclusion_failures == 0,
        format!(
            "{instances} instances over {} functions, max oracle deviation {worst:.1e}, {inclusion_failures} inclusion failures",
            names.len()
        ),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    results.push((1, "tightness reproduction", criterion_tightness()));
    results.push((2, "boundary eigenvalue", criterion_boundary_eigenvalue()));

    let fx = fixtures();
    let runs = interior_runs(&fx);
    results.push((3, "Lyapunov inequality", criterion_lyapunov(&runs)));
    results.push((4, "ergodic O(1/K) envelope", criterion_envelope(&runs)));
    results.push((5, "gap identity", criterion_gap_identity(&runs)));
    results.push((6, "interpolation inequalities", criterion_interpolation(&runs)));
    results.push((7, "coefficient signs", criterion_coefficients()));
    results.push((8, "boundary summability", criterion_boundary(&fx)));
    results.push((9, "sequence convergence", criterion_sequence(&fx)));
    results.push((10, "prox oracle equivalence", criterion_prox_oracles()));

    let mut failed = 0;
    for (n, title, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {n:>2} {title}: {}", o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {} failed", results.len() - failed, failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
