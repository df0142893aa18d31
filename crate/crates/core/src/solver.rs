//! The Chambolle–Pock iteration
//!
//! ```text
//! x_{k+1} = prox_{τf}(x_k − τ L*y_k)
//! y_{k+1} = prox_{σg*}(y_k + σ L(x_{k+1} + θ(x_{k+1} − x_k)))
//! ```
//!
//! with validation of the parameter regime `θ ≥ 1/2`,
//! `τσ‖L‖² ≤ 4/(1+2θ)` (at least one strict), ergodic averaging and trace
//! output. `L·x_k` is carried in the state so every step costs exactly one
//! application of `L` and one of `L*`.

use std::fmt;
use std::io::Write;

use ndarray::Array1;
use serde::Serialize;

use crate::certificates::{CertificateLog, CertificateTracker, Certifier, TrackerOptions};
use crate::error::{Error, Result};
use crate::functions::ProxFunction;
use crate::spaces::{dist, norm, DualVec, LinOp, PrimalVec};

/// Relative tolerance for deciding that `θ = 1/2` or `τσ‖L‖² = 4/(1+2θ)`.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Iterate norm beyond which a run is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

pub const DEFAULT_STOP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeCheck {
    /// `θ > 1/2` and `τσ‖L‖² < 4/(1+2θ)`.
    Strict,
    /// Both non-strict, at least one strict.
    BoundaryOk,
    Off,
}

impl std::str::FromStr for RegimeCheck {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(Self::Strict),
            "boundary_ok" => Ok(Self::BoundaryOk),
            "off" => Ok(Self::Off),
            other => Err(Error::InvalidArgument(format!(
                "unknown regime policy {other:?} (expected strict, boundary_ok or off)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Interior,
    Boundary,
    Violated,
    ThetaBelowHalf,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Interior => "interior",
            Regime::Boundary => "boundary",
            Regime::Violated => "violated",
            Regime::ThetaBelowHalf => "theta_below_half",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegimeReport {
    pub regime: Regime,
    pub theta: f64,
    /// `τσ‖L‖²`
    pub step_product: f64,
    /// `4/(1+2θ)`
    pub step_bound: f64,
    pub theta_tight: bool,
    pub step_tight: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    pub tau: f64,
    pub sigma: f64,
    pub theta: f64,
    pub max_iter: usize,
    /// Value of `‖L‖` used for validation and in the certificate coefficients.
    pub op_norm: f64,
    pub regime_check: RegimeCheck,
}

impl SolverConfig {
    pub fn new(tau: f64, sigma: f64, theta: f64, op_norm: f64) -> Self {
        Self {
            tau,
            sigma,
            theta,
            max_iter: 10_000,
            op_norm,
            regime_check: RegimeCheck::BoundaryOk,
        }
    }

    /// Symmetric steps `τ = σ = √ρ/‖L‖` giving `τσ‖L‖² = ρ`.
    pub fn with_step_product(step_product: f64, theta: f64, op_norm: f64) -> Self {
        let t = step_product.sqrt() / op_norm;
        Self::new(t, t, theta, op_norm)
    }

    pub fn max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn regime_check(mut self, check: RegimeCheck) -> Self {
        self.regime_check = check;
        self
    }

    pub fn step_product(&self) -> f64 {
        self.tau * self.sigma * self.op_norm * self.op_norm
    }
}

/// `4/(1+2θ)`
pub fn step_bound(theta: f64) -> f64 {
    4.0 / (1.0 + 2.0 * theta)
}

/// Places `(θ, τσ‖L‖²)` relative to the admissible region.
pub fn classify_regime(theta: f64, step_product: f64) -> RegimeReport {
    let theta_tight = (2.0 * theta - 1.0).abs() <= BOUNDARY_TOL;
    let excess = step_product * (1.0 + 2.0 * theta) - 4.0;
    let step_tight = excess.abs() <= 4.0 * BOUNDARY_TOL;
    let regime = if theta < 0.5 && !theta_tight {
        Regime::ThetaBelowHalf
    } else if (excess > 0.0 && !step_tight) || (theta_tight && step_tight) {
        Regime::Violated
    } else if theta_tight || step_tight {
        Regime::Boundary
    } else {
        Regime::Interior
    };
    RegimeReport {
        regime,
        theta,
        step_product,
        step_bound: step_bound(theta),
        theta_tight,
        step_tight,
    }
}

/// Classifies the configuration and enforces its `regime_check` policy.
pub fn validate_config(cfg: &SolverConfig) -> Result<RegimeReport> {
    for (name, v) in [("tau", cfg.tau), ("sigma", cfg.sigma), ("op_norm", cfg.op_norm)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "{name} must be positive and finite, got {v}"
            )));
        }
    }
    if !cfg.theta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "theta must be finite, got {}",
            cfg.theta
        )));
    }
    if cfg.max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    let report = classify_regime(cfg.theta, cfg.step_product());
    let rho = report.step_product;
    let bound = report.step_bound;
    let theta = cfg.theta;
    let fail = |msg: String| Err(Error::Regime(msg));
    match (cfg.regime_check, report.regime) {
        (RegimeCheck::Off, _) => Ok(report),
        (_, Regime::ThetaBelowHalf) => fail(format!("θ ≥ 1/2 required, got θ = {theta}")),
        (_, Regime::Violated) if report.theta_tight && report.step_tight => fail(format!(
            "at least one of θ ≥ 1/2 and τσ‖L‖² ≤ 4/(1+2θ) must hold strictly \
             (θ = {theta}, τσ‖L‖² = {rho}, 4/(1+2θ) = {bound})"
        )),
        (_, Regime::Violated) => fail(format!(
            "τσ‖L‖² ≤ 4/(1+2θ) violated: τσ‖L‖² = {rho} > {bound} (θ = {theta})"
        )),
        (RegimeCheck::Strict, Regime::Boundary) if report.theta_tight => {
            fail(format!("θ > 1/2 required under the strict policy, got θ = {theta}"))
        }
        (RegimeCheck::Strict, Regime::Boundary) => fail(format!(
            "τσ‖L‖² < 4/(1+2θ) required under the strict policy: τσ‖L‖² = {rho}, 4/(1+2θ) = {bound}"
        )),
        _ => Ok(report),
    }
}

/// Iterate pair `(x_k, y_k)`, the cached `L x_k`, and running sums of
/// `x_1, …, x_K` and `y_1, …, y_K` for the ergodic averages.
#[derive(Debug, Clone, PartialEq)]
pub struct IterState {
    pub k: usize,
    pub x: PrimalVec,
    pub y: DualVec,
    pub lx: DualVec,
    pub x_sum: PrimalVec,
    pub y_sum: DualVec,
    pub averaged: usize,
}

impl IterState {
    pub fn new(x0: PrimalVec, y0: DualVec, op: &LinOp) -> Result<Self> {
        check_dims(&x0, &y0, op)?;
        let lx = op.apply(&x0);
        Ok(Self::with_cached(x0, y0, lx))
    }

    /// Starts from `(0, 0)` without touching the operator.
    pub fn zeros(op: &LinOp) -> Self {
        let (n, m) = (op.in_dim(), op.out_dim());
        Self::with_cached(Array1::zeros(n), Array1::zeros(m), Array1::zeros(m))
    }

    fn with_cached(x: PrimalVec, y: DualVec, lx: DualVec) -> Self {
        let x_sum = Array1::zeros(x.len());
        let y_sum = Array1::zeros(y.len());
        Self {
            k: 0,
            x,
            y,
            lx,
            x_sum,
            y_sum,
            averaged: 0,
        }
    }

    /// `(x̄_K, ȳ_K)` over `x_1, …, x_K`; `None` before the first step.
    pub fn ergodic(&self) -> Option<(PrimalVec, DualVec)> {
        (self.averaged > 0).then(|| {
            let k = self.averaged as f64;
            (&self.x_sum / k, &self.y_sum / k)
        })
    }
}

fn check_dims(x: &PrimalVec, y: &DualVec, op: &LinOp) -> Result<()> {
    if x.len() != op.in_dim() {
        return Err(Error::DimensionMismatch {
            expected: op.in_dim(),
            found: x.len(),
        });
    }
    if y.len() != op.out_dim() {
        return Err(Error::DimensionMismatch {
            expected: op.out_dim(),
            found: y.len(),
        });
    }
    Ok(())
}

/// One Chambolle–Pock step. Evaluates `prox_{τf}`, `prox_{σg*}`, `L` and `L*`
/// exactly once each.
pub fn cp_step(
    state: &IterState,
    cfg: &SolverConfig,
    f: &dyn ProxFunction,
    gstar: &dyn ProxFunction,
    op: &LinOp,
) -> Result<IterState> {
    let (tau, sigma, theta) = (cfg.tau, cfg.sigma, cfg.theta);

    let lty = op.adjoint_apply(&state.y);
    let x_arg = &state.x - &(lty * tau);
    let x_next = f.prox(tau, &x_arg);
    let lx_next = op.apply(&x_next);

    // L(x⁺ + θ(x⁺ − x)) from the cached L·x
    let l_extrap = &lx_next + &((&lx_next - &state.lx) * theta);
    let y_arg = &state.y + &(l_extrap * sigma);
    let y_next = gstar.prox(sigma, &y_arg);

    let k = state.k;
    if x_next.iter().chain(y_next.iter()).any(|v| !v.is_finite()) {
        let n = norm(&x_next).hypot(norm(&y_next));
        return Err(Error::Diverged { k: k + 1, norm: n });
    }

    let x_sum = &state.x_sum + &x_next;
    let y_sum = &state.y_sum + &y_next;
    Ok(IterState {
        k: k + 1,
        x: x_next,
        y: y_next,
        lx: lx_next,
        x_sum,
        y_sum,
        averaged: state.averaged + 1,
    })
}

/// Stop when `‖x_{k+1}−x_k‖ + ‖y_{k+1}−y_k‖ ≤ tol·(1 + ‖x_{k+1}‖ + ‖y_{k+1}‖)`;
/// `tol = None` runs to `max_iter`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub tol: Option<f64>,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            tol: Some(DEFAULT_STOP_TOL),
        }
    }
}

impl StopRule {
    pub fn tolerance(tol: f64) -> Self {
        Self { tol: Some(tol) }
    }

    pub fn max_iter_only() -> Self {
        Self { tol: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIter,
    Diverged { k: usize, norm: f64 },
}

/// Per-iteration residuals. `dx2 = ‖x_{k+2}−x_k‖` is filled in one step late.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub k: usize,
    pub dx: f64,
    pub dy: f64,
    pub dx2: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub stop: StopRule,
    pub x0: Option<PrimalVec>,
    pub y0: Option<DualVec>,
    /// Keep every `(x_k, y_k)`, including `k = 0`.
    pub record_iterates: bool,
    pub tracker: TrackerOptions,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub termination: Termination,
    pub iterations: usize,
    pub regime: RegimeReport,
    pub final_state: IterState,
    pub trace: Vec<TraceRow>,
    pub iterates: Vec<(PrimalVec, DualVec)>,
    pub certificates: Option<CertificateLog>,
}

impl RunResult {
    pub fn ergodic(&self) -> Option<(PrimalVec, DualVec)> {
        self.final_state.ergodic()
    }

    pub fn diverged(&self) -> bool {
        matches!(self.termination, Termination::Diverged { .. })
    }

    pub fn last_residual(&self) -> Option<(f64, f64)> {
        self.trace.last().map(|r| (r.dx, r.dy))
    }
}

/// Runs the iteration from `(x0, y0)` (default zero). When `certifier` is
/// given, every iteration is certified against its reference saddle point.
pub fn run(
    f: &dyn ProxFunction,
    gstar: &dyn ProxFunction,
    op: &LinOp,
    cfg: &SolverConfig,
    opts: &RunOptions,
    certifier: Option<&Certifier<'_>>,
) -> Result<RunResult> {
    let regime = validate_config(cfg)?;
    let mut state = match (&opts.x0, &opts.y0) {
        (None, None) => IterState::zeros(op),
        (x0, y0) => IterState::new(
            x0.clone().unwrap_or_else(|| Array1::zeros(op.in_dim())),
            y0.clone().unwrap_or_else(|| Array1::zeros(op.out_dim())),
            op,
        )?,
    };

    let mut tracker = certifier.map(|c| CertificateTracker::new(c, *cfg, opts.tracker.clone()));
    if let Some(t) = tracker.as_mut() {
        t.observe(&state)?;
    }

    let mut iterates = Vec::new();
    if opts.record_iterates {
        iterates.push((state.x.clone(), state.y.clone()));
    }
    let mut trace: Vec<TraceRow> = Vec::new();
    let mut x_lag: Option<PrimalVec> = None;
    let mut termination = Termination::MaxIter;

    for _ in 0..cfg.max_iter {
        let next = match cp_step(&state, cfg, f, gstar, op) {
            Ok(s) => s,
            Err(Error::Diverged { k, norm }) => {
                termination = Termination::Diverged { k, norm };
                break;
            }
            Err(e) => return Err(e),
        };

        let dx = dist(&next.x, &state.x);
        let dy = dist(&next.y, &state.y);
        if let (Some(prev), Some(last)) = (x_lag.as_ref(), trace.last_mut()) {
            last.dx2 = Some(dist(&next.x, prev));
        }
        trace.push(TraceRow {
            k: state.k,
            dx,
            dy,
            dx2: None,
        });
        if let Some(t) = tracker.as_mut() {
            t.observe(&next)?;
        }
        if opts.record_iterates {
            iterates.push((next.x.clone(), next.y.clone()));
        }

        let (nx, ny) = (norm(&next.x), norm(&next.y));
        x_lag = Some(std::mem::replace(&mut state, next).x);

        if nx > DIVERGENCE_THRESHOLD || ny > DIVERGENCE_THRESHOLD {
            termination = Termination::Diverged {
                k: state.k,
                norm: nx.hypot(ny),
            };
            break;
        }
        if let Some(tol) = opts.stop.tol {
            if dx + dy <= tol * (1.0 + nx + ny) {
                termination = Termination::Converged;
                break;
            }
        }
    }

    Ok(RunResult {
        termination,
        iterations: state.k,
        regime,
        final_state: state,
        trace,
        iterates,
        certificates: tracker.map(CertificateTracker::finish),
    })
}

/// Writes trace rows as CSV. Certificate columns are appended when `certs` is
/// given; `dx2` and certificate cells are empty where not yet available.
pub fn write_trace_csv<W: Write>(
    mut out: W,
    trace: &[TraceRow],
    certs: Option<&CertificateLog>,
) -> std::io::Result<()> {
    write!(out, "k,dx,dy,dx2")?;
    if certs.is_some() {
        write!(out, ",F,G,gap,V,lyapunov_residual")?;
    }
    writeln!(out)?;
    for row in trace {
        write!(out, "{},{:e},{:e},", row.k, row.dx, row.dy)?;
        if let Some(v) = row.dx2 {
            write!(out, "{v:e}")?;
        }
        if let Some(log) = certs {
            match log.records.get(row.k).filter(|r| r.k == row.k) {
                Some(r) => write!(
                    out,
                    ",{:e},{:e},{:e},{:e},{:e}",
                    r.f_gap, r.g_gap, r.gap, r.lyapunov, r.residual
                )?,
                None => write!(out, ",,,,,")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}
