//! Per-iteration evaluation of the quantities that certify convergence of
//! the iteration: the gap terms `F_k`, `G_k`, the primal–dual gap, the
//! Lyapunov value `V_k`, the residual of the Lyapunov inequality, the four
//! interpolation inequalities and the simplified inequality that holds on the
//! boundary `τσ‖L‖² = 4/(1+2θ)`.
//!
//! Every certificate is relative to one reference KKT point [`SaddleRef`].
//! Real-arithmetic inequalities are checked with a small floating-point
//! slack; see [`Tolerances`].

use std::collections::VecDeque;
use std::io::Write;

use ndarray::Array1;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functions::{check_subgradient_inequality, inclusion_samples, ProxFunction, SubgradientCheck};
use crate::problems::ProblemInstance;
use crate::solver::{self, IterState, RunOptions, SolverConfig, StopRule, BOUNDARY_TOL};
use crate::spaces::{dist, norm_sq, DualVec, LinOp, PrimalVec};

/// Largest KKT residual accepted for any reference point.
pub const SADDLE_MAX_RESIDUAL: f64 = 1e-6;

/// KKT residual required of a reference obtained by a bootstrap solver run.
pub const ORACLE_RUN_RESIDUAL: f64 = 1e-9;

pub const INCLUSION_SAMPLE_COUNT: usize = 1000;

const INCLUSION_SEED: u64 = 0x6b6b74;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Analytic,
    OracleRun,
}

/// How far `(x, y)` is from satisfying `−L*y ∈ ∂f(x)`, `Lx ∈ ∂g*(y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// `‖x − prox_f(x − L*y)‖ + ‖y − prox_{g*}(y + Lx)‖`, zero exactly at KKT
    /// points.
    pub natural_residual: f64,
    pub primal: SubgradientCheck,
    pub dual: SubgradientCheck,
}

impl KktReport {
    pub fn residual(&self) -> f64 {
        self.natural_residual
            .max(self.primal.worst_violation.max(0.0))
            .max(self.dual.worst_violation.max(0.0))
    }

    pub fn inclusions_hold(&self) -> bool {
        self.primal.holds && self.dual.holds
    }
}

pub fn kkt_report(
    x: &PrimalVec,
    y: &DualVec,
    f: &dyn ProxFunction,
    gstar: &dyn ProxFunction,
    op: &LinOp,
) -> Result<KktReport> {
    if x.len() != op.in_dim() || y.len() != op.out_dim() {
        return Err(Error::DimensionMismatch {
            expected: op.in_dim() + op.out_dim(),
            found: x.len() + y.len(),
        });
    }
    let lty = op.adjoint_apply(y);
    let lx = op.apply(x);
    let px = f.prox(1.0, &(x - &lty));
    let py = gstar.prox(1.0, &(y + &lx));
    let natural_residual = dist(x, &px) + dist(y, &py);

    let neg_lty = -&lty;
    let xs = inclusion_samples(x, INCLUSION_SAMPLE_COUNT, INCLUSION_SEED, &[]);
    let primal = check_subgradient_inequality(f, x, &neg_lty, &xs)?;
    let ys = inclusion_samples(y, INCLUSION_SAMPLE_COUNT, INCLUSION_SEED + 1, &[]);
    let dual = check_subgradient_inequality(gstar, y, &lx, &ys)?;
    Ok(KktReport {
        natural_residual,
        primal,
        dual,
    })
}

/// A reference KKT point `(x⋆, y⋆)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaddleRef {
    pub x_star: PrimalVec,
    pub y_star: DualVec,
    pub provenance: Provenance,
    pub kkt_residual: f64,
}

impl SaddleRef {
    /// Validates `(x, y)` and rejects it when its KKT residual exceeds
    /// `threshold` (capped at [`SADDLE_MAX_RESIDUAL`]) or a sampled
    /// subgradient inequality fails.
    pub fn validated(
        x_star: PrimalVec,
        y_star: DualVec,
        provenance: Provenance,
        f: &dyn ProxFunction,
        gstar: &dyn ProxFunction,
        op: &LinOp,
        threshold: f64,
    ) -> Result<Self> {
        let threshold = threshold.min(SADDLE_MAX_RESIDUAL);
        let report = kkt_report(&x_star, &y_star, f, gstar, op)?;
        let residual = report.residual();
        if !(residual <= threshold) || !report.inclusions_hold() {
            return Err(Error::SaddleRejected { residual, threshold });
        }
        Ok(Self {
            x_star,
            y_star,
            provenance,
            kkt_residual: residual,
        })
    }
}

/// Coefficients of the Lyapunov inequality for given parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coefficients {
    /// `8θ − τσ‖L‖²(4θ²+1)`
    pub coeff_pos: f64,
    /// `(4θ²−1)(4−ρ(2θ+1))(4−ρ(2θ−1)) / (16τ·coeff_pos)` with `ρ = τσ‖L‖²`;
    /// `None` when `coeff_pos` vanishes.
    pub coeff_nonneg: Option<f64>,
    /// `(2θ−1)/(4τ(1+2θ))`
    pub boundary_coeff: f64,
    /// `4(1−τσθ‖L‖²)/coeff_pos`; `None` when `coeff_pos` vanishes.
    pub boundary_ratio: Option<f64>,
}

pub fn eval_coefficients(tau: f64, sigma: f64, theta: f64, op_norm: f64) -> Result<Coefficients> {
    if !(tau > 0.0) || !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tau and sigma must be positive, got {tau}, {sigma}"
        )));
    }
    let rho = tau * sigma * op_norm * op_norm;
    let t2 = 4.0 * theta * theta;
    let coeff_pos = 8.0 * theta - rho * (t2 + 1.0);
    let scale = 8.0 * theta.abs() + rho * (t2 + 1.0);
    let defined = coeff_pos.abs() > 1e-12 * scale;
    let coeff_nonneg = defined.then(|| {
        (t2 - 1.0) * (4.0 - rho * (2.0 * theta + 1.0)) * (4.0 - rho * (2.0 * theta - 1.0))
            / (16.0 * tau * coeff_pos)
    });
    let boundary_ratio = defined.then(|| 4.0 * (1.0 - rho * theta) / coeff_pos);
    Ok(Coefficients {
        coeff_pos,
        coeff_nonneg,
        boundary_coeff: (2.0 * theta - 1.0) / (4.0 * tau * (1.0 + 2.0 * theta)),
        boundary_ratio,
    })
}

pub fn coefficients_for(cfg: &SolverConfig) -> Result<Coefficients> {
    eval_coefficients(cfg.tau, cfg.sigma, cfg.theta, cfg.op_norm)
}

/// Three consecutive iterates `x_k, x_{k+1}, x_{k+2}` with their images
/// under `L`, and `y_k, y_{k+1}`.
#[derive(Debug, Clone, Copy)]
pub struct Window<'w> {
    pub x: [&'w PrimalVec; 3],
    pub lx: [&'w DualVec; 3],
    pub y: [&'w DualVec; 2],
}

impl<'w> Window<'w> {
    pub fn from_states(s0: &'w IterState, s1: &'w IterState, s2: &'w IterState) -> Self {
        Self {
            x: [&s0.x, &s1.x, &s2.x],
            lx: [&s0.lx, &s1.lx, &s2.lx],
            y: [&s0.y, &s1.y],
        }
    }
}

/// Terms of the Lyapunov inequality at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovCheck {
    pub v_k: f64,
    pub v_next: f64,
    pub f_k: f64,
    pub g_k: f64,
    /// `V_{k+1} − V_k + F_k + G_k`
    pub left: f64,
    /// The three squared-norm terms subtracted on the right-hand side.
    pub neg_rhs_terms: [f64; 3],
    pub right: f64,
    pub residual: f64,
}

/// Evaluates certificate quantities against a fixed reference point.
#[derive(Debug, Clone)]
pub struct Certifier<'a> {
    reference: &'a SaddleRef,
    f: &'a dyn ProxFunction,
    gstar: &'a dyn ProxFunction,
    f_star: f64,
    gstar_star: f64,
    lt_ystar: PrimalVec,
    l_xstar: DualVec,
    f_sign: f64,
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Certificate(format!("{what} is not finite ({v})")))
    }
}

fn sub(a: &Array1<f64>, b: &Array1<f64>) -> Array1<f64> {
    a - b
}

impl<'a> Certifier<'a> {
    pub fn new(
        reference: &'a SaddleRef,
        f: &'a dyn ProxFunction,
        gstar: &'a dyn ProxFunction,
        op: &LinOp,
    ) -> Result<Self> {
        if reference.x_star.len() != op.in_dim() || reference.y_star.len() != op.out_dim() {
            return Err(Error::DimensionMismatch {
                expected: op.in_dim() + op.out_dim(),
                found: reference.x_star.len() + reference.y_star.len(),
            });
        }
        let f_star = finite(f.eval(&reference.x_star), "f(x⋆)")?;
        let gstar_star = finite(gstar.eval(&reference.y_star), "g*(y⋆)")?;
        Ok(Self {
            reference,
            f,
            gstar,
            f_star,
            gstar_star,
            lt_ystar: op.adjoint_apply(&reference.y_star),
            l_xstar: op.apply(&reference.x_star),
            f_sign: 1.0,
        })
    }

    /// Negative control: flips the sign of every `F_k`, which must make the
    /// certificate checks fail.
    #[doc(hidden)]
    pub fn with_corrupted_f_sign(mut self) -> Self {
        self.f_sign = -1.0;
        self
    }

    pub fn reference(&self) -> &SaddleRef {
        self.reference
    }

    /// `F_k = f(x_{k+1}) − f(x⋆) + ⟨L*y⋆, x_{k+1} − x⋆⟩`
    pub fn eval_f(&self, x_next: &PrimalVec) -> Result<f64> {
        let fx = finite(self.f.eval(x_next), "f(x_{k+1})")?;
        let lin = self.lt_ystar.dot(&sub(x_next, &self.reference.x_star));
        Ok(self.f_sign * (fx - self.f_star + lin))
    }

    /// `G_k = g*(y_{k+1}) − g*(y⋆) − ⟨L x⋆, y_{k+1} − y⋆⟩`
    pub fn eval_g(&self, y_next: &DualVec) -> Result<f64> {
        let gy = finite(self.gstar.eval(y_next), "g*(y_{k+1})")?;
        let lin = self.l_xstar.dot(&sub(y_next, &self.reference.y_star));
        Ok(gy - self.gstar_star - lin)
    }

    /// `ℒ(x, y⋆) − ℒ(x⋆, y)` with `ℒ(x, y) = f(x) + ⟨y, Lx⟩ − g*(y)`; `lx`
    /// must equal `L x`.
    pub fn eval_gap(&self, x: &PrimalVec, lx: &DualVec, y: &DualVec) -> Result<f64> {
        let fx = finite(self.f.eval(x), "f(x)")?;
        let gy = finite(self.gstar.eval(y), "g*(y)")?;
        let l_x_ystar = fx + self.reference.y_star.dot(lx) - self.gstar_star;
        let l_xstar_y = self.f_star + y.dot(&self.l_xstar) - gy;
        Ok(l_x_ystar - l_xstar_y)
    }

    /// `V_k` from `x_k, x_{k+1}, y_k`, their images under `L`, and `F_k`.
    #[allow(clippy::too_many_arguments)]
    pub fn eval_lyapunov(
        &self,
        cfg: &SolverConfig,
        x_k: &PrimalVec,
        x_next: &PrimalVec,
        y_k: &DualVec,
        lx_k: &DualVec,
        lx_next: &DualVec,
        f_k: f64,
    ) -> f64 {
        let (tau, sigma, theta) = (cfg.tau, cfg.sigma, cfg.theta);
        let dlx = sub(lx_next, lx_k);
        let shifted = &sub(y_k, &self.reference.y_star) + &(&dlx * (sigma * theta));
        theta * f_k
            + dist(x_next, &self.reference.x_star).powi(2) / (2.0 * tau)
            + norm_sq(&shifted) / (2.0 * sigma)
            + theta / (2.0 * tau) * dist(x_next, x_k).powi(2)
            - sigma * (4.0 * theta * theta + 1.0) / 16.0 * norm_sq(&dlx)
    }

    /// Residual (left minus right) of the Lyapunov inequality at `k`.
    pub fn check_lyapunov_inequality(
        &self,
        cfg: &SolverConfig,
        w: &Window<'_>,
    ) -> Result<LyapunovCheck> {
        let coeffs = coefficients_for(cfg)?;
        let (Some(coeff_nonneg), Some(ratio)) = (coeffs.coeff_nonneg, coeffs.boundary_ratio) else {
            return Err(Error::Certificate(
                "8θ − τσ‖L‖²(4θ²+1) vanishes; the Lyapunov inequality is undefined".into(),
            ));
        };
        let (tau, sigma, theta) = (cfg.tau, cfg.sigma, cfg.theta);
        let [x0, x1, x2] = w.x;
        let [lx0, lx1, lx2] = w.lx;
        let [y0, y1] = w.y;

        let f_k = self.eval_f(x1)?;
        let f_next = self.eval_f(x2)?;
        let g_k = self.eval_g(y1)?;
        let v_k = self.eval_lyapunov(cfg, x0, x1, y0, lx0, lx1, f_k);
        let v_next = self.eval_lyapunov(cfg, x1, x2, y1, lx1, lx2, f_next);
        let left = v_next - v_k + f_k + g_k;

        // y_{k+1} − y_k − σ(½(Lx_{k+1} − Lx_{k+2}) − θ(Lx_k − Lx_{k+1}))
        let inner_l = &(&sub(lx1, lx2) * 0.5) - &(&sub(lx0, lx1) * theta);
        let dual_term = &sub(y1, y0) - &(&inner_l * sigma);
        let t1 = norm_sq(&dual_term) / (2.0 * sigma);

        let dx_prev = sub(x1, x0);
        let mixed = &sub(x2, x1) - &(&dx_prev * ratio);
        let t2 = coeffs.coeff_pos / (16.0 * tau) * norm_sq(&mixed);
        let t3 = coeff_nonneg * norm_sq(&dx_prev);
        let right = -t1 - t2 - t3;

        Ok(LyapunovCheck {
            v_k,
            v_next,
            f_k,
            g_k,
            left,
            neg_rhs_terms: [t1, t2, t3],
            right,
            residual: left - right,
        })
    }

    /// Signed residuals (left minus right) of the four interpolation
    /// inequalities bounding `G_k`, `F_{k+1}`, `F_{k+1} − F_k` and
    /// `F_k − F_{k+1}`.
    pub fn check_interpolation(&self, cfg: &SolverConfig, w: &Window<'_>) -> Result<[f64; 4]> {
        let (tau, sigma, theta) = (cfg.tau, cfg.sigma, cfg.theta);
        let [x0, x1, x2] = w.x;
        let [lx0, lx1, lx2] = w.lx;
        let [y0, y1] = w.y;
        let xs = &self.reference.x_star;
        let ys = &self.reference.y_star;

        let f_k = self.eval_f(x1)?;
        let f_next = self.eval_f(x2)?;
        let g_k = self.eval_g(y1)?;

        let y1_ys = sub(y1, ys);
        let ys_y1 = sub(ys, y1);
        let bound_g = sub(y0, y1).dot(&y1_ys) / sigma
            + sub(lx1, &self.l_xstar).dot(&y1_ys)
            + theta * sub(lx1, lx0).dot(&y1_ys);
        let bound_f_next =
            sub(x1, x2).dot(&sub(x2, xs)) / tau + ys_y1.dot(&sub(lx2, &self.l_xstar));
        let bound_f_up = -dist(x2, x1).powi(2) / tau + ys_y1.dot(&sub(lx2, lx1));
        let bound_f_down = sub(x0, x1).dot(&sub(x1, x2)) / tau + sub(ys, y0).dot(&sub(lx1, lx2));

        Ok([
            g_k - bound_g,
            f_next - bound_f_next,
            (f_next - f_k) - bound_f_up,
            (f_k - f_next) - bound_f_down,
        ])
    }

    /// Residual of the simplified inequality valid when
    /// `τσ‖L‖² = 4/(1+2θ)` and `θ > 1/2`:
    /// `V_{k+1} − V_k + F_k + G_k ≤ −(1/2σ)‖…‖² − (2θ−1)/(4τ(1+2θ))‖x_{k+2}−x_k‖²`.
    pub fn check_boundary_inequality(&self, cfg: &SolverConfig, w: &Window<'_>) -> Result<f64> {
        require_boundary(cfg)?;
        let full = self.check_lyapunov_inequality(cfg, w)?;
        let coeffs = coefficients_for(cfg)?;
        let right = -full.neg_rhs_terms[0] - coeffs.boundary_coeff * dist(w.x[2], w.x[0]).powi(2);
        Ok(full.left - right)
    }
}

fn require_boundary(cfg: &SolverConfig) -> Result<()> {
    let rho = cfg.step_product();
    let on_boundary = (rho * (1.0 + 2.0 * cfg.theta) - 4.0).abs() <= 4.0 * BOUNDARY_TOL;
    if !(cfg.theta > 0.5) || (2.0 * cfg.theta - 1.0).abs() <= BOUNDARY_TOL {
        return Err(Error::InvalidArgument(format!(
            "boundary inequality requires θ > 1/2, got θ = {}",
            cfg.theta
        )));
    }
    if !on_boundary {
        return Err(Error::InvalidArgument(format!(
            "boundary inequality requires τσ‖L‖² = 4/(1+2θ): τσ‖L‖² = {rho}, 4/(1+2θ) = {}",
            solver::step_bound(cfg.theta)
        )));
    }
    Ok(())
}

/// Slack allowed on each certified inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Lyapunov and boundary residuals: `≤ lyapunov·(1 + V₀)`.
    pub lyapunov: f64,
    /// `V_k ≥ −lyapunov_floor·(1 + V₀)`.
    pub lyapunov_floor: f64,
    /// `F_k, G_k, 𝒟 ≥ −sign·(1 + |𝒟|)`.
    pub sign: f64,
    /// `|F_k + G_k − 𝒟| ≤ gap_identity·(1 + |𝒟|)`.
    pub gap_identity: f64,
    /// Absolute bound on the interpolation residuals.
    pub interpolation: f64,
    /// Per-iteration slack in the telescoped and ergodic bounds.
    pub per_iteration: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            lyapunov: 1e-8,
            lyapunov_floor: 1e-10,
            sign: 1e-8,
            gap_identity: 1e-10,
            interpolation: 1e-8,
            per_iteration: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrackerOptions {
    pub tolerances: Tolerances,
}

/// One certified iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertificateRecord {
    pub k: usize,
    pub f_gap: f64,
    pub g_gap: f64,
    pub gap: f64,
    pub lyapunov: f64,
    /// `V_{k+1} − V_k + F_k + G_k`
    pub lyapunov_left: f64,
    pub neg_rhs_terms: [f64; 3],
    pub residual: f64,
    pub coeff_pos: f64,
    pub coeff_nonneg: Option<f64>,
    pub interpolation: [f64; 4],
    pub boundary_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub k: usize,
    pub check: &'static str,
    pub value: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundarySummary {
    /// `Σ ‖x_{k+2} − x_k‖²` over the certified iterations.
    pub partial_sum: f64,
    /// `V₀·4τ(1+2θ)/(2θ−1)`
    pub bound: f64,
    pub max_residual: f64,
    pub last_step_pair_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertificateSummary {
    pub records: usize,
    pub v0: f64,
    pub min_f: f64,
    pub min_g: f64,
    pub min_gap: f64,
    pub min_v: f64,
    pub max_lyapunov_residual: f64,
    pub max_interpolation_residual: f64,
    pub max_gap_identity_error: f64,
    /// `min_K V₀ − Σ_{k<K}(F_k + G_k)`
    pub telescoped_bound_margin: f64,
    /// `min_K V₀ − K·𝒟(x̄_K, ȳ_K)`
    pub ergodic_envelope_margin: f64,
    pub boundary: Option<BoundarySummary>,
    pub violations: usize,
}

#[derive(Debug, Clone)]
pub struct CertificateLog {
    pub records: Vec<CertificateRecord>,
    /// `(K, 𝒟(x̄_K, ȳ_K))` for every `K ≥ 1`.
    pub ergodic_gaps: Vec<(usize, f64)>,
    pub violations: Vec<Violation>,
    pub summary: CertificateSummary,
    pub evaluation_error: Option<String>,
}

impl CertificateLog {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone)]
struct Snapshot {
    x: PrimalVec,
    y: DualVec,
    lx: DualVec,
}

/// Consumes iterates one at a time and certifies iteration `k` once
/// `x_{k+2}` is available.
#[derive(Debug)]
pub struct CertificateTracker<'c, 'a> {
    certifier: &'c Certifier<'a>,
    cfg: SolverConfig,
    tol: Tolerances,
    boundary: bool,
    window: VecDeque<Snapshot>,
    next_k: usize,
    v0: Option<f64>,
    lx_sum: Option<DualVec>,
    pending_ergodic: Vec<(usize, f64)>,
    sum_fg: f64,
    log: CertificateLog,
    error: Option<Error>,
}

impl<'c, 'a> CertificateTracker<'c, 'a> {
    pub fn new(certifier: &'c Certifier<'a>, cfg: SolverConfig, opts: TrackerOptions) -> Self {
        let boundary = require_boundary(&cfg).is_ok();
        let summary = CertificateSummary {
            records: 0,
            v0: f64::NAN,
            min_f: f64::INFINITY,
            min_g: f64::INFINITY,
            min_gap: f64::INFINITY,
            min_v: f64::INFINITY,
            max_lyapunov_residual: f64::NEG_INFINITY,
            max_interpolation_residual: f64::NEG_INFINITY,
            max_gap_identity_error: 0.0,
            telescoped_bound_margin: f64::INFINITY,
            ergodic_envelope_margin: f64::INFINITY,
            boundary: None,
            violations: 0,
        };
        Self {
            certifier,
            cfg,
            tol: opts.tolerances,
            boundary,
            window: VecDeque::with_capacity(3),
            next_k: 0,
            v0: None,
            lx_sum: None,
            pending_ergodic: Vec::new(),
            sum_fg: 0.0,
            log: CertificateLog {
                records: Vec::new(),
                ergodic_gaps: Vec::new(),
                violations: Vec::new(),
                summary,
                evaluation_error: None,
            },
            error: None,
        }
    }

    /// Feeds the next state; states must arrive in order starting at `k = 0`.
    /// A failed evaluation (for example a non-finite function value) stops
    /// certification and is reported as a violation by [`Self::finish`].
    pub fn observe(&mut self, state: &IterState) -> Result<()> {
        if state.k != self.next_k {
            return Err(Error::InvalidArgument(format!(
                "certificate tracker expected iterate {}, got {}",
                self.next_k, state.k
            )));
        }
        self.next_k += 1;
        if self.error.is_some() {
            return Ok(());
        }
        if let Err(e) = self.observe_inner(state) {
            self.error = Some(e);
        }
        Ok(())
    }

    fn observe_inner(&mut self, state: &IterState) -> Result<()> {
        self.window.push_back(Snapshot {
            x: state.x.clone(),
            y: state.y.clone(),
            lx: state.lx.clone(),
        });

        if state.averaged > 0 {
            let lx_sum = match self.lx_sum.take() {
                Some(s) => s + &state.lx,
                None => state.lx.clone(),
            };
            let kk = state.averaged as f64;
            let xbar = &state.x_sum / kk;
            let ybar = &state.y_sum / kk;
            let lxbar = &lx_sum / kk;
            self.lx_sum = Some(lx_sum);
            let gap = self.certifier.eval_gap(&xbar, &lxbar, &ybar)?;
            self.pending_ergodic.push((state.averaged, gap));
        }

        if self.v0.is_none() && self.window.len() >= 2 {
            let (s0, s1) = (&self.window[0], &self.window[1]);
            let f0 = self.certifier.eval_f(&s1.x)?;
            let v0 = self
                .certifier
                .eval_lyapunov(&self.cfg, &s0.x, &s1.x, &s0.y, &s0.lx, &s1.lx, f0);
            self.v0 = Some(v0);
            self.log.summary.v0 = v0;
        }
        if let Some(v0) = self.v0 {
            for (kk, gap) in self.pending_ergodic.drain(..) {
                let margin = v0 - kk as f64 * gap;
                let s = &mut self.log.summary;
                s.ergodic_envelope_margin = s.ergodic_envelope_margin.min(margin);
                if margin < -(kk as f64) * self.tol.per_iteration {
                    self.log.violations.push(Violation {
                        k: kk,
                        check: "ergodic_envelope",
                        value: kk as f64 * gap - v0,
                        tolerance: kk as f64 * self.tol.per_iteration,
                    });
                }
                self.log.ergodic_gaps.push((kk, gap));
            }
        }

        if self.window.len() == 3 {
            self.certify_front()?;
            self.window.pop_front();
        }
        Ok(())
    }

    fn certify_front(&mut self) -> Result<()> {
        let k = self.next_k - 3;
        let v0 = self.v0.expect("V₀ is set once two iterates are known");
        let (s0, s1, s2) = (&self.window[0], &self.window[1], &self.window[2]);
        let w = Window {
            x: [&s0.x, &s1.x, &s2.x],
            lx: [&s0.lx, &s1.lx, &s2.lx],
            y: [&s0.y, &s1.y],
        };
        let c = self.certifier;
        let lyap = c.check_lyapunov_inequality(&self.cfg, &w)?;
        let interpolation = c.check_interpolation(&self.cfg, &w)?;
        let gap = c.eval_gap(&s1.x, &s1.lx, &s1.y)?;
        let coeffs = coefficients_for(&self.cfg)?;
        let boundary_residual = if self.boundary {
            Some(c.check_boundary_inequality(&self.cfg, &w)?)
        } else {
            None
        };

        let rec = CertificateRecord {
            k,
            f_gap: lyap.f_k,
            g_gap: lyap.g_k,
            gap,
            lyapunov: lyap.v_k,
            lyapunov_left: lyap.left,
            neg_rhs_terms: lyap.neg_rhs_terms,
            residual: lyap.residual,
            coeff_pos: coeffs.coeff_pos,
            coeff_nonneg: coeffs.coeff_nonneg,
            interpolation,
            boundary_residual,
        };

        let t = self.tol;
        let lyap_tol = t.lyapunov * (1.0 + v0.abs());
        let sign_tol = t.sign * (1.0 + gap.abs());
        let identity_err = (rec.f_gap + rec.g_gap - gap).abs();
        let mut flag = |check: &'static str, value: f64, tolerance: f64| {
            if !(value <= tolerance) {
                self.log.violations.push(Violation {
                    k,
                    check,
                    value,
                    tolerance,
                });
            }
        };
        flag("f_nonnegative", -rec.f_gap, sign_tol);
        flag("g_nonnegative", -rec.g_gap, sign_tol);
        flag("gap_nonnegative", -gap, sign_tol);
        flag("gap_identity", identity_err, t.gap_identity * (1.0 + gap.abs()));
        flag("lyapunov_nonnegative", -rec.lyapunov, t.lyapunov_floor * (1.0 + v0.abs()));
        flag("lyapunov_inequality", rec.residual, lyap_tol);
        if rec.f_gap + rec.g_gap >= 0.0 {
            flag("monotone_descent", lyap.v_next - lyap.v_k, lyap_tol);
        }
        for r in interpolation {
            flag("interpolation", r, t.interpolation);
        }
        self.sum_fg += rec.f_gap + rec.g_gap;
        let kk = (k + 1) as f64;
        flag("telescoped_bound", self.sum_fg - v0, kk * t.per_iteration);

        let s = &mut self.log.summary;
        s.records += 1;
        s.min_f = s.min_f.min(rec.f_gap);
        s.min_g = s.min_g.min(rec.g_gap);
        s.min_gap = s.min_gap.min(gap);
        s.min_v = s.min_v.min(rec.lyapunov);
        s.max_lyapunov_residual = s.max_lyapunov_residual.max(rec.residual);
        s.max_interpolation_residual = interpolation
            .iter()
            .fold(s.max_interpolation_residual, |m, &r| m.max(r));
        s.max_gap_identity_error = s.max_gap_identity_error.max(identity_err);
        s.telescoped_bound_margin = s.telescoped_bound_margin.min(v0 - self.sum_fg);

        if let Some(br) = boundary_residual {
            let step2 = dist(&s2.x, &s0.x);
            let bound = v0 / coeffs.boundary_coeff;
            let b = s.boundary.get_or_insert(BoundarySummary {
                partial_sum: 0.0,
                bound,
                max_residual: f64::NEG_INFINITY,
                last_step_pair_distance: f64::NAN,
            });
            b.partial_sum += step2 * step2;
            b.max_residual = b.max_residual.max(br);
            b.last_step_pair_distance = step2;
            let (partial, bound) = (b.partial_sum, b.bound);
            flag("boundary_inequality", br, lyap_tol);
            flag(
                "boundary_summability",
                partial - bound,
                lyap_tol / coeffs.boundary_coeff,
            );
        }

        self.log.records.push(rec);
        Ok(())
    }

    pub fn log(&self) -> &CertificateLog {
        &self.log
    }

    pub fn finish(mut self) -> CertificateLog {
        if let Some(e) = self.error.take() {
            self.log.evaluation_error = Some(e.to_string());
            self.log.violations.push(Violation {
                k: self.next_k - 1,
                check: "evaluation",
                value: f64::NAN,
                tolerance: 0.0,
            });
        }
        self.log.summary.violations = self.log.violations.len();
        self.log
    }
}

/// Writes one CSV row per certified iteration.
pub fn write_certificate_csv<W: Write>(mut out: W, records: &[CertificateRecord]) -> std::io::Result<()> {
    writeln!(
        out,
        "k,F,G,gap,V,lyapunov_left,rhs_dual,rhs_mixed,rhs_step,lyapunov_residual,coeff_pos,coeff_nonneg,\
         interp_g,interp_f_next,interp_f_up,interp_f_down,boundary_residual"
    )?;
    for r in records {
        write!(
            out,
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},",
            r.k,
            r.f_gap,
            r.g_gap,
            r.gap,
            r.lyapunov,
            r.lyapunov_left,
            r.neg_rhs_terms[0],
            r.neg_rhs_terms[1],
            r.neg_rhs_terms[2],
            r.residual,
            r.coeff_pos
        )?;
        if let Some(c) = r.coeff_nonneg {
            write!(out, "{c:e}")?;
        }
        for v in r.interpolation {
            write!(out, ",{v:e}")?;
        }
        write!(out, ",")?;
        if let Some(b) = r.boundary_residual {
            write!(out, "{b:e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Default iteration budget for bootstrap reference runs.
pub const DEFAULT_SADDLE_BUDGET: usize = 1_000_000;

/// Returns the problem's packaged reference point when it has one, and
/// otherwise bootstraps one with [`bootstrap_saddle_ref`].
pub fn derive_saddle_ref(problem: &ProblemInstance, budget: usize) -> Result<SaddleRef> {
    match &problem.known_saddle {
        Some(s) => Ok(s.clone()),
        None => bootstrap_saddle_ref(problem, budget),
    }
}

/// Long run in the classical regime (`θ = 1`, `τσ‖L‖² = 0.9`) until the
/// iterate residual falls below `1e-14`, then validated at
/// [`ORACLE_RUN_RESIDUAL`].
pub fn bootstrap_saddle_ref(problem: &ProblemInstance, budget: usize) -> Result<SaddleRef> {
    let op_norm = problem.op.norm_estimate();
    let cfg = SolverConfig::with_step_product(0.9, 1.0, op_norm).max_iter(budget.max(1));
    let gstar = problem.gstar();
    let opts = RunOptions {
        stop: StopRule::tolerance(1e-14),
        ..Default::default()
    };
    let result = solver::run(problem.f.as_ref(), gstar.as_ref(), &problem.op, &cfg, &opts, None)?;
    if let solver::Termination::Diverged { k, norm } = result.termination {
        return Err(Error::Diverged { k, norm });
    }
    let state = result.final_state;
    SaddleRef::validated(
        state.x,
        state.y,
        Provenance::OracleRun,
        problem.f.as_ref(),
        gstar.as_ref(),
        &problem.op,
        ORACLE_RUN_RESIDUAL,
    )
}
