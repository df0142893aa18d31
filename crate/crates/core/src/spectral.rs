//! Closed-form analysis of the bilinear problem `min_x max_y xy`
//! (`f = g* = 0`, `L = 1`), on which one step of the iteration is the linear
//! map
//!
//! ```text
//! [x⁺]   [1        −τ        ] [x]
//! [y⁺] = [σ   1 − τσ(1+θ)    ] [y]
//! ```
//!
//! The iteration converges for every start exactly when both eigenvalues have
//! modulus below one, which fails as soon as `τσ ≥ 4/(1+2θ)`.

use std::fmt;
use std::io::Write;

use ndarray::array;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::problems::bilinear_counterexample;
use crate::solver::{cp_step, IterState, SolverConfig, DIVERGENCE_THRESHOLD};

/// Tolerance on `|radius − 1|` and on `|τσ(1+2θ) − 4|`.
pub const SPECTRAL_TOL: f64 = 1e-12;

pub const EMPIRICAL_ITERATIONS: usize = 10_000;

/// Final state norm at or below which an empirical run counts as convergent.
pub const EMPIRICAL_CONVERGED_NORM: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationMatrix {
    pub tau: f64,
    pub sigma: f64,
    pub theta: f64,
    pub entries: [[f64; 2]; 2],
}

impl IterationMatrix {
    pub fn new(tau: f64, sigma: f64, theta: f64) -> Self {
        Self {
            tau,
            sigma,
            theta,
            entries: [[1.0, -tau], [sigma, 1.0 - tau * sigma * (1.0 + theta)]],
        }
    }

    pub fn apply(&self, z: [f64; 2]) -> [f64; 2] {
        let m = &self.entries;
        [
            m[0][0] * z[0] + m[0][1] * z[1],
            m[1][0] * z[0] + m[1][1] * z[1],
        ]
    }

    /// `2 − τσ(1+θ)`
    pub fn trace(&self) -> f64 {
        self.entries[0][0] + self.entries[1][1]
    }

    /// `1 − τσθ`
    pub fn det(&self) -> f64 {
        let m = &self.entries;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }
}

/// `λ₁,₂ = ½(2 − τσ(1+θ) ± √(τσ(τσ(1+θ)² − 4)))`. For a negative radicand
/// the pair is complex conjugate with `λ₁` carrying the positive imaginary
/// part.
pub fn eigenvalues(tau: f64, sigma: f64, theta: f64) -> (Complex64, Complex64) {
    let ts = tau * sigma;
    let a = 2.0 - ts * (1.0 + theta);
    let radicand = ts * (ts * (1.0 + theta).powi(2) - 4.0);
    if radicand >= 0.0 {
        let r = radicand.sqrt();
        (
            Complex64::new(0.5 * (a + r), 0.0),
            Complex64::new(0.5 * (a - r), 0.0),
        )
    } else {
        let r = (-radicand).sqrt();
        (Complex64::new(0.5 * a, 0.5 * r), Complex64::new(0.5 * a, -0.5 * r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Convergent,
    BoundaryOscillatory,
    Divergent,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Convergent => "convergent",
            Verdict::BoundaryOscillatory => "boundary_oscillatory",
            Verdict::Divergent => "divergent",
        })
    }
}

impl Verdict {
    pub fn from_radius(radius: f64) -> Self {
        if radius < 1.0 - SPECTRAL_TOL {
            Verdict::Convergent
        } else if (radius - 1.0).abs() <= SPECTRAL_TOL {
            Verdict::BoundaryOscillatory
        } else {
            Verdict::Divergent
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeClassification {
    pub lambda1: Complex64,
    pub lambda2: Complex64,
    pub spectral_radius: f64,
    pub verdict: Verdict,
    /// For `τσ ≥ 4/(1+2θ)`: whether `λ₂ ≤ −1` and `λ₂ < λ₁ < 1` hold for the
    /// computed eigenvalues. `None` below the bound.
    pub tightness_claim: Option<bool>,
}

pub fn classify(tau: f64, sigma: f64, theta: f64) -> RegimeClassification {
    let (l1, l2) = eigenvalues(tau, sigma, theta);
    let spectral_radius = l1.norm().max(l2.norm());
    let ts = tau * sigma;
    let at_or_above = ts * (1.0 + 2.0 * theta) - 4.0 >= -4.0 * SPECTRAL_TOL;
    let tightness_claim = at_or_above.then(|| {
        l1.im == 0.0
            && l2.im == 0.0
            && l2.re <= -1.0 + SPECTRAL_TOL
            && l2.re < l1.re
            && l1.re < 1.0
    });
    RegimeClassification {
        lambda1: l1,
        lambda2: l2,
        spectral_radius,
        verdict: Verdict::from_radius(spectral_radius),
        tightness_claim,
    }
}

/// Runs [`EMPIRICAL_ITERATIONS`] solver steps on the bilinear problem from
/// `(1, 1)` and classifies the final state norm: at most
/// [`EMPIRICAL_CONVERGED_NORM`] is convergent, beyond
/// [`DIVERGENCE_THRESHOLD`] divergent, anything else bounded but not
/// convergent.
pub fn empirical_verdict(tau: f64, sigma: f64, theta: f64, iterations: usize) -> Result<(Verdict, f64)> {
    let problem = bilinear_counterexample();
    let gstar = problem.gstar();
    let cfg = SolverConfig::new(tau, sigma, theta, 1.0).max_iter(iterations);
    let mut state = IterState::new(array![1.0], array![1.0], &problem.op)?;
    for _ in 0..iterations {
        state = match cp_step(&state, &cfg, problem.f.as_ref(), gstar.as_ref(), &problem.op) {
            Ok(s) => s,
            Err(Error::Diverged { norm, .. }) => return Ok((Verdict::Divergent, norm)),
            Err(e) => return Err(e),
        };
        let n = state.x[0].hypot(state.y[0]);
        if n > DIVERGENCE_THRESHOLD {
            return Ok((Verdict::Divergent, n));
        }
    }
    let n = state.x[0].hypot(state.y[0]);
    let verdict = if n <= EMPIRICAL_CONVERGED_NORM {
        Verdict::Convergent
    } else {
        Verdict::BoundaryOscillatory
    };
    Ok((verdict, n))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TightnessRow {
    pub theta: f64,
    pub tau_sigma: f64,
    pub classification: RegimeClassification,
    pub verdict_empirical: Verdict,
    pub final_norm: f64,
    /// `|τσ(1+2θ) − 4| ≤ 4·SPECTRAL_TOL`
    pub on_boundary: bool,
}

impl TightnessRow {
    pub fn verdict_analytic(&self) -> Verdict {
        self.classification.verdict
    }

    /// Analytic and empirical verdicts agree; boundary rows are exempt.
    pub fn consistent(&self) -> bool {
        self.on_boundary || self.classification.verdict == self.verdict_empirical
    }
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// `n` points `hi·j/n`, `j = 1..=n`, covering `(0, hi]`.
pub fn open_grid(hi: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|j| hi * j as f64 / n as f64).collect()
}

/// Evaluates every `(θ, τσ)` pair with `τ = σ = √(τσ)`, rows ordered by θ
/// then τσ. Rows are computed in parallel.
pub fn tightness_map(theta_grid: &[f64], ts_grid: &[f64], iterations: usize) -> Result<Vec<TightnessRow>> {
    for &ts in ts_grid {
        if !(ts > 0.0) || !ts.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "τσ grid entries must be positive and finite, got {ts}"
            )));
        }
    }
    if let Some(t) = theta_grid.iter().find(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument(format!("θ grid entries must be finite, got {t}")));
    }
    let points: Vec<(f64, f64)> = theta_grid
        .iter()
        .flat_map(|&t| ts_grid.iter().map(move |&s| (t, s)))
        .collect();
    points
        .par_iter()
        .map(|&(theta, ts)| {
            let step = ts.sqrt();
            let classification = classify(step, step, theta);
            let (verdict_empirical, final_norm) = empirical_verdict(step, step, theta, iterations)?;
            Ok(TightnessRow {
                theta,
                tau_sigma: ts,
                classification,
                verdict_empirical,
                final_norm,
                on_boundary: (ts * (1.0 + 2.0 * theta) - 4.0).abs() <= 4.0 * SPECTRAL_TOL,
            })
        })
        .collect()
}

pub fn write_tightness_csv<W: Write>(mut out: W, rows: &[TightnessRow]) -> std::io::Result<()> {
    writeln!(
        out,
        "theta,tau_sigma,lambda1_re,lambda1_im,lambda2_re,lambda2_im,radius,verdict_analytic,verdict_empirical"
    )?;
    for r in rows {
        let c = &r.classification;
        writeln!(
            out,
            "{},{},{:e},{:e},{:e},{:e},{:e},{},{}",
            r.theta,
            r.tau_sigma,
            c.lambda1.re,
            c.lambda1.im,
            c.lambda2.re,
            c.lambda2.im,
            c.spectral_radius,
            c.verdict,
            r.verdict_empirical
        )?;
    }
    Ok(())
}
