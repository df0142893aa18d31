//! Proper convex lower-semicontinuous functions accessed through their value
//! and their proximal map.
//!
//! `+∞` is the IEEE infinity and only ever appears as a function value.
//! Conjugates are obtained with the Moreau identity
//! `prox_{σg*}(y) = y − σ·prox_{g/σ}(y/σ)`; a closed-form `g*` can always be
//! passed to the solver directly instead.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::spaces::norm;

/// Relative slack used when testing membership in a set whose indicator is
/// reached through the Moreau identity (the subtraction is not exact in
/// floating point).
pub const FEASIBILITY_SLACK: f64 = 1e-12;

/// Sampling radii for the inclusion check, relative to `1 + ‖p‖`.
pub const SAMPLE_RADII: [f64; 3] = [0.1, 1.0, 10.0];

pub trait ProxFunction: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    /// Function value; `f64::INFINITY` outside the domain.
    fn eval(&self, x: &Array1<f64>) -> f64;

    /// `argmin_y f(y) + ‖y − x‖²/(2τ)`.
    fn prox(&self, tau: f64, x: &Array1<f64>) -> Array1<f64>;

    /// Value of the convex conjugate, when it has a closed form.
    fn conjugate_eval(&self, _u: &Array1<f64>) -> Option<f64> {
        None
    }

    /// Fixed dimension of the domain, for functions carrying vector data.
    fn dim(&self) -> Option<usize> {
        None
    }
}

fn within_upper(v: f64, bound: f64) -> bool {
    v <= bound + FEASIBILITY_SLACK * (1.0 + bound.abs())
}

fn within_lower(v: f64, bound: f64) -> bool {
    v >= bound - FEASIBILITY_SLACK * (1.0 + bound.abs())
}

pub fn prox_zero(_tau: f64, x: &Array1<f64>) -> Array1<f64> {
    x.clone()
}

/// Soft thresholding at level `τ`: the prox of `‖·‖₁`.
pub fn prox_l1(tau: f64, x: &Array1<f64>) -> Array1<f64> {
    x.mapv(|v| v.signum() * (v.abs() - tau).max(0.0))
}

/// Prox of `(weight/2)‖· − target‖²`.
pub fn prox_sq_l2(tau: f64, x: &Array1<f64>, target: &Array1<f64>, weight: f64) -> Array1<f64> {
    let tw = tau * weight;
    Zip::from(x)
        .and(target)
        .map_collect(|&xi, &bi| (xi + tw * bi) / (1.0 + tw))
}

/// Projection onto `[lo, hi]`, the prox of the box indicator for every `τ`.
pub fn prox_box_indicator(
    _tau: f64,
    x: &Array1<f64>,
    lo: &Array1<f64>,
    hi: &Array1<f64>,
) -> Result<Array1<f64>> {
    check_bounds(lo, hi)?;
    if x.len() != lo.len() {
        return Err(Error::DimensionMismatch {
            expected: lo.len(),
            found: x.len(),
        });
    }
    Ok(clamp(x, lo, hi))
}

fn clamp(x: &Array1<f64>, lo: &Array1<f64>, hi: &Array1<f64>) -> Array1<f64> {
    Zip::from(x)
        .and(lo)
        .and(hi)
        .map_collect(|&v, &l, &h| v.max(l).min(h))
}

fn check_bounds(lo: &Array1<f64>, hi: &Array1<f64>) -> Result<()> {
    if lo.len() != hi.len() {
        return Err(Error::DimensionMismatch {
            expected: lo.len(),
            found: hi.len(),
        });
    }
    for (i, (&l, &h)) in lo.iter().zip(hi.iter()).enumerate() {
        if l.is_nan() || h.is_nan() || l > h || l == f64::INFINITY || h == f64::NEG_INFINITY {
            return Err(Error::InvalidArgument(format!(
                "inconsistent box bounds at index {i}: lo = {l}, hi = {h}"
            )));
        }
    }
    Ok(())
}

/// Moreau identity: `prox_{σ base*}(y) = y − σ·base.prox(1/σ, y/σ)`.
pub fn prox_conjugate(base: &dyn ProxFunction, sigma: f64, y: &Array1<f64>) -> Array1<f64> {
    let scaled = y / sigma;
    let p = base.prox(1.0 / sigma, &scaled);
    y - &(p * sigma)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Zero;

impl ProxFunction for Zero {
    fn name(&self) -> String {
        "zero".into()
    }

    fn eval(&self, _x: &Array1<f64>) -> f64 {
        0.0
    }

    fn prox(&self, tau: f64, x: &Array1<f64>) -> Array1<f64> {
        prox_zero(tau, x)
    }

    /// Indicator of the origin.
    fn conjugate_eval(&self, u: &Array1<f64>) -> Option<f64> {
        let inside = u.iter().all(|v| v.abs() <= FEASIBILITY_SLACK);
        Some(if inside { 0.0 } else { f64::INFINITY })
    }
}

/// `scale·‖x‖₁`.
#[derive(Debug, Clone, Copy)]
pub struct L1Norm {
    scale: f64,
}

impl L1Norm {
    pub fn new(scale: f64) -> Result<Self> {
        if !(scale >= 0.0) || !scale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "l1 scale must be finite and nonnegative, got {scale}"
            )));
        }
        Ok(Self { scale })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl ProxFunction for L1Norm {
    fn name(&self) -> String {
        "l1".into()
    }

    fn eval(&self, x: &Array1<f64>) -> f64 {
        self.scale * x.iter().map(|v| v.abs()).sum::<f64>()
    }

    fn prox(&self, tau: f64, x: &Array1<f64>) -> Array1<f64> {
        prox_l1(tau * self.scale, x)
    }

    /// Indicator of the `∞`-norm ball of radius `scale`.
    fn conjugate_eval(&self, u: &Array1<f64>) -> Option<f64> {
        let inside = u.iter().all(|&v| within_upper(v.abs(), self.scale));
        Some(if inside { 0.0 } else { f64::INFINITY })
    }
}

/// `(weight/2)‖x − target‖²`.
#[derive(Debug, Clone)]
pub struct SquaredL2 {
    target: Array1<f64>,
    weight: f64,
}

impl SquaredL2 {
    pub fn new(target: Array1<f64>, weight: f64) -> Result<Self> {
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sq_l2 weight must be positive and finite, got {weight}"
            )));
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("sq_l2 target must be finite".into()));
        }
        Ok(Self { target, weight })
    }

    pub fn target(&self) -> &Array1<f64> {
        &self.target
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }
}

impl ProxFunction for SquaredL2 {
    fn name(&self) -> String {
        "sq_l2".into()
    }

    fn eval(&self, x: &Array1<f64>) -> f64 {
        let d = x - &self.target;
        0.5 * self.weight * d.dot(&d)
    }

    fn prox(&self, tau: f64, x: &Array1<f64>) -> Array1<f64> {
        prox_sq_l2(tau, x, &self.target, self.weight)
    }

    /// `⟨u, target⟩ + ‖u‖²/(2·weight)`.
    fn conjugate_eval(&self, u: &Array1<f64>) -> Option<f64> {
        Some(u.dot(&self.target) + u.dot(u) / (2.0 * self.weight))
    }

    fn dim(&self) -> Option<usize> {
        Some(self.target.len())
    }
}

/// Indicator of the box `[lo, hi]`; bounds may be infinite.
#[derive(Debug, Clone)]
pub struct BoxIndicator {
    lo: Array1<f64>,
    hi: Array1<f64>,
}

impl BoxIndicator {
    pub fn new(lo: Array1<f64>, hi: Array1<f64>) -> Result<Self> {
        check_bounds(&lo, &hi)?;
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> &Array1<f64> {
        &self.lo
    }

    pub fn hi(&self) -> &Array1<f64> {
        &self.hi
    }
}

impl ProxFunction for BoxIndicator {
    fn name(&self) -> String {
        "box".into()
    }

    fn eval(&self, x: &Array1<f64>) -> f64 {
        let inside = x
            .iter()
            .zip(self.lo.iter().zip(self.hi.iter()))
            .all(|(&v, (&l, &h))| within_lower(v, l) && within_upper(v, h));
        if inside {
            0.0
        } else {
            f64::INFINITY
        }
    }

    fn prox(&self, _tau: f64, x: &Array1<f64>) -> Array1<f64> {
        clamp(x, &self.lo, &self.hi)
    }

    /// Support function `Σ max(loᵢuᵢ, hiᵢuᵢ)`.
    fn conjugate_eval(&self, u: &Array1<f64>) -> Option<f64> {
        let mut total = 0.0;
        for ((&ui, &l), &h) in u.iter().zip(self.lo.iter()).zip(self.hi.iter()) {
            total += if ui > 0.0 {
                h * ui
            } else if ui < 0.0 {
                l * ui
            } else {
                0.0
            };
        }
        Some(total)
    }

    fn dim(&self) -> Option<usize> {
        Some(self.lo.len())
    }
}

/// The convex conjugate of `base`, with its prox obtained through the Moreau
/// identity and its value from `base`'s closed-form conjugate.
#[derive(Debug, Clone)]
pub struct Conjugate {
    base: Arc<dyn ProxFunction>,
}

impl Conjugate {
    pub fn of(base: Arc<dyn ProxFunction>) -> Self {
        Self { base }
    }

    pub fn base(&self) -> &Arc<dyn ProxFunction> {
        &self.base
    }
}

impl ProxFunction for Conjugate {
    fn name(&self) -> String {
        format!("conjugate_of:{}", self.base.name())
    }

    /// NaN when `base` has no closed-form conjugate.
    fn eval(&self, y: &Array1<f64>) -> f64 {
        self.base.conjugate_eval(y).unwrap_or(f64::NAN)
    }

    fn prox(&self, sigma: f64, y: &Array1<f64>) -> Array1<f64> {
        prox_conjugate(self.base.as_ref(), sigma, y)
    }

    /// Biconjugate of a closed convex function is the function itself.
    fn conjugate_eval(&self, u: &Array1<f64>) -> Option<f64> {
        Some(self.base.eval(u))
    }

    fn dim(&self) -> Option<usize> {
        self.base.dim()
    }
}

/// Parameters for building a catalog function by name.
#[derive(Debug, Clone, Default)]
pub struct FunctionParams {
    pub scale: Option<f64>,
    pub weight: Option<f64>,
    pub target: Option<Array1<f64>>,
    pub lo: Option<Array1<f64>>,
    pub hi: Option<Array1<f64>>,
}

/// Builds a catalog function from its config name: `zero`, `l1`, `sq_l2`,
/// `box`, or `conjugate_of:<name>`.
pub fn from_name(name: &str, params: &FunctionParams, dim: usize) -> Result<Arc<dyn ProxFunction>> {
    let name = name.trim();
    if let Some(inner) = name.strip_prefix("conjugate_of:") {
        let base = from_name(inner, params, dim)?;
        return Ok(Arc::new(Conjugate::of(base)));
    }
    let f: Arc<dyn ProxFunction> = match name {
        "zero" => Arc::new(Zero),
        "l1" => Arc::new(L1Norm::new(params.scale.unwrap_or(1.0))?),
        "sq_l2" => {
            let target = params.target.clone().unwrap_or_else(|| Array1::zeros(dim));
            Arc::new(SquaredL2::new(target, params.weight.unwrap_or(1.0))?)
        }
        "box" => {
            let lo = params
                .lo
                .clone()
                .unwrap_or_else(|| Array1::from_elem(dim, f64::NEG_INFINITY));
            let hi = params
                .hi
                .clone()
                .unwrap_or_else(|| Array1::from_elem(dim, f64::INFINITY));
            Arc::new(BoxIndicator::new(lo, hi)?)
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown function {other:?} (expected zero, l1, sq_l2, box or conjugate_of:<name>)"
            )))
        }
    };
    if let Some(d) = f.dim() {
        if d != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: d });
        }
    }
    Ok(f)
}

/// Outcome of a sampled subgradient-inequality check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubgradientCheck {
    pub holds: bool,
    /// Largest `f(p) + ⟨s, z − p⟩ − f(z)` over finite-valued samples; positive
    /// values are violations before tolerance.
    pub worst_violation: f64,
    pub samples_checked: usize,
}

/// Checks `f(z) ≥ f(p) + ⟨s, z − p⟩ − 1e-9·(1 + |f(p)|)` on every sample with
/// `f(z) < ∞`, i.e. a sampled test of `s ∈ ∂f(p)`.
pub fn check_subgradient_inequality(
    f: &dyn ProxFunction,
    p: &Array1<f64>,
    s: &Array1<f64>,
    samples: &[Array1<f64>],
) -> Result<SubgradientCheck> {
    if s.len() != p.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: s.len(),
        });
    }
    let fp = f.eval(p);
    if !fp.is_finite() {
        return Ok(SubgradientCheck {
            holds: false,
            worst_violation: f64::INFINITY,
            samples_checked: 0,
        });
    }
    let tol = 1e-9 * (1.0 + fp.abs());
    let mut worst = f64::NEG_INFINITY;
    let mut checked = 0;
    for z in samples {
        if z.len() != p.len() {
            return Err(Error::DimensionMismatch {
                expected: p.len(),
                found: z.len(),
            });
        }
        let fz = f.eval(z);
        if !fz.is_finite() {
            continue;
        }
        let lin: f64 = s
            .iter()
            .zip(z.iter().zip(p.iter()))
            .map(|(&si, (&zi, &pi))| si * (zi - pi))
            .sum();
        worst = worst.max(fp + lin - fz);
        checked += 1;
    }
    if checked == 0 {
        worst = 0.0;
    }
    Ok(SubgradientCheck {
        holds: worst <= tol,
        worst_violation: worst,
        samples_checked: checked,
    })
}

/// `count` Gaussian perturbations of `p`, cycling through radii
/// `{0.1, 1, 10}·(1 + ‖p‖)`, followed by the `extra` points.
pub fn inclusion_samples(
    p: &Array1<f64>,
    count: usize,
    seed: u64,
    extra: &[Array1<f64>],
) -> Vec<Array1<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 + norm(p);
    let per_dim = (p.len().max(1) as f64).sqrt();
    let mut out = Vec::with_capacity(count + extra.len());
    for i in 0..count {
        let r = SAMPLE_RADII[i % SAMPLE_RADII.len()] * scale / per_dim;
        let z = p.mapv(|v| {
            let g: f64 = StandardNormal.sample(&mut rng);
            v + r * g
        });
        out.push(z);
    }
    out.extend(extra.iter().cloned());
    out
}
