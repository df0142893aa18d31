//! Bundled instances of `min_x max_y f(x) + ⟨Lx, y⟩ − g*(y)` with known or
//! oracle-derived saddle points, and a key-value config loader.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use ndarray::{array, Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::certificates::{derive_saddle_ref, Provenance, SaddleRef, DEFAULT_SADDLE_BUDGET};
use crate::error::{Error, Result};
use crate::functions::{
    from_name, prox_l1, BoxIndicator, Conjugate, FunctionParams, L1Norm, ProxFunction, SquaredL2, Zero,
};
use crate::spaces::{load_matrix_csv, ForwardDifference2D, LinOp};

/// Largest KKT residual accepted for a packaged analytic saddle point.
pub const ANALYTIC_SADDLE_RESIDUAL: f64 = 1e-9;

pub const MAX_DENSE_DIM: usize = 50;
pub const MAX_IMAGE_PIXELS: usize = 1024;

/// Coordinate-descent stopping threshold on the largest coordinate update.
const CD_TOL: f64 = 1e-14;
const CD_MAX_SWEEPS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecommendedParams {
    pub tau: f64,
    pub sigma: f64,
    pub theta: f64,
}

/// `f`, `g`, `L` of `min_x f(x) + g(Lx)`; `g*` is taken through the Moreau
/// identity unless an explicit conjugate is supplied.
#[derive(Clone)]
pub struct ProblemInstance {
    pub name: String,
    pub f: Arc<dyn ProxFunction>,
    pub g: Arc<dyn ProxFunction>,
    pub gstar_override: Option<Arc<dyn ProxFunction>>,
    pub op: LinOp,
    pub known_saddle: Option<SaddleRef>,
    pub recommended: Option<RecommendedParams>,
}

impl fmt::Debug for ProblemInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemInstance")
            .field("name", &self.name)
            .field("f", &self.f.name())
            .field("g", &self.g.name())
            .field("op", &self.op)
            .field("known_saddle", &self.known_saddle.is_some())
            .finish()
    }
}

impl ProblemInstance {
    pub fn new(
        name: impl Into<String>,
        f: Arc<dyn ProxFunction>,
        g: Arc<dyn ProxFunction>,
        op: LinOp,
    ) -> Result<Self> {
        for (label, func, dim) in [("f", &f, op.in_dim()), ("g", &g, op.out_dim())] {
            if let Some(d) = func.dim() {
                if d != dim {
                    return Err(Error::InvalidArgument(format!(
                        "{label} has dimension {d} but the operator requires {dim}"
                    )));
                }
            }
        }
        Ok(Self {
            name: name.into(),
            f,
            g,
            gstar_override: None,
            op,
            known_saddle: None,
            recommended: None,
        })
    }

    pub fn gstar(&self) -> Arc<dyn ProxFunction> {
        match &self.gstar_override {
            Some(c) => c.clone(),
            None => Arc::new(Conjugate::of(self.g.clone())),
        }
    }

    /// Attaches an analytic saddle point after validating it.
    pub fn with_analytic_saddle(mut self, x_star: Array1<f64>, y_star: Array1<f64>) -> Result<Self> {
        let gstar = self.gstar();
        let s = SaddleRef::validated(
            x_star,
            y_star,
            Provenance::Analytic,
            self.f.as_ref(),
            gstar.as_ref(),
            &self.op,
            ANALYTIC_SADDLE_RESIDUAL,
        )?;
        self.known_saddle = Some(s);
        Ok(self)
    }

    /// `θ = 1` and `τ = σ = √0.9/‖L‖`.
    pub fn with_classical_params(mut self) -> Self {
        let t = 0.9f64.sqrt() / self.op.norm_estimate();
        self.recommended = Some(RecommendedParams {
            tau: t,
            sigma: t,
            theta: 1.0,
        });
        self
    }

    /// The packaged saddle point, or a bootstrap run when there is none.
    pub fn saddle_ref(&self) -> Result<SaddleRef> {
        derive_saddle_ref(self, DEFAULT_SADDLE_BUDGET)
    }
}

/// `min_x max_y xy`: `f = g* = 0`, `L = 1`, saddle point `(0, 0)`.
pub fn bilinear_counterexample() -> ProblemInstance {
    let op = LinOp::dense(array![[1.0]])
        .and_then(|op| op.with_norm(1.0))
        .expect("1×1 identity is a valid operator");
    let origin = BoxIndicator::new(array![0.0], array![0.0]).expect("valid bounds");
    let mut p = ProblemInstance::new("bilinear", Arc::new(Zero), Arc::new(origin), op)
        .expect("dimensions agree");
    p.recommended = Some(RecommendedParams {
        tau: 1.0,
        sigma: 1.0,
        theta: 1.0,
    });
    p.with_analytic_saddle(array![0.0], array![0.0])
        .expect("the origin is a KKT point")
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((m, n), || {
        let g: f64 = StandardNormal.sample(rng);
        scale * g
    })
}

fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || {
        let g: f64 = StandardNormal.sample(rng);
        scale * g
    })
}

/// Cyclic coordinate descent for `min_x reg·‖x‖₁ + ½‖Ax − b‖²`, stopped when
/// no coordinate moves by more than `tol·(1 + ‖x‖_∞)` in a sweep.
pub fn lasso_coordinate_descent(
    a: &Array2<f64>,
    b: &Array1<f64>,
    reg: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<Array1<f64>> {
    let (m, n) = a.dim();
    if b.len() != m {
        return Err(Error::DimensionMismatch { expected: m, found: b.len() });
    }
    let col_sq: Vec<f64> = (0..n).map(|j| a.column(j).dot(&a.column(j))).collect();
    let mut x = Array1::<f64>::zeros(n);
    let mut r = -b.clone();
    for _ in 0..max_sweeps {
        let mut max_step = 0.0f64;
        for j in 0..n {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = a.column(j);
            let rho = x[j] * col_sq[j] - col.dot(&r);
            let new = prox_l1(reg, &array![rho])[0] / col_sq[j];
            let step = new - x[j];
            if step != 0.0 {
                r.scaled_add(step, &col);
                x[j] = new;
                max_step = max_step.max(step.abs());
            }
        }
        let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max_step <= tol * scale {
            return Ok(x);
        }
    }
    Err(Error::InvalidArgument(format!(
        "coordinate descent did not reach tolerance {tol} within {max_sweeps} sweeps"
    )))
}

/// `min_x reg·‖x‖₁ + ½‖Ax − b‖²` with its saddle point `(x⋆, Ax⋆ − b)`
/// from coordinate descent.
pub fn lasso_from_data(a: Array2<f64>, b: Array1<f64>, reg: f64) -> Result<ProblemInstance> {
    let (m, n) = a.dim();
    if m > MAX_DENSE_DIM || n > MAX_DENSE_DIM {
        return Err(Error::InvalidArgument(format!(
            "lasso instances are limited to {MAX_DENSE_DIM}×{MAX_DENSE_DIM}, got {m}×{n}"
        )));
    }
    let x_star = lasso_coordinate_descent(&a, &b, reg, CD_TOL, CD_MAX_SWEEPS)?;
    let y_star = a.dot(&x_star) - &b;
    let op = LinOp::dense(a)?;
    let f = Arc::new(L1Norm::new(reg)?);
    let g = Arc::new(SquaredL2::new(b, 1.0)?);
    let mut p = ProblemInstance::new("lasso", f, g, op)?.with_classical_params();
    let gstar = p.gstar();
    p.known_saddle = Some(SaddleRef::validated(
        x_star,
        y_star,
        Provenance::OracleRun,
        p.f.as_ref(),
        gstar.as_ref(),
        &p.op,
        ANALYTIC_SADDLE_RESIDUAL,
    )?);
    Ok(p)
}

/// Seeded random LASSO instance: `A` has i.i.d. `N(0, 1/m)` entries and
/// `b = A x₀ + 0.1·noise` for a sparse `x₀`.
pub fn lasso_toy(m: usize, n: usize, seed: u64, reg: f64) -> Result<ProblemInstance> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("lasso dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = gaussian_matrix(&mut rng, m, n, 1.0 / (m as f64).sqrt());
    let mut x0 = gaussian_vector(&mut rng, n, 1.0);
    for (i, v) in x0.iter_mut().enumerate() {
        if i % 2 == 1 {
            *v = 0.0;
        }
    }
    let b = a.dot(&x0) + gaussian_vector(&mut rng, m, 0.1);
    lasso_from_data(a, b, reg)
}

/// Denoising `min_x ½‖x − noisy‖² + reg·‖∇x‖₁` of a `width × height` image.
/// The saddle point is packaged when it is known in closed form (`reg = 0` or
/// a constant image) and otherwise derived on demand.
pub fn tv_denoise_from_image(width: usize, height: usize, noisy: Array1<f64>, reg: f64) -> Result<ProblemInstance> {
    let pixels = width * height;
    if pixels == 0 || pixels > MAX_IMAGE_PIXELS {
        return Err(Error::InvalidArgument(format!(
            "image must have between 1 and {MAX_IMAGE_PIXELS} pixels, got {width}×{height}"
        )));
    }
    if noisy.len() != pixels {
        return Err(Error::DimensionMismatch { expected: pixels, found: noisy.len() });
    }
    let op = LinOp::new(ForwardDifference2D::new(width, height))?;
    let constant = noisy.iter().all(|&v| v == noisy[0]);
    let f = Arc::new(SquaredL2::new(noisy.clone(), 1.0)?);
    let g = Arc::new(L1Norm::new(reg)?);
    let p = ProblemInstance::new("tv", f, g, op)?.with_classical_params();
    if reg == 0.0 || constant {
        p.with_analytic_saddle(noisy, Array1::zeros(2 * pixels))
    } else {
        Ok(p)
    }
}

/// A bright square on a dark background plus Gaussian noise of standard
/// deviation 0.1.
pub fn tv_denoise_toy(width: usize, height: usize, noise_seed: u64, reg: f64) -> Result<ProblemInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut img = Array1::zeros(width * height);
    for i in 0..height {
        for j in 0..width {
            let inside = 4 * i >= height && 4 * i < 3 * height && 4 * j >= width && 4 * j < 3 * width;
            let g: f64 = StandardNormal.sample(&mut rng);
            img[i * width + j] = if inside { 1.0 } else { 0.0 } + 0.1 * g;
        }
    }
    tv_denoise_from_image(width, height, img, reg)
}

/// `min_{lo ≤ x ≤ hi} ½‖Ax − b‖²` with seeded `A`, `b` and the box `[0, 1]ⁿ`.
/// No saddle point is packaged.
pub fn box_ls_toy(m: usize, n: usize, seed: u64) -> Result<ProblemInstance> {
    if m == 0 || n == 0 || m > MAX_DENSE_DIM || n > MAX_DENSE_DIM {
        return Err(Error::InvalidArgument(format!(
            "box least-squares dimensions must be in 1..={MAX_DENSE_DIM}, got {m}×{n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = gaussian_matrix(&mut rng, m, n, 1.0 / (m as f64).sqrt());
    let b = gaussian_vector(&mut rng, m, 1.0);
    let f = Arc::new(BoxIndicator::new(Array1::zeros(n), Array1::ones(n))?);
    let g = Arc::new(SquaredL2::new(b, 1.0)?);
    Ok(ProblemInstance::new("box_ls", f, g, LinOp::dense(a)?)?.with_classical_params())
}

/// Parsed `key = value` lines; `#` starts a comment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValueConfig {
    pub entries: BTreeMap<String, String>,
}

impl KeyValueConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: expected key=value, got {raw:?}", lineno + 1))
            })?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Parse(format!("invalid value for {key}: {v:?}"))),
        }
    }

    fn get_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get_parsed(key)?.unwrap_or(default))
    }

    fn vector(&self, key: &str) -> Result<Option<Array1<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => parse_vector(v)
                .map(Some)
                .map_err(|e| Error::Parse(format!("{key}: {e}"))),
        }
    }

    fn function_params(&self, prefix: &str) -> Result<FunctionParams> {
        Ok(FunctionParams {
            scale: self.get_parsed(&format!("{prefix}_scale"))?,
            weight: self.get_parsed(&format!("{prefix}_weight"))?,
            target: self.vector(&format!("{prefix}_target"))?,
            lo: self.vector(&format!("{prefix}_lo"))?,
            hi: self.vector(&format!("{prefix}_hi"))?,
        })
    }
}

/// Comma- or whitespace-separated list of reals.
pub fn parse_vector(s: &str) -> Result<Array1<f64>> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Parse(format!("not a number: {t:?}")))
        })
        .collect::<Result<Vec<_>>>()
        .map(Array1::from)
}

/// Builds the instance named by `problem=` from a config.
///
/// | problem    | keys (defaults)                                                   |
/// |------------|-------------------------------------------------------------------|
/// | `bilinear` |                                                                   |
/// | `lasso`    | `m` (5), `n` (5), `seed` (0), `reg` (0.1)                         |
/// | `tv`       | `width` (8), `height` (8), `seed` (0), `reg` (0.1)                |
/// | `box_ls`   | `m` (5), `n` (5), `seed` (0)                                      |
/// | `custom`   | `matrix` (CSV path), `f`, `g`, and `f_*` / `g_*` parameters      |
///
/// Relative `matrix` paths are resolved against `base_dir`.
pub fn build_problem(cfg: &KeyValueConfig, base_dir: Option<&Path>) -> Result<ProblemInstance> {
    let kind = cfg.get("problem").unwrap_or("bilinear");
    match kind {
        "bilinear" => Ok(bilinear_counterexample()),
        "lasso" => lasso_toy(
            cfg.get_or("m", 5)?,
            cfg.get_or("n", 5)?,
            cfg.get_or("seed", 0)?,
            cfg.get_or("reg", 0.1)?,
        ),
        "tv" => tv_denoise_toy(
            cfg.get_or("width", 8)?,
            cfg.get_or("height", 8)?,
            cfg.get_or("seed", 0)?,
            cfg.get_or("reg", 0.1)?,
        ),
        "box_ls" => box_ls_toy(cfg.get_or("m", 5)?, cfg.get_or("n", 5)?, cfg.get_or("seed", 0)?),
        "custom" => {
            let path = cfg
                .get("matrix")
                .ok_or_else(|| Error::Parse("custom problem requires matrix=<csv path>".into()))?;
            let path = match base_dir {
                Some(dir) if Path::new(path).is_relative() => dir.join(path),
                _ => Path::new(path).to_path_buf(),
            };
            let matrix = load_matrix_csv(&path)?;
            let (m, n) = matrix.dim();
            let f = from_name(cfg.get("f").unwrap_or("zero"), &cfg.function_params("f")?, n)?;
            let g = from_name(cfg.get("g").unwrap_or("zero"), &cfg.function_params("g")?, m)?;
            Ok(ProblemInstance::new("custom", f, g, LinOp::dense(matrix)?)?.with_classical_params())
        }
        other => Err(Error::Parse(format!(
            "unknown problem {other:?} (expected bilinear, lasso, tv, box_ls or custom)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_saddle_and_gap() {
        let p = bilinear_counterexample();
        let s = p.known_saddle.as_ref().unwrap();
        assert_eq!(s.x_star, array![0.0]);
        assert_eq!(s.y_star, array![0.0]);
        assert_eq!(p.op.norm_estimate(), 1.0);
        let gstar = p.gstar();
        assert_eq!(gstar.eval(&array![3.0]), 0.0);
        assert_eq!(gstar.prox(0.7, &array![-2.5]), array![-2.5]);
    }

    #[test]
    fn lasso_large_reg_gives_zero() {
        let p = lasso_from_data(array![[2.0]], array![1.0], 10.0).unwrap();
        assert_eq!(p.known_saddle.unwrap().x_star, array![0.0]);
    }

    #[test]
    fn lasso_is_deterministic() {
        let a = lasso_toy(5, 5, 3, 0.1).unwrap();
        let b = lasso_toy(5, 5, 3, 0.1).unwrap();
        assert_eq!(a.known_saddle, b.known_saddle);
        assert!(a.known_saddle.unwrap().kkt_residual <= 1e-9);
    }

    #[test]
    fn lasso_size_cap() {
        assert!(lasso_toy(51, 5, 0, 0.1).is_err());
    }

    #[test]
    fn tv_closed_form_cases() {
        let p = tv_denoise_toy(4, 4, 1, 0.0).unwrap();
        let s = p.known_saddle.as_ref().unwrap();
        assert_eq!(p.f.eval(&s.x_star), 0.0);
        assert!(s.y_star.iter().all(|&v| v == 0.0));

        let img = Array1::from_elem(12, 0.3);
        let p = tv_denoise_from_image(3, 4, img.clone(), 0.5).unwrap();
        assert_eq!(p.known_saddle.unwrap().x_star, img);

        let p = tv_denoise_toy(4, 4, 1, 0.1).unwrap();
        assert!(p.known_saddle.is_none());
        assert!(tv_denoise_toy(33, 32, 0, 0.1).is_err());
    }

    #[test]
    fn parses_config() {
        let cfg = KeyValueConfig::parse("# comment\nproblem = lasso\nm=4 # rows\n\nreg=0.2\n").unwrap();
        assert_eq!(cfg.get("problem"), Some("lasso"));
        assert_eq!(cfg.get_parsed::<usize>("m").unwrap(), Some(4));
        let p = build_problem(&cfg, None).unwrap();
        assert_eq!(p.op.out_dim(), 4);
        assert!(KeyValueConfig::parse("novalue").is_err());
        let bad = KeyValueConfig::parse("problem=quadratic").unwrap();
        assert!(build_problem(&bad, None).is_err());
    }

    #[test]
    fn parses_vectors() {
        assert_eq!(parse_vector("1, 2.5 -3").unwrap(), array![1.0, 2.5, -3.0]);
        assert!(parse_vector("1,x").is_err());
    }
}
