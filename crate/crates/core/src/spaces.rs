//! Finite-dimensional real vector spaces and the linear operators acting
//! between them.
//!
//! Primal and dual points are plain `Array1<f64>`; the aliases only document
//! which side of the saddle-point problem a value lives on.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type PrimalVec = Array1<f64>;
pub type DualVec = Array1<f64>;

/// Largest dimension for which a dense operator gets its norm from a full SVD.
pub const EXACT_NORM_MAX_DIM: usize = 500;

pub const DEFAULT_NORM_TOL: f64 = 1e-13;
pub const DEFAULT_NORM_MAX_ITER: usize = 100_000;
pub const DEFAULT_NORM_SEED: u64 = 0x5eed;

/// Canonical inner product `Σ aᵢ bᵢ`.
pub fn inner(a: &Array1<f64>, b: &Array1<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(a.dot(b))
}

pub fn norm(a: &Array1<f64>) -> f64 {
    a.dot(a).sqrt()
}

pub fn norm_sq(a: &Array1<f64>) -> f64 {
    a.dot(a)
}

/// `‖a − b‖`, without allocating the difference.
pub fn dist(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b.iter())
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

/// A bounded linear map between two finite-dimensional spaces, given by its
/// action and the action of its adjoint.
pub trait LinearOperator: Send + Sync {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    fn apply(&self, x: &Array1<f64>) -> Array1<f64>;
    fn adjoint_apply(&self, y: &Array1<f64>) -> Array1<f64>;

    /// Exact operator norm, when it is cheap to know.
    fn exact_norm(&self) -> Option<f64> {
        None
    }
}

/// Matrix-backed operator.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    matrix: Array2<f64>,
}

impl DenseOperator {
    pub fn new(matrix: Array2<f64>) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }
}

impl LinearOperator for DenseOperator {
    fn in_dim(&self) -> usize {
        self.matrix.ncols()
    }

    fn out_dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        self.matrix.dot(x)
    }

    fn adjoint_apply(&self, y: &Array1<f64>) -> Array1<f64> {
        self.matrix.t().dot(y)
    }

    fn exact_norm(&self) -> Option<f64> {
        let (m, n) = self.matrix.dim();
        if m.max(n) > EXACT_NORM_MAX_DIM || m == 0 || n == 0 {
            return None;
        }
        Some(spectral_norm_svd(&self.matrix))
    }
}

/// Largest singular value via a dense SVD.
pub fn spectral_norm_svd(matrix: &Array2<f64>) -> f64 {
    let (m, n) = matrix.dim();
    let dm = DMatrix::from_fn(m, n, |i, j| matrix[[i, j]]);
    dm.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Discrete gradient of a `width × height` image (row-major pixels) by forward
/// differences, zero across the last column/row. Output stacks horizontal
/// then vertical differences, `2·width·height` entries.
#[derive(Debug, Clone, Copy)]
pub struct ForwardDifference2D {
    pub width: usize,
    pub height: usize,
}

impl ForwardDifference2D {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    fn pixels(&self) -> usize {
        self.width * self.height
    }
}

impl LinearOperator for ForwardDifference2D {
    fn in_dim(&self) -> usize {
        self.pixels()
    }

    fn out_dim(&self) -> usize {
        2 * self.pixels()
    }

    fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        let (w, h, n) = (self.width, self.height, self.pixels());
        let mut out = Array1::zeros(2 * n);
        for i in 0..h {
            for j in 0..w {
                let p = i * w + j;
                if j + 1 < w {
                    out[p] = x[p + 1] - x[p];
                }
                if i + 1 < h {
                    out[n + p] = x[p + w] - x[p];
                }
            }
        }
        out
    }

    fn adjoint_apply(&self, y: &Array1<f64>) -> Array1<f64> {
        let (w, h, n) = (self.width, self.height, self.pixels());
        let mut out = Array1::zeros(n);
        for i in 0..h {
            for j in 0..w {
                let p = i * w + j;
                if j + 1 < w {
                    out[p + 1] += y[p];
                    out[p] -= y[p];
                }
                if i + 1 < h {
                    out[p + w] += y[n + p];
                    out[p] -= y[n + p];
                }
            }
        }
        out
    }

    /// `‖∇‖² = 4 sin²(π(w−1)/2w) + 4 sin²(π(h−1)/2h)`: the Gram operator is a
    /// Kronecker sum of two path-graph Laplacians.
    fn exact_norm(&self) -> Option<f64> {
        let edge = |n: usize| {
            let s = (std::f64::consts::PI * (n as f64 - 1.0) / (2.0 * n as f64)).sin();
            4.0 * s * s
        };
        Some((edge(self.width) + edge(self.height)).sqrt())
    }
}

/// A nonzero bounded linear operator together with the value of `‖L‖` used
/// for step-size validation.
#[derive(Clone)]
pub struct LinOp {
    inner: Arc<dyn LinearOperator>,
    norm_estimate: f64,
    norm_is_exact: bool,
}

impl fmt::Debug for LinOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinOp")
            .field("in_dim", &self.in_dim())
            .field("out_dim", &self.out_dim())
            .field("norm_estimate", &self.norm_estimate)
            .field("norm_is_exact", &self.norm_is_exact)
            .finish()
    }
}

impl LinOp {
    /// Wraps an operator, taking its exact norm when available and a power
    /// iteration estimate otherwise.
    pub fn new<T: LinearOperator + 'static>(op: T) -> Result<Self> {
        Self::from_arc(Arc::new(op))
    }

    pub fn from_arc(op: Arc<dyn LinearOperator>) -> Result<Self> {
        if op.in_dim() == 0 || op.out_dim() == 0 {
            return Err(Error::InvalidArgument(
                "operator dimensions must be positive".into(),
            ));
        }
        let (norm_estimate, norm_is_exact) = match op.exact_norm() {
            Some(n) => (n, true),
            None => (
                estimate_operator_norm(
                    op.as_ref(),
                    DEFAULT_NORM_TOL,
                    DEFAULT_NORM_MAX_ITER,
                    DEFAULT_NORM_SEED,
                )?,
                false,
            ),
        };
        Self::checked(op, norm_estimate, norm_is_exact)
    }

    pub fn dense(matrix: Array2<f64>) -> Result<Self> {
        Self::new(DenseOperator::new(matrix))
    }

    /// Replaces the cached norm with a caller-supplied exact value.
    pub fn with_norm(self, norm: f64) -> Result<Self> {
        Self::checked(self.inner, norm, true)
    }

    fn checked(inner: Arc<dyn LinearOperator>, norm: f64, exact: bool) -> Result<Self> {
        if !norm.is_finite() || norm < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "operator norm must be finite and nonnegative, got {norm}"
            )));
        }
        if norm == 0.0 {
            return Err(Error::ZeroOperator);
        }
        Ok(Self {
            inner,
            norm_estimate: norm,
            norm_is_exact: exact,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.inner.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.inner.out_dim()
    }

    pub fn norm_estimate(&self) -> f64 {
        self.norm_estimate
    }

    pub fn norm_is_exact(&self) -> bool {
        self.norm_is_exact
    }

    pub fn operator(&self) -> &dyn LinearOperator {
        self.inner.as_ref()
    }

    /// Panics if `x` does not live in the domain.
    pub fn apply(&self, x: &PrimalVec) -> DualVec {
        assert_eq!(x.len(), self.in_dim(), "LinOp::apply: dimension mismatch");
        self.inner.apply(x)
    }

    /// Panics if `y` does not live in the codomain.
    pub fn adjoint_apply(&self, y: &DualVec) -> PrimalVec {
        assert_eq!(
            y.len(),
            self.out_dim(),
            "LinOp::adjoint_apply: dimension mismatch"
        );
        self.inner.adjoint_apply(y)
    }
}

/// Power iteration on `L*L` from a seeded Gaussian start. Successive
/// estimates `‖L vₖ‖` (with `vₖ` unit) are compared with the relative
/// criterion `|σ̂ₖ₊₁ − σ̂ₖ| ≤ tol·σ̂ₖ₊₁`.
pub fn estimate_operator_norm(
    op: &dyn LinearOperator,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Array1<f64> =
        Array1::from_shape_fn(op.in_dim(), |_| StandardNormal.sample(&mut rng));
    let nv = norm(&v);
    v /= nv;

    let mut prev = f64::NAN;
    let mut est = 0.0;
    for _ in 0..max_iter {
        let lv = op.apply(&v);
        est = norm(&lv);
        if est == 0.0 {
            // v lies in the kernel; for a random start this means L = 0.
            return Ok(0.0);
        }
        if (est - prev).abs() <= tol * est {
            return Ok(est);
        }
        prev = est;
        let w = op.adjoint_apply(&lv);
        let nw = norm(&w);
        if nw == 0.0 {
            return Ok(est);
        }
        v = w / nw;
    }
    Err(Error::NormEstimate {
        last_estimate: est,
        iterations: max_iter,
    })
}

/// Reads a dense matrix from a header-free, comma-separated CSV file, one row
/// per line.
pub fn load_matrix_csv(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let file = std::fs::File::open(path.as_ref())?;
    read_matrix_csv(file)
}

pub fn read_matrix_csv<R: std::io::Read>(reader: R) -> Result<Array2<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut data = Vec::new();
    let mut ncols = None;
    let mut nrows = 0;
    for record in rdr.records() {
        let record = record?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        match ncols {
            None => ncols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(Error::Parse(format!(
                    "row {} has {} entries, expected {c}",
                    nrows + 1,
                    record.len()
                )))
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|e| Error::Parse(format!("bad matrix entry {field:?}: {e}")))?;
            if !v.is_finite() {
                return Err(Error::Parse(format!("non-finite matrix entry {field:?}")));
            }
            data.push(v);
        }
        nrows += 1;
    }
    let ncols = ncols.ok_or_else(|| Error::Parse("empty matrix file".into()))?;
    Array2::from_shape_vec((nrows, ncols), data).map_err(|e| Error::Parse(e.to_string()))
}
