//! Chambolle–Pock primal–dual iteration for
//! `min_x max_y f(x) + ⟨Lx, y⟩ − g*(y)` under the parameter regime
//! `θ ≥ 1/2`, `τσ‖L‖² ≤ 4/(1+2θ)`, together with per-iteration convergence
//! certificates and the spectral analysis of the bilinear problem `xy` that
//! shows the step bound cannot be enlarged.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificates;
pub mod error;
pub mod functions;
pub mod problems;
pub mod solver;
pub mod spaces;
pub mod spectral;

pub use certificates::{CertificateLog, CertificateRecord, Certifier, SaddleRef};
pub use error::{Error, Result};
pub use functions::ProxFunction;
pub use problems::ProblemInstance;
pub use solver::{run, RunOptions, RunResult, SolverConfig};
pub use spaces::{DualVec, LinOp, PrimalVec};
