use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pdhg_core::problems::{build_problem, KeyValueConfig};
use pdhg_core::solver::{RegimeCheck, StopRule, DEFAULT_STOP_TOL};
use pdhg_core::{ProblemInstance, SolverConfig};

pub const OUT_DIR_ENV: &str = "PDHG_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "out";
pub const DEFAULT_MAX_ITER: usize = 10_000;

#[derive(Debug, Parser)]
#[command(name = "pdhg", version, about = "Chambolle-Pock solver with Lyapunov certificates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one instance and write its residual trace.
    Solve(SolveArgs),
    /// Certified run: every iteration is checked against a reference saddle point.
    Certify(CertifyArgs),
    /// Spectral and empirical verdicts over a (θ, τσ) grid.
    Sweep(SweepArgs),
    /// Run on the step-size boundary τσ‖L‖² = 4/(1+2θ).
    Boundary(BoundaryArgs),
}

/// Flags shared by every command. Values given here win over the config file.
#[derive(Debug, Clone, Args)]
pub struct ProblemArgs {
    /// bilinear, lasso, tv, box_ls or custom
    #[arg(long)]
    pub problem: Option<String>,
    /// `key = value` file with problem and solver settings
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Starting point: ones (default) or zeros
    #[arg(long)]
    pub start: Option<String>,
    /// Output directory [default: $PDHG_OUT_DIR or "out"]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct StepArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub tau: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub sigma: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Relative residual tolerance; 0 runs to --max-iter
    #[arg(long)]
    pub tol: Option<f64>,
    /// strict, boundary_ok or off
    #[arg(long)]
    pub regime: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub steps: StepArgs,
    /// Attach certificate columns to the trace
    #[arg(long)]
    pub certify: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[command(flatten)]
    pub steps: StepArgs,
    #[arg(long, hide = true)]
    pub corrupt_f_sign: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, default_value_t = 0.5)]
    pub theta_min: f64,
    #[arg(long, default_value_t = 2.0)]
    pub theta_max: f64,
    #[arg(long, default_value_t = 21)]
    pub theta_steps: usize,
    /// Upper end of the τσ‖L‖² grid, which covers (0, max]
    #[arg(long, default_value_t = 2.0)]
    pub ts_max: f64,
    #[arg(long, default_value_t = 21)]
    pub ts_steps: usize,
    /// Iterations per grid point
    #[arg(long, default_value_t = 10_000)]
    pub iterations: usize,
}

#[derive(Debug, Clone, Args)]
pub struct BoundaryArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub theta: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
}

/// A problem instance plus the settings that produced it.
pub struct Setup {
    pub problem: ProblemInstance,
    pub config: KeyValueConfig,
    pub out_dir: PathBuf,
}

fn lookup<T: std::str::FromStr>(flag: Option<T>, cfg: &KeyValueConfig, key: &str) -> Result<Option<T>> {
    match flag {
        Some(v) => Ok(Some(v)),
        None => Ok(cfg.get_parsed(key)?),
    }
}

pub fn out_dir(flag: Option<&Path>, cfg: &KeyValueConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = cfg.get("out") {
        return PathBuf::from(p);
    }
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

pub fn load_setup(args: &ProblemArgs) -> Result<Setup> {
    let mut config = match &args.config {
        Some(path) => KeyValueConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => KeyValueConfig::default(),
    };
    if let Some(p) = &args.problem {
        config.entries.insert("problem".into(), p.clone());
    }
    if let Some(s) = args.seed {
        config.entries.insert("seed".into(), s.to_string());
    }
    let base_dir = args.config.as_deref().and_then(Path::parent);
    let problem = build_problem(&config, base_dir)?;
    let out_dir = out_dir(args.out.as_deref(), &config);
    Ok(Setup {
        problem,
        config,
        out_dir,
    })
}

/// Solver settings from flags, then the config file, then the problem's
/// recommended parameters.
pub fn solver_config(steps: &StepArgs, setup: &Setup) -> Result<(SolverConfig, StopRule)> {
    let cfg = &setup.config;
    let rec = setup.problem.recommended;
    let pick = |flag: Option<f64>, key: &str, fallback: Option<f64>| -> Result<f64> {
        match lookup(flag, cfg, key)?.or(fallback) {
            Some(v) => Ok(v),
            None => bail!("--{key} is required for problem {:?}", setup.problem.name),
        }
    };
    let tau = pick(steps.tau, "tau", rec.map(|r| r.tau))?;
    let sigma = pick(steps.sigma, "sigma", rec.map(|r| r.sigma))?;
    let theta = pick(steps.theta, "theta", rec.map(|r| r.theta))?;
    let max_iter = lookup(steps.max_iter, cfg, "max_iter")?.unwrap_or(DEFAULT_MAX_ITER);
    let regime: RegimeCheck = match lookup(steps.regime.clone(), cfg, "regime")? {
        Some(s) => s.parse()?,
        None => RegimeCheck::BoundaryOk,
    };
    let tol = lookup(steps.tol, cfg, "tol")?.unwrap_or(DEFAULT_STOP_TOL);
    if !(tol >= 0.0) {
        bail!("--tol must be non-negative, got {tol}");
    }
    let stop = if tol == 0.0 {
        StopRule::max_iter_only()
    } else {
        StopRule::tolerance(tol)
    };
    let solver = SolverConfig::new(tau, sigma, theta, setup.problem.op.norm_estimate())
        .max_iter(max_iter)
        .regime_check(regime);
    Ok((solver, stop))
}

pub fn certify_requested(flag: bool, cfg: &KeyValueConfig) -> Result<bool> {
    Ok(flag || cfg.get_parsed::<bool>("certify")?.unwrap_or(false))
}
