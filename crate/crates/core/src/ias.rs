//! The generalized IAS driver: block coordinate descent over `(theta, nu, x)`.
//!
//! Each outer iteration updates the hyper-parameters `theta` in closed form,
//! then the noise variance `nu` (when learned), then `x` by a regularized
//! least squares solve, warm-started from the previous iterate. The loop
//! stops when the relative changes of `theta` and `nu` both drop below the
//! outer tolerance.
//!
//! The objective value is recorded after the hyper-parameter block and after
//! the x-block of every iteration, so descent can be checked per block.

use crate::krylov::{cgls, dct_preconditioner, SolveReport, SpectralPreconditioner};
use crate::operators::{norm2, stack_scaled, LinOp};
use crate::priorcond::{
    plain_x_update, precompute_kernel_qr, whitened_x_update, ObliquePinv, PinvStrategy,
};
use crate::transforms::{common_kernel_check, weight, SparsifyingTransform};
use crate::updates::{update_nu, update_theta, HyperPriorSpec, NoisePriorSpec};
use crate::{GiasError, Result};

/// Full problem description: data, forward operator, sparsifying transform.
pub struct IasProblem<'a> {
    pub forward: &'a dyn LinOp,
    pub transform: &'a SparsifyingTransform,
    pub data: &'a [f64],
}

/// Starting point for the x iterate.
#[derive(Debug, Clone)]
pub enum Init {
    Zeros,
    Ones,
    /// Solution of `min |F x - y|^2 + lambda |R x|^2`.
    Tikhonov(f64),
    Custom(Vec<f64>),
}

/// Solver configuration. Defaults follow the reference parameter set:
/// outer tolerance `1e-3`, inner CGLS tolerance `1e-4`, pseudoinverse shift
/// `1e-8`.
#[derive(Debug, Clone)]
pub struct IasConfig {
    pub eps_ias: f64,
    pub eps_cgls: f64,
    pub delta_pinv: f64,
    /// Tolerance for inner pseudoinverse CG solves; `None` couples it to the
    /// outer CGLS tolerance as `eps_cgls * 1e-4` (one order tighter than the
    /// default pairing of 1e-8 against 1e-4).
    pub pinv_tol: Option<f64>,
    pub max_outer: usize,
    pub max_inner: usize,
    pub priorconditioned: bool,
    pub learn_nu: bool,
    pub fixed_nu: Option<f64>,
    pub nonneg_projection: bool,
    pub init: Init,
}

impl Default for IasConfig {
    fn default() -> Self {
        Self {
            eps_ias: 1e-3,
            eps_cgls: 1e-4,
            delta_pinv: 1e-8,
            pinv_tol: None,
            max_outer: 500,
            max_inner: 1000,
            priorconditioned: true,
            learn_nu: true,
            fixed_nu: None,
            nonneg_projection: false,
            init: Init::Zeros,
        }
    }
}

impl IasConfig {
    pub fn pinv_tolerance(&self) -> f64 {
        self.pinv_tol.unwrap_or(self.eps_cgls * 1e-4)
    }
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone)]
pub struct IterRecord {
    pub iteration: usize,
    /// Objective at `(x_{k-1}, theta_k, nu_k)`, after the hyper-parameter block.
    pub objective_after_hyper: f64,
    /// Objective at `(x_k, theta_k, nu_k)`, after the x-update.
    pub objective: f64,
    pub nu: f64,
    /// CGLS iterations spent by this x-update.
    pub inner_iterations: usize,
    /// CG iterations spent inside pseudoinverse matvecs (whitened path only).
    pub pinv_iterations: usize,
    pub theta_min: f64,
    pub theta_max: f64,
    /// Relative change of theta against the previous iteration (the stopping
    /// metric); infinite on the first iteration.
    pub theta_rel_change: f64,
    pub nu_rel_change: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IasTermination {
    Converged,
    MaxOuter,
}

/// Solver state at termination, including the diagnostics history.
#[derive(Debug, Clone)]
pub struct IasState {
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
    pub nu: f64,
    pub iteration: usize,
    pub history: Vec<IterRecord>,
    pub termination: IasTermination,
}

/// The MAP objective
/// `G(x, theta, nu) = |F x - y|^2 / (2 nu) + |D_theta^{-1/2} R x|^2 / 2
///  + (nu/vt~)^r~ + sum (theta_i/vt_i)^r - eta~ log nu - eta sum log theta_i`,
/// extended with `+inf` outside the positive orthant in `(theta, nu)`.
#[allow(clippy::too_many_arguments)]
pub fn objective(
    x: &[f64],
    theta: &[f64],
    nu: f64,
    f: &dyn LinOp,
    r: &dyn LinOp,
    hyper: &HyperPriorSpec,
    noise: &NoisePriorSpec,
    y: &[f64],
) -> f64 {
    if nu <= 0.0 || theta.iter().any(|&t| t <= 0.0) {
        return f64::INFINITY;
    }
    let fx = f.apply(x);
    let misfit: f64 = fx.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let rx = r.apply(x);
    let reg: f64 = rx.iter().zip(theta).map(|(v, t)| v * v / t).sum();
    let mut g = 0.5 * misfit / nu + 0.5 * reg;
    g += (nu / noise.vartheta()).powf(noise.r()) - noise.eta() * nu.ln();
    for (&t, &vt) in theta.iter().zip(hyper.varthetas()) {
        g += (t / vt).powf(hyper.r()) - hyper.eta() * t.ln();
    }
    g
}

/// Relative-change stopping rule: both the theta change and the nu change
/// must fall below `eps`. With a fixed noise variance the nu clause holds
/// vacuously.
pub fn stopping_check(prev: &IasState, curr: &IasState, eps: f64) -> bool {
    let (dt, dn) = stopping_metrics(&prev.theta, &curr.theta, prev.nu, curr.nu);
    dt < eps && dn < eps
}

fn stopping_metrics(theta_prev: &[f64], theta: &[f64], nu_prev: f64, nu: f64) -> (f64, f64) {
    let mut diff2 = 0.0;
    for (a, b) in theta.iter().zip(theta_prev) {
        diff2 += (a - b) * (a - b);
    }
    let dt = diff2.sqrt() / norm2(theta_prev).max(f64::MIN_POSITIVE);
    let dn = (nu - nu_prev).abs() / nu_prev.abs().max(f64::MIN_POSITIVE);
    (dt, dn)
}

/// Tikhonov initialization `argmin |F x - y|^2 + lambda |R x|^2` via CGLS on
/// the stacked system `[F; sqrt(lambda) R]`.
pub fn tikhonov_init(
    f: &dyn LinOp,
    r: &dyn LinOp,
    lambda: f64,
    y: &[f64],
    tol: f64,
    maxit: usize,
) -> Result<Vec<f64>> {
    if !(lambda > 0.0) {
        return Err(GiasError::InvalidArgument("tikhonov lambda must be positive".into()));
    }
    let stacked = stack_scaled(f, 1.0, r, lambda.sqrt())?;
    let mut b = vec![0.0; stacked.rows()];
    b[..y.len()].copy_from_slice(y);
    let x0 = vec![0.0; stacked.cols()];
    let (x, _) = cgls(&stacked, &b, &x0, tol, maxit);
    Ok(x)
}

/// Discrepancy principle residual `|F x - y|^2 - tau nu M`, near zero when
/// the reconstruction and the learned variance are mutually consistent.
pub fn dp_residual(f: &dyn LinOp, x: &[f64], y: &[f64], nu: f64, tau: f64) -> f64 {
    let fx = f.apply(x);
    let misfit: f64 = fx.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    misfit - tau * nu * y.len() as f64
}

/// Convexity classification of the objective for a given prior pair.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexityRegime {
    /// Globally strictly convex (every shape parameter at least 1 with
    /// positive log coefficient).
    GlobalStrict,
    /// Locally convex inside the given per-block thresholds; `None` for a
    /// block means that block imposes no restriction.
    Local {
        theta_thresholds: Option<Vec<f64>>,
        nu_threshold: Option<f64>,
    },
    /// No convexity statement applies (not reachable for admissible priors).
    NoGuarantee,
}

/// Classifies the convexity regime. Pass `None` for `noise` when the
/// variance is fixed; the classification then concerns `(x, theta)` only.
pub fn classify_convexity(
    hyper: &HyperPriorSpec,
    noise: Option<&NoisePriorSpec>,
) -> ConvexityRegime {
    enum Block {
        Global,
        Local(f64),
        Neither,
    }
    fn block(r: f64, eta: f64) -> Block {
        if r >= 1.0 && eta > 0.0 {
            Block::Global
        } else if (r > 0.0 && r < 1.0 && eta > 0.0) || r < 0.0 {
            Block::Local((eta / (r * (r - 1.0).abs())).powf(1.0 / r))
        } else {
            Block::Neither
        }
    }

    let theta_block = block(hyper.r(), hyper.eta());
    let nu_block = match noise {
        Some(np) => block(np.r(), np.eta()),
        None => Block::Global,
    };
    match (theta_block, nu_block) {
        (Block::Neither, _) | (_, Block::Neither) => ConvexityRegime::NoGuarantee,
        (Block::Global, Block::Global) => ConvexityRegime::GlobalStrict,
        (tb, nb) => {
            let theta_thresholds = match tb {
                Block::Local(factor) => {
                    Some(hyper.varthetas().iter().map(|&vt| vt * factor).collect())
                }
                _ => None,
            };
            let nu_threshold = match (nb, noise) {
                (Block::Local(factor), Some(np)) => Some(np.vartheta() * factor),
                _ => None,
            };
            ConvexityRegime::Local { theta_thresholds, nu_threshold }
        }
    }
}

/// Runs the generalized IAS algorithm.
///
/// Update order per outer iteration: `theta`, then `nu` (skipped when
/// `learn_nu` is off), then `x`. The x-update warm starts from the previous
/// iterate; in the whitened path the start is `R_theta x_prev` since the
/// whitened variable lives in transform space.
pub fn run_ias(
    problem: &IasProblem,
    hyper: &HyperPriorSpec,
    noise: &NoisePriorSpec,
    config: &IasConfig,
) -> Result<IasState> {
    let f = problem.forward;
    let transform = problem.transform;
    let r_op = transform.op();
    let y = problem.data;

    // Fail fast on inconsistent configuration.
    if y.len() != f.rows() {
        return Err(GiasError::Dimension(format!(
            "data length {} does not match forward operator rows {}",
            y.len(),
            f.rows()
        )));
    }
    if f.cols() != transform.cols() {
        return Err(GiasError::Dimension(
            "forward operator and transform disagree on the unknown's length".into(),
        ));
    }
    if hyper.len() != transform.rows() {
        return Err(GiasError::Dimension(format!(
            "hyper-prior has {} components, transform has {} rows",
            hyper.len(),
            transform.rows()
        )));
    }
    if noise.observations() != y.len() {
        return Err(GiasError::InvalidArgument(
            "noise prior observation count does not match the data length".into(),
        ));
    }
    if !(config.eps_ias > 0.0) || !(config.eps_cgls > 0.0) || !(config.delta_pinv > 0.0) {
        return Err(GiasError::InvalidArgument("tolerances must be positive".into()));
    }
    let fixed_nu = match (config.learn_nu, config.fixed_nu) {
        (true, _) => None,
        (false, Some(v)) if v > 0.0 => Some(v),
        (false, _) => {
            return Err(GiasError::InvalidArgument(
                "learn_nu = false requires a positive fixed_nu".into(),
            ))
        }
    };
    if !common_kernel_check(f, transform) {
        return Err(GiasError::CommonKernel(
            "ker(F) and ker(R) intersect nontrivially".into(),
        ));
    }

    let mut x = match &config.init {
        Init::Zeros => vec![0.0; f.cols()],
        Init::Ones => vec![1.0; f.cols()],
        Init::Tikhonov(lambda) => {
            tikhonov_init(f, r_op, *lambda, y, config.eps_cgls, config.max_inner)?
        }
        Init::Custom(x0) => {
            if x0.len() != f.cols() {
                return Err(GiasError::Dimension("custom init has the wrong length".into()));
            }
            x0.clone()
        }
    };

    // Theta-independent machinery for the whitened path, built once.
    let kf = if config.priorconditioned {
        Some(precompute_kernel_qr(f, transform.kernel_basis())?)
    } else {
        None
    };
    let precond: Option<SpectralPreconditioner> = match (config.priorconditioned, transform.grid())
    {
        (true, Some((n1, n2))) => Some(dct_preconditioner(n1, n2)?),
        _ => None,
    };

    let mut history: Vec<IterRecord> = Vec::new();
    let mut nu = fixed_nu.unwrap_or(1.0);
    let mut termination = IasTermination::MaxOuter;
    let mut iteration = 0;
    // Holds the previous iteration's theta once k >= 2.
    let mut theta = vec![0.0; transform.rows()];

    for k in 1..=config.max_outer {
        iteration = k;

        let rx = r_op.apply(&x);
        let theta_new = update_theta(&rx, hyper)?;

        let nu_new = match fixed_nu {
            Some(v) => v,
            None => {
                let fx = f.apply(&x);
                let residual: Vec<f64> = fx.iter().zip(y).map(|(a, b)| a - b).collect();
                update_nu(norm2(&residual), noise)?
            }
        };

        let g_after_hyper = objective(&x, &theta_new, nu_new, f, r_op, hyper, noise, y);

        let wt = weight(transform, &theta_new)?;
        let (x_new, report, pinv_iters): (Vec<f64>, SolveReport, usize) =
            if config.priorconditioned {
                let strategy = match (&precond, transform.bandwidth()) {
                    (Some(p), _) if transform.grid().is_some() => PinvStrategy::Cg {
                        tol: config.pinv_tolerance(),
                        maxit: config.max_inner,
                        precond: Some(p),
                    },
                    (_, Some(_)) => PinvStrategy::Banded { delta: config.delta_pinv },
                    _ => PinvStrategy::Cg {
                        tol: config.pinv_tolerance(),
                        maxit: config.max_inner,
                        precond: None,
                    },
                };
                let oblique =
                    ObliquePinv::new(f, &wt, kf.as_ref().unwrap(), strategy)?;
                let w0 = wt.apply(&x);
                let (xn, rep) = whitened_x_update(
                    &oblique,
                    nu_new,
                    y,
                    config.eps_cgls,
                    config.max_inner,
                    Some(&w0),
                )?;
                let inner = oblique.inner_iterations();
                (xn, rep, inner)
            } else {
                let (xn, rep) =
                    plain_x_update(f, &wt, nu_new, y, config.eps_cgls, config.max_inner, &x)?;
                (xn, rep, 0)
            };
        x = x_new;
        if config.nonneg_projection {
            for v in x.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }

        let g_after_x = objective(&x, &theta_new, nu_new, f, r_op, hyper, noise, y);

        let (theta_rel_change, nu_rel_change) = if k >= 2 {
            stopping_metrics(&theta, &theta_new, nu, nu_new)
        } else {
            (f64::INFINITY, if fixed_nu.is_some() { 0.0 } else { f64::INFINITY })
        };
        let theta_min = theta_new.iter().cloned().fold(f64::INFINITY, f64::min);
        let theta_max = theta_new.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        history.push(IterRecord {
            iteration: k,
            objective_after_hyper: g_after_hyper,
            objective: g_after_x,
            nu: nu_new,
            inner_iterations: report.iterations,
            pinv_iterations: pinv_iters,
            theta_min,
            theta_max,
            theta_rel_change,
            nu_rel_change,
        });

        theta = theta_new;
        nu = nu_new;
        if k >= 2 && theta_rel_change < config.eps_ias && nu_rel_change < config.eps_ias {
            termination = IasTermination::Converged;
            break;
        }
    }

    Ok(IasState { x, theta, nu, iteration, history, termination })
}
