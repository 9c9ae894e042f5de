//! Runnable convergence checks: descent traces, coordinate-wise optimality
//! residuals at termination, and finite-difference Hessian probes of the
//! objective's local convexity. These are diagnostics used by the test
//! suites, not proofs.

use crate::ias::{objective, IasProblem, IasState};
use crate::operators::norm2;
use crate::priorcond::normal_equation_residual;
use crate::transforms::weight;
use crate::updates::{update_nu, update_theta, HyperPriorSpec, NoisePriorSpec};
use crate::{GiasError, Result};
use nalgebra::DMatrix;

/// Objective values of a run, interleaving the value after the
/// hyper-parameter block with the value after the x-update.
#[derive(Debug, Clone)]
pub struct DescentTrace {
    pub values: Vec<f64>,
}

impl DescentTrace {
    pub fn from_state(state: &IasState) -> Self {
        let mut values = Vec::with_capacity(2 * state.history.len());
        for rec in &state.history {
            values.push(rec.objective_after_hyper);
            values.push(rec.objective);
        }
        Self { values }
    }

    /// Nonincreasing up to a relative slack (inner-solver inexactness).
    pub fn is_nonincreasing(&self, slack_rel: f64) -> bool {
        self.values
            .windows(2)
            .all(|w| w[1] <= w[0] + slack_rel * w[0].abs())
    }
}

/// Block-optimality residuals at a terminated state.
#[derive(Debug, Clone, Copy)]
pub struct ResidualReport {
    /// `|theta - update_theta(R x)| / |theta|`.
    pub theta_residual: f64,
    /// `|nu - update_nu(|F x - y|)| / nu`; `None` when the variance is fixed.
    pub nu_residual: Option<f64>,
    /// Relative residual of the x-update normal equations.
    pub x_residual: f64,
}

impl ResidualReport {
    pub fn max(&self) -> f64 {
        self.theta_residual
            .max(self.nu_residual.unwrap_or(0.0))
            .max(self.x_residual)
    }
}

/// Measures how far a state is from being a coordinate-wise minimizer.
/// Pass `noise = None` for fixed-variance runs.
pub fn check_coordinatewise_minimizer(
    state: &IasState,
    problem: &IasProblem,
    hyper: &HyperPriorSpec,
    noise: Option<&NoisePriorSpec>,
) -> Result<ResidualReport> {
    let r_op = problem.transform.op();
    let rx = r_op.apply(&state.x);
    let theta_star = update_theta(&rx, hyper)?;
    let mut diff = 0.0;
    for (a, b) in state.theta.iter().zip(&theta_star) {
        diff += (a - b) * (a - b);
    }
    let theta_residual = diff.sqrt() / norm2(&state.theta).max(f64::MIN_POSITIVE);

    let nu_residual = match noise {
        Some(np) => {
            let fx = problem.forward.apply(&state.x);
            let res: Vec<f64> = fx.iter().zip(problem.data).map(|(a, b)| a - b).collect();
            let nu_star = update_nu(norm2(&res), np)?;
            Some((state.nu - nu_star).abs() / state.nu.max(f64::MIN_POSITIVE))
        }
        None => None,
    };

    let wt = weight(problem.transform, &state.theta)?;
    let x_residual =
        normal_equation_residual(problem.forward, &wt, state.nu, problem.data, &state.x);

    Ok(ResidualReport { theta_residual, nu_residual, x_residual })
}

/// Joint point `(x, theta, nu)` for Hessian probes.
#[derive(Debug, Clone)]
pub struct EvalPoint {
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
    pub nu: f64,
}

/// Size cap: the stencil needs O((N + K + 1)^2) objective evaluations.
const HESSIAN_DIM_GUARD: usize = 48;

/// Minimum eigenvalue of the central-difference Hessian of the objective at
/// a point with positive `theta` and `nu`.
///
/// Inside the local-convexity thresholds this should be nonnegative up to
/// differencing noise; outside them negative curvature directions exist.
pub fn check_hessian_psd(
    point: &EvalPoint,
    problem: &IasProblem,
    hyper: &HyperPriorSpec,
    noise: &NoisePriorSpec,
) -> Result<f64> {
    if point.nu <= 0.0 || point.theta.iter().any(|&t| t <= 0.0) {
        return Err(GiasError::InvalidArgument(
            "hessian probe point must lie inside the positive orthant".into(),
        ));
    }
    let n = point.x.len();
    let k = point.theta.len();
    let dim = n + k + 1;
    if dim > HESSIAN_DIM_GUARD {
        return Err(GiasError::SizeGuard(format!(
            "hessian probe limited to {HESSIAN_DIM_GUARD} variables, got {dim}"
        )));
    }

    let mut z: Vec<f64> = Vec::with_capacity(dim);
    z.extend_from_slice(&point.x);
    z.extend_from_slice(&point.theta);
    z.push(point.nu);

    let eval = |z: &[f64]| -> f64 {
        objective(
            &z[..n],
            &z[n..n + k],
            z[n + k],
            problem.forward,
            problem.transform.op(),
            hyper,
            noise,
            problem.data,
        )
    };

    let steps: Vec<f64> = z.iter().map(|v| 1e-5 * (1.0 + v.abs())).collect();
    let mut h = DMatrix::zeros(dim, dim);
    let g0 = eval(&z);
    let mut zt = z.clone();
    for i in 0..dim {
        // Diagonal: (G(z+h) - 2 G(z) + G(z-h)) / h^2.
        zt[i] = z[i] + steps[i];
        let gp = eval(&zt);
        zt[i] = z[i] - steps[i];
        let gm = eval(&zt);
        zt[i] = z[i];
        h[(i, i)] = (gp - 2.0 * g0 + gm) / (steps[i] * steps[i]);
        for j in 0..i {
            zt[i] = z[i] + steps[i];
            zt[j] = z[j] + steps[j];
            let gpp = eval(&zt);
            zt[j] = z[j] - steps[j];
            let gpm = eval(&zt);
            zt[i] = z[i] - steps[i];
            let gmm = eval(&zt);
            zt[j] = z[j] + steps[j];
            let gmp = eval(&zt);
            zt[i] = z[i];
            zt[j] = z[j];
            let v = (gpp - gpm - gmp + gmm) / (4.0 * steps[i] * steps[j]);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    let eigs = h.symmetric_eigen().eigenvalues;
    Ok(eigs.iter().cloned().fold(f64::INFINITY, f64::min))
}
