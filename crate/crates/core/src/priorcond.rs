//! Priorconditioning with general sparsifying transforms.
//!
//! When `R` has a nontrivial kernel the classical change of variables
//! `w = D_theta^{-1/2} R x` is not invertible. The x-update least squares
//! solution is instead split as `x = x_ker + x_perp` with `x_ker ∈ ker(R)`
//! and `x_perp` in the F-weighted orthogonal complement:
//!
//! * `x_ker = W (F W)^+ y`, computed from a one-time economic QR of `F W`
//!   (theta-independent, so the factorization is reused across iterations);
//! * `x_perp = R_theta^# w*`, where `R_theta^# = (I - W (F W)^+ F) R_theta^+`
//!   is the oblique (F-weighted) pseudoinverse and `w*` solves the whitened
//!   least squares system `[nu^{-1/2} F R_theta^#; I_K] w = [nu^{-1/2} y; 0]`.
//!
//! The pseudoinverse matvecs inside `R_theta^#` are served either by the
//! banded Cholesky shift (1D stencils) or by preconditioned CG (2D Neumann
//! gradient); see [`PinvStrategy`].

use crate::krylov::{
    banded_delta_pinv, cgls, pinv_adjoint_apply, pinv_apply, BandedDeltaPinv, SolveReport,
    SpectralPreconditioner, Termination,
};
use crate::operators::{axpy, stack_scaled, DenseMatrix, LinOp};
use crate::transforms::WeightedTransform;
use crate::{GiasError, Result};
use std::sync::atomic::{AtomicUsize, Ordering};

/// Economic QR of `F W` with the kernel basis it came from.
///
/// `(F W)^+ = R~^{-1} Q~^T` gives cheap matvecs with the pseudoinverse and
/// its transpose; invertibility of `R~` is exactly the common kernel
/// condition restricted to `ker(R)`.
pub struct KernelFactorization {
    w: DenseMatrix,
    q: DenseMatrix,
    r_upper: DenseMatrix,
}

/// Computes the economic QR of `F W`. Fails if `F W` is numerically rank
/// deficient, i.e. the common kernel condition is violated.
pub fn precompute_kernel_qr(f: &dyn LinOp, w: &DenseMatrix) -> Result<KernelFactorization> {
    if w.rows() != f.cols() {
        return Err(GiasError::Dimension(format!(
            "kernel basis has {} rows, forward operator expects {}",
            w.rows(),
            f.cols()
        )));
    }
    let p = w.cols();
    let m = f.rows();
    let mut fw = DenseMatrix::zeros(m, p);
    for j in 0..p {
        let col = f.apply(&w.column(j));
        for i in 0..m {
            fw[(i, j)] = col[i];
        }
    }
    if p == 0 {
        return Ok(KernelFactorization {
            w: w.clone(),
            q: fw,
            r_upper: DenseMatrix::zeros(0, 0),
        });
    }
    let qr = fw.to_nalgebra().qr();
    let q = DenseMatrix::from_nalgebra(&qr.q().columns(0, p).into());
    let r_upper = DenseMatrix::from_nalgebra(&qr.r().rows(0, p).into());
    // Rank test against the scale of F itself: kernel directions that F
    // annihilates produce R-factor diagonals at rounding level, which a
    // purely relative test among the diagonals cannot see.
    let scale = operator_norm_estimate(f).max(f64::MIN_POSITIVE);
    for j in 0..p {
        if r_upper[(j, j)].abs() <= 1e-10 * scale {
            return Err(GiasError::CommonKernel(format!(
                "F W is rank deficient (diagonal entry {j} of its R factor is negligible)"
            )));
        }
    }
    Ok(KernelFactorization { w: w.clone(), q, r_upper })
}

/// Cheap deterministic power-iteration estimate of the spectral norm of `f`.
fn operator_norm_estimate(f: &dyn LinOp) -> f64 {
    use rand::prelude::*;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..f.cols()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut sigma = 0.0;
    for _ in 0..8 {
        let n = crate::operators::norm2(&v).max(f64::MIN_POSITIVE);
        v.iter_mut().for_each(|x| *x /= n);
        let fv = f.apply(&v);
        sigma = crate::operators::norm2(&fv);
        v = f.apply_adjoint(&fv);
    }
    sigma
}

impl KernelFactorization {
    pub fn kernel_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn w(&self) -> &DenseMatrix {
        &self.w
    }

    pub fn q(&self) -> &DenseMatrix {
        &self.q
    }

    pub fn r_upper(&self) -> &DenseMatrix {
        &self.r_upper
    }

    /// `(F W)^+ y = R~^{-1} Q~^T y`, length `M` to `P`.
    pub fn fw_pinv(&self, y: &[f64]) -> Vec<f64> {
        let p = self.kernel_dim();
        let mut c = self.q.matvec_t(y);
        // Back substitution with the small upper triangular factor.
        for i in (0..p).rev() {
            let mut v = c[i];
            for j in i + 1..p {
                v -= self.r_upper[(i, j)] * c[j];
            }
            c[i] = v / self.r_upper[(i, i)];
        }
        c
    }

    /// `((F W)^+)^T c = Q~ R~^{-T} c`, length `P` to `M`.
    pub fn fw_pinv_t(&self, c: &[f64]) -> Vec<f64> {
        let p = self.kernel_dim();
        let mut z = c.to_vec();
        // Forward substitution with R~^T (lower triangular).
        for i in 0..p {
            let mut v = z[i];
            for j in 0..i {
                v -= self.r_upper[(j, i)] * z[j];
            }
            z[i] = v / self.r_upper[(i, i)];
        }
        self.q.matvec(&z)
    }
}

/// `x_ker = W (F W)^+ y`: the kernel component of the split solution,
/// independent of both `theta` and `nu`.
pub fn x_kernel_component(kf: &KernelFactorization, y: &[f64]) -> Vec<f64> {
    if kf.kernel_dim() == 0 {
        return vec![0.0; kf.w.rows()];
    }
    kf.w.matvec(&kf.fw_pinv(y))
}

/// How matvecs with `R_theta^+` and its transpose are computed.
#[derive(Clone, Copy)]
pub enum PinvStrategy<'p> {
    /// `(R_theta^T R_theta + delta I)^{-1} R_theta^T` via banded Cholesky.
    Banded { delta: f64 },
    /// CG on the singular normal equations, optionally spectrally
    /// preconditioned (the preconditioner is theta-independent and shared).
    Cg {
        tol: f64,
        maxit: usize,
        precond: Option<&'p SpectralPreconditioner>,
    },
}

enum PinvApplier<'a, 'p> {
    Banded(BandedDeltaPinv<'a>),
    Cg {
        rtheta: &'a WeightedTransform<'a>,
        tol: f64,
        maxit: usize,
        precond: Option<&'p SpectralPreconditioner>,
    },
}

/// Matrix-free oblique pseudoinverse `R_theta^# = (I - W (F W)^+ F) R_theta^+`
/// together with its transpose, plus counters for the inner solves.
///
/// When the kernel is empty the projection term vanishes and this is exactly
/// `R_theta^+` (or `R_theta^{-1}` for square invertible transforms).
pub struct ObliquePinv<'a, 'p> {
    f: &'a dyn LinOp,
    rtheta: &'a WeightedTransform<'a>,
    kf: &'a KernelFactorization,
    applier: PinvApplier<'a, 'p>,
    inner_iterations: AtomicUsize,
    inner_unconverged: AtomicUsize,
}

impl<'a, 'p> ObliquePinv<'a, 'p> {
    pub fn new(
        f: &'a dyn LinOp,
        rtheta: &'a WeightedTransform<'a>,
        kf: &'a KernelFactorization,
        strategy: PinvStrategy<'p>,
    ) -> Result<Self> {
        let applier = match strategy {
            PinvStrategy::Banded { delta } => {
                PinvApplier::Banded(banded_delta_pinv(rtheta, delta)?)
            }
            PinvStrategy::Cg { tol, maxit, precond } => {
                PinvApplier::Cg { rtheta, tol, maxit, precond }
            }
        };
        Ok(Self {
            f,
            rtheta,
            kf,
            applier,
            inner_iterations: AtomicUsize::new(0),
            inner_unconverged: AtomicUsize::new(0),
        })
    }

    pub fn forward_op(&self) -> &dyn LinOp {
        self.f
    }

    pub fn rtheta(&self) -> &WeightedTransform<'a> {
        self.rtheta
    }

    pub fn kernel_factorization(&self) -> &KernelFactorization {
        self.kf
    }

    /// Total CG iterations spent in pseudoinverse matvecs so far.
    pub fn inner_iterations(&self) -> usize {
        self.inner_iterations.load(Ordering::Relaxed)
    }

    /// Number of inner solves that stopped on the iteration cap.
    pub fn inner_unconverged(&self) -> usize {
        self.inner_unconverged.load(Ordering::Relaxed)
    }

    fn record(&self, report: &SolveReport) {
        self.inner_iterations.fetch_add(report.iterations, Ordering::Relaxed);
        if report.termination != Termination::Converged {
            self.inner_unconverged.fetch_add(1, Ordering::Relaxed);
        }
    }

    fn pinv(&self, v: &[f64]) -> Vec<f64> {
        match &self.applier {
            PinvApplier::Banded(b) => b.pinv(v),
            PinvApplier::Cg { rtheta, tol, maxit, precond } => {
                let (z, report) = pinv_apply(rtheta, v, *precond, *tol, *maxit);
                self.record(&report);
                z
            }
        }
    }

    fn pinv_adjoint(&self, v: &[f64]) -> Vec<f64> {
        match &self.applier {
            PinvApplier::Banded(b) => b.pinv_adjoint(v),
            PinvApplier::Cg { rtheta, tol, maxit, precond } => {
                let (z, report) = pinv_adjoint_apply(rtheta, v, *precond, *tol, *maxit);
                self.record(&report);
                z
            }
        }
    }

    /// `R_theta^# w`, length `K` to `N`.
    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.rtheta.rows(), "oblique apply dimension mismatch");
        let mut t = self.pinv(w);
        if self.kf.kernel_dim() > 0 {
            let c = self.kf.fw_pinv(&self.f.apply(&t));
            let correction = self.kf.w().matvec(&c);
            for (ti, ci) in t.iter_mut().zip(&correction) {
                *ti -= ci;
            }
        }
        t
    }

    /// `(R_theta^#)^T v`, length `N` to `K`.
    pub fn apply_adjoint(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rtheta.cols(), "oblique adjoint dimension mismatch");
        let mut u = v.to_vec();
        if self.kf.kernel_dim() > 0 {
            let wt_v = self.kf.w().matvec_t(v);
            let ft = self.f.apply_adjoint(&self.kf.fw_pinv_t(&wt_v));
            for (ui, fi) in u.iter_mut().zip(&ft) {
                *ui -= fi;
            }
        }
        self.pinv_adjoint(&u)
    }
}

/// The whitened operator `[nu^{-1/2} F R_theta^#; I_K]`.
struct WhitenedOp<'o, 'a, 'p> {
    oblique: &'o ObliquePinv<'a, 'p>,
    inv_sqrt_nu: f64,
}

impl LinOp for WhitenedOp<'_, '_, '_> {
    fn rows(&self) -> usize {
        self.oblique.f.rows() + self.oblique.rtheta.rows()
    }
    fn cols(&self) -> usize {
        self.oblique.rtheta.rows()
    }
    fn apply(&self, w: &[f64]) -> Vec<f64> {
        let x = self.oblique.apply(w);
        let mut out = self.oblique.f.apply(&x);
        out.iter_mut().for_each(|v| *v *= self.inv_sqrt_nu);
        out.extend_from_slice(w);
        out
    }
    fn apply_adjoint(&self, u: &[f64]) -> Vec<f64> {
        let (top, bottom) = u.split_at(self.oblique.f.rows());
        let mut ft = self.oblique.f.apply_adjoint(top);
        ft.iter_mut().for_each(|v| *v *= self.inv_sqrt_nu);
        let mut out = self.oblique.apply_adjoint(&ft);
        for (o, b) in out.iter_mut().zip(bottom) {
            *o += b;
        }
        out
    }
}

/// Priorconditioned x-update: solves the whitened system by CGLS and maps
/// back, `x = x_ker + R_theta^# w*`.
///
/// `w0` seeds the CGLS iteration (pass `R_theta x_prev` to warm start from a
/// previous iterate, since the whitened variable lives in transform space).
pub fn whitened_x_update(
    oblique: &ObliquePinv,
    nu: f64,
    y: &[f64],
    tol: f64,
    maxit: usize,
    w0: Option<&[f64]>,
) -> Result<(Vec<f64>, SolveReport)> {
    if !(nu > 0.0) {
        return Err(GiasError::InvalidArgument("nu must be positive".into()));
    }
    let m = oblique.f.rows();
    let k = oblique.rtheta.rows();
    if y.len() != m {
        return Err(GiasError::Dimension(format!(
            "data vector has length {}, expected {m}",
            y.len()
        )));
    }
    let inv_sqrt_nu = 1.0 / nu.sqrt();
    let op = WhitenedOp { oblique, inv_sqrt_nu };
    let mut b = vec![0.0; m + k];
    for (bi, yi) in b.iter_mut().zip(y) {
        *bi = inv_sqrt_nu * yi;
    }
    let zeros;
    let start: &[f64] = match w0 {
        Some(w) => {
            assert_eq!(w.len(), k, "whitened warm start dimension mismatch");
            w
        }
        None => {
            zeros = vec![0.0; k];
            &zeros
        }
    };
    let (w_star, report) = cgls(&op, &b, start, tol, maxit);
    if report.termination == Termination::Breakdown {
        return Err(GiasError::Solver("whitened CGLS broke down".into()));
    }
    let mut x = x_kernel_component(oblique.kf, y);
    let perp = oblique.apply(&w_star);
    for (xi, pi) in x.iter_mut().zip(&perp) {
        *xi += pi;
    }
    Ok((x, report))
}

/// Direct x-update: CGLS on the stacked system
/// `[nu^{-1/2} F; D_theta^{-1/2} R] x = [nu^{-1/2} y; 0]`, warm-started at `x0`.
pub fn plain_x_update(
    f: &dyn LinOp,
    rtheta: &WeightedTransform,
    nu: f64,
    y: &[f64],
    tol: f64,
    maxit: usize,
    x0: &[f64],
) -> Result<(Vec<f64>, SolveReport)> {
    if !(nu > 0.0) {
        return Err(GiasError::InvalidArgument("nu must be positive".into()));
    }
    let inv_sqrt_nu = 1.0 / nu.sqrt();
    let stacked = stack_scaled(f, inv_sqrt_nu, rtheta, 1.0)?;
    let mut b = vec![0.0; stacked.rows()];
    for (bi, yi) in b.iter_mut().zip(y) {
        *bi = inv_sqrt_nu * yi;
    }
    Ok(cgls(&stacked, &b, x0, tol, maxit))
}

/// Relative residual of the x-update normal equations
/// `(nu^{-1} F^T F + R^T D_theta^{-1} R) x = nu^{-1} F^T y`.
pub fn normal_equation_residual(
    f: &dyn LinOp,
    rtheta: &WeightedTransform,
    nu: f64,
    y: &[f64],
    x: &[f64],
) -> f64 {
    let fx = f.apply(x);
    let misfit: Vec<f64> = fx.iter().zip(y).map(|(a, b)| (a - b) / nu).collect();
    let mut lhs = f.apply_adjoint(&misfit);
    let reg = rtheta.normal_apply(x);
    axpy(1.0, &reg, &mut lhs);
    let scaled_y: Vec<f64> = y.iter().map(|v| v / nu).collect();
    let rhs = f.apply_adjoint(&scaled_y);
    crate::operators::norm2(&lhs) / crate::operators::norm2(&rhs).max(f64::MIN_POSITIVE)
}
