//! Iterative solvers and pseudoinverse matvecs.
//!
//! * [`cg`] — (preconditioned) conjugate gradients for symmetric PSD systems;
//! * [`pcg_singular`] — the same recurrence on singular systems, with a
//!   pseudoinverse preconditioner whose column space matches the operator's;
//! * [`cgls`] — conjugate gradients for least squares on stacked systems;
//! * [`pinv_apply`] / [`pinv_adjoint_apply`] — matvecs with the Moore-Penrose
//!   pseudoinverse of a weighted transform, computed by CG on the (singular)
//!   normal equations restricted to `col(R^T)`;
//! * [`dct_preconditioner`] — spectral preconditioner for the 2D Neumann
//!   gradient, diagonalizing the unweighted `R^T R` by the orthonormal DCT;
//! * [`banded_delta_pinv`] — the shifted direct alternative
//!   `R_theta^+ ≈ (R_theta^T R_theta + delta I)^{-1} R_theta^T` via banded
//!   Cholesky, `O(p^2 N)` for bandwidth `p`.

use crate::dct::Dct2d;
use crate::operators::{axpy, dot, norm2, LinOp};
use crate::transforms::{neumann_gradient_2d, WeightedTransform};
use crate::{GiasError, Result};

/// Why an iterative solve stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIter,
    Breakdown,
}

/// Outcome of one solver call.
#[derive(Debug, Clone, Copy)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_relative_residual: f64,
    pub termination: Termination,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

/// Direction curvature below this (relative to `|p|^2`) is declared a breakdown.
const BREAKDOWN_EPS: f64 = 1e-14;

/// Preconditioned conjugate gradients for `A x = b` with `A` symmetric PSD.
///
/// Stops when `|b - A x| / |b| <= tol`. The optional `precond` applies an SPD
/// approximation of `A^{-1}` (or of `A^+`, see [`pcg_singular`]).
pub fn cg(
    apply_a: &dyn Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    x0: &[f64],
    tol: f64,
    maxit: usize,
    precond: Option<&dyn Fn(&[f64]) -> Vec<f64>>,
) -> (Vec<f64>, SolveReport) {
    assert_eq!(b.len(), x0.len(), "cg dimension mismatch");
    let bnorm = norm2(b).max(f64::MIN_POSITIVE);
    let mut x = x0.to_vec();

    let ax = apply_a(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut z = match precond {
        Some(m) => m(&r),
        None => r.clone(),
    };
    let mut p = z.clone();
    let mut rho = dot(&r, &z);

    let mut iterations = 0;
    let mut termination = Termination::MaxIter;
    for _ in 0..maxit {
        let rel = norm2(&r) / bnorm;
        if rel <= tol {
            termination = Termination::Converged;
            break;
        }
        let q = apply_a(&p);
        let pq = dot(&p, &q);
        if pq <= BREAKDOWN_EPS * dot(&p, &p) {
            termination = Termination::Breakdown;
            break;
        }
        let alpha = rho / pq;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        z = match precond {
            Some(m) => m(&r),
            None => r.clone(),
        };
        let rho_new = dot(&r, &z);
        let beta = rho_new / rho;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
        rho = rho_new;
        iterations += 1;
    }
    if termination == Termination::MaxIter && norm2(&r) / bnorm <= tol {
        termination = Termination::Converged;
    }
    let report = SolveReport {
        iterations,
        final_relative_residual: norm2(&r) / bnorm,
        termination,
    };
    (x, report)
}

/// CG on a singular symmetric PSD system `A x = b` with `b ∈ col(A)`,
/// preconditioned by an `M^+` whose column space equals `col(A)`.
///
/// Returns the unique solution in `col(A)`, i.e. `A^+ b`, provided the caller
/// honors the column-space contract for `b`, `x0` and the preconditioner.
/// Starting outside `col(A)` is not detected here; it shows up as residual
/// stagnation.
pub fn pcg_singular(
    apply_a: &dyn Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    pinv_precond: Option<&dyn Fn(&[f64]) -> Vec<f64>>,
    x0: &[f64],
    tol: f64,
    maxit: usize,
) -> (Vec<f64>, SolveReport) {
    cg(apply_a, b, x0, tol, maxit, pinv_precond)
}

/// CGLS for `min_x |A x - b|`, warm-started at `x0`.
///
/// Stops on the relative normal-equations residual
/// `|A^T (b - A x)| / |A^T b| <= tol`, which keeps the measure meaningful for
/// inconsistent stacked systems.
pub fn cgls(
    a: &dyn LinOp,
    b: &[f64],
    x0: &[f64],
    tol: f64,
    maxit: usize,
) -> (Vec<f64>, SolveReport) {
    assert_eq!(b.len(), a.rows(), "cgls rhs dimension mismatch");
    assert_eq!(x0.len(), a.cols(), "cgls start dimension mismatch");
    let denom = norm2(&a.apply_adjoint(b)).max(f64::MIN_POSITIVE);

    let mut x = x0.to_vec();
    let ax = a.apply(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut s = a.apply_adjoint(&r);
    let mut p = s.clone();
    let mut gamma = dot(&s, &s);

    let mut iterations = 0;
    let mut termination = Termination::MaxIter;
    for _ in 0..maxit {
        if gamma.sqrt() / denom <= tol {
            termination = Termination::Converged;
            break;
        }
        let q = a.apply(&p);
        let qq = dot(&q, &q);
        if qq <= BREAKDOWN_EPS * dot(&p, &p) {
            termination = Termination::Breakdown;
            break;
        }
        let alpha = gamma / qq;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        s = a.apply_adjoint(&r);
        let gamma_new = dot(&s, &s);
        let beta = gamma_new / gamma;
        for (pi, si) in p.iter_mut().zip(&s) {
            *pi = si + beta * *pi;
        }
        gamma = gamma_new;
        iterations += 1;
    }
    if termination == Termination::MaxIter && gamma.sqrt() / denom <= tol {
        termination = Termination::Converged;
    }
    let report = SolveReport {
        iterations,
        final_relative_residual: gamma.sqrt() / denom,
        termination,
    };
    (x, report)
}

/// Spectral preconditioner for the 2D Neumann gradient: the unweighted
/// `R^T R` diagonalized by the orthonormal 2D DCT-II, `R^T R = B^T Λ B`.
///
/// Applying `M^+ = B^T Λ^+ B` costs one forward transform, a diagonal scale
/// and one inverse transform.
pub struct SpectralPreconditioner {
    n1: usize,
    n2: usize,
    dct: Dct2d,
    eigenvalues: Vec<f64>,
    pseudo_eigenvalues: Vec<f64>,
}

impl SpectralPreconditioner {
    pub fn grid(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    /// Eigenvalues `Λ` of the unweighted `R^T R` (nonnegative).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Reciprocals of the positive eigenvalues, zero on the kernel.
    pub fn pseudo_eigenvalues(&self) -> &[f64] {
        &self.pseudo_eigenvalues
    }

    fn conjugate(&self, v: &[f64], diag: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n1 * self.n2, "preconditioner dimension mismatch");
        let mut buf = v.to_vec();
        self.dct.forward(&mut buf);
        for (x, d) in buf.iter_mut().zip(diag) {
            *x *= d;
        }
        self.dct.inverse(&mut buf);
        buf
    }

    /// Applies `M^+ v = B^T Λ^+ B v`.
    pub fn apply_pinv(&self, v: &[f64]) -> Vec<f64> {
        self.conjugate(v, &self.pseudo_eigenvalues)
    }

    /// Applies `M v = B^T Λ B v` (test oracle for the diagonalization).
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.conjugate(v, &self.eigenvalues)
    }
}

/// Builds the DCT spectral preconditioner for an `n1 x n2` Neumann gradient.
///
/// The eigenvalues come from conjugating `R^T R` by the DCT and reading off
/// the diagonal through component-wise division against a test vector.
pub fn dct_preconditioner(n1: usize, n2: usize) -> Result<SpectralPreconditioner> {
    if n1 < 2 || n2 < 2 {
        return Err(GiasError::InvalidArgument(
            "spectral preconditioner needs at least a 2x2 grid".into(),
        ));
    }
    let n = n1 * n2;
    let dct = Dct2d::new(n1, n2);
    let r = neumann_gradient_2d(n1, n2)?;

    // Λ = (B R^T R B^T v) ⊘ v with v = 1 (any vector with nonzero entries).
    let mut w = vec![1.0; n];
    dct.inverse(&mut w);
    let mut u = r.op().apply_adjoint(&r.op().apply(&w));
    dct.forward(&mut u);
    let lambda_max = u.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = 1e-12 * lambda_max;
    let eigenvalues: Vec<f64> = u
        .into_iter()
        .map(|l| if l > cutoff { l } else { 0.0 })
        .collect();
    let pseudo_eigenvalues: Vec<f64> =
        eigenvalues.iter().map(|&l| if l > 0.0 { 1.0 / l } else { 0.0 }).collect();
    Ok(SpectralPreconditioner { n1, n2, dct, eigenvalues, pseudo_eigenvalues })
}

/// `R_theta^+ v` by CG on `R_theta^T R_theta z = R_theta^T v` restricted to
/// `col(R^T)`, started at zero (which lies in `col(R^T)`).
pub fn pinv_apply(
    rtheta: &WeightedTransform,
    v: &[f64],
    precond: Option<&SpectralPreconditioner>,
    tol: f64,
    maxit: usize,
) -> (Vec<f64>, SolveReport) {
    assert_eq!(v.len(), rtheta.rows(), "pinv_apply dimension mismatch");
    let b = rtheta.apply_adjoint(v);
    let apply = |z: &[f64]| rtheta.normal_apply(z);
    let x0 = vec![0.0; rtheta.cols()];
    match precond {
        Some(m) => {
            let mp = |r: &[f64]| m.apply_pinv(r);
            pcg_singular(&apply, &b, Some(&mp), &x0, tol, maxit)
        }
        None => pcg_singular(&apply, &b, None, &x0, tol, maxit),
    }
}

/// `(R_theta^+)^T v` via the identity `(R^+)^T = R (R^T R)^+`, recycling the
/// same normal-equations solve (and preconditioner) as [`pinv_apply`]: first
/// project `v` onto `col(R^T)` with the kernel basis, then solve and map
/// through `R_theta`.
pub fn pinv_adjoint_apply(
    rtheta: &WeightedTransform,
    v: &[f64],
    precond: Option<&SpectralPreconditioner>,
    tol: f64,
    maxit: usize,
) -> (Vec<f64>, SolveReport) {
    assert_eq!(v.len(), rtheta.cols(), "pinv_adjoint_apply dimension mismatch");
    let w = rtheta.base().kernel_basis();
    // b = (I - W W^T) v
    let mut b = v.to_vec();
    for j in 0..w.cols() {
        let col = w.column(j);
        let c = dot(&col, v);
        axpy(-c, &col, &mut b);
    }
    let apply = |z: &[f64]| rtheta.normal_apply(z);
    let x0 = vec![0.0; rtheta.cols()];
    let (u, report) = match precond {
        Some(m) => {
            let mp = |r: &[f64]| m.apply_pinv(r);
            pcg_singular(&apply, &b, Some(&mp), &x0, tol, maxit)
        }
        None => pcg_singular(&apply, &b, None, &x0, tol, maxit),
    };
    (rtheta.apply(&u), report)
}

/// Symmetric banded Cholesky factor in lower-band storage:
/// `band[d * n + j] = L[j + d, j]` for `0 <= d <= p`.
pub struct BandedCholesky {
    n: usize,
    p: usize,
    band: Vec<f64>,
}

impl BandedCholesky {
    /// Factors the SPD banded matrix given in the same lower-band layout.
    pub fn factor(n: usize, p: usize, a_band: &[f64]) -> Result<Self> {
        assert_eq!(a_band.len(), (p + 1) * n);
        let mut l = a_band.to_vec();
        for j in 0..n {
            let lo = j.saturating_sub(p);
            let mut diag = l[j];
            for k in lo..j {
                let v = l[(j - k) * n + k];
                diag -= v * v;
            }
            if diag <= 0.0 || !diag.is_finite() {
                return Err(GiasError::Factorization(format!(
                    "banded Cholesky pivot {j} is not positive ({diag:.3e})"
                )));
            }
            let dsqrt = diag.sqrt();
            l[j] = dsqrt;
            let dmax = p.min(n - 1 - j);
            for d in 1..=dmax {
                let i = j + d;
                let mut sum = l[d * n + j];
                for k in i.saturating_sub(p)..j {
                    sum -= l[(i - k) * n + k] * l[(j - k) * n + k];
                }
                l[d * n + j] = sum / dsqrt;
            }
        }
        Ok(Self { n, p, band: l })
    }

    /// Solves `L L^T x = b` by banded forward/backward substitution.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "banded solve dimension mismatch");
        let (n, p) = (self.n, self.p);
        let mut y = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(p);
            let mut v = y[i];
            for k in lo..i {
                v -= self.band[(i - k) * n + k] * y[k];
            }
            y[i] = v / self.band[i];
        }
        for i in (0..n).rev() {
            let hi = (i + p).min(n - 1);
            let mut v = y[i];
            for k in i + 1..=hi {
                v -= self.band[(k - i) * n + i] * y[k];
            }
            y[i] = v / self.band[i];
        }
        y
    }
}

/// Appliers for the shifted approximate pseudoinverse
/// `R_theta^+ ≈ (R_theta^T R_theta + delta I)^{-1} R_theta^T` and its
/// transpose, backed by a banded Cholesky factorization.
pub struct BandedDeltaPinv<'a> {
    rtheta: &'a WeightedTransform<'a>,
    chol: BandedCholesky,
}

/// Factors `R_theta^T R_theta + delta I` for a banded transform.
///
/// The band is recovered matrix-free with `2p + 1` striped probing vectors:
/// columns whose indices agree modulo `2p + 1` have disjoint band supports,
/// so one normal-operator apply per residue class reads off a full stripe.
pub fn banded_delta_pinv<'a>(
    rtheta: &'a WeightedTransform<'a>,
    delta: f64,
) -> Result<BandedDeltaPinv<'a>> {
    let p = rtheta.base().bandwidth().ok_or_else(|| {
        GiasError::InvalidArgument("transform has no recorded bandwidth".into())
    })?;
    if delta <= 0.0 {
        return Err(GiasError::InvalidArgument("delta must be positive".into()));
    }
    let n = rtheta.cols();
    let stride = (2 * p + 1).min(n);
    let mut a_band = vec![0.0; (p + 1) * n];
    let mut probe = vec![0.0; n];
    for c in 0..stride {
        probe.iter_mut().for_each(|x| *x = 0.0);
        let mut j = c;
        while j < n {
            probe[j] = 1.0;
            j += stride;
        }
        let y = rtheta.normal_apply(&probe);
        let mut j = c;
        while j < n {
            for d in 0..=p.min(n - 1 - j) {
                a_band[d * n + j] = y[j + d];
            }
            j += stride;
        }
    }
    for j in 0..n {
        a_band[j] += delta;
    }
    let chol = BandedCholesky::factor(n, p, &a_band)?;
    Ok(BandedDeltaPinv { rtheta, chol })
}

impl BandedDeltaPinv<'_> {
    /// `(R_theta^T R_theta + delta I)^{-1} R_theta^T v`, length `K` to `N`.
    pub fn pinv(&self, v: &[f64]) -> Vec<f64> {
        self.chol.solve(&self.rtheta.apply_adjoint(v))
    }

    /// `R_theta (R_theta^T R_theta + delta I)^{-1} v`, length `N` to `K`.
    pub fn pinv_adjoint(&self, v: &[f64]) -> Vec<f64> {
        self.rtheta.apply(&self.chol.solve(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{to_dense, DenseMatrix};
    use crate::testutil::{assert_close, op_pinv, rand_vec, rng};
    use crate::transforms::{derivative_operator, weight};
    use nalgebra::{DMatrix, DVector};
    use rand::prelude::*;

    #[test]
    fn cg_identity_converges_immediately() {
        let apply = |v: &[f64]| v.to_vec();
        let b = vec![1.0, -2.0, 3.0];
        let (x, report) = cg(&apply, &b, &[0.0; 3], 1e-12, 10, None);
        assert_close(&x, &b, 1e-12, "cg identity");
        assert!(report.iterations <= 1);
        assert!(report.converged());
    }

    #[test]
    fn cg_diagonal_solve() {
        let apply = |v: &[f64]| vec![2.0 * v[0], 3.0 * v[1]];
        let (x, report) = cg(&apply, &[2.0, 3.0], &[0.0; 2], 1e-14, 10, None);
        assert_close(&x, &[1.0, 1.0], 1e-12, "cg diagonal");
        assert!(report.converged());
    }

    #[test]
    fn cg_matches_dense_cholesky_oracle() {
        let mut rng = rng(31);
        let n = 20;
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let spd = &m * m.transpose() + DMatrix::identity(n, n) * 0.5;
        let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let oracle = spd.clone().cholesky().unwrap().solve(&b);

        let apply = |v: &[f64]| {
            let out = &spd * DVector::from_column_slice(v);
            out.as_slice().to_vec()
        };
        let (x, report) = cg(&apply, b.as_slice(), &vec![0.0; n], 1e-12, 200, None);
        assert!(report.converged());
        assert_close(&x, oracle.as_slice(), 1e-8, "cg vs cholesky");
    }

    #[test]
    fn cg_reports_breakdown_on_indefinite_direction() {
        // A = diag(1, -1) is not PSD; the second search direction has
        // nonpositive curvature.
        let apply = |v: &[f64]| vec![v[0], -v[1]];
        let (_, report) = cg(&apply, &[0.0, 1.0], &[0.0; 2], 1e-14, 10, None);
        assert_eq!(report.termination, Termination::Breakdown);
    }

    #[test]
    fn cgls_identity_and_mean() {
        let id = crate::operators::Identity::new(4);
        let b = vec![1.0, 2.0, 3.0, 4.0];
        let (x, _) = cgls(&id, &b, &[0.0; 4], 1e-14, 20);
        assert_close(&x, &b, 1e-12, "cgls identity");

        let ones = DenseMatrix::from_rows(2, 1, vec![1.0, 1.0]).unwrap();
        let (x, report) = cgls(&ones, &[1.0, 3.0], &[0.0], 1e-14, 20);
        assert!((x[0] - 2.0).abs() < 1e-12);
        assert!(report.converged());
    }

    #[test]
    fn cgls_matches_dense_normal_equations() {
        let mut rng = rng(32);
        let a = crate::testutil::rand_dense(&mut rng, 30, 10);
        let b = rand_vec(&mut rng, 30);
        let na = a.to_nalgebra();
        let nb = DVector::from_column_slice(&b);
        let normal = na.transpose() * &na;
        let rhs = na.transpose() * nb;
        let oracle = normal.cholesky().unwrap().solve(&rhs);

        let (x, report) = cgls(&a, &b, &vec![0.0; 10], 1e-12, 500, );
        assert!(report.converged());
        assert_close(&x, oracle.as_slice(), 1e-7, "cgls vs normal equations");
    }

    #[test]
    fn cgls_residual_decreases_monotonically() {
        let mut rng = rng(33);
        let a = crate::testutil::rand_dense(&mut rng, 25, 12);
        let b = rand_vec(&mut rng, 25);
        let x0 = vec![0.0; 12];
        let mut prev = f64::INFINITY;
        for k in 1..=25 {
            let (x, _) = cgls(&a, &b, &x0, 0.0, k);
            let r: Vec<f64> = a.apply(&x).iter().zip(&b).map(|(ax, bi)| bi - ax).collect();
            let rn = norm2(&r);
            assert!(rn <= prev + 1e-12, "residual increased at step {k}");
            prev = rn;
        }
    }

    #[test]
    fn pcg_singular_diagonal_pseudoinverse() {
        let apply = |v: &[f64]| vec![v[0], 2.0 * v[1], 0.0];
        let mpinv = |v: &[f64]| vec![v[0], v[1] / 2.0, 0.0];
        let (x, report) =
            pcg_singular(&apply, &[1.0, 2.0, 0.0], Some(&mpinv), &[0.0; 3], 1e-14, 10);
        assert!(report.converged());
        assert_close(&x, &[1.0, 1.0, 0.0], 1e-12, "diagonal pseudoinverse");
    }

    #[test]
    fn pcg_singular_matches_dense_pinv_on_neumann_laplacian() {
        let t = crate::transforms::neumann_gradient_2d(4, 4).unwrap();
        let theta = vec![1.0; t.rows()];
        let wt = weight(&t, &theta).unwrap();
        let mut rng = rng(34);
        let raw = rand_vec(&mut rng, 16);
        // Project b onto col(A) = 1^perp.
        let mean = raw.iter().sum::<f64>() / 16.0;
        let b: Vec<f64> = raw.iter().map(|x| x - mean).collect();

        let apply = |z: &[f64]| wt.normal_apply(z);
        let (x, report) = pcg_singular(&apply, &b, None, &[0.0; 16], 1e-12, 200, );
        assert!(report.converged());

        // Dense SVD pseudoinverse oracle for (R^T R)^+ b.
        let rd = to_dense(t.op()).unwrap().to_nalgebra();
        let normal = rd.transpose() * &rd;
        let oracle = crate::testutil::dense_pinv(&normal) * DVector::from_column_slice(&b);
        assert_close(&x, oracle.as_slice(), 1e-8, "pcg_singular vs dense pinv");
    }

    #[test]
    fn preconditioning_preserves_solution_and_saves_iterations() {
        let (n1, n2) = (16, 16);
        let t = crate::transforms::neumann_gradient_2d(n1, n2).unwrap();
        let mut rng = rng(35);
        let theta: Vec<f64> = (0..t.rows()).map(|_| rng.random_range(1.0..50.0)).collect();
        let wt = weight(&t, &theta).unwrap();
        let v = rand_vec(&mut rng, t.rows());
        let pre = dct_preconditioner(n1, n2).unwrap();

        let (z_plain, rep_plain) = pinv_apply(&wt, &v, None, 1e-10, 5000);
        let (z_pre, rep_pre) = pinv_apply(&wt, &v, Some(&pre), 1e-10, 5000);
        assert!(rep_plain.converged() && rep_pre.converged());
        assert_close(&z_pre, &z_plain, 1e-6, "preconditioned vs plain solution");
        assert!(
            rep_pre.iterations < rep_plain.iterations,
            "preconditioner did not reduce iterations: {} vs {}",
            rep_pre.iterations,
            rep_plain.iterations
        );
    }

    #[test]
    fn pinv_apply_matches_dense_pinv() {
        let t = derivative_operator(1, 5).unwrap();
        let theta = vec![1.0; t.rows()];
        let wt = weight(&t, &theta).unwrap();
        let mut rng = rng(36);
        let v = rand_vec(&mut rng, 4);

        let (z, report) = pinv_apply(&wt, &v, None, 1e-13, 100);
        assert!(report.converged());
        let oracle = op_pinv(&wt) * DVector::from_column_slice(&v);
        assert_close(&z, oracle.as_slice(), 1e-8, "pinv_apply vs svd");

        let (zero, _) = pinv_apply(&wt, &[0.0; 4], None, 1e-13, 100);
        assert!(norm2(&zero) == 0.0);

        // R R^+ v = v for v in the (full) row space of the surjective R_1.
        let rz = wt.apply(&z);
        assert_close(&rz, &v, 1e-8, "projection identity");
    }

    #[test]
    fn pinv_adjoint_apply_matches_dense_pinv() {
        let t = crate::transforms::neumann_gradient_1d(6).unwrap();
        let mut rng = rng(37);
        let theta: Vec<f64> = (0..t.rows()).map(|_| rng.random_range(0.5..2.0)).collect();
        let wt = weight(&t, &theta).unwrap();

        // Kernel input (constant) is annihilated by the projection.
        let constant = vec![1.0; 6];
        let (out, _) = pinv_adjoint_apply(&wt, &constant, None, 1e-13, 100);
        assert!(norm2(&out) <= 1e-10);

        let v = rand_vec(&mut rng, 6);
        let (out, report) = pinv_adjoint_apply(&wt, &v, None, 1e-13, 200);
        assert!(report.converged());
        let oracle = op_pinv(&wt).transpose() * DVector::from_column_slice(&v);
        assert_close(&out, oracle.as_slice(), 1e-8, "pinv_adjoint vs svd");

        // Adjoint identity <R^+ a, b> = <a, (R^+)^T b>.
        let a_vec = rand_vec(&mut rng, wt.rows());
        let (ra, _) = pinv_apply(&wt, &a_vec, None, 1e-13, 200);
        let lhs = dot(&ra, &v);
        let rhs = dot(&a_vec, &out);
        assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(1.0));
    }

    #[test]
    fn dct_preconditioner_eigenvalues() {
        let pre = dct_preconditioner(2, 2).unwrap();
        let mut eigs = pre.eigenvalues().to_vec();
        eigs.sort_by(f64::total_cmp);
        // Dense eigendecomposition oracle on the 2x2 grid Laplacian.
        let t = crate::transforms::neumann_gradient_2d(2, 2).unwrap();
        let rd = to_dense(t.op()).unwrap().to_nalgebra();
        let normal = rd.transpose() * &rd;
        let mut oracle: Vec<f64> =
            normal.symmetric_eigen().eigenvalues.iter().cloned().collect();
        oracle.sort_by(f64::total_cmp);
        for (a, b) in eigs.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        assert_eq!(eigs.iter().filter(|&&l| l == 0.0).count(), 1);
        // Λ^+ Λ is 0/1 entrywise.
        for (l, lp) in pre.eigenvalues().iter().zip(pre.pseudo_eigenvalues()) {
            let prod = l * lp;
            assert!(prod == 0.0 || (prod - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dct_diagonalization_reconstructs_normal_operator() {
        let (n1, n2) = (8, 8);
        let pre = dct_preconditioner(n1, n2).unwrap();
        let t = crate::transforms::neumann_gradient_2d(n1, n2).unwrap();
        let n = n1 * n2;
        let mut e = vec![0.0; n];
        let mut max_err: f64 = 0.0;
        for j in 0..n {
            e[j] = 1.0;
            let via_dct = pre.apply(&e);
            let direct = t.op().apply_adjoint(&t.op().apply(&e));
            e[j] = 0.0;
            for (a, b) in via_dct.iter().zip(&direct) {
                max_err = max_err.max((a - b).abs());
            }
        }
        assert!(max_err <= 1e-10, "max entry error {max_err:.2e}");
    }

    #[test]
    fn banded_cholesky_matches_dense_solve() {
        let mut rng = rng(38);
        let n = 30;
        let t = derivative_operator(2, n).unwrap();
        let theta: Vec<f64> = (0..t.rows()).map(|_| rng.random_range(0.2..3.0)).collect();
        let wt = weight(&t, &theta).unwrap();
        let pinv = banded_delta_pinv(&wt, 1e-3).unwrap();

        let rd = to_dense(&wt).unwrap().to_nalgebra();
        let shifted = rd.transpose() * &rd + DMatrix::identity(n, n) * 1e-3;
        let b = rand_vec(&mut rng, n);
        let oracle = shifted.cholesky().unwrap().solve(&DVector::from_column_slice(&b));
        let x = pinv.chol.solve(&b);
        assert_close(&x, oracle.as_slice(), 1e-10, "banded vs dense cholesky");
    }

    #[test]
    fn banded_delta_pinv_approximates_dense_pinv() {
        let n = 100;
        let t = derivative_operator(1, n).unwrap();
        let theta = vec![1.0; t.rows()];
        let wt = weight(&t, &theta).unwrap();
        let pinv = banded_delta_pinv(&wt, 1e-8).unwrap();
        let mut rng = rng(39);
        let v = rand_vec(&mut rng, n - 1);
        let got = pinv.pinv(&v);
        let oracle = op_pinv(&wt) * DVector::from_column_slice(&v);
        // Tolerance reflects the delta-shift bias.
        assert_close(&got, oracle.as_slice(), 1e-5, "delta pinv vs svd pinv");
    }

    #[test]
    fn banded_delta_pinv_large_delta_limit() {
        let n = 40;
        let t = derivative_operator(1, n).unwrap();
        let theta = vec![1.0; t.rows()];
        let wt = weight(&t, &theta).unwrap();
        let delta = 1e9;
        let pinv = banded_delta_pinv(&wt, delta).unwrap();
        let mut rng = rng(40);
        let v = rand_vec(&mut rng, n - 1);
        let got = pinv.pinv(&v);
        let expect: Vec<f64> = wt.apply_adjoint(&v).iter().map(|x| x / delta).collect();
        assert_close(&got, &expect, 1e-6, "large-delta asymptotic");
    }

    #[test]
    fn banded_delta_pinv_requires_bandwidth_and_positive_delta() {
        let n = 10;
        let t = derivative_operator(1, n).unwrap();
        let theta = vec![1.0; t.rows()];
        let wt = weight(&t, &theta).unwrap();
        assert!(banded_delta_pinv(&wt, 0.0).is_err());
        assert!(banded_delta_pinv(&wt, -1.0).is_err());
    }

    #[test]
    fn derivative_bandwidths_match_order() {
        for order in 1..=3 {
            let t = derivative_operator(order, 20).unwrap();
            assert_eq!(t.bandwidth(), Some(order));
        }
    }
}
