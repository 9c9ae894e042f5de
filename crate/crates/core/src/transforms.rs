//! Sparsifying transforms with explicit kernel bases.
//!
//! Each transform bundles the operator `R` with a matrix `W` whose
//! orthonormal columns span `ker(R)`, the kernel dimension, and (when `R^T R`
//! is banded) the bandwidth. Kernel bases are constructed analytically from
//! polynomial/constant vectors and orthonormalized by QR at construction;
//! dense SVD is used only as a test oracle.
//!
//! Grid spacing is absorbed into the stencils (unit spacing), so the
//! derivative operators use the integer stencils `[-1,1]`, `[-1,2,-1]`,
//! `[-1,3,-3,1]`.

use crate::operators::{to_dense, DenseMatrix, LinOp};
use crate::{GiasError, Result};

/// Banded difference stencil acting row-wise, optionally padded with a final
/// zero row (the reflexive boundary treatment that makes the 1D operator
/// square).
pub struct StencilOp {
    n: usize,
    stencil: Vec<f64>,
    zero_pad_rows: usize,
}

impl LinOp for StencilOp {
    fn rows(&self) -> usize {
        self.n - (self.stencil.len() - 1) + self.zero_pad_rows
    }
    fn cols(&self) -> usize {
        self.n
    }
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n, "stencil dimension mismatch");
        let active = self.n - (self.stencil.len() - 1);
        let mut out = vec![0.0; self.rows()];
        for k in 0..active {
            out[k] = self.stencil.iter().zip(&v[k..]).map(|(s, x)| s * x).sum();
        }
        out
    }
    fn apply_adjoint(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.rows(), "stencil dimension mismatch");
        let active = self.n - (self.stencil.len() - 1);
        let mut out = vec![0.0; self.n];
        for k in 0..active {
            let uk = u[k];
            for (j, s) in self.stencil.iter().enumerate() {
                out[k + j] += s * uk;
            }
        }
        out
    }
}

/// Anisotropic 2D gradient with Neumann (reflexive) boundary conditions on an
/// `n1 x n2` grid: the stack of the square row-difference and
/// column-difference operators, each padded with zero rows at the boundary.
pub struct Neumann2dOp {
    n1: usize,
    n2: usize,
}

impl LinOp for Neumann2dOp {
    fn rows(&self) -> usize {
        2 * self.n1 * self.n2
    }
    fn cols(&self) -> usize {
        self.n1 * self.n2
    }
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let (n1, n2) = (self.n1, self.n2);
        let n = n1 * n2;
        assert_eq!(v.len(), n, "gradient dimension mismatch");
        let mut out = vec![0.0; 2 * n];
        // First block: differences along axis 1 (between rows of the image).
        for i in 0..n1 - 1 {
            for j in 0..n2 {
                out[i * n2 + j] = v[(i + 1) * n2 + j] - v[i * n2 + j];
            }
        }
        // Second block: differences along axis 2 (within each row).
        for i in 0..n1 {
            for j in 0..n2 - 1 {
                out[n + i * n2 + j] = v[i * n2 + j + 1] - v[i * n2 + j];
            }
        }
        out
    }
    fn apply_adjoint(&self, u: &[f64]) -> Vec<f64> {
        let (n1, n2) = (self.n1, self.n2);
        let n = n1 * n2;
        assert_eq!(u.len(), 2 * n, "gradient dimension mismatch");
        let mut out = vec![0.0; n];
        for i in 0..n1 - 1 {
            for j in 0..n2 {
                let g = u[i * n2 + j];
                out[(i + 1) * n2 + j] += g;
                out[i * n2 + j] -= g;
            }
        }
        for i in 0..n1 {
            for j in 0..n2 - 1 {
                let g = u[n + i * n2 + j];
                out[i * n2 + j + 1] += g;
                out[i * n2 + j] -= g;
            }
        }
        out
    }
}

/// A sparsifying transform `R` together with an orthonormal basis of its
/// kernel and structural metadata used to pick a pseudoinverse strategy.
pub struct SparsifyingTransform {
    op: Box<dyn LinOp>,
    kernel: DenseMatrix,
    bandwidth: Option<usize>,
    grid: Option<(usize, usize)>,
}

impl SparsifyingTransform {
    /// Wraps an operator with an explicitly provided kernel basis. The basis
    /// columns are orthonormalized internally; each must satisfy `R w = 0`.
    pub fn new(
        op: Box<dyn LinOp>,
        kernel_columns: DenseMatrix,
        bandwidth: Option<usize>,
        grid: Option<(usize, usize)>,
    ) -> Result<Self> {
        let kernel = if kernel_columns.cols() == 0 {
            kernel_columns
        } else {
            orthonormalize(&kernel_columns)?
        };
        if kernel.rows() != op.cols() {
            return Err(GiasError::Dimension(
                "kernel basis rows must match operator columns".into(),
            ));
        }
        for j in 0..kernel.cols() {
            let col = kernel.column(j);
            let img = op.apply(&col);
            let norm = crate::operators::norm2(&img);
            if norm > 1e-10 {
                return Err(GiasError::InvalidArgument(format!(
                    "kernel basis column {j} is not annihilated by R (|R w| = {norm:.2e})"
                )));
            }
        }
        Ok(Self { op, kernel, bandwidth, grid })
    }

    pub fn op(&self) -> &dyn LinOp {
        self.op.as_ref()
    }

    /// Orthonormal kernel basis `W` (`N x P`), possibly with zero columns.
    pub fn kernel_basis(&self) -> &DenseMatrix {
        &self.kernel
    }

    pub fn kernel_dim(&self) -> usize {
        self.kernel.cols()
    }

    /// Bandwidth of `R^T R` when it is banded.
    pub fn bandwidth(&self) -> Option<usize> {
        self.bandwidth
    }

    /// Grid shape for transforms defined on 2D grids.
    pub fn grid(&self) -> Option<(usize, usize)> {
        self.grid
    }

    pub fn rows(&self) -> usize {
        self.op.rows()
    }

    pub fn cols(&self) -> usize {
        self.op.cols()
    }
}

/// Orthonormalizes the columns of `m` by thin QR, failing on rank deficiency.
fn orthonormalize(m: &DenseMatrix) -> Result<DenseMatrix> {
    let qr = m.to_nalgebra().qr();
    let q = qr.q();
    let r = qr.r();
    for j in 0..r.ncols().min(r.nrows()) {
        if r[(j, j)].abs() < 1e-12 {
            return Err(GiasError::InvalidArgument(
                "kernel basis columns are linearly dependent".into(),
            ));
        }
    }
    Ok(DenseMatrix::from_nalgebra(&q.columns(0, m.cols()).into()))
}

/// Discrete derivative operator of the given order on `n` points:
/// `R` is `(n-order) x n` with stencil `[-1,1]`, `[-1,2,-1]` or `[-1,3,-3,1]`,
/// and the kernel is spanned by the polynomials of degree `< order`.
pub fn derivative_operator(order: usize, n: usize) -> Result<SparsifyingTransform> {
    let stencil: Vec<f64> = match order {
        1 => vec![-1.0, 1.0],
        2 => vec![-1.0, 2.0, -1.0],
        3 => vec![-1.0, 3.0, -3.0, 1.0],
        _ => {
            return Err(GiasError::InvalidArgument(format!(
                "derivative order must be 1, 2 or 3, got {order}"
            )))
        }
    };
    if n <= order + 1 {
        return Err(GiasError::InvalidArgument(format!(
            "derivative operator of order {order} needs n > {}, got {n}",
            order + 1
        )));
    }
    let mut poly = DenseMatrix::zeros(n, order);
    for i in 0..n {
        let k = (i + 1) as f64;
        for j in 0..order {
            poly[(i, j)] = match j {
                0 => 1.0,
                1 => k,
                _ => k * (k + 1.0) / 2.0,
            };
        }
    }
    SparsifyingTransform::new(
        Box::new(StencilOp { n, stencil, zero_pad_rows: 0 }),
        poly,
        Some(order),
        None,
    )
}

/// Square 1D first-difference operator with reflexive boundary conditions:
/// the `(L-1) x L` first difference padded with a final zero row.
pub fn neumann_gradient_1d(l: usize) -> Result<SparsifyingTransform> {
    if l < 2 {
        return Err(GiasError::InvalidArgument(format!(
            "1D Neumann gradient needs at least 2 points, got {l}"
        )));
    }
    let mut ones = DenseMatrix::zeros(l, 1);
    for i in 0..l {
        ones[(i, 0)] = 1.0;
    }
    SparsifyingTransform::new(
        Box::new(StencilOp { n: l, stencil: vec![-1.0, 1.0], zero_pad_rows: 1 }),
        ones,
        Some(1),
        None,
    )
}

/// Anisotropic 2D gradient with Neumann boundary conditions on an
/// `n1 x n2` grid. `R` has shape `2N x N` for `N = n1 n2`; its kernel is the
/// span of the constant image, and `R^T R` has bandwidth `n2`.
pub fn neumann_gradient_2d(n1: usize, n2: usize) -> Result<SparsifyingTransform> {
    if n1 < 2 || n2 < 2 {
        return Err(GiasError::InvalidArgument(format!(
            "2D Neumann gradient needs at least a 2x2 grid, got {n1}x{n2}"
        )));
    }
    let n = n1 * n2;
    let mut ones = DenseMatrix::zeros(n, 1);
    for i in 0..n {
        ones[(i, 0)] = 1.0;
    }
    SparsifyingTransform::new(
        Box::new(Neumann2dOp { n1, n2 }),
        ones,
        Some(n2),
        Some((n1, n2)),
    )
}

/// The theta-weighted transform `R_theta = D_theta^{-1/2} R`.
pub struct WeightedTransform<'a> {
    base: &'a SparsifyingTransform,
    theta: Vec<f64>,
    inv_sqrt_theta: Vec<f64>,
}

/// Builds `R_theta = D_theta^{-1/2} R` for positive weights `theta`.
pub fn weight<'a>(
    base: &'a SparsifyingTransform,
    theta: &[f64],
) -> Result<WeightedTransform<'a>> {
    if theta.len() != base.rows() {
        return Err(GiasError::Dimension(format!(
            "theta must have length {}, got {}",
            base.rows(),
            theta.len()
        )));
    }
    if theta.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return Err(GiasError::InvalidArgument(
            "theta entries must be positive and finite".into(),
        ));
    }
    Ok(WeightedTransform {
        base,
        theta: theta.to_vec(),
        inv_sqrt_theta: theta.iter().map(|t| 1.0 / t.sqrt()).collect(),
    })
}

impl WeightedTransform<'_> {
    pub fn base(&self) -> &SparsifyingTransform {
        self.base
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Applies `R_theta^T R_theta = R^T D_theta^{-1} R`.
    pub fn normal_apply(&self, v: &[f64]) -> Vec<f64> {
        let mut u = self.base.op().apply(v);
        for (x, s) in u.iter_mut().zip(&self.inv_sqrt_theta) {
            *x *= s * s;
        }
        self.base.op().apply_adjoint(&u)
    }
}

impl LinOp for WeightedTransform<'_> {
    fn rows(&self) -> usize {
        self.base.rows()
    }
    fn cols(&self) -> usize {
        self.base.cols()
    }
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = self.base.op().apply(v);
        for (x, s) in out.iter_mut().zip(&self.inv_sqrt_theta) {
            *x *= s;
        }
        out
    }
    fn apply_adjoint(&self, u: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = u.iter().zip(&self.inv_sqrt_theta).map(|(x, s)| x * s).collect();
        self.base.op().apply_adjoint(&scaled)
    }
}

/// Numerically checks the common kernel condition `ker(F) ∩ ker(R) = {0}`.
///
/// At desk scale this looks at the smallest singular value of the stacked
/// `[F; R]`. Beyond that, since `W` spans `ker(R)` exactly, the condition is
/// equivalent to `F W` having full column rank, which is cheap for small
/// kernel dimension.
pub fn common_kernel_check(f: &dyn LinOp, r: &SparsifyingTransform) -> bool {
    if f.cols() != r.cols() {
        return false;
    }
    let n = f.cols();
    let stacked_entries = (f.rows() + r.rows()).saturating_mul(n);
    if stacked_entries <= 40_000 {
        let id_weight = 1.0;
        let stack = match crate::operators::stack_scaled(f, id_weight, r.op(), id_weight) {
            Ok(s) => s,
            Err(_) => return false,
        };
        let dense = match to_dense(&stack) {
            Ok(d) => d,
            Err(_) => return false,
        };
        let svd = dense.to_nalgebra().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        return smin > 1e-8 * smax;
    }
    // Large problems: check that F W has full column rank P.
    let p = r.kernel_dim();
    if p == 0 {
        return true;
    }
    let mut fw = DenseMatrix::zeros(f.rows(), p);
    for j in 0..p {
        let col = f.apply(&r.kernel_basis().column(j));
        for i in 0..f.rows() {
            fw[(i, j)] = col[i];
        }
    }
    let svd = fw.to_nalgebra().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    smax > 0.0 && smin > 1e-8 * smax
}
