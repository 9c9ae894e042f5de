//! Matrix-free linear operators.
//!
//! Everything downstream (forward models, sparsifying transforms, stacked
//! least squares systems) is expressed through the [`LinOp`] trait: a shape
//! plus `apply` and `apply_adjoint`. Operators are immutable after
//! construction and safe to share across threads; matvecs are pure functions
//! of their inputs.
//!
//! [`DenseMatrix`] is the desk-scale companion used to build test oracles
//! (SVD, QR, eigendecompositions via nalgebra) and is never on the solve
//! path; [`to_dense`] is size-guarded accordingly.

use crate::{GiasError, Result};
use nalgebra::DMatrix;

/// A real linear map `R^cols -> R^rows` with an exact adjoint.
///
/// Implementations must satisfy `<apply(u), v> = <u, apply_adjoint(v)>` for
/// all `u`, `v`. Matvecs panic on dimension mismatch.
pub trait LinOp: Send + Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;

    /// Computes `A v`. Panics unless `v.len() == self.cols()`.
    fn apply(&self, v: &[f64]) -> Vec<f64>;

    /// Computes `A^T u`. Panics unless `u.len() == self.rows()`.
    fn apply_adjoint(&self, u: &[f64]) -> Vec<f64>;
}

/// Dense row-major matrix with `f64` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Builds from row-major entries, rejecting non-finite values.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(GiasError::Dimension(format!(
                "expected {} entries for a {}x{} matrix, got {}",
                rows * cols,
                rows,
                cols,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(GiasError::InvalidArgument("non-finite matrix entry".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn matvec_t(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.rows, "adjoint matvec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let ui = u[i];
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * ui;
            }
        }
        out
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_nalgebra(m: &DMatrix<f64>) -> Self {
        let mut out = Self::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out[(i, j)] = m[(i, j)];
            }
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl LinOp for DenseMatrix {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.matvec(v)
    }
    fn apply_adjoint(&self, u: &[f64]) -> Vec<f64> {
        self.matvec_t(u)
    }
}

/// The identity on `R^n`.
#[derive(Debug, Clone, Copy)]
pub struct Identity {
    n: usize,
}

impl Identity {
    pub fn new(n: usize) -> Self {
        Self { n }
    }
}

impl LinOp for Identity {
    fn rows(&self) -> usize {
        self.n
    }
    fn cols(&self) -> usize {
        self.n
    }
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n, "identity dimension mismatch");
        v.to_vec()
    }
    fn apply_adjoint(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.n, "identity dimension mismatch");
        u.to_vec()
    }
}

/// Vertical stack `[a*top; b*bottom]` of two operators with row-block scaling.
///
/// This is the shape of the regularized least squares systems solved in the
/// x-update, e.g. `[nu^{-1/2} F; D_theta^{-1/2} R]`.
pub struct ScaledStack<'a> {
    top: &'a dyn LinOp,
    top_weight: f64,
    bottom: &'a dyn LinOp,
    bottom_weight: f64,
}

/// Stacks `top` over `bottom` with per-block scalar weights.
pub fn stack_scaled<'a>(
    top: &'a dyn LinOp,
    top_weight: f64,
    bottom: &'a dyn LinOp,
    bottom_weight: f64,
) -> Result<ScaledStack<'a>> {
    if top.cols() != bottom.cols() {
        return Err(GiasError::Dimension(format!(
            "stacked blocks must share a column count: {} vs {}",
            top.cols(),
            bottom.cols()
        )));
    }
    Ok(ScaledStack { top, top_weight, bottom, bottom_weight })
}

impl LinOp for ScaledStack<'_> {
    fn rows(&self) -> usize {
        self.top.rows() + self.bottom.rows()
    }
    fn cols(&self) -> usize {
        self.top.cols()
    }
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols(), "stack dimension mismatch");
        let mut out = self.top.apply(v);
        out.iter_mut().for_each(|x| *x *= self.top_weight);
        let mut bot = self.bottom.apply(v);
        bot.iter_mut().for_each(|x| *x *= self.bottom_weight);
        out.extend_from_slice(&bot);
        out
    }
    fn apply_adjoint(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.rows(), "stack dimension mismatch");
        let (ut, ub) = u.split_at(self.top.rows());
        let mut out = self.top.apply_adjoint(ut);
        let bot = self.bottom.apply_adjoint(ub);
        for (o, b) in out.iter_mut().zip(&bot) {
            *o = self.top_weight * *o + self.bottom_weight * *b;
        }
        out
    }
}

/// Kronecker product `A (x) B` applied without materializing the product.
pub struct KronOp<'a> {
    a: &'a dyn LinOp,
    b: &'a dyn LinOp,
}

impl<'a> KronOp<'a> {
    pub fn new(a: &'a dyn LinOp, b: &'a dyn LinOp) -> Self {
        Self { a, b }
    }
}

impl LinOp for KronOp<'_> {
    fn rows(&self) -> usize {
        self.a.rows() * self.b.rows()
    }
    fn cols(&self) -> usize {
        self.a.cols() * self.b.cols()
    }
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        kron_apply(self.a, self.b, v)
    }
    fn apply_adjoint(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.rows(), "kron dimension mismatch");
        // (A (x) B)^T = A^T (x) B^T, applied with the same reshape trick.
        let (ar, br) = (self.a.rows(), self.b.rows());
        let (ac, bc) = (self.a.cols(), self.b.cols());
        let mut z = vec![0.0; ar * bc];
        for i in 0..ar {
            let row = self.b.apply_adjoint(&u[i * br..(i + 1) * br]);
            z[i * bc..(i + 1) * bc].copy_from_slice(&row);
        }
        let mut out = vec![0.0; ac * bc];
        let mut col = vec![0.0; ar];
        for j in 0..bc {
            for i in 0..ar {
                col[i] = z[i * bc + j];
            }
            let t = self.a.apply_adjoint(&col);
            for i in 0..ac {
                out[i * bc + j] = t[i];
            }
        }
        out
    }
}

/// Computes `(A (x) B) v` by reshape-multiply-reshape.
///
/// With `v` viewed row-major as an `A.cols x B.cols` matrix `X`, the result
/// is `A X B^T` flattened row-major.
pub fn kron_apply(a: &dyn LinOp, b: &dyn LinOp, v: &[f64]) -> Vec<f64> {
    assert_eq!(v.len(), a.cols() * b.cols(), "kron dimension mismatch");
    let (ar, ac) = (a.rows(), a.cols());
    let (br, bc) = (b.rows(), b.cols());
    // Z = X B^T: apply B to each row of X.
    let mut z = vec![0.0; ac * br];
    for i in 0..ac {
        let row = b.apply(&v[i * bc..(i + 1) * bc]);
        z[i * br..(i + 1) * br].copy_from_slice(&row);
    }
    // Y = A Z: apply A to each column of Z.
    let mut out = vec![0.0; ar * br];
    let mut col = vec![0.0; ac];
    for j in 0..br {
        for i in 0..ac {
            col[i] = z[i * br + j];
        }
        let t = a.apply(&col);
        for i in 0..ar {
            out[i * br + j] = t[i];
        }
    }
    out
}

/// Entry-count guard for [`to_dense`]; oracles only run at desk scale.
pub const TO_DENSE_GUARD: usize = 4_000_000;

/// Materializes an operator column by column by applying it to basis vectors.
///
/// Test-oracle machinery; guarded to [`TO_DENSE_GUARD`] entries and never
/// used on the solve path.
pub fn to_dense(op: &dyn LinOp) -> Result<DenseMatrix> {
    let (m, n) = (op.rows(), op.cols());
    if m.saturating_mul(n) > TO_DENSE_GUARD {
        return Err(GiasError::SizeGuard(format!(
            "{}x{} operator exceeds the to_dense guard of {} entries",
            m, n, TO_DENSE_GUARD
        )));
    }
    let mut out = DenseMatrix::zeros(m, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = op.apply(&e);
        e[j] = 0.0;
        for i in 0..m {
            out[(i, j)] = col[i];
        }
    }
    Ok(out)
}

/// Euclidean inner product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{check_adjoint, rand_dense, rand_vec};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_apply_roundtrip() {
        let id = Identity::new(3);
        assert_eq!(id.apply(&[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0]);
        assert_eq!(id.apply_adjoint(&[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn zero_in_zero_out_and_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_dense(&mut rng, 5, 4);
        assert!(a.apply(&vec![0.0; 4]).iter().all(|&x| x == 0.0));
        let u = rand_vec(&mut rng, 4);
        let v = rand_vec(&mut rng, 4);
        let (alpha, beta) = (0.3, -1.7);
        let combo: Vec<f64> = u.iter().zip(&v).map(|(x, y)| alpha * x + beta * y).collect();
        let lhs = a.apply(&combo);
        let au = a.apply(&u);
        let av = a.apply(&v);
        for i in 0..5 {
            let rhs = alpha * au[i] + beta * av[i];
            assert!((lhs[i] - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn dense_adjoint_matches_transpose_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_dense(&mut rng, 6, 4);
        let at = a.transpose();
        let u = rand_vec(&mut rng, 6);
        let lhs = a.apply_adjoint(&u);
        let rhs = at.apply(&u);
        for (x, y) in lhs.iter().zip(&rhs) {
            assert!((x - y).abs() < 1e-14);
        }
        check_adjoint(&a, 100, 1e-10);
    }

    #[test]
    fn stack_scaled_basic() {
        let id = Identity::new(2);
        let s = stack_scaled(&id, 1.0, &id, 1.0).unwrap();
        assert_eq!(s.apply(&[1.0, 2.0]), vec![1.0, 2.0, 1.0, 2.0]);

        let s0 = stack_scaled(&id, 0.0, &id, 1.0).unwrap();
        assert_eq!(s0.apply(&[1.0, 2.0]), vec![0.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn stack_scaled_rejects_column_mismatch() {
        let a = Identity::new(2);
        let b = Identity::new(3);
        assert!(stack_scaled(&a, 1.0, &b, 1.0).is_err());
    }

    #[test]
    fn stack_adjoint_is_weighted_sum_of_adjoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_dense(&mut rng, 3, 4);
        let b = rand_dense(&mut rng, 5, 4);
        let (wa, wb) = (0.7, -2.1);
        let s = stack_scaled(&a, wa, &b, wb).unwrap();
        let u = rand_vec(&mut rng, 8);
        let lhs = s.apply_adjoint(&u);
        // Oracle: assemble the dense stack and transpose it.
        let sd = to_dense(&s).unwrap();
        let rhs = sd.matvec_t(&u);
        for (x, y) in lhs.iter().zip(&rhs) {
            assert!((x - y).abs() < 1e-12);
        }
        check_adjoint(&s, 50, 1e-10);
    }

    #[test]
    fn to_dense_stack_equals_block_assembly_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_dense(&mut rng, 3, 4);
        let b = rand_dense(&mut rng, 2, 4);
        let (wa, wb) = (2.0, 0.5);
        let s = stack_scaled(&a, wa, &b, wb).unwrap();
        let sd = to_dense(&s).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                assert_eq!(sd[(i, j)], wa * a[(i, j)]);
            }
        }
        for i in 0..2 {
            for j in 0..4 {
                assert_eq!(sd[(3 + i, j)], wb * b[(i, j)]);
            }
        }
    }

    /// Dense Kronecker oracle: kron(A, B) assembled entrywise.
    fn dense_kron(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(a.rows() * b.rows(), a.cols() * b.cols());
        for ia in 0..a.rows() {
            for ja in 0..a.cols() {
                for ib in 0..b.rows() {
                    for jb in 0..b.cols() {
                        out[(ia * b.rows() + ib, ja * b.cols() + jb)] = a[(ia, ja)] * b[(ib, jb)];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn kron_identity_is_identity() {
        let i2 = Identity::new(2);
        let k = KronOp::new(&i2, &i2);
        assert_eq!(k.apply(&[1.0, 2.0, 3.0, 4.0]), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn kron_apply_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand_dense(&mut rng, 3, 3);
        let b = rand_dense(&mut rng, 3, 3);
        let v = rand_vec(&mut rng, 9);
        let lhs = kron_apply(&a, &b, &v);
        let rhs = dense_kron(&a, &b).matvec(&v);
        for (x, y) in lhs.iter().zip(&rhs) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn kron_adjoint_matches_transposed_kron() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = rand_dense(&mut rng, 2, 4);
        let b = rand_dense(&mut rng, 3, 2);
        let k = KronOp::new(&a, &b);
        let u = rand_vec(&mut rng, k.rows());
        let lhs = k.apply_adjoint(&u);
        let rhs = dense_kron(&a.transpose(), &b.transpose()).matvec(&u);
        for (x, y) in lhs.iter().zip(&rhs) {
            assert!((x - y).abs() < 1e-12);
        }
        check_adjoint(&k, 50, 1e-10);
    }

    #[test]
    fn to_dense_identity() {
        let d = to_dense(&Identity::new(2)).unwrap();
        assert_eq!(d.data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn to_dense_then_apply_equals_matrix_free_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = rand_dense(&mut rng, 4, 6);
        let b = rand_dense(&mut rng, 2, 6);
        let s = stack_scaled(&a, 1.5, &b, -0.5).unwrap();
        let sd = to_dense(&s).unwrap();
        let v = rand_vec(&mut rng, 6);
        let lhs = s.apply(&v);
        let rhs = sd.matvec(&v);
        for (x, y) in lhs.iter().zip(&rhs) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn to_dense_guard_rejects_huge_operators() {
        struct Huge;
        impl LinOp for Huge {
            fn rows(&self) -> usize {
                5000
            }
            fn cols(&self) -> usize {
                5000
            }
            fn apply(&self, _v: &[f64]) -> Vec<f64> {
                unreachable!()
            }
            fn apply_adjoint(&self, _u: &[f64]) -> Vec<f64> {
                unreachable!()
            }
        }
        assert!(matches!(to_dense(&Huge), Err(GiasError::SizeGuard(_))));
    }

    #[test]
    #[should_panic(expected = "dimension mismatch")]
    fn apply_panics_on_dimension_mismatch() {
        Identity::new(3).apply(&[1.0, 2.0]);
    }

    #[test]
    fn dense_rejects_non_finite() {
        assert!(DenseMatrix::from_rows(1, 2, vec![1.0, f64::NAN]).is_err());
    }
}
