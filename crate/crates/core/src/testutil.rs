//! Shared helpers for unit tests: random data and dense oracles.

use crate::operators::{dot, to_dense, DenseMatrix, LinOp};
use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn rand_dense(rng: &mut impl Rng, m: usize, n: usize) -> DenseMatrix {
    DenseMatrix::from_rows(m, n, rand_vec(rng, m * n)).unwrap()
}

/// Monte-Carlo adjoint consistency check over random vector pairs.
pub fn check_adjoint(op: &dyn LinOp, trials: usize, tol: f64) {
    let mut rng = rng(7);
    for _ in 0..trials {
        let u = rand_vec(&mut rng, op.cols());
        let v = rand_vec(&mut rng, op.rows());
        let lhs = dot(&op.apply(&u), &v);
        let rhs = dot(&u, &op.apply_adjoint(&v));
        let scale = lhs.abs().max(rhs.abs()).max(1.0);
        assert!((lhs - rhs).abs() <= tol * scale, "adjoint mismatch: {lhs} vs {rhs}");
    }
}

/// Dense SVD pseudoinverse oracle.
pub fn dense_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().svd(true, true).pseudo_inverse(1e-12).unwrap()
}

/// Dense pseudoinverse of a matrix-free operator.
pub fn op_pinv(op: &dyn LinOp) -> DMatrix<f64> {
    dense_pinv(&to_dense(op).unwrap().to_nalgebra())
}

pub fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length mismatch");
    let scale = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-30);
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    assert!(
        diff <= tol * scale,
        "{what}: relative difference {:.3e} exceeds {tol:.1e}",
        diff / scale
    );
}
