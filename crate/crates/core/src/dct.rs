//! Orthonormal type-II discrete cosine transforms.
//!
//! The scaling is chosen so that the transform matrix `B` satisfies
//! `B^T = B^{-1}` exactly, which is what the spectral preconditioner needs:
//! the unweighted Neumann Laplacian diagonalizes as `R^T R = B^T Λ B`.
//! The fast kernels come from `rustdct`; this module wraps them with the
//! orthonormal scaling and the separable row/column sweep for 2D grids.

use rustdct::{DctPlanner, TransformType2And3};
use std::sync::Arc;

/// Orthonormal DCT-II and its inverse (DCT-III) for a fixed length.
pub struct Dct1d {
    len: usize,
    plan: Arc<dyn TransformType2And3<f64>>,
    scale0: f64,
    scale: f64,
}

impl Dct1d {
    pub fn new(len: usize) -> Self {
        assert!(len >= 1);
        let plan = DctPlanner::new().plan_dct2(len);
        Self {
            len,
            plan,
            scale0: (1.0 / len as f64).sqrt(),
            scale: (2.0 / len as f64).sqrt(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    /// In-place orthonormal DCT-II.
    pub fn forward(&self, buf: &mut [f64]) {
        assert_eq!(buf.len(), self.len);
        self.plan.process_dct2(buf);
        buf[0] *= self.scale0;
        for x in &mut buf[1..] {
            *x *= self.scale;
        }
    }

    /// In-place inverse (the transpose of [`Self::forward`]).
    pub fn inverse(&self, buf: &mut [f64]) {
        assert_eq!(buf.len(), self.len);
        buf[0] *= self.scale0;
        for x in &mut buf[1..] {
            *x *= self.scale;
        }
        let z0 = buf[0];
        self.plan.process_dct3(buf);
        for x in buf.iter_mut() {
            *x += 0.5 * z0;
        }
    }
}

/// Separable orthonormal 2D DCT-II on a row-major `n1 x n2` grid.
pub struct Dct2d {
    n1: usize,
    n2: usize,
    row: Dct1d,
    col: Dct1d,
}

impl Dct2d {
    pub fn new(n1: usize, n2: usize) -> Self {
        Self { n1, n2, row: Dct1d::new(n2), col: Dct1d::new(n1) }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    fn sweep(&self, buf: &mut [f64], forward: bool) {
        let (n1, n2) = (self.n1, self.n2);
        assert_eq!(buf.len(), n1 * n2);
        for i in 0..n1 {
            let row = &mut buf[i * n2..(i + 1) * n2];
            if forward {
                self.row.forward(row);
            } else {
                self.row.inverse(row);
            }
        }
        let mut col = vec![0.0; n1];
        for j in 0..n2 {
            for i in 0..n1 {
                col[i] = buf[i * n2 + j];
            }
            if forward {
                self.col.forward(&mut col);
            } else {
                self.col.inverse(&mut col);
            }
            for i in 0..n1 {
                buf[i * n2 + j] = col[i];
            }
        }
    }

    /// In-place orthonormal 2D DCT-II.
    pub fn forward(&self, buf: &mut [f64]) {
        self.sweep(buf, true);
    }

    /// In-place inverse 2D transform.
    pub fn inverse(&self, buf: &mut [f64]) {
        self.sweep(buf, false);
    }
}
