//! Problem generators: test signals, phantoms, the parallel-beam Radon
//! projector, and synthetic data creation.
//!
//! Geometry conventions for the projector: the image lives on `[-1, 1]^2`
//! with square pixels of side `2/n` (row 0 at the top), view angles are
//! `phi_q = q pi / Q` measured from the positive y axis, and the detector
//! array spans the image diagonal `[-sqrt(2), sqrt(2)]`. Data synthesis for
//! tomography uses a finer grid than reconstruction so the two never share a
//! discrete operator.

use crate::operators::LinOp;
use crate::{GiasError, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Piecewise-smooth test signal: `2 sin(50 pi x) + 25 x` plus jumps of
/// `{0, +50, +120}` on `[0, 0.4)`, `[0.4, 0.7)`, `[0.7, 1]`, sampled at `n`
/// equispaced points in `[0, 1]`.
pub fn piecewise_signal(n: usize) -> Vec<f64> {
    assert!(n >= 2, "signal needs at least two samples");
    (0..n)
        .map(|i| {
            let x = i as f64 / (n - 1) as f64;
            let jump = if x < 0.4 {
                0.0
            } else if x < 0.7 {
                50.0
            } else {
                120.0
            };
            2.0 * (50.0 * std::f64::consts::PI * x).sin() + 25.0 * x + jump
        })
        .collect()
}

/// Grayscale image with values in `[0, 1]`, row-major with row 0 on top.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// The standard (non-contrast-enhanced) ten-ellipse head phantom table:
/// `(intensity, semi-axis a, semi-axis b, center x, center y, angle in degrees)`.
/// Intensities are additive where ellipses overlap.
const SHEPP_LOGAN_ELLIPSES: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.98, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.02, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.02, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.01, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.01, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.01, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.01, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.01, 0.023, 0.023, 0.0, -0.605, 0.0),
    (0.01, 0.023, 0.046, 0.06, -0.605, 0.0),
];

/// Rasterizes the head phantom on an `n x n` grid over `[-1, 1]^2` by pixel
/// center sampling, clipping intensities to `[0, 1]`.
pub fn shepp_logan(n: usize) -> Result<Phantom> {
    if n < 16 {
        return Err(GiasError::InvalidArgument(format!(
            "phantom raster needs n >= 16, got {n}"
        )));
    }
    let h = 2.0 / n as f64;
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        let y = 1.0 - (i as f64 + 0.5) * h;
        for j in 0..n {
            let x = -1.0 + (j as f64 + 0.5) * h;
            let mut v = 0.0;
            for &(a0, a, b, x0, y0, deg) in &SHEPP_LOGAN_ELLIPSES {
                let phi = deg.to_radians();
                let (dx, dy) = (x - x0, y - y0);
                let u = dx * phi.cos() + dy * phi.sin();
                let w = -dx * phi.sin() + dy * phi.cos();
                if u * u / (a * a) + w * w / (b * b) <= 1.0 {
                    v += a0;
                }
            }
            data[i * n + j] = v.clamp(0.0, 1.0);
        }
    }
    Ok(Phantom { width: n, height: n, data })
}

/// Parallel-beam Radon transform with ray-driven exact pixel-ray
/// intersection lengths. Maps an `n x n` image (row-major) to a sinogram of
/// `angles x detectors` values (angle-major); the adjoint is the matching
/// back-projection.
pub struct RadonOp {
    n: usize,
    detectors: usize,
    angles: usize,
    /// Precomputed (sin, cos) per view angle.
    trig: Vec<(f64, f64)>,
}

/// Builds the projector for an `n x n` image, `detectors` detector pixels
/// spanning the image diagonal, and `angles` equispaced views in `[0, pi)`.
pub fn radon_parallel(n: usize, detectors: usize, angles: usize) -> RadonOp {
    assert!(n >= 1 && detectors >= 1 && angles >= 1);
    let trig = (0..angles)
        .map(|q| {
            let phi = q as f64 * std::f64::consts::PI / angles as f64;
            phi.sin_cos()
        })
        .collect();
    RadonOp { n, detectors, angles, trig }
}

impl RadonOp {
    pub fn image_size(&self) -> usize {
        self.n
    }

    pub fn detectors(&self) -> usize {
        self.detectors
    }

    pub fn angles(&self) -> usize {
        self.angles
    }

    /// Detector coordinate of bin `p` (bin centers across the diagonal).
    pub fn detector_coord(&self, p: usize) -> f64 {
        let span = 2.0 * std::f64::consts::SQRT_2;
        -std::f64::consts::SQRT_2 + (p as f64 + 0.5) * span / self.detectors as f64
    }

    /// Walks one ray through the pixel grid, reporting each traversed pixel
    /// index together with the exact intersection length.
    fn trace(&self, q: usize, p: usize, mut visit: impl FnMut(usize, f64)) {
        let n = self.n;
        let h = 2.0 / n as f64;
        let (sin_phi, cos_phi) = self.trig[q];
        let s = self.detector_coord(p);
        // Ray: point = s * u + t * d with u = (cos, -sin), d = (sin, cos).
        let (px, py) = (s * cos_phi, -s * sin_phi);
        let (dx, dy) = (sin_phi, cos_phi);

        // Clip against the image square.
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for (p0, d) in [(px, dx), (py, dy)] {
            if d.abs() < 1e-14 {
                if p0 <= -1.0 || p0 >= 1.0 {
                    return;
                }
            } else {
                let (a, b) = ((-1.0 - p0) / d, (1.0 - p0) / d);
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
        }
        if t0 >= t1 - 1e-14 {
            return;
        }

        // Next crossing of a vertical/horizontal grid line after t.
        let crossing_setup = |p0: f64, d: f64, t: f64| -> (f64, f64) {
            if d.abs() < 1e-14 {
                return (f64::INFINITY, f64::INFINITY);
            }
            let coord = p0 + t * d;
            let frac = (coord + 1.0) / h;
            let m = if d > 0.0 { frac.floor() + 1.0 } else { frac.ceil() - 1.0 };
            let tc = ((-1.0 + m * h) - p0) / d;
            (tc.max(t), h / d.abs())
        };
        let (mut tx, step_x) = crossing_setup(px, dx, t0);
        let (mut ty, step_y) = crossing_setup(py, dy, t0);

        let mut t = t0;
        while t < t1 - 1e-13 {
            let tn = tx.min(ty).min(t1);
            if tn > t + 1e-14 {
                // Identify the cell from the segment midpoint.
                let tm = 0.5 * (t + tn);
                let gx = ((px + tm * dx + 1.0) / h).floor();
                let gy = ((py + tm * dy + 1.0) / h).floor();
                if gx >= 0.0 && gy >= 0.0 && (gx as usize) < n && (gy as usize) < n {
                    let row = n - 1 - gy as usize;
                    visit(row * n + gx as usize, tn - t);
                }
            }
            t = tn;
            if tx <= t + 1e-14 {
                tx += step_x;
            }
            if ty <= t + 1e-14 {
                ty += step_y;
            }
        }
    }
}

impl LinOp for RadonOp {
    fn rows(&self) -> usize {
        self.angles * self.detectors
    }
    fn cols(&self) -> usize {
        self.n * self.n
    }
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols(), "radon dimension mismatch");
        let mut out = vec![0.0; self.rows()];
        for q in 0..self.angles {
            for p in 0..self.detectors {
                let mut acc = 0.0;
                self.trace(q, p, |pix, len| acc += len * v[pix]);
                out[q * self.detectors + p] = acc;
            }
        }
        out
    }
    fn apply_adjoint(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.rows(), "radon dimension mismatch");
        let mut out = vec![0.0; self.cols()];
        for q in 0..self.angles {
            for p in 0..self.detectors {
                let w = u[q * self.detectors + p];
                if w != 0.0 {
                    self.trace(q, p, |pix, len| out[pix] += len * w);
                }
            }
        }
        out
    }
}

/// Parameters of synthetic data generation.
#[derive(Debug, Clone)]
pub struct SynthesisSpec {
    /// Grid refinement factor of the synthesis operator relative to the
    /// reconstruction grid (tomography uses 3; identity problems use 1).
    pub fine_factor: usize,
    /// Noise variance of the additive Gaussian noise.
    pub noise_variance: f64,
    /// Seed of the (ChaCha8 + ziggurat) noise generator.
    pub seed: u64,
}

/// `y = F_fine x_fine + e` with `e ~ N(0, noise_variance I)` drawn from the
/// seeded generator. Deterministic for a fixed seed.
pub fn synthesize_data(
    forward_fine: &dyn LinOp,
    x_fine: &[f64],
    spec: &SynthesisSpec,
) -> Result<Vec<f64>> {
    if spec.noise_variance < 0.0 {
        return Err(GiasError::InvalidArgument("noise variance must be nonnegative".into()));
    }
    if spec.fine_factor < 1 {
        return Err(GiasError::InvalidArgument("fine_factor must be at least 1".into()));
    }
    let mut y = forward_fine.apply(x_fine);
    if spec.noise_variance > 0.0 {
        let sd = spec.noise_variance.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        for v in y.iter_mut() {
            *v += sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(y)
}

/// Noise variance used by the tomography experiment: 3% of the maximum of
/// the noiseless sinogram.
pub fn ct_noise_variance(clean_sinogram: &[f64]) -> f64 {
    0.03 * clean_sinogram.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}
