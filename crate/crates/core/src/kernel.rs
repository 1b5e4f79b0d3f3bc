//! Squared-exponential covariance between centroid sets.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::Location;

/// Relative diagonal jitter added to Gram matrices before factorization.
pub const DEFAULT_JITTER: f64 = 1e-8;

/// Amplitude `alpha` and length scale `gamma` of
/// `k(x, x') = alpha² exp(-|x - x'|² / (2 gamma²))`.
///
/// Optimizers work on the logarithms; see [`SEKernelParams::from_log`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SEKernelParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl SEKernelParams {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite() && gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Validation(format!(
                "kernel parameters must be positive and finite (alpha={alpha}, gamma={gamma})"
            )));
        }
        Ok(SEKernelParams { alpha, gamma })
    }

    pub fn from_log(log_alpha: f64, log_gamma: f64) -> Self {
        SEKernelParams {
            alpha: log_alpha.exp(),
            gamma: log_gamma.exp(),
        }
    }

    pub fn log_alpha(&self) -> f64 {
        self.alpha.ln()
    }

    pub fn log_gamma(&self) -> f64 {
        self.gamma.ln()
    }

    pub fn variance(&self) -> f64 {
        self.alpha * self.alpha
    }

    /// Correlation `exp(-d² / (2 gamma²))` for squared distance `d²`.
    #[inline]
    pub fn correlation(&self, sq_dist: f64) -> f64 {
        (-0.5 * sq_dist / (self.gamma * self.gamma)).exp()
    }
}

pub fn se_kernel(p: &SEKernelParams, x: &Location, x2: &Location) -> f64 {
    p.variance() * p.correlation(x.sq_dist(x2))
}

/// `|a| × |b|` covariance matrix with entries `se_kernel(p, a[i], b[j])`.
pub fn cov_matrix(p: &SEKernelParams, a: &[Location], b: &[Location]) -> DMatrix<f64> {
    let var = p.variance();
    DMatrix::from_fn(a.len(), b.len(), |i, j| var * p.correlation(a[i].sq_dist(&b[j])))
}

/// Symmetric covariance of a point set with itself; only the lower triangle
/// is evaluated.
pub fn gram_matrix(p: &SEKernelParams, a: &[Location]) -> DMatrix<f64> {
    let n = a.len();
    let var = p.variance();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        k[(j, j)] = var;
        for i in (j + 1)..n {
            let v = var * p.correlation(a[i].sq_dist(&a[j]));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

pub fn sq_dist_matrix(a: &[Location]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), a.len(), |i, j| a[i].sq_dist(&a[j]))
}

/// Per-axis affine standardization of coordinates. Fitted on the fine
/// centroids and applied to every point set before kernel evaluation, so
/// length scales are in standardized units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordTransform {
    pub mean: [f64; 2],
    pub scale: [f64; 2],
}

impl CoordTransform {
    pub fn identity() -> Self {
        CoordTransform {
            mean: [0.0, 0.0],
            scale: [1.0, 1.0],
        }
    }

    /// Zero mean and unit (population) variance per axis. An axis without
    /// spread keeps scale 1.
    pub fn standardizing(points: &[Location]) -> Self {
        if points.is_empty() {
            return CoordTransform::identity();
        }
        let n = points.len() as f64;
        let m1 = points.iter().map(|p| p.x1).sum::<f64>() / n;
        let m2 = points.iter().map(|p| p.x2).sum::<f64>() / n;
        let s1 = (points.iter().map(|p| (p.x1 - m1).powi(2)).sum::<f64>() / n).sqrt();
        let s2 = (points.iter().map(|p| (p.x2 - m2).powi(2)).sum::<f64>() / n).sqrt();
        let fix = |s: f64| if s > 0.0 && s.is_finite() { s } else { 1.0 };
        CoordTransform {
            mean: [m1, m2],
            scale: [fix(s1), fix(s2)],
        }
    }

    pub fn apply(&self, p: &Location) -> Location {
        Location::new(
            (p.x1 - self.mean[0]) / self.scale[0],
            (p.x2 - self.mean[1]) / self.scale[1],
        )
    }

    pub fn apply_all(&self, points: &[Location]) -> Vec<Location> {
        points.iter().map(|p| self.apply(p)).collect()
    }
}

/// Median of pairwise Euclidean distances, used to initialise length scales.
pub fn median_pairwise_distance(points: &[Location]) -> f64 {
    let mut d: Vec<f64> = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            d.push(points[i].sq_dist(&points[j]).sqrt());
        }
    }
    d.retain(|v| *v > 0.0);
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len() / 2;
    if d.len().is_multiple_of(2) {
        0.5 * (d[m - 1] + d[m])
    } else {
        d[m]
    }
}
