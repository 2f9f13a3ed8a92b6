//! Matérn 3/2 covariance with automatic relevance determination.
//!
//! Distances are measured after dividing each coordinate by its own length
//! scale, so the kernel itself is evaluated with a unit length scale:
//!
//! ```text
//! k(x, x') = sf² (1 + √3 r) exp(-√3 r),   r = ‖(x - x') / l‖
//! ```

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// GP hyperparameters. Positive quantities are stored as natural logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparams {
    pub log_lengthscales: Vec<f64>,
    pub log_signal_amplitude: f64,
    pub log_noise_std: f64,
    /// Constant prior mean, in objective units.
    pub mean_constant: f64,
}

impl KernelHyperparams {
    /// Builds hyperparameters from positive (non-log) values.
    pub fn new(lengthscales: &[f64], amplitude: f64, noise_std: f64, mean: f64) -> Result<Self> {
        let params = Self {
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
            log_signal_amplitude: amplitude.ln(),
            log_noise_std: noise_std.ln(),
            mean_constant: mean,
        };
        params.validate()?;
        Ok(params)
    }

    /// Same length scale on every axis.
    pub fn isotropic(dim: usize, lengthscale: f64, amplitude: f64, noise_std: f64, mean: f64) -> Result<Self> {
        Self::new(&vec![lengthscale; dim], amplitude, noise_std, mean)
    }

    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|l| l.exp()).collect()
    }

    pub fn signal_variance(&self) -> f64 {
        (2.0 * self.log_signal_amplitude).exp()
    }

    pub fn noise_variance(&self) -> f64 {
        (2.0 * self.log_noise_std).exp()
    }

    pub fn validate(&self) -> Result<()> {
        if self.log_lengthscales.is_empty() {
            return Err(Error::InvalidArgument("kernel needs at least one input dimension".into()));
        }
        let finite = self.log_lengthscales.iter().all(|v| v.is_finite())
            && self.log_signal_amplitude.is_finite()
            && self.log_noise_std.is_finite()
            && self.mean_constant.is_finite();
        let positive = self.lengthscales().iter().all(|&l| l > 0.0 && l.is_finite())
            && self.signal_variance() > 0.0
            && self.signal_variance().is_finite();
        if finite && positive {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("non-finite or non-positive hyperparameters: {self:?}")))
        }
    }
}

/// Length-scale weighted Euclidean distance between two points.
pub fn scaled_distance(x: &[f64], x_prime: &[f64], params: &KernelHyperparams) -> Result<f64> {
    check_dim(params.dim(), x.len())?;
    check_dim(params.dim(), x_prime.len())?;
    let sum: f64 = x
        .iter()
        .zip(x_prime)
        .zip(&params.log_lengthscales)
        .map(|((a, b), log_l)| {
            let t = (a - b) / log_l.exp();
            t * t
        })
        .sum();
    Ok(sum.sqrt())
}

/// Matérn 3/2 covariance at an already length-scaled distance `r`.
pub fn matern32(r: f64, params: &KernelHyperparams) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::InvalidArgument(format!("kernel distance must be >= 0, got {r}")));
    }
    Ok(params.signal_variance() * unit_matern32(r))
}

#[inline]
pub(crate) fn unit_matern32(r: f64) -> f64 {
    let s = SQRT3 * r;
    (1.0 + s) * (-s).exp()
}

/// Divides every coordinate by its length scale. Rows stay point-major.
pub(crate) fn scale_points(points: &[Vec<f64>], params: &KernelHyperparams) -> Result<Vec<Vec<f64>>> {
    let inv: Vec<f64> = params.log_lengthscales.iter().map(|l| (-l).exp()).collect();
    points
        .iter()
        .map(|p| {
            check_dim(inv.len(), p.len())?;
            Ok(p.iter().zip(&inv).map(|(v, s)| v * s).collect())
        })
        .collect()
}

#[inline]
pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let t = x - y;
            t * t
        })
        .sum::<f64>()
        .sqrt()
}

/// Symmetric Gram matrix of pre-scaled points, filled from the lower triangle.
pub(crate) fn gram_scaled(scaled: &[Vec<f64>], signal_variance: f64) -> DMatrix<f64> {
    let n = scaled.len();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        k[(j, j)] = signal_variance;
        for i in (j + 1)..n {
            let v = signal_variance * unit_matern32(euclid(&scaled[i], &scaled[j]));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cross-covariance `K(X, X')` with entry `(i, j) = k(X_i, X'_j)`.
///
/// When both arguments are the same slice the matrix is filled symmetrically.
pub fn covariance_matrix(xs: &[Vec<f64>], xs_prime: &[Vec<f64>], params: &KernelHyperparams) -> Result<DMatrix<f64>> {
    let a = scale_points(xs, params)?;
    let sf2 = params.signal_variance();
    if std::ptr::eq(xs, xs_prime) {
        return Ok(gram_scaled(&a, sf2));
    }
    let b = scale_points(xs_prime, params)?;
    Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| sf2 * unit_matern32(euclid(&a[i], &b[j]))))
}
