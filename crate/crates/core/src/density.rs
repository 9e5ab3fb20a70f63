//! Gaussian kernel density estimation with closed-form derivatives.
//!
//! All derivative quantities are computed from weighted moments of the data
//! around the evaluation point. Kernel weights are accumulated relative to the
//! largest weight seen so far, so evaluations far from the data degrade to a
//! zero density instead of producing `NaN`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Log-weights below this make the unshifted kernel sum underflow.
const MIN_LOG_WEIGHT: f64 = -708.0;

/// Normal-reference bandwidth `(4 / (n (D + 2)))^(1 / (D + 4)) * s`, where
/// `s^2` is the mean of the per-coordinate sample variances.
pub fn silverman_bandwidth(cloud: &PointCloud) -> Result<f64> {
    let n = cloud.len();
    if n < 2 {
        return Err(Error::InvalidCloud(format!("bandwidth needs at least 2 points, got {n}")));
    }
    let dim = cloud.dim() as f64;
    let mean_var = cloud.column_std().iter().map(|s| s * s).sum::<f64>() / dim;
    let s = mean_var.sqrt();
    if s <= 0.0 {
        return Err(Error::ZeroScale);
    }
    Ok((4.0 / (n as f64 * (dim + 2.0))).powf(1.0 / (dim + 4.0)) * s)
}

/// Immutable Gaussian KDE `p(x) = n^-1 sum_i h^-D K(|x - X_i| / h)`.
#[derive(Debug, Clone)]
pub struct DensityModel {
    data: PointCloud,
    bandwidth: f64,
    log_norm: f64,
}

/// Weighted moments of the data around an evaluation point.
///
/// Weights are `exp(-|x - X_i|^2 / 2h^2 - log_shift)`.
struct Moments {
    log_shift: f64,
    weight: f64,
    /// Weighted mean of `X_i - x`.
    first: Vec<f64>,
    /// Weighted mean of `(X_i - x)(X_i - x)^T`, row-major, when requested.
    second: Option<Vec<f64>>,
}

/// Density, log-density gradient and log-density Hessian at one point.
#[derive(Debug, Clone)]
pub struct LocalDensity {
    pub x: Vec<f64>,
    pub density: f64,
    pub log_density: f64,
    /// Gradient of `log p`.
    pub gradient: DVector<f64>,
    /// Hessian of `log p`.
    pub hessian: DMatrix<f64>,
    /// Mean-shift target: the kernel-weighted mean of the data.
    pub shift_target: Vec<f64>,
}

impl DensityModel {
    pub fn new(data: PointCloud, bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::InvalidBandwidth(bandwidth));
        }
        let dim = data.dim() as f64;
        let log_norm = (data.len() as f64).ln() + dim * bandwidth.ln() + 0.5 * dim * (2.0 * PI).ln();
        Ok(Self { data, bandwidth, log_norm })
    }

    /// Model with the normal-reference bandwidth.
    pub fn silverman(data: PointCloud) -> Result<Self> {
        let h = silverman_bandwidth(&data)?;
        Self::new(data, h)
    }

    pub fn data(&self) -> &PointCloud {
        &self.data
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    pub fn n(&self) -> usize {
        self.data.len()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: x.len() });
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("evaluation point has non-finite coordinates".into()));
        }
        Ok(())
    }

    fn moments(&self, x: &[f64], with_second: bool) -> Moments {
        let dim = self.dim();
        let inv_2h2 = 0.5 / (self.bandwidth * self.bandwidth);
        let coords = self.data.as_flat();
        let (log_shift, weight, mut first, mut second) = match dim {
            1 => raw_moments::<1>(coords, x, inv_2h2, with_second),
            2 => raw_moments::<2>(coords, x, inv_2h2, with_second),
            3 => raw_moments::<3>(coords, x, inv_2h2, with_second),
            _ => raw_moments_dyn(coords, x, inv_2h2, with_second),
        };

        first.iter_mut().for_each(|v| *v /= weight);
        let second = with_second.then(|| {
            second.resize(dim * dim, 0.0);
            for a in 0..dim {
                for b in a..dim {
                    let v = second[a * dim + b] / weight;
                    second[a * dim + b] = v;
                    second[b * dim + a] = v;
                }
            }
            second
        });
        Moments { log_shift, weight, first, second }
    }

    fn log_density_from(&self, m: &Moments) -> f64 {
        m.log_shift + m.weight.ln() - self.log_norm
    }

    /// Kernel density estimate at `x`.
    pub fn density(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let m = self.moments(x, false);
        Ok(self.log_density_from(&m).exp())
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let m = self.moments(x, false);
        self.supported(&m)?;
        Ok(self.log_density_from(&m))
    }

    fn supported(&self, m: &Moments) -> Result<()> {
        if m.log_shift < MIN_LOG_WEIGHT {
            Err(Error::OutsideSupport)
        } else {
            Ok(())
        }
    }

    /// Kernel-weighted mean of the data at `x`; the mean-shift update target.
    pub fn shift_target(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let m = self.moments(x, false);
        self.supported(&m)?;
        Ok(x.iter().zip(&m.first).map(|(xi, d)| xi + d).collect())
    }

    /// Gradient of `log p` at `x`: `(mu(x) - x) / h^2`.
    pub fn log_gradient(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_point(x)?;
        let m = self.moments(x, false);
        self.supported(&m)?;
        let h2 = self.bandwidth * self.bandwidth;
        Ok(DVector::from_iterator(self.dim(), m.first.iter().map(|d| d / h2)))
    }

    /// Hessian of `log p` at `x`: `Cov_w(X) / h^4 - I / h^2`.
    pub fn log_hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.local(x)?.hessian)
    }

    /// Hessian of `p` itself: `p(x) (E_w[dd^T] / h^4 - I / h^2)` with `d = X - x`.
    pub fn density_hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        let dim = self.dim();
        let m = self.moments(x, true);
        let p = self.log_density_from(&m).exp();
        let second = m.second.expect("second moments requested");
        let h2 = self.bandwidth * self.bandwidth;
        let h4 = h2 * h2;
        Ok(DMatrix::from_fn(dim, dim, |a, b| {
            let id = if a == b { 1.0 / h2 } else { 0.0 };
            p * (second[a * dim + b] / h4 - id)
        }))
    }

    /// Gradient of `p` itself.
    pub fn density_gradient(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_point(x)?;
        let m = self.moments(x, false);
        let p = self.log_density_from(&m).exp();
        let h2 = self.bandwidth * self.bandwidth;
        Ok(DVector::from_iterator(self.dim(), m.first.iter().map(|d| p * d / h2)))
    }

    /// Density, log-gradient and log-Hessian from a single pass over the data.
    pub fn local(&self, x: &[f64]) -> Result<LocalDensity> {
        self.check_point(x)?;
        let dim = self.dim();
        let m = self.moments(x, true);
        self.supported(&m)?;
        let log_density = self.log_density_from(&m);
        let h2 = self.bandwidth * self.bandwidth;
        let h4 = h2 * h2;
        let second = m.second.as_ref().expect("second moments requested");
        let first = &m.first;
        let hessian = DMatrix::from_fn(dim, dim, |a, b| {
            let cov = second[a * dim + b] - first[a] * first[b];
            let id = if a == b { 1.0 / h2 } else { 0.0 };
            cov / h4 - id
        });
        Ok(LocalDensity {
            x: x.to_vec(),
            density: log_density.exp(),
            log_density,
            gradient: DVector::from_iterator(dim, first.iter().map(|d| d / h2)),
            hessian,
            shift_target: x.iter().zip(first).map(|(xi, d)| xi + d).collect(),
        })
    }
}

/// Kernel-weighted zeroth, first and upper-triangular second moments of
/// `X_i - x`, with weights relative to the largest one. Returns the log of
/// that largest weight alongside.
fn raw_moments<const D: usize>(
    coords: &[f64],
    x: &[f64],
    inv_2h2: f64,
    with_second: bool,
) -> (f64, f64, Vec<f64>, Vec<f64>) {
    let x: [f64; D] = x.try_into().expect("dimension checked by caller");
    let mut log_shift = f64::NEG_INFINITY;
    let mut weight = 0.0;
    let mut first = [0.0; D];
    let mut second = [[0.0; D]; D];
    for p in coords.chunks_exact(D) {
        let mut delta = [0.0; D];
        let mut r2 = 0.0;
        for j in 0..D {
            delta[j] = p[j] - x[j];
            r2 += delta[j] * delta[j];
        }
        let lw = -r2 * inv_2h2;
        if lw > log_shift {
            // Rescale what has been accumulated so far to the new reference.
            let scale = (log_shift - lw).exp();
            weight *= scale;
            first.iter_mut().for_each(|v| *v *= scale);
            second.iter_mut().flatten().for_each(|v| *v *= scale);
            log_shift = lw;
        }
        let w = (lw - log_shift).exp();
        weight += w;
        for j in 0..D {
            first[j] += w * delta[j];
        }
        if with_second {
            for a in 0..D {
                let wa = w * delta[a];
                for b in a..D {
                    second[a][b] += wa * delta[b];
                }
            }
        }
    }
    let second = if with_second { second.iter().flatten().copied().collect() } else { Vec::new() };
    (log_shift, weight, first.to_vec(), second)
}

fn raw_moments_dyn(coords: &[f64], x: &[f64], inv_2h2: f64, with_second: bool) -> (f64, f64, Vec<f64>, Vec<f64>) {
    let dim = x.len();
    let mut log_shift = f64::NEG_INFINITY;
    let mut weight = 0.0;
    let mut first = vec![0.0; dim];
    let mut second = if with_second { vec![0.0; dim * dim] } else { Vec::new() };
    let mut delta = vec![0.0; dim];
    for p in coords.chunks_exact(dim) {
        let mut r2 = 0.0;
        for j in 0..dim {
            delta[j] = p[j] - x[j];
            r2 += delta[j] * delta[j];
        }
        let lw = -r2 * inv_2h2;
        if lw > log_shift {
            let scale = (log_shift - lw).exp();
            weight *= scale;
            first.iter_mut().for_each(|v| *v *= scale);
            second.iter_mut().for_each(|v| *v *= scale);
            log_shift = lw;
        }
        let w = (lw - log_shift).exp();
        weight += w;
        for j in 0..dim {
            first[j] += w * delta[j];
        }
        if with_second {
            for a in 0..dim {
                let wa = w * delta[a];
                for b in a..dim {
                    second[a * dim + b] += wa * delta[b];
                }
            }
        }
    }
    (log_shift, weight, first, second)
}
