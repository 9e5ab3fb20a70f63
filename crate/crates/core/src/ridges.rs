//! Mode finding by mean shift and ridge extraction by subspace-constrained
//! mean shift (SCMS).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{dist, Bounds, PointCloud};
use crate::density::DensityModel;
use crate::error::{Error, Result};
use crate::signatures::{signatures_at, SignatureVector};
use crate::spectral::{normal_projector, spectrum};

pub const DEFAULT_MAX_ITER: usize = 500;

/// Relative convergence tolerance; multiplied by the data diameter.
pub const DEFAULT_RELATIVE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    /// Stop once a step is no longer than this (data units).
    pub tol: f64,
    pub max_iter: usize,
}

impl Convergence {
    pub fn for_model(model: &DensityModel) -> Self {
        Self {
            tol: DEFAULT_RELATIVE_TOL * model.data().diameter().max(f64::MIN_POSITIVE),
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Destination of one mean-shift or SCMS trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgePoint {
    pub destination: Vec<f64>,
    pub origin_index: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Length of the final step.
    pub residual: f64,
    /// Signatures at the destination; `None` when they could not be evaluated.
    pub signature: Option<SignatureVector>,
    pub degenerate_gap: bool,
}

impl RidgePoint {
    /// `S_d` at the destination, zero when unavailable.
    pub fn signature_value(&self, d: usize) -> f64 {
        self.signature.as_ref().map_or(0.0, |s| s.get(d))
    }
}

/// Destinations of all mesh points for one ridge dimension.
#[derive(Debug, Clone)]
pub struct RidgeSet {
    pub d: usize,
    pub points: Vec<RidgePoint>,
    pub bandwidth: f64,
    pub n: usize,
    pub convergence: Convergence,
}

impl RidgeSet {
    pub fn converged(&self) -> impl Iterator<Item = &RidgePoint> {
        self.points.iter().filter(|p| p.converged)
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.destination.len())
    }
}

fn finish(
    model: &DensityModel,
    x: Vec<f64>,
    origin_index: usize,
    iterations: usize,
    converged: bool,
    residual: f64,
    degenerate_gap: bool,
) -> RidgePoint {
    let signature = signatures_at(model, &x).ok().map(|(s, _)| s);
    RidgePoint { destination: x, origin_index, iterations, converged, residual, signature, degenerate_gap }
}

/// Classical mean shift on `p`: repeatedly move to the kernel-weighted mean.
pub fn mean_shift(model: &DensityModel, start: &[f64], origin_index: usize, conv: Convergence) -> RidgePoint {
    let mut x = start.to_vec();
    let mut residual = f64::INFINITY;
    for it in 0..conv.max_iter {
        let Ok(next) = model.shift_target(&x) else {
            return finish(model, x, origin_index, it, false, residual, false);
        };
        residual = dist(&next, &x);
        x = next;
        if residual <= conv.tol {
            return finish(model, x, origin_index, it + 1, true, residual, false);
        }
    }
    finish(model, x, origin_index, conv.max_iter, false, residual, false)
}

/// SCMS on `log p`: the mean-shift step projected onto the span of the
/// eigenvectors of the `D - d` smallest Hessian eigenvalues.
pub fn scms(
    model: &DensityModel,
    d: usize,
    start: &[f64],
    origin_index: usize,
    conv: Convergence,
) -> Result<RidgePoint> {
    let dim = model.dim();
    if d >= dim {
        return Err(Error::RidgeDimension { d, dim });
    }
    if start.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, actual: start.len() });
    }
    let mut x = start.to_vec();
    let mut residual = f64::INFINITY;
    let mut degenerate = false;
    for it in 0..conv.max_iter {
        let Ok(local) = model.local(&x) else {
            return Ok(finish(model, x, origin_index, it, false, residual, degenerate));
        };
        let Ok(s) = spectrum(&local.hessian) else {
            return Ok(finish(model, x, origin_index, it, false, residual, degenerate));
        };
        degenerate |= s.degenerate_gap(d);
        let l = normal_projector(&s, d)?;
        let shift: Vec<f64> = local.shift_target.iter().zip(&x).map(|(m, xi)| m - xi).collect();
        let mut step = vec![0.0; dim];
        for (a, st) in step.iter_mut().enumerate() {
            *st = (0..dim).map(|b| l.matrix[(a, b)] * shift[b]).sum();
        }
        residual = step.iter().map(|v| v * v).sum::<f64>().sqrt();
        if residual <= conv.tol {
            return Ok(finish(model, x, origin_index, it, true, residual, degenerate));
        }
        x.iter_mut().zip(&step).for_each(|(xi, st)| *xi += st);
    }
    Ok(finish(model, x, origin_index, conv.max_iter, false, residual, degenerate))
}

/// Runs SCMS from every mesh point, in parallel, preserving mesh order.
pub fn estimate_ridge(model: &DensityModel, d: usize, mesh: &[Vec<f64>], conv: Convergence) -> Result<RidgeSet> {
    if mesh.is_empty() {
        return Err(Error::InvalidArgument("mesh is empty".into()));
    }
    let dim = model.dim();
    if d >= dim {
        return Err(Error::RidgeDimension { d, dim });
    }
    let points = mesh
        .par_iter()
        .enumerate()
        .map(|(i, m)| scms(model, d, m, i, conv))
        .collect::<Result<Vec<_>>>()?;
    Ok(RidgeSet { d, points, bandwidth: model.bandwidth(), n: model.n(), convergence: conv })
}

/// SCMS started from every data point.
pub fn estimate_ridge_from_data(model: &DensityModel, d: usize, conv: Convergence) -> Result<RidgeSet> {
    let mesh = model.data().to_rows();
    estimate_ridge(model, d, &mesh, conv)
}

/// Mean shift from every mesh point.
pub fn find_modes(model: &DensityModel, mesh: &[Vec<f64>], conv: Convergence) -> Vec<RidgePoint> {
    mesh.par_iter().enumerate().map(|(i, m)| mean_shift(model, m, i, conv)).collect()
}

/// Regular grid with `per_axis` nodes along every side of the box.
pub fn grid_mesh(bounds: &Bounds, per_axis: usize) -> Result<Vec<Vec<f64>>> {
    bounds.validate()?;
    if per_axis < 2 {
        return Err(Error::InvalidArgument("grid needs at least 2 nodes per axis".into()));
    }
    let dim = bounds.dim();
    let total = per_axis
        .checked_pow(dim as u32)
        .ok_or_else(|| Error::InvalidArgument("grid too large".into()))?;
    let step: Vec<f64> =
        (0..dim).map(|j| (bounds.hi[j] - bounds.lo[j]) / (per_axis - 1) as f64).collect();
    Ok((0..total)
        .map(|mut k| {
            (0..dim)
                .map(|j| {
                    let i = k % per_axis;
                    k /= per_axis;
                    bounds.lo[j] + i as f64 * step[j]
                })
                .collect()
        })
        .collect())
}

/// Convenience for callers holding a cloud rather than row vectors.
pub fn mesh_from_cloud(cloud: &PointCloud) -> Vec<Vec<f64>> {
    cloud.to_rows()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::ridge_residual;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn conv(tol: f64) -> Convergence {
        Convergence { tol, max_iter: 5000 }
    }

    fn pair_model(h: f64) -> DensityModel {
        DensityModel::new(PointCloud::from_flat(vec![-1.0, 1.0], 1).unwrap(), h).unwrap()
    }

    /// Local maxima of the density on a dense grid.
    fn grid_modes(model: &DensityModel, lo: f64, hi: f64, n: usize) -> Vec<f64> {
        let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        let ps: Vec<f64> = xs.iter().map(|x| model.density(&[*x]).unwrap()).collect();
        (1..n - 1).filter(|&i| ps[i] > ps[i - 1] && ps[i] >= ps[i + 1]).map(|i| xs[i]).collect()
    }

    #[test]
    fn single_point_mode_is_the_datum() {
        let model = DensityModel::new(PointCloud::from_rows(&[[0.7, -0.3]]).unwrap(), 0.5).unwrap();
        let r = mean_shift(&model, &[0.9, -0.1], 0, conv(1e-10));
        assert!(r.converged);
        assert!(dist(&r.destination, &[0.7, -0.3]) <= 1e-10);
    }

    #[test]
    fn pair_merges_or_splits_with_bandwidth() {
        let wide = pair_model(2.0);
        let modes = grid_modes(&wide, -3.0, 3.0, 6001);
        assert_eq!(modes.len(), 1);
        let r = mean_shift(&wide, &[0.1], 0, conv(1e-12));
        assert!(r.converged && (r.destination[0] - modes[0]).abs() < 2e-3 && r.destination[0].abs() < 1e-8);

        let narrow = pair_model(0.2);
        let modes = grid_modes(&narrow, -3.0, 3.0, 6001);
        assert_eq!(modes.len(), 2);
        let r = mean_shift(&narrow, &[0.9], 0, conv(1e-12));
        assert!(r.converged && (r.destination[0] - modes[1]).abs() < 2e-3);
    }

    #[test]
    fn mean_shift_never_decreases_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let coords: Vec<f64> = (0..120).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let model = DensityModel::new(PointCloud::from_flat(coords, 2).unwrap(), 0.4).unwrap();
        let mut x = vec![2.0, -1.5];
        let mut p = model.density(&x).unwrap();
        for _ in 0..200 {
            x = model.shift_target(&x).unwrap();
            let q = model.density(&x).unwrap();
            assert!(q >= p - 1e-12);
            p = q;
        }
    }

    #[test]
    fn scms_with_d_zero_is_mean_shift_on_log_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let coords: Vec<f64> = (0..80).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let model = DensityModel::new(PointCloud::from_flat(coords, 2).unwrap(), 0.5).unwrap();
        let a = scms(&model, 0, &[0.3, 0.4], 0, conv(1e-10)).unwrap();
        let b = mean_shift(&model, &[0.3, 0.4], 0, conv(1e-10));
        assert!(a.converged && b.converged);
        assert!(dist(&a.destination, &b.destination) < 1e-8);
    }

    #[test]
    fn scms_lands_on_symmetry_axis() {
        // Two equal Gaussian blobs at (0, +-1); the y-axis through them is a
        // ridge by symmetry.
        let model =
            DensityModel::new(PointCloud::from_rows(&[[0.0, 1.0], [0.0, -1.0]]).unwrap(), 0.9).unwrap();
        let r = scms(&model, 1, &[0.2, 0.3], 0, conv(1e-10)).unwrap();
        assert!(r.converged);
        assert!(r.destination[0].abs() <= 1e-3, "{:?}", r.destination);
        let diag = ridge_residual(&model, &r.destination, 1).unwrap();
        assert!(diag.residual <= 1e-6 && diag.lambda < 0.0);

        let again = scms(&model, 1, &r.destination, 0, conv(1e-10)).unwrap();
        assert!(again.iterations <= 1);
    }

    #[test]
    fn failed_start_is_flagged_not_raised() {
        let model = pair_model(0.1);
        let r = mean_shift(&model, &[1e6], 3, conv(1e-8));
        assert!(!r.converged);
        assert_eq!(r.origin_index, 3);
        let s = scms(&model, 0, &[1e6], 3, conv(1e-8)).unwrap();
        assert!(!s.converged);
    }

    #[test]
    fn estimate_ridge_preserves_order_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let coords: Vec<f64> = (0..200).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let model = DensityModel::silverman(PointCloud::from_flat(coords, 2).unwrap()).unwrap();
        let c = Convergence::for_model(&model);
        let a = estimate_ridge_from_data(&model, 1, c).unwrap();
        let b = estimate_ridge_from_data(&model, 1, c).unwrap();
        assert_eq!(a.points, b.points);
        assert!(a.points.iter().enumerate().all(|(i, p)| p.origin_index == i));
        assert!(estimate_ridge(&model, 1, &[], c).is_err());
        assert!(estimate_ridge(&model, 2, &model.data().to_rows(), c).is_err());
    }

    #[test]
    fn grid_mesh_covers_box() {
        let b = Bounds::new(vec![0.0, -1.0], vec![1.0, 1.0]).unwrap();
        let g = grid_mesh(&b, 3).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], vec![0.0, -1.0]);
        assert_eq!(g[8], vec![1.0, 1.0]);
        assert!(g.iter().all(|p| b.contains(p)));
    }
}
