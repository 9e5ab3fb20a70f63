//! Signature thresholds, Rips-graph components and small-component pruning.
//!
//! Null calibrations draw uniform reference samples on a box. Each
//! replication gets its own RNG stream derived from the base seed, so results
//! do not depend on the order in which replications run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{dist, sq_dist, Bounds, PointCloud};
use crate::density::{silverman_bandwidth, DensityModel};
use crate::error::{Error, Result};
use crate::ridges::{estimate_ridge_from_data, Convergence, RidgeSet};

/// Grid resolution of the heuristic threshold scan.
pub const HEURISTIC_GRID: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Heuristic,
    /// Heuristic found no interior minimum; the median was used.
    Fallback,
    NullMc,
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub provenance: Provenance,
}

/// Tuning parameters for one ridge dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub signature: Threshold,
    pub epsilon: f64,
    pub epsilon_provenance: Provenance,
    pub min_size: usize,
    pub min_size_provenance: Provenance,
}

/// A connected component of the Rips graph on sharp points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    /// Indices into the ridge set's points, ascending.
    pub members: Vec<usize>,
    pub kept: bool,
}

impl Component {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Filtered and clustered ridge points of one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub d: usize,
    /// Ridge-point indices with `S_d > T_d`.
    pub sharp_points: Vec<usize>,
    pub components: Vec<Component>,
    pub min_size: usize,
}

impl FeatureSet {
    pub fn kept(&self) -> impl Iterator<Item = &Component> {
        self.components.iter().filter(|c| c.kept)
    }

    pub fn kept_count(&self) -> usize {
        self.kept().count()
    }
}

/// Indices of ridge points whose `S_d` strictly exceeds `threshold`.
///
/// Non-converged points are skipped unless `include_unconverged` is set.
pub fn filter_sharp(ridge: &RidgeSet, threshold: f64, include_unconverged: bool) -> Vec<usize> {
    ridge
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| (p.converged || include_unconverged) && p.signature_value(ridge.d) > threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Rightmost interior local minimum of a 1D Gaussian KDE fitted to `values`.
///
/// The KDE uses the normal-reference bandwidth and is scanned on a regular
/// grid of [`HEURISTIC_GRID`] points over `[min, max]`. Falls back to the
/// median when the curve has no interior minimum.
pub fn threshold_heuristic(values: &[f64]) -> Result<Threshold> {
    if values.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "threshold heuristic needs at least 10 values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("signature values must be finite".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let fallback = Threshold { value: median(&sorted), provenance: Provenance::Fallback };

    let cloud = PointCloud::from_flat(sorted.clone(), 1)?;
    let Ok(h) = silverman_bandwidth(&cloud) else {
        return Ok(fallback);
    };
    let model = DensityModel::new(cloud, h)?;
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let grid: Vec<f64> =
        (0..HEURISTIC_GRID).map(|i| lo + (hi - lo) * i as f64 / (HEURISTIC_GRID - 1) as f64).collect();
    let dens = grid.iter().map(|x| model.density(&[*x])).collect::<Result<Vec<_>>>()?;

    // Scan right to left; a plateau counts as one minimum when both of its
    // neighbours are strictly higher.
    let mut i = HEURISTIC_GRID - 2;
    while i >= 1 {
        if dens[i] < dens[i + 1] {
            let mut j = i;
            while j >= 1 && dens[j - 1] == dens[i] {
                j -= 1;
            }
            if j >= 1 && dens[j - 1] > dens[i] {
                let value = 0.5 * (grid[j] + grid[i]);
                return Ok(Threshold { value, provenance: Provenance::Heuristic });
            }
            if j == 0 {
                break;
            }
            i = j - 1;
            continue;
        }
        i -= 1;
    }
    Ok(fallback)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Upper empirical quantile: the `ceil(q m)`-th order statistic (1-based).
pub fn empirical_quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("quantile of an empty sample".into()));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidArgument(format!("quantile must lie in (0, 1], got {q}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

/// Seed of the RNG stream for replication `rep`.
pub fn derive_seed(seed: u64, rep: u64) -> u64 {
    // SplitMix64 finaliser over the combined value.
    let mut z = seed ^ rep.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `n` i.i.d. uniform points on the box.
pub fn uniform_sample(domain: &Bounds, n: usize, seed: u64) -> Result<PointCloud> {
    domain.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::with_capacity(n * domain.dim());
    for _ in 0..n {
        domain.sample(&mut rng, &mut coords);
    }
    PointCloud::from_flat(coords, domain.dim())
}

/// Settings shared by the null Monte-Carlo calibrations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullSettings {
    pub reps: usize,
    pub quantile: f64,
    pub seed: u64,
}

impl NullSettings {
    fn validate(&self) -> Result<()> {
        if self.reps < 20 {
            return Err(Error::InvalidArgument(format!(
                "null calibration needs at least 20 replications, got {}",
                self.reps
            )));
        }
        if !(self.quantile > 0.0 && self.quantile <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "quantile must lie in (0, 1], got {}",
                self.quantile
            )));
        }
        Ok(())
    }
}

/// Maximum `S_d` over converged SCMS destinations of one uniform draw.
pub fn null_max_signature(
    domain: &Bounds,
    n: usize,
    h: f64,
    d: usize,
    seed: u64,
    rel_tol: Option<f64>,
) -> Result<f64> {
    let cloud = uniform_sample(domain, n, seed)?;
    let model = DensityModel::new(cloud, h)?;
    let mut conv = Convergence::for_model(&model);
    if let Some(t) = rel_tol {
        conv.tol = t * model.data().diameter();
    }
    let ridge = estimate_ridge_from_data(&model, d, conv)?;
    Ok(ridge.converged().map(|p| p.signature_value(d)).fold(0.0, f64::max))
}

/// Null Monte-Carlo signature threshold: an upper quantile of the maximum
/// signature over SCMS destinations of uniform samples on `domain`.
pub fn null_threshold_mc(
    domain: &Bounds,
    n: usize,
    h: f64,
    d: usize,
    settings: NullSettings,
) -> Result<Threshold> {
    settings.validate()?;
    domain.validate()?;
    let maxima = null_signature_maxima(domain, n, h, d, settings)?;
    Ok(Threshold { value: empirical_quantile(&maxima, settings.quantile)?, provenance: Provenance::NullMc })
}

/// The per-replication null maxima `tau_d`.
pub fn null_signature_maxima(
    domain: &Bounds,
    n: usize,
    h: f64,
    d: usize,
    settings: NullSettings,
) -> Result<Vec<f64>> {
    (0..settings.reps as u64)
        .into_par_iter()
        .map(|r| null_max_signature(domain, n, h, d, derive_seed(settings.seed, r), None))
        .collect()
}

/// Mean nearest-neighbour distance of `n` uniform points on the box,
/// averaged over `reps` draws.
pub fn rips_epsilon_null(domain: &Bounds, n: usize, reps: usize, seed: u64) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 points, got {n}")));
    }
    if reps == 0 {
        return Err(Error::InvalidArgument("need at least one replication".into()));
    }
    domain.validate()?;
    let means = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let cloud = uniform_sample(domain, n, derive_seed(seed, r))?;
            Ok(mean_nearest_neighbor(&cloud))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(means.iter().sum::<f64>() / reps as f64)
}

fn mean_nearest_neighbor(cloud: &PointCloud) -> f64 {
    let n = cloud.len();
    let total: f64 = (0..n)
        .map(|i| {
            let p = cloud.point(i);
            (0..n)
                .filter(|&j| j != i)
                .map(|j| sq_dist(p, cloud.point(j)))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    total / n as f64
}

/// Disjoint-set forest with path compression and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// Connected components of the Rips graph with edges `|y_i - y_j| <= eps`.
///
/// Members are listed ascending; components are ordered by decreasing size,
/// then by smallest member.
pub fn rips_components<P: AsRef<[f64]> + Sync>(points: &[P], eps: f64) -> Result<Vec<Vec<usize>>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("Rips radius must be positive, got {eps}")));
    }
    let m = points.len();
    let eps2 = eps * eps;
    let edges: Vec<Vec<usize>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let p = points[i].as_ref();
            (i + 1..m).filter(|&j| sq_dist(p, points[j].as_ref()) <= eps2).collect()
        })
        .collect();
    let mut uf = UnionFind::new(m);
    for (i, nbrs) in edges.iter().enumerate() {
        for &j in nbrs {
            uf.union(i, j);
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = std::collections::BTreeMap::new();
    for i in 0..m {
        groups.entry(uf.find(i)).or_default().push(i);
    }
    let mut comps: Vec<Vec<usize>> = groups.into_values().collect();
    comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    Ok(comps)
}

/// Upper quantile of the largest Rips-component size on uniform draws.
pub fn min_size_null(domain: &Bounds, n: usize, eps: f64, settings: NullSettings) -> Result<usize> {
    settings.validate()?;
    domain.validate()?;
    let sizes = (0..settings.reps as u64)
        .into_par_iter()
        .map(|r| {
            let cloud = uniform_sample(domain, n, derive_seed(settings.seed, r))?;
            let rows = cloud.to_rows();
            let comps = rips_components(&rows, eps)?;
            Ok(comps.first().map_or(0, Vec::len) as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(empirical_quantile(&sizes, settings.quantile)? as usize)
}

/// Marks components of at least `min_size` members as kept.
///
/// `components` hold positions into `sharp_points`; the resulting feature set
/// refers to ridge-point indices.
pub fn prune(d: usize, sharp_points: Vec<usize>, components: Vec<Vec<usize>>, min_size: usize) -> FeatureSet {
    let components = components
        .into_iter()
        .map(|c| {
            let kept = c.len() >= min_size;
            let mut members: Vec<usize> = c.into_iter().map(|k| sharp_points[k]).collect();
            members.sort_unstable();
            Component { members, kept }
        })
        .collect();
    FeatureSet { d, sharp_points, components, min_size }
}

/// Threshold, cluster and prune a ridge set.
pub fn extract_features(ridge: &RidgeSet, thresholds: &Thresholds, include_unconverged: bool) -> Result<FeatureSet> {
    let sharp = filter_sharp(ridge, thresholds.signature.value, include_unconverged);
    let pts: Vec<&[f64]> = sharp.iter().map(|&i| ridge.points[i].destination.as_slice()).collect();
    let comps = rips_components(&pts, thresholds.epsilon)?;
    Ok(prune(ridge.d, sharp, comps, thresholds.min_size))
}

/// Hausdorff distance between two finite point sets.
pub fn hausdorff<A: AsRef<[f64]> + Sync, B: AsRef<[f64]> + Sync>(a: &[A], b: &[B]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("Hausdorff distance of an empty set".into()));
    }
    Ok(directed_hausdorff(a, b).max(directed_hausdorff(b, a)))
}

/// `sup_{x in a} dist(x, b)`.
pub fn directed_hausdorff<A: AsRef<[f64]> + Sync, B: AsRef<[f64]> + Sync>(a: &[A], b: &[B]) -> f64 {
    a.par_iter()
        .map(|x| {
            b.iter()
                .map(|y| sq_dist(x.as_ref(), y.as_ref()))
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| 0.0, f64::max)
        .sqrt()
}

/// Distance from `x` to the nearest member of `set`.
pub fn nearest_distance<B: AsRef<[f64]>>(x: &[f64], set: &[B]) -> f64 {
    set.iter().map(|y| dist(x, y.as_ref())).fold(f64::INFINITY, f64::min)
}
