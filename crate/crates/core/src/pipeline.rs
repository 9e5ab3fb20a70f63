//! End-to-end feature extraction: density estimate, ridges per dimension,
//! signature thresholding, Rips clustering and pruning.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cloud::{Bounds, PointCloud};
use crate::density::{silverman_bandwidth, DensityModel};
use crate::error::{Error, Result};
use crate::filtering::{
    derive_seed, extract_features, min_size_null, null_threshold_mc, rips_epsilon_null, threshold_heuristic,
    FeatureSet, NullSettings, Provenance, Threshold, Thresholds,
};
use crate::ridges::{estimate_ridge_from_data, Convergence, RidgeSet, DEFAULT_MAX_ITER, DEFAULT_RELATIVE_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum BandwidthSpec {
    /// Normal-reference rule.
    Auto,
    /// Half the normal-reference bandwidth, for strongly non-Gaussian data.
    AutoHalf,
    Fixed { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum ThresholdSpec {
    /// Rightmost local minimum of the smoothed signature distribution.
    Heuristic,
    NullMc { reps: usize, quantile: f64 },
    Fixed { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum EpsilonSpec {
    /// Mean nearest-neighbour distance of uniform points on the domain.
    AutoNull { reps: usize },
    Fixed { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum MinSizeSpec {
    /// Keep every component.
    None,
    /// Upper quantile of the largest Rips component on uniform points.
    NullMc { reps: usize, quantile: f64 },
    Fixed { value: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Ridge dimensions to extract; `None` runs `0..D`.
    pub dims: Option<Vec<usize>>,
    pub bandwidth: BandwidthSpec,
    pub threshold: ThresholdSpec,
    /// Per-dimension replacements for `threshold`.
    pub threshold_overrides: BTreeMap<usize, ThresholdSpec>,
    pub epsilon: EpsilonSpec,
    pub min_size: MinSizeSpec,
    /// Convergence tolerance relative to the data diameter.
    pub relative_tol: f64,
    pub max_iter: usize,
    /// Base seed of every Monte-Carlo step.
    pub seed: Option<u64>,
    pub include_unconverged: bool,
    /// Null-reference domain; the data's bounding box when absent.
    pub domain: Option<Bounds>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dims: None,
            bandwidth: BandwidthSpec::Auto,
            threshold: ThresholdSpec::Heuristic,
            threshold_overrides: BTreeMap::new(),
            epsilon: EpsilonSpec::AutoNull { reps: 10 },
            min_size: MinSizeSpec::NullMc { reps: 20, quantile: 0.95 },
            relative_tol: DEFAULT_RELATIVE_TOL,
            max_iter: DEFAULT_MAX_ITER,
            seed: None,
            include_unconverged: false,
            domain: None,
        }
    }
}

// Independent RNG streams for the separate Monte-Carlo steps.
const STREAM_THRESHOLD: u64 = 1;
const STREAM_EPSILON: u64 = 2;
const STREAM_MIN_SIZE: u64 = 3;

impl PipelineConfig {
    pub fn threshold_for(&self, d: usize) -> ThresholdSpec {
        self.threshold_overrides.get(&d).copied().unwrap_or(self.threshold)
    }

    pub fn dims_for(&self, dim: usize) -> Vec<usize> {
        self.dims.clone().unwrap_or_else(|| (0..dim).collect())
    }

    fn uses_monte_carlo(&self, dims: &[usize]) -> bool {
        dims.iter().any(|&d| matches!(self.threshold_for(d), ThresholdSpec::NullMc { .. }))
            || matches!(self.epsilon, EpsilonSpec::AutoNull { .. })
            || matches!(self.min_size, MinSizeSpec::NullMc { .. })
    }

    /// Checks the configuration against data of ambient dimension `dim`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        let dims = self.dims_for(dim);
        if dims.is_empty() {
            return Err(Error::InvalidArgument("no ridge dimensions requested".into()));
        }
        for &d in &dims {
            if d >= dim {
                return Err(Error::RidgeDimension { d, dim });
            }
        }
        let mut seen = dims.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != dims.len() {
            return Err(Error::InvalidArgument("ridge dimensions repeat".into()));
        }
        if let BandwidthSpec::Fixed { value } = self.bandwidth {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidBandwidth(value));
            }
        }
        for &d in &dims {
            match self.threshold_for(d) {
                ThresholdSpec::Fixed { value } if value.is_nan() || value < 0.0 => {
                    return Err(Error::InvalidArgument(format!("threshold for d={d} must be >= 0")));
                }
                ThresholdSpec::NullMc { reps, quantile } => check_null(reps, quantile)?,
                _ => {}
            }
        }
        match self.epsilon {
            EpsilonSpec::Fixed { value } if !(value.is_finite() && value > 0.0) => {
                return Err(Error::InvalidArgument(format!("Rips radius must be positive, got {value}")));
            }
            EpsilonSpec::AutoNull { reps: 0 } => {
                return Err(Error::InvalidArgument("Rips radius needs at least one replication".into()));
            }
            _ => {}
        }
        match self.min_size {
            MinSizeSpec::Fixed { value: 0 } => {
                return Err(Error::InvalidArgument("minimum component size must be at least 1".into()));
            }
            MinSizeSpec::NullMc { reps, quantile } => check_null(reps, quantile)?,
            _ => {}
        }
        if !(self.relative_tol.is_finite() && self.relative_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be positive".into()));
        }
        if let Some(b) = &self.domain {
            b.validate()?;
            if b.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, actual: b.dim() });
            }
        }
        if self.seed.is_none() && self.uses_monte_carlo(&dims) {
            return Err(Error::InvalidArgument("a seed is required for Monte-Carlo calibration".into()));
        }
        Ok(())
    }
}

fn check_null(reps: usize, quantile: f64) -> Result<()> {
    if reps < 20 {
        return Err(Error::InvalidArgument(format!("null calibration needs at least 20 replications, got {reps}")));
    }
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::InvalidArgument(format!("quantile must lie in (0, 1], got {quantile}")));
    }
    Ok(())
}

/// Results for one ridge dimension.
#[derive(Debug, Clone)]
pub struct DimensionReport {
    pub d: usize,
    pub thresholds: Thresholds,
    pub ridge: RidgeSet,
    pub features: FeatureSet,
    /// `S_d` of the points eligible for filtering, in ridge order.
    pub signatures: Vec<f64>,
}

/// One row of the per-point table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointRecord {
    pub origin: usize,
    pub destination: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub signature: f64,
    pub sharp: bool,
    /// Position of the point's component in `FeatureSet::components`.
    pub component: Option<usize>,
    pub kept: bool,
}

impl DimensionReport {
    pub fn point_table(&self) -> Vec<PointRecord> {
        let mut comp_of = vec![None; self.ridge.points.len()];
        for (c, comp) in self.features.components.iter().enumerate() {
            for &m in &comp.members {
                comp_of[m] = Some(c);
            }
        }
        let mut sharp = vec![false; self.ridge.points.len()];
        for &i in &self.features.sharp_points {
            sharp[i] = true;
        }
        self.ridge
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| PointRecord {
                origin: p.origin_index,
                destination: p.destination.clone(),
                converged: p.converged,
                iterations: p.iterations,
                signature: p.signature_value(self.d),
                sharp: sharp[i],
                component: comp_of[i],
                kept: comp_of[i].is_some_and(|c| self.features.components[c].kept),
            })
            .collect()
    }

    /// Destinations of every point in a kept component.
    pub fn kept_points(&self) -> Vec<Vec<f64>> {
        self.features
            .kept()
            .flat_map(|c| c.members.iter().map(|&m| self.ridge.points[m].destination.clone()))
            .collect()
    }

    /// Destinations of each kept component, largest first.
    pub fn kept_components(&self) -> Vec<Vec<Vec<f64>>> {
        self.features
            .kept()
            .map(|c| c.members.iter().map(|&m| self.ridge.points[m].destination.clone()).collect())
            .collect()
    }
}

/// Wall-clock seconds per stage. Not part of the deterministic output.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Timing {
    pub calibration: f64,
    pub ridges: BTreeMap<usize, f64>,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub n: usize,
    pub dim: usize,
    pub bandwidth: f64,
    pub domain: Bounds,
    pub dims: Vec<DimensionReport>,
    pub timing: Timing,
}

impl RunReport {
    pub fn dimension(&self, d: usize) -> Option<&DimensionReport> {
        self.dims.iter().find(|r| r.d == d)
    }
}

pub fn resolve_bandwidth(spec: BandwidthSpec, cloud: &PointCloud) -> Result<f64> {
    match spec {
        BandwidthSpec::Auto => silverman_bandwidth(cloud),
        BandwidthSpec::AutoHalf => Ok(0.5 * silverman_bandwidth(cloud)?),
        BandwidthSpec::Fixed { value } => Ok(value),
    }
}

/// Runs the full pipeline on `cloud`.
pub fn run_pipeline(cloud: &PointCloud, config: &PipelineConfig) -> Result<RunReport> {
    let start = Instant::now();
    let dim = cloud.dim();
    config.validate(dim)?;
    let dims = config.dims_for(dim);
    let seed = config.seed.unwrap_or(0);
    let n = cloud.len();

    let bandwidth = resolve_bandwidth(config.bandwidth, cloud)?;
    let model = DensityModel::new(cloud.clone(), bandwidth)?;
    let domain = config.domain.clone().unwrap_or_else(|| cloud.bounding_box());
    domain.validate()?;
    let conv = Convergence { tol: config.relative_tol * cloud.diameter().max(f64::MIN_POSITIVE), max_iter: config.max_iter };

    let calib = Instant::now();
    let (epsilon, epsilon_provenance) = match config.epsilon {
        EpsilonSpec::Fixed { value } => (value, Provenance::User),
        EpsilonSpec::AutoNull { reps } => {
            (rips_epsilon_null(&domain, n.max(2), reps, derive_seed(seed, STREAM_EPSILON))?, Provenance::NullMc)
        }
    };
    let (min_size, min_size_provenance) = match config.min_size {
        MinSizeSpec::None => (1, Provenance::User),
        MinSizeSpec::Fixed { value } => (value, Provenance::User),
        MinSizeSpec::NullMc { reps, quantile } => {
            let s = NullSettings { reps, quantile, seed: derive_seed(seed, STREAM_MIN_SIZE) };
            (min_size_null(&domain, n, epsilon, s)?.max(1), Provenance::NullMc)
        }
    };
    let mut timing = Timing { calibration: calib.elapsed().as_secs_f64(), ..Timing::default() };

    let mut reports = Vec::with_capacity(dims.len());
    for &d in &dims {
        let t = Instant::now();
        let ridge = estimate_ridge_from_data(&model, d, conv)?;
        let signatures: Vec<f64> = ridge
            .points
            .iter()
            .filter(|p| p.converged || config.include_unconverged)
            .map(|p| p.signature_value(d))
            .collect();
        let signature = match config.threshold_for(d) {
            ThresholdSpec::Fixed { value } => Threshold { value, provenance: Provenance::User },
            ThresholdSpec::Heuristic => threshold_heuristic(&signatures)?,
            ThresholdSpec::NullMc { reps, quantile } => {
                let s = NullSettings { reps, quantile, seed: derive_seed(derive_seed(seed, STREAM_THRESHOLD), d as u64) };
                null_threshold_mc(&domain, n, bandwidth, d, s)?
            }
        };
        let thresholds = Thresholds { signature, epsilon, epsilon_provenance, min_size, min_size_provenance };
        let features = extract_features(&ridge, &thresholds, config.include_unconverged)?;
        timing.ridges.insert(d, t.elapsed().as_secs_f64());
        reports.push(DimensionReport { d, thresholds, ridge, features, signatures });
    }
    timing.total = start.elapsed().as_secs_f64();

    Ok(RunReport { config: config.clone(), n, dim, bandwidth, domain, dims: reports, timing })
}
