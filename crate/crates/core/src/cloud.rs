//! Point clouds and axis-aligned boxes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordered set of `n` points in `R^D`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    coords: Vec<f64>,
    dim: usize,
}

impl PointCloud {
    /// Builds a cloud from a flat row-major buffer.
    pub fn from_flat(coords: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidCloud("ambient dimension must be at least 1".into()));
        }
        if coords.len() % dim != 0 {
            return Err(Error::InvalidCloud(format!(
                "{} coordinates do not divide into rows of {dim}",
                coords.len()
            )));
        }
        let n = coords.len() / dim;
        if n == 0 {
            return Err(Error::InvalidCloud("cloud has no points".into()));
        }
        if let Some(pos) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidCloud(format!(
                "non-finite coordinate at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { coords, dim })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::InvalidCloud(format!(
                    "row {i} has {} coordinates, expected {dim}",
                    row.len()
                )));
            }
            coords.extend_from_slice(row);
        }
        Self::from_flat(coords, dim)
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.points().map(<[f64]>::to_vec).collect()
    }

    pub fn column_means(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut means = vec![0.0; self.dim];
        for p in self.points() {
            for (m, &c) in means.iter_mut().zip(p) {
                *m += c;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    /// Per-coordinate sample standard deviations (denominator `n - 1`, zero
    /// for a single point).
    pub fn column_std(&self) -> Vec<f64> {
        let means = self.column_means();
        let mut ss = vec![0.0; self.dim];
        for p in self.points() {
            for ((s, &c), &m) in ss.iter_mut().zip(p).zip(&means) {
                *s += (c - m) * (c - m);
            }
        }
        let denom = self.len().saturating_sub(1).max(1) as f64;
        ss.into_iter().map(|s| (s / denom).sqrt()).collect()
    }

    pub fn bounding_box(&self) -> Bounds {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for p in self.points() {
            for j in 0..self.dim {
                lo[j] = lo[j].min(p[j]);
                hi[j] = hi[j].max(p[j]);
            }
        }
        Bounds { lo, hi }
    }

    /// Length of the bounding-box diagonal.
    pub fn diameter(&self) -> f64 {
        self.bounding_box().diagonal()
    }

    pub fn translated(&self, shift: &[f64]) -> Self {
        let coords = self
            .coords
            .chunks_exact(self.dim)
            .flat_map(|p| p.iter().zip(shift).map(|(c, s)| c + s))
            .collect();
        Self { coords, dim: self.dim }
    }

    /// Returns a copy with one column replaced.
    pub fn with_column(&self, column: usize, values: &[f64]) -> Result<Self> {
        if column >= self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: column + 1 });
        }
        if values.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), actual: values.len() });
        }
        let mut coords = self.coords.clone();
        for (i, &v) in values.iter().enumerate() {
            coords[i * self.dim + column] = v;
        }
        Self::from_flat(coords, self.dim)
    }
}

/// Axis-aligned box `[lo_j, hi_j]` in every coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let b = Self { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_empty() || self.lo.len() != self.hi.len() {
            return Err(Error::InvalidArgument(format!(
                "box corners have lengths {} and {}",
                self.lo.len(),
                self.hi.len()
            )));
        }
        for (j, (l, h)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && h > l) {
                return Err(Error::InvalidArgument(format!(
                    "box side {j} is degenerate: [{l}, {h}]"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn diagonal(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l) * (h - l))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(c, (l, h))| *c >= *l && *c <= *h)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            lo: self.lo.iter().map(|v| v * factor).collect(),
            hi: self.hi.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        for (l, h) in self.lo.iter().zip(&self.hi) {
            out.push(l + (h - l) * rng.random::<f64>());
        }
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}
