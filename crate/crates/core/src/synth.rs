//! Seeded generators for synthetic point clouds with known structure.
//!
//! Every generator is a pure function of its parameters and seed, and returns
//! per-point labels plus an analytic description of each structure so that
//! recovered features can be scored against the truth.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cloud::{dist, Bounds, PointCloud};
use crate::error::{Error, Result};
use crate::filtering::uniform_sample;

/// Ground-truth tag of one generated point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Mode(usize),
    Ring,
    Wall,
    Curve(usize),
    Node,
    Filament,
    Clutter,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Mode(k) => write!(f, "mode_{k}"),
            Label::Ring => f.write_str("ring"),
            Label::Wall => f.write_str("wall"),
            Label::Curve(k) => write!(f, "curve_{k}"),
            Label::Node => f.write_str("node"),
            Label::Filament => f.write_str("filament"),
            Label::Clutter => f.write_str("clutter"),
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let indexed = |prefix: &str| -> Option<usize> { s.strip_prefix(prefix)?.parse().ok() };
        match s {
            "ring" => Ok(Label::Ring),
            "wall" => Ok(Label::Wall),
            "node" => Ok(Label::Node),
            "filament" => Ok(Label::Filament),
            "clutter" => Ok(Label::Clutter),
            _ => indexed("mode_")
                .map(Label::Mode)
                .or_else(|| indexed("curve_").map(Label::Curve))
                .ok_or_else(|| Error::Parse(format!("unknown label '{s}'"))),
        }
    }
}

/// Analytic description of one generated structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Structure {
    Point { label: Label, center: Vec<f64> },
    /// `center + radius (cos t u + sin t v)` for `t` in `[start, end]`.
    Arc { label: Label, center: Vec<f64>, radius: f64, u: Vec<f64>, v: Vec<f64>, start: f64, end: f64 },
    Segment { label: Label, start: Vec<f64>, end: Vec<f64> },
    /// `origin + s u + t v` for `s, t` in `[0, 1]`.
    Rectangle { label: Label, origin: Vec<f64>, u: Vec<f64>, v: Vec<f64> },
    /// Voronoi cell seeds; the structures are implied by the partition.
    VoronoiSeeds { seeds: Vec<Vec<f64>> },
}

fn axpy(base: &[f64], terms: &[(f64, &[f64])]) -> Vec<f64> {
    let mut out = base.to_vec();
    for (c, v) in terms {
        out.iter_mut().zip(v.iter()).for_each(|(o, x)| *o += c * x);
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

impl Structure {
    pub fn label(&self) -> Option<Label> {
        match self {
            Structure::Point { label, .. }
            | Structure::Arc { label, .. }
            | Structure::Segment { label, .. }
            | Structure::Rectangle { label, .. } => Some(*label),
            Structure::VoronoiSeeds { .. } => None,
        }
    }

    /// Intrinsic dimension of the structure.
    pub fn dimension(&self) -> Option<usize> {
        match self {
            Structure::Point { .. } => Some(0),
            Structure::Arc { .. } | Structure::Segment { .. } => Some(1),
            Structure::Rectangle { .. } => Some(2),
            Structure::VoronoiSeeds { .. } => None,
        }
    }

    /// Points on the structure spaced at most `step` apart.
    pub fn sample(&self, step: f64) -> Vec<Vec<f64>> {
        let count = |len: f64| ((len / step).ceil() as usize).max(1);
        match self {
            Structure::Point { center, .. } => vec![center.clone()],
            Structure::Arc { center, radius, u, v, start, end, .. } => {
                let k = count(radius * (end - start));
                (0..=k)
                    .map(|i| {
                        let t = start + (end - start) * i as f64 / k as f64;
                        axpy(center, &[(radius * t.cos(), u), (radius * t.sin(), v)])
                    })
                    .collect()
            }
            Structure::Segment { start, end, .. } => {
                let k = count(dist(start, end));
                (0..=k)
                    .map(|i| {
                        let t = i as f64 / k as f64;
                        start.iter().zip(end).map(|(a, b)| a + t * (b - a)).collect()
                    })
                    .collect()
            }
            Structure::Rectangle { origin, u, v, .. } => {
                let (ku, kv) = (count(norm(u)), count(norm(v)));
                let mut out = Vec::with_capacity((ku + 1) * (kv + 1));
                for i in 0..=ku {
                    for j in 0..=kv {
                        let (s, t) = (i as f64 / ku as f64, j as f64 / kv as f64);
                        out.push(axpy(origin, &[(s, u), (t, v)]));
                    }
                }
                out
            }
            Structure::VoronoiSeeds { .. } => Vec::new(),
        }
    }

    /// Euclidean distance from `x` to the structure.
    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            Structure::Point { center, .. } => dist(x, center),
            Structure::Arc { center, radius, u, v, start, end, .. } => {
                let rel: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
                let (a, b) = (dot(&rel, u), dot(&rel, v));
                let mut t = b.atan2(a);
                while t < *start {
                    t += TAU;
                }
                let on_arc = |t: f64| axpy(center, &[(radius * t.cos(), u), (radius * t.sin(), v)]);
                if t <= *end {
                    dist(x, &on_arc(t))
                } else {
                    dist(x, &on_arc(*start)).min(dist(x, &on_arc(*end)))
                }
            }
            Structure::Segment { start, end, .. } => {
                let dir: Vec<f64> = end.iter().zip(start).map(|(e, s)| e - s).collect();
                let rel: Vec<f64> = x.iter().zip(start).map(|(a, s)| a - s).collect();
                let t = (dot(&rel, &dir) / dot(&dir, &dir)).clamp(0.0, 1.0);
                dist(x, &axpy(start, &[(t, &dir)]))
            }
            Structure::Rectangle { origin, u, v, .. } => {
                // u and v are orthogonal by construction.
                let rel: Vec<f64> = x.iter().zip(origin).map(|(a, o)| a - o).collect();
                let s = (dot(&rel, u) / dot(u, u)).clamp(0.0, 1.0);
                let t = (dot(&rel, v) / dot(v, v)).clamp(0.0, 1.0);
                dist(x, &axpy(origin, &[(s, u), (t, v)]))
            }
            Structure::VoronoiSeeds { .. } => f64::NAN,
        }
    }
}

/// A generated cloud with per-point labels and analytic truth.
#[derive(Debug, Clone)]
pub struct LabeledCloud {
    pub cloud: PointCloud,
    pub labels: Vec<Label>,
    pub truth: Vec<Structure>,
}

impl LabeledCloud {
    pub fn indices_of(&self, label: Label) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, l)| **l == label).map(|(i, _)| i).collect()
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|l| **l == label).count()
    }

    pub fn structure(&self, label: Label) -> Option<&Structure> {
        self.truth.iter().find(|s| s.label() == Some(label))
    }

    /// Structures of a given intrinsic dimension.
    pub fn structures_of_dim(&self, d: usize) -> Vec<&Structure> {
        self.truth.iter().filter(|s| s.dimension() == Some(d)).collect()
    }
}

struct Builder {
    dim: usize,
    coords: Vec<f64>,
    labels: Vec<Label>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn new(dim: usize, seed: u64) -> Self {
        Self { dim, coords: Vec::new(), labels: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn push(&mut self, p: &[f64], label: Label) {
        debug_assert_eq!(p.len(), self.dim);
        self.coords.extend_from_slice(p);
        self.labels.push(label);
    }

    fn blob(&mut self, center: &[f64], count: usize, sd: f64, label: Label) {
        for _ in 0..count {
            let p: Vec<f64> = center.iter().map(|c| c + sd * self.normal()).collect();
            self.push(&p, label);
        }
    }

    fn clutter(&mut self, bounds: &Bounds, count: usize) {
        let mut p = Vec::with_capacity(self.dim);
        for _ in 0..count {
            p.clear();
            bounds.sample(&mut self.rng, &mut p);
            let q = p.clone();
            self.push(&q, Label::Clutter);
        }
    }

    fn finish(self, truth: Vec<Structure>) -> Result<LabeledCloud> {
        Ok(LabeledCloud { cloud: PointCloud::from_flat(self.coords, self.dim)?, labels: self.labels, truth })
    }
}

/// Four Gaussian blobs and a noisy circle in the plane, plus uniform clutter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModesRing2d {
    pub mode_centers: Vec<[f64; 2]>,
    pub ring_center: [f64; 2],
    pub ring_radius: f64,
    pub n_per_mode: usize,
    pub n_ring: usize,
    /// Blob standard deviation and radial noise of the ring.
    pub noise_sd: f64,
    pub clutter_n: usize,
    pub clutter_box: Bounds,
}

impl Default for ModesRing2d {
    fn default() -> Self {
        Self {
            mode_centers: vec![[-4.0, 4.0], [4.0, 4.0], [-4.0, -4.0], [4.0, -4.0]],
            ring_center: [0.0, 0.0],
            ring_radius: 2.0,
            n_per_mode: 150,
            n_ring: 550,
            noise_sd: 0.2,
            clutter_n: 50,
            clutter_box: Bounds { lo: vec![-6.0, -6.0], hi: vec![6.0, 6.0] },
        }
    }
}

impl ModesRing2d {
    pub fn generate(&self, seed: u64) -> Result<LabeledCloud> {
        if self.n_per_mode == 0 && self.n_ring == 0 && self.clutter_n == 0 {
            return Err(Error::InvalidArgument("all point counts are zero".into()));
        }
        check_noise(self.noise_sd)?;
        let mut b = Builder::new(2, seed);
        for (k, c) in self.mode_centers.iter().enumerate() {
            b.blob(c, self.n_per_mode, self.noise_sd, Label::Mode(k));
        }
        for _ in 0..self.n_ring {
            let t = b.rng.random_range(0.0..TAU);
            let r = self.ring_radius + self.noise_sd * b.normal();
            let p = [self.ring_center[0] + r * t.cos(), self.ring_center[1] + r * t.sin()];
            b.push(&p, Label::Ring);
        }
        b.clutter(&self.clutter_box, self.clutter_n);

        let mut truth: Vec<Structure> = self
            .mode_centers
            .iter()
            .enumerate()
            .map(|(k, c)| Structure::Point { label: Label::Mode(k), center: c.to_vec() })
            .collect();
        truth.push(Structure::Arc {
            label: Label::Ring,
            center: self.ring_center.to_vec(),
            radius: self.ring_radius,
            u: vec![1.0, 0.0],
            v: vec![0.0, 1.0],
            start: 0.0,
            end: TAU,
        });
        b.finish(truth)
    }
}

fn check_noise(sd: f64) -> Result<()> {
    if !(sd >= 0.0 && sd.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise_sd must be non-negative, got {sd}")));
    }
    Ok(())
}

/// Four blobs, a horizontal ring and a flat rectangular wall in 3D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModesRingWall3d {
    pub mode_centers: Vec<[f64; 3]>,
    pub ring_center: [f64; 3],
    pub ring_radius: f64,
    /// Wall corner and its two orthogonal edge vectors.
    pub wall_origin: [f64; 3],
    pub wall_u: [f64; 3],
    pub wall_v: [f64; 3],
    pub n_per_mode: usize,
    pub n_ring: usize,
    pub n_wall: usize,
    pub noise_sd: f64,
    pub clutter_n: usize,
    pub clutter_box: Bounds,
}

impl Default for ModesRingWall3d {
    fn default() -> Self {
        Self {
            mode_centers: vec![[-4.0, -4.0, 3.0], [4.0, -4.0, 3.0], [-4.0, 4.0, 3.0], [4.0, 4.0, 3.0]],
            ring_center: [0.0, 0.0, 3.0],
            ring_radius: 2.0,
            wall_origin: [-4.0, -4.0, -2.0],
            wall_u: [8.0, 0.0, 0.0],
            wall_v: [0.0, 8.0, 0.0],
            n_per_mode: 250,
            n_ring: 800,
            n_wall: 1800,
            noise_sd: 0.2,
            clutter_n: 400,
            clutter_box: Bounds { lo: vec![-6.0, -6.0, -4.0], hi: vec![6.0, 6.0, 5.0] },
        }
    }
}

impl ModesRingWall3d {
    pub fn generate(&self, seed: u64) -> Result<LabeledCloud> {
        if self.n_per_mode == 0 && self.n_ring == 0 && self.n_wall == 0 && self.clutter_n == 0 {
            return Err(Error::InvalidArgument("all point counts are zero".into()));
        }
        check_noise(self.noise_sd)?;
        let (u, v) = (self.wall_u.to_vec(), self.wall_v.to_vec());
        if dot(&u, &v).abs() > 1e-12 * norm(&u) * norm(&v) {
            return Err(Error::InvalidArgument("wall edges must be orthogonal".into()));
        }
        let normal = {
            let c = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
            let l = norm(&c);
            [c[0] / l, c[1] / l, c[2] / l]
        };

        let mut b = Builder::new(3, seed);
        for (k, c) in self.mode_centers.iter().enumerate() {
            b.blob(c, self.n_per_mode, self.noise_sd, Label::Mode(k));
        }
        for _ in 0..self.n_ring {
            let t = b.rng.random_range(0.0..TAU);
            // Isotropic noise in the plane normal to the circle's tangent.
            let radial = self.noise_sd * b.normal();
            let vertical = self.noise_sd * b.normal();
            let r = self.ring_radius + radial;
            let c = self.ring_center;
            b.push(&[c[0] + r * t.cos(), c[1] + r * t.sin(), c[2] + vertical], Label::Ring);
        }
        for _ in 0..self.n_wall {
            let (s, t) = (b.rng.random::<f64>(), b.rng.random::<f64>());
            let off = self.noise_sd * b.normal();
            let p = axpy(&self.wall_origin, &[(s, &u), (t, &v), (off, &normal)]);
            b.push(&p, Label::Wall);
        }
        b.clutter(&self.clutter_box, self.clutter_n);

        let mut truth: Vec<Structure> = self
            .mode_centers
            .iter()
            .enumerate()
            .map(|(k, c)| Structure::Point { label: Label::Mode(k), center: c.to_vec() })
            .collect();
        truth.push(Structure::Arc {
            label: Label::Ring,
            center: self.ring_center.to_vec(),
            radius: self.ring_radius,
            u: vec![1.0, 0.0, 0.0],
            v: vec![0.0, 1.0, 0.0],
            start: 0.0,
            end: TAU,
        });
        truth.push(Structure::Rectangle { label: Label::Wall, origin: self.wall_origin.to_vec(), u, v });
        b.finish(truth)
    }
}

/// A straight segment and a half circle crossing once at a right angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntersectingCurves {
    pub segment_start: [f64; 2],
    pub segment_end: [f64; 2],
    pub arc_center: [f64; 2],
    pub arc_radius: f64,
    pub arc_start: f64,
    pub arc_end: f64,
    /// Points on the curves, split evenly between them.
    pub n: usize,
    pub noise_sd: f64,
    pub clutter_n: usize,
    pub clutter_box: Bounds,
}

impl Default for IntersectingCurves {
    fn default() -> Self {
        Self {
            segment_start: [-3.0, 0.0],
            segment_end: [3.0, 0.0],
            arc_center: [3.0, 0.0],
            arc_radius: 3.0,
            arc_start: FRAC_PI_2,
            arc_end: 3.0 * FRAC_PI_2,
            n: 1000,
            noise_sd: 0.1,
            clutter_n: 150,
            clutter_box: Bounds { lo: vec![-4.0, -4.0], hi: vec![4.0, 4.0] },
        }
    }
}

impl IntersectingCurves {
    /// Crossing point of the two curves.
    pub fn intersection(&self) -> [f64; 2] {
        let dir = [self.segment_end[0] - self.segment_start[0], self.segment_end[1] - self.segment_start[1]];
        let f = [self.segment_start[0] - self.arc_center[0], self.segment_start[1] - self.arc_center[1]];
        let a = dir[0] * dir[0] + dir[1] * dir[1];
        let bq = 2.0 * (f[0] * dir[0] + f[1] * dir[1]);
        let c = f[0] * f[0] + f[1] * f[1] - self.arc_radius * self.arc_radius;
        let disc = (bq * bq - 4.0 * a * c).max(0.0).sqrt();
        let t = [(-bq - disc) / (2.0 * a), (-bq + disc) / (2.0 * a)]
            .into_iter()
            .find(|t| {
                let p = [self.segment_start[0] + t * dir[0], self.segment_start[1] + t * dir[1]];
                (0.0..=1.0).contains(t) && self.arc_structure().distance(&p) < 1e-9
            })
            .unwrap_or(0.5);
        [self.segment_start[0] + t * dir[0], self.segment_start[1] + t * dir[1]]
    }

    fn arc_structure(&self) -> Structure {
        Structure::Arc {
            label: Label::Curve(1),
            center: self.arc_center.to_vec(),
            radius: self.arc_radius,
            u: vec![1.0, 0.0],
            v: vec![0.0, 1.0],
            start: self.arc_start,
            end: self.arc_end,
        }
    }

    pub fn generate(&self, seed: u64) -> Result<LabeledCloud> {
        if self.n == 0 && self.clutter_n == 0 {
            return Err(Error::InvalidArgument("all point counts are zero".into()));
        }
        check_noise(self.noise_sd)?;
        let mut b = Builder::new(2, seed);
        let (s0, s1) = (self.segment_start, self.segment_end);
        let dir = [s1[0] - s0[0], s1[1] - s0[1]];
        let len = norm(&dir);
        let perp = [-dir[1] / len, dir[0] / len];
        let n_segment = self.n / 2;
        for _ in 0..n_segment {
            let t = b.rng.random::<f64>();
            let off = self.noise_sd * b.normal();
            b.push(&[s0[0] + t * dir[0] + off * perp[0], s0[1] + t * dir[1] + off * perp[1]], Label::Curve(0));
        }
        for _ in n_segment..self.n {
            let t = b.rng.random_range(self.arc_start..=self.arc_end);
            let r = self.arc_radius + self.noise_sd * b.normal();
            b.push(&[self.arc_center[0] + r * t.cos(), self.arc_center[1] + r * t.sin()], Label::Curve(1));
        }
        b.clutter(&self.clutter_box, self.clutter_n);
        let truth = vec![
            Structure::Segment { label: Label::Curve(0), start: s0.to_vec(), end: s1.to_vec() },
            self.arc_structure(),
        ];
        b.finish(truth)
    }
}

/// Points on the vertices, edges and faces of a random Voronoi partition of
/// `[-1, 1]^3`, plus uniform clutter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoronoiFoam {
    pub n_seeds: usize,
    /// Fractions of `n_points` placed on nodes, filaments and walls. The
    /// remainder is uniform clutter.
    pub fractions: (f64, f64, f64),
    pub n_points: usize,
}

impl Default for VoronoiFoam {
    fn default() -> Self {
        Self { n_seeds: 12, fractions: (0.1, 0.3, 0.4), n_points: 3000 }
    }
}

const FOAM_TRIES: usize = 1000;

fn nearest_seeds(seeds: &[Vec<f64>], x: &[f64]) -> Vec<(f64, usize)> {
    let mut d: Vec<(f64, usize)> = seeds.iter().enumerate().map(|(i, s)| (dist(x, s), i)).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0));
    d
}

/// Solves `A p = c` for the point closest to `x`, with `A` given by rows.
fn project_affine(x: &[f64], rows: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let k = rows.len();
    let gram = nalgebra::DMatrix::from_fn(k, k, |i, j| dot(&rows[i], &rows[j]));
    let resid = nalgebra::DVector::from_iterator(k, rows.iter().zip(rhs).map(|(r, c)| dot(r, x) - c));
    let mult = gram.lu().solve(&resid)?;
    let mut p = x.to_vec();
    for (i, r) in rows.iter().enumerate() {
        p.iter_mut().zip(r).for_each(|(pj, rj)| *pj -= mult[i] * rj);
    }
    Some(p)
}

/// Bisector plane of seeds `a` and `b` as `n . p = c`.
fn bisector(a: &[f64], b: &[f64]) -> (Vec<f64>, f64) {
    let n: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
    let c = (dot(b, b) - dot(a, a)) / 2.0;
    (n, c)
}

impl VoronoiFoam {
    /// Projects a uniform draw onto the locus equidistant from its `k + 1`
    /// nearest seeds and checks that those seeds remain the nearest.
    fn sample_locus(&self, rng: &mut ChaCha8Rng, seeds: &[Vec<f64>], cube: &Bounds, k: usize) -> Option<Vec<f64>> {
        let mut x = Vec::with_capacity(3);
        for _ in 0..FOAM_TRIES {
            x.clear();
            cube.sample(rng, &mut x);
            let near = nearest_seeds(seeds, &x);
            let base = &seeds[near[0].1];
            let (rows, rhs): (Vec<Vec<f64>>, Vec<f64>) =
                near[1..=k].iter().map(|&(_, j)| bisector(base, &seeds[j])).unzip();
            let Some(p) = project_affine(&x, &rows, &rhs) else { continue };
            if !cube.contains(&p) {
                continue;
            }
            let after = nearest_seeds(seeds, &p);
            let mut members: Vec<usize> = after[..=k].iter().map(|s| s.1).collect();
            let mut wanted: Vec<usize> = near[..=k].iter().map(|s| s.1).collect();
            members.sort_unstable();
            wanted.sort_unstable();
            let spread = after[k].0 - after[0].0;
            let margin = after.get(k + 1).map_or(f64::INFINITY, |s| s.0 - after[k].0);
            if members == wanted && spread <= 1e-9 && margin > 1e-6 {
                return Some(p);
            }
        }
        None
    }

    pub fn generate(&self, seed: u64) -> Result<LabeledCloud> {
        if self.n_seeds < 5 {
            return Err(Error::InvalidArgument(format!(
                "Voronoi foam needs at least 5 seeds, got {}",
                self.n_seeds
            )));
        }
        let (fn_, ff, fw) = self.fractions;
        if [fn_, ff, fw].iter().any(|f| !(*f >= 0.0)) || fn_ + ff + fw > 1.0 + 1e-12 {
            return Err(Error::InvalidArgument("fractions must be non-negative and sum to at most 1".into()));
        }
        let cube = Bounds::cube(3, -1.0, 1.0)?;
        let mut b = Builder::new(3, seed);
        let seeds: Vec<Vec<f64>> = (0..self.n_seeds)
            .map(|_| {
                let mut s = Vec::with_capacity(3);
                cube.sample(&mut b.rng, &mut s);
                s
            })
            .collect();

        let count = |f: f64| (f * self.n_points as f64).round() as usize;
        let targets = [(count(fn_), 3, Label::Node), (count(ff), 2, Label::Filament), (count(fw), 1, Label::Wall)];
        for (n, k, label) in targets {
            for _ in 0..n {
                let p = self.sample_locus(&mut b.rng, &seeds, &cube, k).ok_or_else(|| {
                    Error::InvalidArgument(format!("could not place a {label} point; partition too degenerate"))
                })?;
                b.push(&p, label);
            }
        }
        let structural: usize = targets.iter().map(|t| t.0).sum();
        let clutter = self.n_points.saturating_sub(structural);
        b.clutter(&cube, clutter);
        b.finish(vec![Structure::VoronoiSeeds { seeds }])
    }
}

/// `n` i.i.d. uniform points on a box.
pub fn gen_uniform_box(bounds: &Bounds, n: usize, seed: u64) -> Result<PointCloud> {
    uniform_sample(bounds, n, seed)
}

/// Angle of `p` around `center`, in `[0, 2 pi)`.
pub fn polar_angle(p: &[f64], center: &[f64]) -> f64 {
    let a = (p[1] - center[1]).atan2(p[0] - center[0]);
    if a < 0.0 {
        a + 2.0 * PI
    } else {
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip_through_strings() {
        for l in [Label::Mode(3), Label::Ring, Label::Wall, Label::Curve(1), Label::Node, Label::Filament, Label::Clutter] {
            assert_eq!(l.to_string().parse::<Label>().unwrap(), l);
        }
        assert!("blob".parse::<Label>().is_err());
    }

    #[test]
    fn noiseless_ring_is_exact() {
        let g = ModesRing2d { noise_sd: 0.0, clutter_n: 0, ..Default::default() };
        let lc = g.generate(1).unwrap();
        for i in lc.indices_of(Label::Ring) {
            let p = lc.cloud.point(i);
            assert!((norm(p) - g.ring_radius).abs() <= 1e-12);
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let g = ModesRing2d::default();
        let a = g.generate(42).unwrap();
        let b = g.generate(42).unwrap();
        assert_eq!(a.cloud.as_flat(), b.cloud.as_flat());
        assert_ne!(a.cloud.as_flat(), g.generate(43).unwrap().cloud.as_flat());
        let f = VoronoiFoam { n_points: 200, ..Default::default() };
        assert_eq!(f.generate(3).unwrap().cloud, f.generate(3).unwrap().cloud);
    }

    #[test]
    fn blob_means_are_near_centers() {
        let g = ModesRing2d::default();
        let lc = g.generate(7).unwrap();
        for (k, c) in g.mode_centers.iter().enumerate() {
            let idx = lc.indices_of(Label::Mode(k));
            assert_eq!(idx.len(), g.n_per_mode);
            for j in 0..2 {
                let mean = idx.iter().map(|&i| lc.cloud.point(i)[j]).sum::<f64>() / idx.len() as f64;
                assert!((mean - c[j]).abs() <= 3.0 * g.noise_sd / (g.n_per_mode as f64).sqrt());
            }
        }
    }

    #[test]
    fn empty_generator_is_rejected() {
        let g = ModesRing2d { n_per_mode: 0, n_ring: 0, clutter_n: 0, ..Default::default() };
        assert!(g.generate(0).is_err());
    }

    #[test]
    fn three_dimensional_structures() {
        let g = ModesRingWall3d { noise_sd: 0.0, ..Default::default() };
        let lc = g.generate(2).unwrap();
        assert_eq!(lc.count(Label::Wall), g.n_wall);
        assert_eq!(lc.count(Label::Ring), g.n_ring);
        assert_eq!(lc.count(Label::Clutter), g.clutter_n);
        for i in lc.indices_of(Label::Wall) {
            assert!((lc.cloud.point(i)[2] - g.wall_origin[2]).abs() <= 1e-12);
        }
        let wall = lc.structure(Label::Wall).unwrap();
        let ring = lc.structure(Label::Ring).unwrap();
        let gap = ring.sample(0.01).iter().map(|p| wall.distance(p)).fold(f64::INFINITY, f64::min);
        assert!(gap > 5.0 * ModesRingWall3d::default().noise_sd);
        assert!(gap > 10.0 * ModesRingWall3d::default().noise_sd);
    }

    #[test]
    fn intersecting_curves_geometry() {
        let g = IntersectingCurves { noise_sd: 0.0, ..Default::default() };
        let lc = g.generate(5).unwrap();
        for k in 0..2 {
            let s = lc.structure(Label::Curve(k)).unwrap();
            for i in lc.indices_of(Label::Curve(k)) {
                assert!(s.distance(lc.cloud.point(i)) <= 1e-12);
            }
        }
        let x = g.intersection();
        assert!(lc.structure(Label::Curve(0)).unwrap().distance(&x) <= 1e-12);
        assert!(lc.structure(Label::Curve(1)).unwrap().distance(&x) <= 1e-12);
        assert_eq!(lc.count(Label::Clutter), g.clutter_n);
    }

    #[test]
    fn foam_points_sit_on_their_loci() {
        let g = VoronoiFoam { n_seeds: 10, fractions: (0.1, 0.3, 0.4), n_points: 300 };
        let lc = g.generate(9).unwrap();
        let Structure::VoronoiSeeds { seeds } = &lc.truth[0] else { panic!("missing seeds") };
        for (i, p) in lc.cloud.points().enumerate() {
            let near = nearest_seeds(seeds, p);
            match lc.labels[i] {
                Label::Wall => assert!((near[1].0 - near[0].0).abs() <= 1e-8),
                Label::Filament => assert!((near[2].0 - near[0].0).abs() <= 1e-6),
                Label::Node => assert!((near[3].0 - near[0].0).abs() <= 1e-6),
                _ => {}
            }
        }
        assert_eq!(lc.count(Label::Clutter), 300 - 30 - 90 - 120);
    }

    #[test]
    fn foam_without_structure_is_pure_clutter() {
        let lc = VoronoiFoam { n_seeds: 6, fractions: (0.0, 0.0, 0.0), n_points: 100 }.generate(1).unwrap();
        assert_eq!(lc.count(Label::Clutter), 100);
        assert!(VoronoiFoam { n_seeds: 4, ..Default::default() }.generate(1).is_err());
        assert!(VoronoiFoam { fractions: (0.5, 0.5, 0.5), ..Default::default() }.generate(1).is_err());
    }

    #[test]
    fn uniform_box_sampling() {
        let b = Bounds::new(vec![-1.0, 2.0], vec![3.0, 5.0]).unwrap();
        let n = 4000;
        let c = gen_uniform_box(&b, n, 11).unwrap();
        assert!(c.points().all(|p| b.contains(p)));
        assert_eq!(c, gen_uniform_box(&b, n, 11).unwrap());
        let means = c.column_means();
        for j in 0..2 {
            let width = b.hi[j] - b.lo[j];
            let sigma = width / 12f64.sqrt() / (n as f64).sqrt();
            assert!((means[j] - 0.5 * (b.lo[j] + b.hi[j])).abs() <= 4.0 * sigma);
        }
    }

    #[test]
    fn structure_distance_and_sampling_agree() {
        let arc = Structure::Arc {
            label: Label::Ring,
            center: vec![0.0, 0.0],
            radius: 2.0,
            u: vec![1.0, 0.0],
            v: vec![0.0, 1.0],
            start: 0.0,
            end: PI,
        };
        assert!((arc.distance(&[0.0, 3.0]) - 1.0).abs() < 1e-12);
        assert!((arc.distance(&[0.0, -2.0]) - 8f64.sqrt()).abs() < 1e-12);
        let pts = arc.sample(0.01);
        assert!(pts.iter().all(|p| arc.distance(p) < 1e-12));
        let rect = Structure::Rectangle { label: Label::Wall, origin: vec![0.0; 3], u: vec![1.0, 0.0, 0.0], v: vec![0.0, 2.0, 0.0] };
        assert!((rect.distance(&[0.5, 1.0, 0.3]) - 0.3).abs() < 1e-12);
        assert!((rect.distance(&[2.0, 1.0, 0.0]) - 1.0).abs() < 1e-12);
    }
}
