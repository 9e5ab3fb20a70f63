//! CSV input and output of point clouds, column transforms and diagnostic
//! export.
//!
//! Input files hold one point per row, comma separated. Lines starting with
//! `#` are comments. A header row is recognized when none of its cells parse
//! as numbers, and a trailing column named `label` (or holding non-numeric
//! cells in every row) is read as per-point labels.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::pipeline::{DimensionReport, RunReport};
use crate::synth::{Label, LabeledCloud, Structure};

/// A parsed input file.
#[derive(Debug, Clone)]
pub struct CloudFile {
    pub cloud: PointCloud,
    pub header: Option<Vec<String>>,
    pub labels: Option<Vec<String>>,
}

impl CloudFile {
    /// Labels parsed into generator tags; `None` when absent or unrecognized.
    pub fn parsed_labels(&self) -> Option<Result<Vec<Label>>> {
        self.labels.as_ref().map(|ls| ls.iter().map(|l| l.parse()).collect())
    }
}

fn is_number(cell: &str) -> bool {
    cell.parse::<f64>().is_ok()
}

/// Maximum number of offending lines listed in a parse error.
const MAX_REPORTED: usize = 20;

fn report(kind: &str, lines: &[String]) -> Error {
    let shown: Vec<&str> = lines.iter().take(MAX_REPORTED).map(String::as_str).collect();
    let more = lines.len().saturating_sub(MAX_REPORTED);
    let tail = if more > 0 { format!(" (and {more} more)") } else { String::new() };
    Error::Parse(format!("{kind}: {}{tail}", shown.join("; ")))
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<CloudFile> {
    let text = fs::read_to_string(path.as_ref())?;
    parse_cloud(&text)
}

/// Parses CSV text; see the module docs for the accepted layout.
pub fn parse_cloud(text: &str) -> Result<CloudFile> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut rows: Vec<(u64, Vec<String>)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        rows.push((line, record.iter().map(str::to_owned).collect()));
    }
    if rows.is_empty() {
        return Err(Error::Parse("no data rows".into()));
    }

    let header = if rows[0].1.iter().all(|c| !is_number(c)) {
        Some(rows.remove(0).1)
    } else {
        None
    };
    if rows.is_empty() {
        return Err(Error::Parse("no data rows after header".into()));
    }

    let width = header.as_ref().map_or(rows[0].1.len(), Vec::len);
    let ragged: Vec<String> = rows
        .iter()
        .filter(|(_, r)| r.len() != width)
        .map(|(l, r)| format!("line {l} has {} columns, expected {width}", r.len()))
        .collect();
    if !ragged.is_empty() {
        return Err(report("ragged rows", &ragged));
    }

    let labelled = match &header {
        Some(h) => h.last().is_some_and(|c| c.eq_ignore_ascii_case("label")),
        None => width > 1 && rows.iter().all(|(_, r)| !is_number(&r[width - 1])),
    };
    let dim = if labelled { width - 1 } else { width };
    if dim == 0 {
        return Err(Error::Parse("no coordinate columns".into()));
    }

    let mut coords = Vec::with_capacity(rows.len() * dim);
    let mut bad = Vec::new();
    for (line, r) in &rows {
        for (c, cell) in r[..dim].iter().enumerate() {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => coords.push(v),
                _ => bad.push(format!("line {line}, column {}: '{cell}'", c + 1)),
            }
        }
    }
    if !bad.is_empty() {
        return Err(report("non-numeric cells", &bad));
    }
    let labels = labelled.then(|| rows.iter().map(|(_, r)| r[dim].clone()).collect());
    Ok(CloudFile { cloud: PointCloud::from_flat(coords, dim)?, header, labels })
}

fn coordinate_header(dim: usize) -> Vec<String> {
    (1..=dim).map(|j| format!("x{j}")).collect()
}

/// Shortest representation that parses back to the same `f64`.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn write_rows(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(header).map_err(csv_io)?;
    for r in rows {
        w.write_record(&r).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

pub fn write_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let rows = cloud.points().map(|p| p.iter().map(|v| fmt_f64(*v)).collect());
    write_rows(path.as_ref(), &coordinate_header(cloud.dim()), rows)
}

/// Path of the ground-truth file written next to a labelled cloud.
pub fn truth_path(path: impl AsRef<Path>) -> PathBuf {
    path.as_ref().with_extension("truth.json")
}

/// Writes the cloud with a trailing `label` column and the analytic truth as
/// JSON next to it.
pub fn write_labeled(path: impl AsRef<Path>, lc: &LabeledCloud) -> Result<()> {
    let path = path.as_ref();
    let mut header = coordinate_header(lc.cloud.dim());
    header.push("label".into());
    let rows = lc.cloud.points().zip(&lc.labels).map(|(p, l)| {
        let mut r: Vec<String> = p.iter().map(|v| fmt_f64(*v)).collect();
        r.push(l.to_string());
        r
    });
    write_rows(path, &header, rows)?;
    fs::write(truth_path(path), serde_json::to_string_pretty(&lc.truth)?)?;
    Ok(())
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<Vec<Structure>> {
    let text = fs::read_to_string(path.as_ref())?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("truth file: {e}")))
}

/// Reads a labelled cloud together with its truth file.
pub fn read_labeled(path: impl AsRef<Path>) -> Result<LabeledCloud> {
    let path = path.as_ref();
    let file = read_cloud(path)?;
    let labels = file
        .parsed_labels()
        .ok_or_else(|| Error::Parse(format!("{} has no label column", path.display())))??;
    let truth = read_truth(truth_path(path))?;
    Ok(LabeledCloud { cloud: file.cloud, labels, truth })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    Identity,
    /// `-log(-z)`, defined for `z < 0`.
    NegLogNeg,
    /// `log(z)`, defined for `z > 0`.
    Log,
}

impl std::str::FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Transform::Identity),
            "neg-log-neg" => Ok(Transform::NegLogNeg),
            "log" => Ok(Transform::Log),
            _ => Err(Error::InvalidArgument(format!(
                "unknown transform '{s}' (expected identity, neg-log-neg or log)"
            ))),
        }
    }
}

impl Transform {
    fn apply(self, z: f64) -> Option<f64> {
        match self {
            Transform::Identity => Some(z),
            Transform::NegLogNeg => (z < 0.0).then(|| -(-z).ln()),
            Transform::Log => (z > 0.0).then(|| z.ln()),
        }
    }
}

/// Applies `map` to one column; rows outside the transform's domain are
/// listed in the error (0-based).
pub fn transform_column(cloud: &PointCloud, column: usize, map: Transform) -> Result<PointCloud> {
    if column >= cloud.dim() {
        return Err(Error::DimensionMismatch { expected: cloud.dim(), actual: column + 1 });
    }
    let mut values = Vec::with_capacity(cloud.len());
    let mut bad = Vec::new();
    for (i, p) in cloud.points().enumerate() {
        match map.apply(p[column]) {
            Some(v) => values.push(v),
            None => bad.push(i),
        }
    }
    if !bad.is_empty() {
        let shown: Vec<String> = bad.iter().take(MAX_REPORTED).map(|i| i.to_string()).collect();
        return Err(Error::Domain(format!(
            "{map:?} undefined on {} row(s): {}",
            bad.len(),
            shown.join(", ")
        )));
    }
    cloud.with_column(column, &values)
}

/// Histogram of `values` on `bins` equal-width bins over `[min, max]`;
/// returns `(lo, hi, count)` per bin.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (lo + k as f64 * width, lo + (k + 1) as f64 * width, c))
        .collect()
}

/// Square-root rule, clamped to `[1, 100]`.
fn bin_count(m: usize) -> usize {
    ((m as f64).sqrt().ceil() as usize).clamp(1, 100)
}

fn dimension_summary(r: &DimensionReport) -> serde_json::Value {
    let components: Vec<serde_json::Value> = r
        .features
        .components
        .iter()
        .enumerate()
        .filter(|(_, c)| c.kept)
        .map(|(id, c)| {
            let dim = r.ridge.dim();
            let mut centroid = vec![0.0; dim];
            for &m in &c.members {
                centroid.iter_mut().zip(&r.ridge.points[m].destination).for_each(|(a, b)| *a += b);
            }
            centroid.iter_mut().for_each(|a| *a /= c.size() as f64);
            json!({ "component": id, "size": c.size(), "centroid": centroid })
        })
        .collect();
    json!({
        "d": r.d,
        "threshold": r.thresholds.signature,
        "epsilon": { "value": r.thresholds.epsilon, "provenance": r.thresholds.epsilon_provenance },
        "min_size": { "value": r.thresholds.min_size, "provenance": r.thresholds.min_size_provenance },
        "ridge_points": r.ridge.points.len(),
        "converged": r.ridge.converged().count(),
        "degenerate_gap": r.ridge.points.iter().filter(|p| p.degenerate_gap).count(),
        "sharp_points": r.features.sharp_points.len(),
        "components": r.features.components.len(),
        "kept_components": components,
    })
}

/// Machine-readable run summary; deterministic given the inputs.
pub fn summary_json(report: &RunReport) -> serde_json::Value {
    json!({
        "n": report.n,
        "dim": report.dim,
        "bandwidth": report.bandwidth,
        "domain": report.domain,
        "config": report.config,
        "dimensions": report.dims.iter().map(dimension_summary).collect::<Vec<_>>(),
    })
}

/// Writes per-dimension signature, CDF, histogram and feature tables plus
/// `summary.json` and `timing.json` into `dir`, creating it if needed.
pub fn export_diagnostics(report: &RunReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let strs = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();

    for r in &report.dims {
        let d = r.d;
        let table = r.point_table();

        let p = dir.join(format!("signatures_d{d}.csv"));
        let rows = table.iter().map(|t| {
            vec![t.origin.to_string(), t.converged.to_string(), fmt_f64(t.signature), t.sharp.to_string()]
        });
        write_rows(&p, &strs(&["origin", "converged", "signature", "sharp"]), rows)?;
        written.push(p);

        let mut sorted = r.signatures.clone();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len();
        let p = dir.join(format!("cdf_d{d}.csv"));
        let rows = sorted.iter().enumerate().map(|(i, v)| vec![fmt_f64(*v), fmt_f64((i + 1) as f64 / m as f64)]);
        write_rows(&p, &strs(&["signature", "cdf"]), rows)?;
        written.push(p);

        let p = dir.join(format!("hist_d{d}.csv"));
        let rows = histogram(&r.signatures, bin_count(m))
            .into_iter()
            .map(|(lo, hi, c)| vec![fmt_f64(lo), fmt_f64(hi), c.to_string()]);
        write_rows(&p, &strs(&["lo", "hi", "count"]), rows)?;
        written.push(p);

        let p = dir.join(format!("features_d{d}.csv"));
        let mut header = coordinate_header(report.dim);
        header.extend(strs(&["origin", "signature", "component", "kept"]));
        let rows = table.iter().filter(|t| t.sharp).map(|t| {
            let mut row: Vec<String> = t.destination.iter().map(|v| fmt_f64(*v)).collect();
            row.push(t.origin.to_string());
            row.push(fmt_f64(t.signature));
            row.push(t.component.map_or(String::new(), |c| c.to_string()));
            row.push(t.kept.to_string());
            row
        });
        write_rows(&p, &header, rows)?;
        written.push(p);
    }

    let p = dir.join("summary.json");
    fs::write(&p, serde_json::to_string_pretty(&summary_json(report))? + "\n")?;
    written.push(p);
    let p = dir.join("timing.json");
    fs::write(&p, serde_json::to_string_pretty(&report.timing)? + "\n")?;
    written.push(p);
    Ok(written)
}
