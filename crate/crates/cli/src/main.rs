use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use ridgehunt::filtering::{derive_seed, hausdorff, min_size_null, null_threshold_mc, rips_epsilon_null, NullSettings};
use ridgehunt::io::{self, Transform};
use ridgehunt::pipeline::{resolve_bandwidth, BandwidthSpec, EpsilonSpec, MinSizeSpec, ThresholdSpec};
use ridgehunt::synth::{self, IntersectingCurves, ModesRing2d, ModesRingWall3d, Structure, VoronoiFoam};
use ridgehunt::{run_pipeline, Bounds, Error, PipelineConfig, PointCloud, Result};

#[derive(Parser)]
#[command(name = "ridgehunt", version, about = "Find modes, filaments and walls in point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labelled cloud and its ground truth
    Gen(GenArgs),
    /// Run the feature-extraction pipeline and export diagnostics
    Run(RunArgs),
    /// Print null Monte-Carlo thresholds for uniform data on a box
    NullCalibrate(NullArgs),
    /// Score the features of a finished run against ground truth
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Generator {
    #[value(name = "modes-ring-2d")]
    ModesRing2d,
    #[value(name = "modes-ring-wall-3d")]
    ModesRingWall3d,
    IntersectingCurves,
    VoronoiFoam,
    Uniform,
}

#[derive(clap::Args)]
struct GenArgs {
    #[arg(value_enum)]
    kind: Generator,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// JSON object overriding generator defaults, e.g. '{"noise_sd": 0.1}'
    #[arg(long)]
    params: Option<String>,
    /// Point count for `uniform`
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Box for `uniform` as `lo1,lo2,..:hi1,hi2,..`
    #[arg(long, default_value = "0,0:1,1")]
    domain: String,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Transform a column before running, as `COLUMN=MAP` with a 1-based
    /// column and MAP one of identity, neg-log-neg, log
    #[arg(long)]
    transform: Vec<String>,
    /// Comma-separated ridge dimensions (default: all)
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// `auto`, `auto-half` or a positive value
    #[arg(long, default_value = "auto")]
    bandwidth: String,
    /// `heuristic`, `null-mc` or a fixed value
    #[arg(long, default_value = "heuristic")]
    threshold: String,
    /// Per-dimension threshold as `D=SPEC`; repeatable
    #[arg(long = "threshold-d")]
    threshold_d: Vec<String>,
    #[arg(long, default_value_t = 50)]
    null_reps: usize,
    #[arg(long, default_value_t = 0.95)]
    null_quantile: f64,
    /// `auto` or a fixed radius
    #[arg(long, default_value = "auto")]
    rips: String,
    #[arg(long, default_value_t = 10)]
    rips_reps: usize,
    /// `null-mc`, `none` or a fixed count
    #[arg(long, default_value = "null-mc")]
    min_size: String,
    #[arg(long, default_value_t = 20)]
    min_size_reps: usize,
    #[arg(long, default_value_t = 0.95)]
    min_size_quantile: f64,
    /// Convergence tolerance relative to the data diameter
    #[arg(long, default_value_t = ridgehunt::ridges::DEFAULT_RELATIVE_TOL)]
    tol: f64,
    #[arg(long, default_value_t = ridgehunt::ridges::DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Required whenever a Monte-Carlo step is used
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    include_unconverged: bool,
    /// Null-reference box `lo1,..:hi1,..` (default: bounding box of the data)
    #[arg(long)]
    domain: Option<String>,
}

#[derive(clap::Args)]
struct NullArgs {
    /// Take the box, size and bandwidth from this cloud
    #[arg(long)]
    input: Option<PathBuf>,
    /// Box `lo1,..:hi1,..`; overrides the input's bounding box
    #[arg(long)]
    domain: Option<String>,
    /// Sample size; defaults to the input's size
    #[arg(long)]
    n: Option<usize>,
    /// `auto`, `auto-half` (needs --input) or a positive value
    #[arg(long, default_value = "auto")]
    bandwidth: String,
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    #[arg(long, default_value_t = 0.95)]
    quantile: f64,
    #[arg(long)]
    seed: u64,
    /// Also calibrate the Rips radius and minimum component size
    #[arg(long)]
    rips: bool,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Labelled cloud written by `gen` (its truth file must sit next to it)
    #[arg(long)]
    input: PathBuf,
    /// Output directory of `run`
    #[arg(long)]
    run: PathBuf,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| invalid(format!("{what}: cannot parse '{s}' as a number")))
}

fn parse_bounds(s: &str) -> Result<Bounds> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| invalid(format!("box '{s}' must look like lo1,lo2:hi1,hi2")))?;
    let side = |t: &str| t.split(',').map(|v| parse_f64(v, "box")).collect::<Result<Vec<_>>>();
    Bounds::new(side(lo)?, side(hi)?)
}

fn parse_bandwidth(s: &str) -> Result<BandwidthSpec> {
    Ok(match s {
        "auto" => BandwidthSpec::Auto,
        "auto-half" => BandwidthSpec::AutoHalf,
        v => BandwidthSpec::Fixed { value: parse_f64(v, "bandwidth")? },
    })
}

fn parse_threshold(s: &str, reps: usize, quantile: f64) -> Result<ThresholdSpec> {
    Ok(match s {
        "heuristic" => ThresholdSpec::Heuristic,
        "null-mc" => ThresholdSpec::NullMc { reps, quantile },
        v => ThresholdSpec::Fixed { value: parse_f64(v, "threshold")? },
    })
}

fn pipeline_config(a: &RunArgs) -> Result<PipelineConfig> {
    let mut overrides = BTreeMap::new();
    for item in &a.threshold_d {
        let (d, spec) = item
            .split_once('=')
            .ok_or_else(|| invalid(format!("--threshold-d '{item}' must look like D=SPEC")))?;
        let d: usize = d.trim().parse().map_err(|_| invalid(format!("bad dimension in '{item}'")))?;
        overrides.insert(d, parse_threshold(spec.trim(), a.null_reps, a.null_quantile)?);
    }
    let epsilon = match a.rips.as_str() {
        "auto" => EpsilonSpec::AutoNull { reps: a.rips_reps },
        v => EpsilonSpec::Fixed { value: parse_f64(v, "rips")? },
    };
    let min_size = match a.min_size.as_str() {
        "null-mc" => MinSizeSpec::NullMc { reps: a.min_size_reps, quantile: a.min_size_quantile },
        "none" => MinSizeSpec::None,
        v => MinSizeSpec::Fixed { value: v.parse().map_err(|_| invalid(format!("min-size: bad count '{v}'")))? },
    };
    Ok(PipelineConfig {
        dims: a.dims.clone(),
        bandwidth: parse_bandwidth(&a.bandwidth)?,
        threshold: parse_threshold(&a.threshold, a.null_reps, a.null_quantile)?,
        threshold_overrides: overrides,
        epsilon,
        min_size,
        relative_tol: a.tol,
        max_iter: a.max_iter,
        seed: a.seed,
        include_unconverged: a.include_unconverged,
        domain: a.domain.as_deref().map(parse_bounds).transpose()?,
    })
}

fn apply_transforms(mut cloud: PointCloud, specs: &[String]) -> Result<PointCloud> {
    for spec in specs {
        let (col, map) = spec
            .split_once('=')
            .ok_or_else(|| invalid(format!("--transform '{spec}' must look like COLUMN=MAP")))?;
        let col: usize = col.trim().parse().map_err(|_| invalid(format!("bad column in '{spec}'")))?;
        if col == 0 {
            return Err(invalid("transform columns are 1-based"));
        }
        let map: Transform = map.trim().parse()?;
        cloud = io::transform_column(&cloud, col - 1, map)?;
    }
    Ok(cloud)
}

fn generator_params<T: serde::de::DeserializeOwned + Default>(params: &Option<String>) -> Result<T> {
    match params {
        None => Ok(T::default()),
        Some(p) => serde_json::from_str(p).map_err(|e| invalid(format!("--params: {e}"))),
    }
}

fn gen(a: GenArgs) -> Result<()> {
    if let Generator::Uniform = a.kind {
        let cloud = synth::gen_uniform_box(&parse_bounds(&a.domain)?, a.n, a.seed)?;
        io::write_cloud(&a.out, &cloud)?;
        eprintln!("wrote {} points to {}", cloud.len(), a.out.display());
        return Ok(());
    }
    let lc = match a.kind {
        Generator::ModesRing2d => generator_params::<ModesRing2d>(&a.params)?.generate(a.seed)?,
        Generator::ModesRingWall3d => generator_params::<ModesRingWall3d>(&a.params)?.generate(a.seed)?,
        Generator::IntersectingCurves => generator_params::<IntersectingCurves>(&a.params)?.generate(a.seed)?,
        Generator::VoronoiFoam => generator_params::<VoronoiFoam>(&a.params)?.generate(a.seed)?,
        Generator::Uniform => unreachable!(),
    };
    io::write_labeled(&a.out, &lc)?;
    eprintln!(
        "wrote {} points to {} and truth to {}",
        lc.cloud.len(),
        a.out.display(),
        io::truth_path(&a.out).display()
    );
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let config = pipeline_config(&a)?;
    let cloud = apply_transforms(io::read_cloud(&a.input)?.cloud, &a.transform)?;
    let report = run_pipeline(&cloud, &config)?;
    io::export_diagnostics(&report, &a.out)?;
    for r in &report.dims {
        eprintln!(
            "d={}: T={:.4} ({:?}), {} sharp points, {} kept of {} components",
            r.d,
            r.thresholds.signature.value,
            r.thresholds.signature.provenance,
            r.features.sharp_points.len(),
            r.features.kept_count(),
            r.features.components.len()
        );
    }
    eprintln!("diagnostics in {} ({:.1}s)", a.out.display(), report.timing.total);
    Ok(())
}

fn null_calibrate(a: NullArgs) -> Result<()> {
    let cloud = a.input.as_ref().map(io::read_cloud).transpose()?.map(|f| f.cloud);
    let domain = match (&a.domain, &cloud) {
        (Some(s), _) => parse_bounds(s)?,
        (None, Some(c)) => c.bounding_box(),
        (None, None) => return Err(invalid("need --input or --domain")),
    };
    let n = a.n.or(cloud.as_ref().map(PointCloud::len)).ok_or_else(|| invalid("need --input or --n"))?;
    let bandwidth = match (parse_bandwidth(&a.bandwidth)?, &cloud) {
        (BandwidthSpec::Fixed { value }, _) => value,
        (spec, Some(c)) => resolve_bandwidth(spec, c)?,
        (_, None) => return Err(invalid("automatic bandwidth needs --input")),
    };
    let dims = a.dims.clone().unwrap_or_else(|| (0..domain.dim()).collect());
    let mut thresholds = BTreeMap::new();
    for &d in &dims {
        let s = NullSettings { reps: a.reps, quantile: a.quantile, seed: derive_seed(a.seed, d as u64) };
        thresholds.insert(d.to_string(), null_threshold_mc(&domain, n, bandwidth, d, s)?.value);
    }
    let mut out = json!({
        "domain": domain,
        "n": n,
        "bandwidth": bandwidth,
        "reps": a.reps,
        "quantile": a.quantile,
        "seed": a.seed,
        "thresholds": thresholds,
    });
    if a.rips {
        let eps = rips_epsilon_null(&domain, n.max(2), a.reps, a.seed)?;
        let s = NullSettings { reps: a.reps, quantile: a.quantile, seed: a.seed };
        out["epsilon"] = json!(eps);
        out["min_size"] = json!(min_size_null(&domain, n, eps, s)?);
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

/// Kept feature points of one dimension, grouped by component id.
fn read_features(path: &Path, dim: usize) -> Result<BTreeMap<usize, Vec<Vec<f64>>>> {
    let text = std::fs::read_to_string(path)?;
    let mut groups: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for (k, line) in text.lines().enumerate().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != dim + 4 {
            return Err(Error::Parse(format!("{} line {}: expected {} columns", path.display(), k + 1, dim + 4)));
        }
        if cells[dim + 3] != "true" {
            continue;
        }
        let comp: usize = cells[dim + 2]
            .parse()
            .map_err(|_| Error::Parse(format!("{} line {}: bad component", path.display(), k + 1)))?;
        let p = cells[..dim].iter().map(|c| parse_f64(c, "feature")).collect::<Result<Vec<_>>>()?;
        groups.entry(comp).or_default().push(p);
    }
    Ok(groups)
}

fn eval(a: EvalArgs) -> Result<()> {
    let lc = io::read_labeled(&a.input)?;
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.run.join("summary.json"))?)?;
    let h = summary["bandwidth"].as_f64().ok_or_else(|| Error::Parse("summary.json lacks bandwidth".into()))?;
    let dim = lc.cloud.dim();
    let step = h / 20.0;
    let dims: Vec<usize> = summary["dimensions"]
        .as_array()
        .map(|ds| ds.iter().filter_map(|d| d["d"].as_u64()).map(|d| d as usize).collect())
        .unwrap_or_default();

    let mut per_dim = Vec::new();
    for d in dims {
        let groups = read_features(&a.run.join(format!("features_d{d}.csv")), dim)?;
        let truth: Vec<&Structure> = lc.structures_of_dim(d);
        let samples: Vec<Vec<Vec<f64>>> = truth.iter().map(|s| s.sample(step)).collect();
        let mut comps = Vec::new();
        for (id, pts) in &groups {
            let best = samples
                .iter()
                .zip(&truth)
                .map(|(s, t)| (hausdorff(pts, s).unwrap_or(f64::INFINITY), t.label()))
                .min_by(|x, y| x.0.total_cmp(&y.0));
            comps.push(json!({
                "component": id,
                "size": pts.len(),
                "nearest_structure": best.and_then(|b| b.1).map(|l| l.to_string()),
                "hausdorff": best.map(|b| b.0),
                "hausdorff_over_h": best.map(|b| b.0 / h),
            }));
        }
        let all_kept: Vec<Vec<f64>> = groups.values().flatten().cloned().collect();
        let all_truth: Vec<Vec<f64>> = samples.concat();
        let overall = (!all_kept.is_empty() && !all_truth.is_empty()).then(|| hausdorff(&all_kept, &all_truth)).transpose()?;
        per_dim.push(json!({
            "d": d,
            "kept_components": groups.len(),
            "true_structures": truth.len(),
            "hausdorff": overall,
            "components": comps,
        }));
    }
    println!("{}", serde_json::to_string_pretty(&json!({ "bandwidth": h, "dimensions": per_dim }))?);
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse(_) | Error::Json(_) | Error::InvalidCloud(_) => 2,
        Error::ZeroScale
        | Error::OutsideSupport
        | Error::NotSymmetric(_)
        | Error::NonSmooth(_)
        | Error::DegenerateSpectrum(_) => 3,
        Error::InvalidBandwidth(_)
        | Error::DimensionMismatch { .. }
        | Error::RidgeDimension { .. }
        | Error::InvalidArgument(_)
        | Error::Domain(_)
        | Error::Io(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(4) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Run(a) => run(a),
        Command::NullCalibrate(a) => null_calibrate(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
