use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use meshderiv::dataset::{read_dataset, write_atomic, Case, Split};
use meshderiv::mesh::Point;
use meshderiv::metrics::{
    evaluate_rollout, important_nodes, report_csv, series_csv, MetricOptions, MetricReport, Raster, DEFAULT_RASTER,
};
use rayon::prelude::*;
use serde_json::json;

use crate::config::Settings;
use crate::{pool, CliError, CliResult};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of predicted trajectories (as written by `rollout`).
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Directory of ground-truth trajectories.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for `metrics.csv`, `series.csv` and `run.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Only evaluate predictions with this split label.
    #[arg(long)]
    split: Option<Split>,
    /// Keep only nodes whose depth exceeds this at some frame.
    #[arg(long)]
    important_nodes: Option<f64>,
    /// Channel name holding water depth; enables NSE and CSI.
    #[arg(long)]
    depth_channel: Option<String>,
    /// SSIM raster side; 0 disables SSIM.
    #[arg(long)]
    ssim_resolution: Option<usize>,
    /// Write final-frame PGM rasters of prediction and truth.
    #[arg(long)]
    raster: bool,
    #[arg(long)]
    jobs: Option<usize>,
}

/// Depth channel named on the command line, or a conventional one when the
/// mask needs it.
fn depth_index(channels: &[String], name: Option<&str>, masking: bool) -> CliResult<Option<usize>> {
    match name {
        Some(n) => channels
            .iter()
            .position(|c| c == n)
            .map(Some)
            .ok_or_else(|| CliError::Config(format!("no channel {n:?} in {channels:?}"))),
        None if masking => Ok(Some(
            channels.iter().position(|c| c == "h" || c == "depth").unwrap_or(0),
        )),
        None => Ok(None),
    }
}

pub fn run(a: EvalArgs, config: Option<&Path>) -> CliResult {
    let mut s = Settings::load("eval", config)?;
    let pred_dir = s.path("pred", a.pred)?;
    let data = s.path("data", a.data)?;
    let out = s.path("out", a.out)?;
    let split: Option<Split> = s.opt("split", a.split)?;
    let threshold: Option<f64> = s.opt("important-nodes", a.important_nodes)?;
    let depth_name: Option<String> = s.opt("depth-channel", a.depth_channel)?;
    let resolution = s.get("ssim-resolution", a.ssim_resolution, DEFAULT_RASTER)?;
    let raster = s.switch("raster", a.raster)?;
    let jobs = s.get("jobs", a.jobs, 1usize)?;
    s.finish()?;

    let preds = read_dataset(&pred_dir)?;
    let truth = read_dataset(&data)?;
    let truth_by_id: BTreeMap<&str, &Case> = truth.cases.iter().map(|c| (c.id.as_str(), c)).collect();
    let mut pairs = Vec::new();
    for p in preds.cases.iter().filter(|c| split.is_none() || c.split == split) {
        let t = truth_by_id
            .get(p.id.as_str())
            .ok_or_else(|| CliError::Config(format!("no ground truth for case {}", p.id)))?;
        if t.mesh.fingerprint() != p.mesh.fingerprint() {
            return Err(CliError::Config(format!("case {}: prediction and truth meshes differ", p.id)));
        }
        pairs.push((p, *t));
    }
    if pairs.is_empty() {
        return Err(CliError::Config(format!("no predictions to evaluate in {}", pred_dir.display())));
    }
    let channels = pairs[0].1.channels().to_vec();
    let depth = depth_index(&channels, depth_name.as_deref(), threshold.is_some())?;
    let opts = MetricOptions {
        ssim_resolution: (resolution > 0).then_some(resolution),
        depth_channel: depth,
        important_depth: threshold,
        ..Default::default()
    };

    if raster {
        std::fs::create_dir_all(out.join("rasters")).map_err(meshderiv::Error::from)?;
    }
    let results: Vec<CliResult<MetricReport>> = pool(jobs)?.install(|| {
        pairs
            .par_iter()
            .map(|(p, t)| {
                let report = evaluate_rollout(&p.id, &p.frames, &t.frames, t.mesh.positions(), &opts)
                    .map_err(|e| CliError::Config(format!("case {}: {e}", p.id)))?;
                if raster {
                    write_rasters(&out, p, t, &opts, resolution.max(16))?;
                }
                Ok(report)
            })
            .collect()
    });
    let reports = results.into_iter().collect::<CliResult<Vec<_>>>()?;

    std::fs::create_dir_all(&out).map_err(meshderiv::Error::from)?;
    write_atomic(&out.join("metrics.csv"), report_csv(&reports).as_bytes())?;
    write_atomic(&out.join("series.csv"), series_csv(&reports).as_bytes())?;
    let summary = summarize(&reports);
    for (ch, metrics) in &summary {
        let line: Vec<String> = ["rmse_fin", "rrmse_fin", "rrmse_auc", "ssim_fin"]
            .iter()
            .filter_map(|m| metrics.get(*m).map(|v| format!("{m} {v:.4e}")))
            .collect();
        println!("{ch}: {}", line.join("  "));
    }
    s.manifest(json!({
        "pred": pred_dir.display().to_string(),
        "data": data.display().to_string(),
        "cases": reports.iter().map(|r| r.case_id.clone()).collect::<Vec<_>>(),
        "evaluated_nodes": reports.iter().map(|r| r.n_nodes).collect::<Vec<_>>(),
        "depth_channel": depth.map(|d| channels[d].clone()),
        "mean": summary,
    }))
    .write(&out)
}

/// Mean of every defined scalar over cases, per channel.
fn summarize(reports: &[MetricReport]) -> BTreeMap<String, BTreeMap<String, f64>> {
    let mut acc: BTreeMap<String, BTreeMap<String, (f64, usize)>> = BTreeMap::new();
    for r in reports {
        for ch in &r.channels {
            for (m, v) in ch.scalars(&r.times) {
                if let Some(v) = v {
                    let e = acc.entry(ch.name.clone()).or_default().entry(m).or_insert((0.0, 0));
                    e.0 += v;
                    e.1 += 1;
                }
            }
        }
    }
    acc.into_iter()
        .map(|(ch, m)| (ch, m.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()))
        .collect()
}

/// Final-frame prediction and truth images per channel, gray levels scaled
/// to the truth range.
fn write_rasters(out: &Path, pred: &Case, truth: &Case, opts: &MetricOptions, resolution: usize) -> CliResult {
    let nc = truth.frames[0].n_channels();
    let frames: Vec<&[f64]> = truth.frames.iter().map(|f| f.values()).collect();
    let keep = match (opts.important_depth, opts.depth_channel) {
        (Some(thr), Some(c)) => important_nodes(&frames, nc, c, thr),
        _ => vec![true; truth.mesh.n_nodes()],
    };
    let idx: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
    let positions: Vec<Point> = idx.iter().map(|&i| truth.mesh.positions()[i]).collect();
    let raster = Raster::new(&positions, resolution)?;
    let last_t = truth.frames.last().map(|f| f.values()).unwrap_or_default();
    let last_p = pred.frames.last().map(|f| f.values()).unwrap_or_default();
    for (c, name) in truth.channels().iter().enumerate() {
        let pick = |v: &[f64]| -> Vec<f64> { raster.pixel_node.iter().map(|&k| v[idx[k] * nc + c]).collect() };
        let (t, p) = (pick(last_t), pick(last_p));
        let (lo, hi) = t.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        for (kind, img) in [("truth", &t), ("pred", &p)] {
            let path = out.join("rasters").join(format!("{}_{name}_{kind}.pgm", truth.id));
            write_atomic(&path, pgm(img, resolution, lo, hi).as_bytes())?;
        }
    }
    Ok(())
}

/// Plain (ASCII) PGM with the top row at the highest y.
fn pgm(img: &[f64], n: usize, lo: f64, hi: f64) -> String {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut s = format!("P2\n{n} {n}\n255\n");
    for row in (0..n).rev() {
        let line: Vec<String> = img[row * n..(row + 1) * n]
            .iter()
            .map(|v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round().to_string())
            .collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}
