//! Rollout error metrics.
//!
//! Fields are flat node-major slices with `nc` values per node. Metrics whose
//! denominator vanishes return `None` instead of an error.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::StateField;
use crate::mesh::Point;

/// CSI depth thresholds in metres.
pub const CSI_LOW: f64 = 0.05;
pub const CSI_HIGH: f64 = 0.30;
/// Depth above which a node counts as important.
pub const IMPORTANT_DEPTH: f64 = 0.3;
pub const DEFAULT_RASTER: usize = 128;

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(invalid(format!(
            "prediction has {} values, truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(invalid("empty field"));
    }
    Ok(())
}

/// RMSE with the Euclidean norm over channels, and RMSE divided by the RMS of
/// the truth.
pub fn rmse_rrmse(pred: &[f64], truth: &[f64], nc: usize) -> Result<(f64, Option<f64>)> {
    check_pair(pred, truth)?;
    if nc == 0 || truth.len() % nc != 0 {
        return Err(invalid(format!("{} values do not split into {nc} channels", truth.len())));
    }
    let n = (truth.len() / nc) as f64;
    let err: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    let sig: f64 = truth.iter().map(|t| t * t).sum();
    let rmse = (err / n).sqrt();
    let rms = (sig / n).sqrt();
    Ok((rmse, (rms > 0.0).then(|| rmse / rms)))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sse(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum()
}

fn sst(truth: &[f64]) -> f64 {
    let m = mean(truth);
    truth.iter().map(|t| (t - m) * (t - m)).sum()
}

/// Mean squared error over the population variance of the truth.
pub fn nmse(pred: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    check_pair(pred, truth)?;
    let var = sst(truth);
    Ok((var > 0.0).then(|| sse(pred, truth) / var))
}

/// Coefficient of determination.
pub fn r_squared(pred: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    check_pair(pred, truth)?;
    let var = sst(truth);
    Ok((var > 0.0).then(|| 1.0 - sse(pred, truth) / var))
}

/// Nash–Sutcliffe efficiency of a depth field.
pub fn nse(pred: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    check_pair(pred, truth)?;
    if truth.len() < 2 {
        return Err(invalid("NSE needs at least two nodes"));
    }
    r_squared(pred, truth)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Contingency {
    pub hits: usize,
    pub misses: usize,
    pub false_alarms: usize,
}

impl Contingency {
    pub fn count(pred: &[f64], truth: &[f64], threshold: f64) -> Self {
        let mut c = Self::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p > threshold, t > threshold) {
                (true, true) => c.hits += 1,
                (false, true) => c.misses += 1,
                (true, false) => c.false_alarms += 1,
                (false, false) => {}
            }
        }
        c
    }

    pub fn csi(&self) -> Option<f64> {
        let d = self.hits + self.misses + self.false_alarms;
        (d > 0).then(|| self.hits as f64 / d as f64)
    }
}

/// Critical success index at `threshold`.
pub fn csi(pred: &[f64], truth: &[f64], threshold: f64) -> Result<Option<f64>> {
    check_pair(pred, truth)?;
    if !(threshold > 0.0) {
        return Err(invalid(format!("CSI threshold must be positive, got {threshold}")));
    }
    Ok(Contingency::count(pred, truth, threshold).csi())
}

/// Time-normalized trapezoidal integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Auc {
    pub value: f64,
    /// Set when the series had a single point and `value` is that point.
    pub single_point: bool,
}

pub fn auc(series: &[f64], times: &[f64]) -> Result<Auc> {
    if series.len() != times.len() || series.is_empty() {
        return Err(invalid(format!(
            "series has {} points and {} timestamps",
            series.len(),
            times.len()
        )));
    }
    if series.len() == 1 {
        return Ok(Auc {
            value: series[0],
            single_point: true,
        });
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("timestamps must increase strictly"));
    }
    // Integrating deviations from the first sample keeps constants exact.
    let c = series[0];
    let area: f64 = (1..series.len())
        .map(|i| 0.5 * ((series[i] - c) + (series[i - 1] - c)) * (times[i] - times[i - 1]))
        .sum();
    Ok(Auc {
        value: c + area / (times[times.len() - 1] - times[0]),
        single_point: false,
    })
}

/// Nearest-node sampling of node values onto a square pixel grid spanning
/// the bounding box of the nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub resolution: usize,
    /// Node index per pixel, row-major with row 0 at the lowest y.
    pub pixel_node: Vec<usize>,
}

impl Raster {
    pub fn new(positions: &[Point], resolution: usize) -> Result<Self> {
        if resolution < 16 {
            return Err(invalid(format!("raster resolution must be at least 16, got {resolution}")));
        }
        if positions.is_empty() {
            return Err(invalid("cannot rasterize an empty mesh"));
        }
        let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
        for p in positions {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let r = resolution as f64;
        let mut pixel_node = Vec::with_capacity(resolution * resolution);
        for row in 0..resolution {
            let y = lo[1] + (row as f64 + 0.5) / r * (hi[1] - lo[1]);
            for col in 0..resolution {
                let x = lo[0] + (col as f64 + 0.5) / r * (hi[0] - lo[0]);
                let mut best = (f64::MAX, 0);
                for (i, p) in positions.iter().enumerate() {
                    let d = (p[0] - x).powi(2) + (p[1] - y).powi(2);
                    if d < best.0 {
                        best = (d, i);
                    }
                }
                pixel_node.push(best.1);
            }
        }
        Ok(Self { resolution, pixel_node })
    }

    /// Pixels of one channel.
    pub fn sample(&self, values: &[f64], nc: usize, channel: usize) -> Vec<f64> {
        self.pixel_node.iter().map(|&i| values[i * nc + channel]).collect()
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian filter keeping only windows fully inside the image.
fn filter_valid(img: &[f64], n: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let m = n + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; n * m];
    for r in 0..n {
        for c in 0..m {
            rows[r * m + c] = (0..SSIM_WINDOW).map(|t| k[t] * img[r * n + c + t]).sum();
        }
    }
    let mut out = vec![0.0; m * m];
    for r in 0..m {
        for c in 0..m {
            out[r * m + c] = (0..SSIM_WINDOW).map(|t| k[t] * rows[(r + t) * m + c]).sum();
        }
    }
    out
}

/// Mean SSIM of two square images of side `n` with dynamic range `range`.
pub fn ssim_image(x: &[f64], y: &[f64], n: usize, range: f64) -> Result<Option<f64>> {
    if x.len() != n * n || y.len() != n * n {
        return Err(invalid(format!("images must have {} pixels", n * n)));
    }
    if n < SSIM_WINDOW {
        return Err(invalid(format!("images must be at least {SSIM_WINDOW} pixels wide")));
    }
    if !(range > 0.0) {
        return Ok(None);
    }
    let k = gaussian_kernel();
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mx = filter_valid(x, n, &k);
    let my = filter_valid(y, n, &k);
    let mxx = filter_valid(&prod(x, x), n, &k);
    let myy = filter_valid(&prod(y, y), n, &k);
    let mxy = filter_valid(&prod(x, y), n, &k);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (a, b) = (mx[i], my[i]);
            let vx = mxx[i] - a * a;
            let vy = myy[i] - b * b;
            let cov = mxy[i] - a * b;
            ((2.0 * a * b + c1) * (2.0 * cov + c2)) / ((a * a + b * b + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(Some(total / mx.len() as f64))
}

/// SSIM of one channel after nearest-node rasterization. The dynamic range
/// is the spread of the truth over all nodes.
pub fn ssim_raster(pred: &[f64], truth: &[f64], nc: usize, channel: usize, raster: &Raster) -> Result<Option<f64>> {
    check_pair(pred, truth)?;
    if channel >= nc {
        return Err(invalid(format!("channel {channel} out of range for {nc} channels")));
    }
    let (lo, hi) = truth
        .iter()
        .skip(channel)
        .step_by(nc)
        .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let n = raster.resolution;
    ssim_image(&raster.sample(pred, nc, channel), &raster.sample(truth, nc, channel), n, hi - lo)
}

/// Nodes whose `channel` exceeds `threshold` at any frame.
pub fn important_nodes(frames: &[&[f64]], nc: usize, channel: usize, threshold: f64) -> Vec<bool> {
    let n = frames.first().map_or(0, |f| f.len() / nc);
    (0..n)
        .map(|i| frames.iter().any(|f| f[i * nc + channel] > threshold))
        .collect()
}

/// Values of the masked nodes only.
pub fn select_nodes(values: &[f64], nc: usize, mask: &[bool]) -> Vec<f64> {
    values
        .chunks_exact(nc)
        .zip(mask)
        .filter(|(_, &keep)| keep)
        .flat_map(|(v, _)| v.iter().copied())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    /// Raster side for SSIM; `None` skips SSIM.
    pub ssim_resolution: Option<usize>,
    /// Channel holding water depth; enables NSE and CSI.
    pub depth_channel: Option<usize>,
    pub csi_thresholds: Vec<f64>,
    /// Restrict every metric to nodes whose depth exceeds this at any frame.
    pub important_depth: Option<f64>,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            ssim_resolution: Some(DEFAULT_RASTER),
            depth_channel: None,
            csi_thresholds: vec![CSI_LOW, CSI_HIGH],
            important_depth: None,
        }
    }
}

/// Metrics of one channel, or of all channels jointly (`name == "all"`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub name: String,
    pub rmse: Vec<f64>,
    pub rrmse: Vec<Option<f64>>,
    pub ssim: Vec<Option<f64>>,
    /// Pooled over every evaluated frame and node.
    pub nmse: Option<f64>,
    pub r2: Option<f64>,
    pub nse: Option<f64>,
    pub csi: Vec<(f64, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub case_id: String,
    /// Times of the evaluated frames; the initial condition is excluded.
    pub times: Vec<f64>,
    pub n_nodes: usize,
    pub channels: Vec<ChannelMetrics>,
}

fn series_auc(series: &[Option<f64>], times: &[f64]) -> Option<f64> {
    let v: Option<Vec<f64>> = series.iter().copied().collect();
    auc(&v?, times).ok().map(|a| a.value)
}

impl ChannelMetrics {
    /// Scalar summary rows `(metric, value)`.
    pub fn scalars(&self, times: &[f64]) -> Vec<(String, Option<f64>)> {
        let rmse: Vec<Option<f64>> = self.rmse.iter().map(|&v| Some(v)).collect();
        let mut out = vec![
            ("rmse_fin".to_string(), self.rmse.last().copied()),
            ("rmse_auc".to_string(), series_auc(&rmse, times)),
            ("rrmse_fin".to_string(), self.rrmse.last().copied().flatten()),
            ("rrmse_auc".to_string(), series_auc(&self.rrmse, times)),
        ];
        if !self.ssim.is_empty() {
            out.push(("ssim_fin".into(), self.ssim.last().copied().flatten()));
            out.push(("ssim_auc".into(), series_auc(&self.ssim, times)));
        }
        if self.name != "all" {
            out.push(("nmse".into(), self.nmse));
            out.push(("r2".into(), self.r2));
        }
        if let Some(v) = self.nse {
            out.push(("nse".into(), Some(v)));
        }
        for &(thr, v) in &self.csi {
            out.push((format!("csi_{thr}"), v));
        }
        out
    }
}

impl MetricReport {
    pub fn channel(&self, name: &str) -> Option<&ChannelMetrics> {
        self.channels.iter().find(|c| c.name == name)
    }

    /// Scalar metric by channel and name; `None` if absent or undefined.
    pub fn scalar(&self, channel: &str, metric: &str) -> Option<f64> {
        self.channel(channel)?
            .scalars(&self.times)
            .into_iter()
            .find(|(m, _)| m == metric)
            .and_then(|(_, v)| v)
    }
}

pub const REPORT_HEADER: &str = "case_id,channel,metric,value\n";
pub const SERIES_HEADER: &str = "case_id,channel,metric,step,time,value\n";

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:e}"))
}

/// One row per case, channel and scalar metric.
pub fn report_csv(reports: &[MetricReport]) -> String {
    let mut s = String::from(REPORT_HEADER);
    for r in reports {
        for ch in &r.channels {
            for (m, v) in ch.scalars(&r.times) {
                let _ = writeln!(s, "{},{},{},{}", r.case_id, ch.name, m, fmt_value(v));
            }
        }
    }
    s
}

/// Per-frame series of RMSE, RRMSE and SSIM.
pub fn series_csv(reports: &[MetricReport]) -> String {
    let mut s = String::from(SERIES_HEADER);
    for r in reports {
        for ch in &r.channels {
            let rmse: Vec<Option<f64>> = ch.rmse.iter().map(|&v| Some(v)).collect();
            for (m, series) in [("rmse", &rmse), ("rrmse", &ch.rrmse), ("ssim", &ch.ssim)] {
                for (k, v) in series.iter().enumerate() {
                    let _ = writeln!(s, "{},{},{},{},{:e},{}", r.case_id, ch.name, m, k + 1, r.times[k], fmt_value(*v));
                }
            }
        }
    }
    s
}

/// Evaluates a rollout against the truth. Both sequences start at the
/// initial condition, which is skipped.
pub fn evaluate_rollout(
    case_id: &str,
    pred: &[StateField],
    truth: &[StateField],
    positions: &[Point],
    opts: &MetricOptions,
) -> Result<MetricReport> {
    if pred.len() != truth.len() {
        return Err(invalid(format!(
            "rollout has {} frames, truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    if truth.len() < 2 {
        return Err(invalid("need at least one frame after the initial condition"));
    }
    let nc = truth[0].n_channels();
    for (p, t) in pred.iter().zip(truth) {
        if !p.same_layout(t) || !t.same_layout(&truth[0]) {
            return Err(invalid("prediction and truth frames differ in layout"));
        }
    }
    if positions.len() != truth[0].n_nodes() {
        return Err(invalid("positions do not match the field size"));
    }
    if let Some(c) = opts.depth_channel {
        if c >= nc {
            return Err(invalid(format!("depth channel {c} out of range for {nc} channels")));
        }
    }
    let mask = match (opts.important_depth, opts.depth_channel) {
        (Some(thr), Some(c)) => {
            let frames: Vec<&[f64]> = truth.iter().map(|f| f.values()).collect();
            Some(important_nodes(&frames, nc, c, thr))
        }
        (Some(_), None) => return Err(invalid("important-node filtering needs a depth channel")),
        _ => None,
    };
    let restrict = |v: &[f64]| match &mask {
        Some(m) => select_nodes(v, nc, m),
        None => v.to_vec(),
    };
    let kept_positions: Vec<Point> = match &mask {
        Some(m) => positions.iter().zip(m).filter(|(_, &k)| k).map(|(p, _)| *p).collect(),
        None => positions.to_vec(),
    };
    let n_nodes = kept_positions.len();
    if n_nodes == 0 {
        return Err(invalid("no nodes left after masking"));
    }
    let raster = match opts.ssim_resolution {
        Some(res) => Some(Raster::new(&kept_positions, res)?),
        None => None,
    };
    let frames: Vec<(Vec<f64>, Vec<f64>)> = pred[1..]
        .iter()
        .zip(&truth[1..])
        .map(|(p, t)| (restrict(p.values()), restrict(t.values())))
        .collect();
    let times: Vec<f64> = truth[1..].iter().map(|f| f.time).collect();

    let mut channels = Vec::with_capacity(nc + 1);
    let mut all = ChannelMetrics {
        name: "all".into(),
        rmse: Vec::new(),
        rrmse: Vec::new(),
        ssim: Vec::new(),
        nmse: None,
        r2: None,
        nse: None,
        csi: Vec::new(),
    };
    for (p, t) in &frames {
        let (a, b) = rmse_rrmse(p, t, nc)?;
        all.rmse.push(a);
        all.rrmse.push(b);
    }
    if nc > 1 {
        channels.push(all);
    }
    for c in 0..nc {
        let mut m = ChannelMetrics {
            name: truth[0].channels()[c].clone(),
            rmse: Vec::new(),
            rrmse: Vec::new(),
            ssim: Vec::new(),
            nmse: None,
            r2: None,
            nse: None,
            csi: Vec::new(),
        };
        let mut pooled_p = Vec::with_capacity(n_nodes * frames.len());
        let mut pooled_t = Vec::with_capacity(n_nodes * frames.len());
        for (p, t) in &frames {
            let pc: Vec<f64> = p.iter().skip(c).step_by(nc).copied().collect();
            let tc: Vec<f64> = t.iter().skip(c).step_by(nc).copied().collect();
            let (a, b) = rmse_rrmse(&pc, &tc, 1)?;
            m.rmse.push(a);
            m.rrmse.push(b);
            if let Some(r) = &raster {
                m.ssim.push(ssim_raster(p, t, nc, c, r)?);
            }
            pooled_p.extend(pc);
            pooled_t.extend(tc);
        }
        m.nmse = nmse(&pooled_p, &pooled_t)?;
        m.r2 = r_squared(&pooled_p, &pooled_t)?;
        if opts.depth_channel == Some(c) {
            m.nse = if pooled_t.len() >= 2 { nse(&pooled_p, &pooled_t)? } else { None };
            for &thr in &opts.csi_thresholds {
                m.csi.push((thr, csi(&pooled_p, &pooled_t, thr)?));
            }
        }
        channels.push(m);
    }
    Ok(MetricReport {
        case_id: case_id.to_string(),
        times,
        n_nodes,
        channels,
    })
}
