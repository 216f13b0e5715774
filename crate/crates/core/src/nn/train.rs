//! Free-running training over K-step windows.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Case, Split, TrajectoryDataset};
use crate::error::{invalid, Error, Result};
use crate::mesh::build_neighborhoods;

use super::adamw::AdamW;
use super::model::{floor_scale, Geometry, ModelConfig, ModelParams, Normalization};
use super::objective::{accumulate_window_grad, normalized_loss, window_forward};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Steps per free-running window.
    pub k: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            k: 4,
            lr: 3e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean window loss over the epoch.
    pub train_loss: f64,
    /// Full-trajectory rollout loss on the validation split.
    pub val_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Lowest validation loss (training loss when there is no validation split).
    pub best: ModelParams,
    pub best_epoch: usize,
    pub last: ModelParams,
    pub optimizer: AdamW,
    pub history: Vec<EpochRecord>,
}

/// A case prepared for training: geometry, globals and raw frames.
struct Prepared<'a> {
    case: &'a Case,
    geometry: Geometry,
    globals: Vec<f64>,
    dt: f64,
}

impl<'a> Prepared<'a> {
    fn new(model: &ModelParams, case: &'a Case) -> Result<Self> {
        if case.channels() != model.config.channels.as_slice() {
            return Err(invalid(format!(
                "case {} has channels {:?}, the model expects {:?}",
                case.id,
                case.channels(),
                model.config.channels
            )));
        }
        let dt = case
            .dt()
            .ok_or_else(|| invalid(format!("case {} has no dt", case.id)))?;
        Ok(Self {
            case,
            geometry: model.geometry(&case.mesh, &case.edges)?,
            globals: model.global_features(&case.globals)?,
            dt,
        })
    }

    /// Geometry at the start of a window. Lagrangian models see positions
    /// from the ground-truth frame, held fixed across the window.
    fn window_geometry(&self, model: &ModelParams, start: usize) -> Result<std::borrow::Cow<'_, Geometry>> {
        if model.config.lagrangian.is_none() {
            return Ok(std::borrow::Cow::Borrowed(&self.geometry));
        }
        let pos = model.positions_for(self.case.mesh.positions(), self.case.frames[start].values());
        Ok(std::borrow::Cow::Owned(self.geometry.rebuild(&pos)?))
    }

    fn frames(&self, start: usize, len: usize) -> Vec<&[f64]> {
        self.case.frames[start..start + len].iter().map(|f| f.values()).collect()
    }
}

/// Window start frames for a trajectory of `n_frames` frames.
pub fn window_starts(n_frames: usize, k: usize) -> Vec<usize> {
    if k == 0 || n_frames < k + 1 {
        return Vec::new();
    }
    (0..=(n_frames - 1 - k)).step_by(k).collect()
}

/// Statistics of the training split used to scale model inputs and outputs.
pub fn fit_normalization(config: &ModelConfig, cases: &[&Case]) -> Result<Normalization> {
    if cases.is_empty() {
        return Err(invalid("normalization needs at least one training case"));
    }
    let nc = config.n_channels();
    let ng = config.n_globals();
    let mut norm = Normalization::identity(nc, ng);
    let mut sum = vec![0.0; nc];
    let mut sq = vec![0.0; nc];
    let mut count = 0usize;
    let mut g2 = vec![0.0; nc];
    let mut l2 = vec![0.0; nc];
    let mut op_count = 0usize;
    let mut o2 = vec![0.0; nc];
    let mut o_count = 0usize;
    let mut glob = vec![Vec::new(); ng];
    let mut len_sum = 0.0;
    let mut len_count = 0usize;
    for case in cases {
        if case.channels() != config.channels.as_slice() {
            return Err(invalid(format!("case {} has mismatched channels", case.id)));
        }
        let nbr = build_neighborhoods(&case.mesh, &case.edges)?;
        for d in nbr.displacements() {
            len_sum += d[0].hypot(d[1]);
            len_count += 1;
        }
        for (k, v) in case.globals.vector(&config.global_keys)?.into_iter().enumerate() {
            glob[k].push(v);
        }
        for f in &case.frames {
            for (k, v) in f.values().iter().enumerate() {
                sum[k % nc] += v;
                sq[k % nc] += v * v;
            }
            count += f.n_nodes();
        }
        let dt = case.dt().ok_or_else(|| invalid(format!("case {} has no dt", case.id)))?;
        for w in case.frames.windows(2) {
            for (k, (a, b)) in w[0].values().iter().zip(w[1].values()).enumerate() {
                let r = (b - a) / dt;
                o2[k % nc] += r * r;
            }
            o_count += w[0].n_nodes();
        }
        if config.use_mls {
            let geom = Geometry::build(&case.mesh, &case.edges, true, config.mls)?;
            let (gs, ls) = geom.stencils.as_ref().expect("built with stencils");
            for f in &case.frames {
                let g = gs.apply_raw(&geom.neighborhood, f.values(), nc)?;
                let l = ls.apply_raw(&geom.neighborhood, f.values(), nc)?;
                for (k, v) in g.iter().enumerate() {
                    g2[(k / 2) % nc] += v * v / 2.0;
                }
                for (k, v) in l.iter().enumerate() {
                    l2[k % nc] += v * v;
                }
                op_count += f.n_nodes();
            }
        }
    }
    for c in 0..nc {
        let mean = sum[c] / count as f64;
        norm.state_mean[c] = mean;
        norm.state_std[c] = floor_scale((sq[c] / count as f64 - mean * mean).max(0.0).sqrt());
        if op_count > 0 {
            norm.grad_scale[c] = floor_scale((g2[c] / op_count as f64).sqrt());
            norm.lap_scale[c] = floor_scale((l2[c] / op_count as f64).sqrt());
        }
        if o_count > 0 {
            norm.out_scale[c] = floor_scale((o2[c] / o_count as f64).sqrt());
        }
    }
    for (k, vals) in glob.iter().enumerate() {
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
        norm.global_mean[k] = m;
        norm.global_std[k] = floor_scale(var.sqrt());
    }
    norm.length_scale = floor_scale(len_sum / len_count.max(1) as f64);
    Ok(norm)
}

/// Fresh model with normalization fitted on the training split.
pub fn init_model(config: ModelConfig, ds: &TrajectoryDataset, seed: u64) -> Result<ModelParams> {
    let train: Vec<&Case> = ds.split(Split::Train).collect();
    if train.is_empty() {
        return Err(invalid("dataset has no training cases"));
    }
    let norm = fit_normalization(&config, &train)?;
    ModelParams::new(config, norm, seed)
}

/// Mean full-trajectory free-running loss over `cases`; infinite if any
/// rollout diverges.
pub fn rollout_loss(model: &ModelParams, cases: &[&Case]) -> Result<f64> {
    let mut total = 0.0;
    for case in cases {
        let p = Prepared::new(model, case)?;
        let geom = p.window_geometry(model, 0)?;
        let truth = p.frames(0, case.frames.len());
        match window_forward(model, &geom, &p.globals, &truth, p.dt) {
            Ok(pred) => total += normalized_loss(model, &pred, &truth)?,
            Err(Error::Divergence { .. }) => return Ok(f64::INFINITY),
            Err(e) => return Err(e),
        }
    }
    Ok(total / cases.len().max(1) as f64)
}

pub fn train(model: ModelParams, ds: &TrajectoryDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, ds, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    mut model: ModelParams,
    ds: &TrajectoryDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if cfg.k == 0 {
        return Err(invalid("window length k must be at least 1"));
    }
    let train_cases: Vec<&Case> = ds.split(Split::Train).collect();
    if train_cases.is_empty() {
        return Err(invalid("dataset has no training cases"));
    }
    let val_cases: Vec<&Case> = ds.split(Split::Val).collect();
    let prepared = train_cases
        .iter()
        .map(|c| Prepared::new(&model, c))
        .collect::<Result<Vec<_>>>()?;
    let mut windows: Vec<(usize, usize)> = prepared
        .iter()
        .enumerate()
        .flat_map(|(ci, p)| window_starts(p.case.frames.len(), cfg.k).into_iter().map(move |s| (ci, s)))
        .collect();
    if windows.is_empty() {
        return Err(invalid(format!("no training case has more than k = {} steps", cfg.k)));
    }
    let total_steps = (cfg.epochs * windows.len()) as u64;
    let mut opt = AdamW::new(model.n_params(), cfg.lr, total_steps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = model.net.flatten();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, model.clone(), 0);
    for epoch in 1..=cfg.epochs {
        windows.shuffle(&mut rng);
        let lr = opt.learning_rate(opt.step);
        let mut sum = 0.0;
        for &(ci, start) in &windows {
            let p = &prepared[ci];
            let geom = p.window_geometry(&model, start)?;
            let truth = p.frames(start, cfg.k + 1);
            let mut grad = model.net.zeros_like();
            sum += accumulate_window_grad(&model, &geom, &p.globals, &truth, p.dt, 1.0, &mut grad)?;
            opt.update(&mut params, &grad.flatten())?;
            model.net.unflatten(&params)?;
        }
        let train_loss = sum / windows.len() as f64;
        let val_loss = if val_cases.is_empty() {
            None
        } else {
            Some(rollout_loss(&model, &val_cases)?)
        };
        let score = val_loss.unwrap_or(train_loss);
        if score < best.0 {
            best = (score, model.clone(), epoch);
        }
        let rec = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        };
        on_epoch(&rec);
        history.push(rec);
    }
    if best.0.is_infinite() {
        best = (f64::INFINITY, model.clone(), cfg.epochs);
    }
    Ok(TrainOutcome {
        best: best.1,
        best_epoch: best.2,
        last: model,
        optimizer: opt,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_are_non_overlapping() {
        assert_eq!(window_starts(21, 4), vec![0, 4, 8, 12, 16]);
        assert_eq!(window_starts(5, 4), vec![0]);
        assert_eq!(window_starts(4, 4), Vec::<usize>::new());
        assert_eq!(window_starts(4, 1), vec![0, 1, 2]);
    }

    #[test]
    fn empty_training_split_is_rejected() {
        let cfg = ModelConfig::desk(vec!["u".into()], vec![]);
        let ds = TrajectoryDataset::default();
        assert!(matches!(init_model(cfg, &ds, 0), Err(Error::InvalidArgument(_))));
    }
}
