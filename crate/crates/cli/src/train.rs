use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use meshderiv::dataset::{read_dataset, write_atomic, Split};
use meshderiv::field::DT_KEY;
use meshderiv::nn::{init_model, train_with, write_checkpoint, Checkpoint, ModelConfig, TrainConfig};
use meshderiv::simulate::Integrator;
use serde_json::json;

use crate::config::Settings;
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Standard,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "desk" => Ok(Self::Desk),
            "standard" => Ok(Self::Standard),
            other => Err(format!("unknown preset {other:?} (desk or standard)")),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Desk => "desk",
            Self::Standard => "standard",
        })
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of labeled trajectory containers.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for checkpoints, `loss.csv` and `run.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `desk` (narrow, one core) or `standard`.
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Steps per free-running training window.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Drop the MLS gradient and Laplacian features.
    #[arg(long)]
    ablate_mls: bool,
    /// `euler`, `heun` or `rk4`.
    #[arg(long)]
    integrator: Option<Integrator>,
    /// Message-passing rounds (overrides the preset).
    #[arg(long)]
    rounds: Option<usize>,
    /// Comma-separated global parameters fed to the model. Default: every
    /// global except `dt`.
    #[arg(long)]
    global_keys: Option<String>,
}

pub fn run(a: TrainArgs, config: Option<&Path>) -> CliResult {
    let mut s = Settings::load("train", config)?;
    let data = s.path("data", a.data)?;
    let out = s.path("out", a.out)?;
    let preset = s.get("preset", a.preset, Preset::Desk)?;
    let d = TrainConfig::default();
    let tc = TrainConfig {
        epochs: s.get("epochs", a.epochs, d.epochs)?,
        lr: s.get("lr", a.lr, d.lr)?,
        k: s.get("k", a.k, d.k)?,
        seed: s.get("seed", a.seed, d.seed)?,
    };
    let ablate = s.switch("ablate-mls", a.ablate_mls)?;
    let integrator = s.get("integrator", a.integrator, Integrator::Euler)?;
    let rounds: Option<usize> = s.opt("rounds", a.rounds)?;
    let keys: Option<String> = s.opt("global-keys", a.global_keys)?;
    s.finish()?;

    let ds = read_dataset(&data)?;
    let first = ds
        .split(Split::Train)
        .next()
        .ok_or_else(|| CliError::Config(format!("{} has no training cases", data.display())))?;
    let channels = first.channels().to_vec();
    let global_keys: Vec<String> = match keys {
        Some(k) => k.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect(),
        None => first.globals.keys().into_iter().filter(|k| k != DT_KEY).collect(),
    };
    let mut cfg = match preset {
        Preset::Desk => ModelConfig::desk(channels, global_keys),
        Preset::Standard => ModelConfig::standard(channels, global_keys),
    };
    cfg.use_mls = !ablate;
    cfg.integrator = integrator;
    if let Some(r) = rounds {
        cfg.rounds = r;
    }

    let model = init_model(cfg, &ds, tc.seed)?;
    eprintln!(
        "training {} parameters on {} cases for {} epochs",
        model.n_params(),
        ds.split(Split::Train).count(),
        tc.epochs
    );
    let outcome = train_with(model, &ds, &tc, |r| {
        let val = r.val_loss.map_or("-".to_string(), |v| format!("{v:.4e}"));
        eprintln!("epoch {:>4} train {:.4e} val {val} lr {:.3e}", r.epoch, r.train_loss, r.lr);
    })?;

    std::fs::create_dir_all(&out).map_err(meshderiv::Error::from)?;
    write_checkpoint(
        &out.join("best.ckpt"),
        &Checkpoint {
            model: outcome.best.clone(),
            optimizer: None,
        },
    )?;
    write_checkpoint(
        &out.join("last.ckpt"),
        &Checkpoint {
            model: outcome.last.clone(),
            optimizer: Some(outcome.optimizer.clone()),
        },
    )?;
    let mut csv = String::from("epoch,train_loss,val_loss,lr\n");
    for r in &outcome.history {
        let val = r.val_loss.map_or("undefined".to_string(), |v| format!("{v:e}"));
        let _ = writeln!(csv, "{},{:e},{val},{:e}", r.epoch, r.train_loss, r.lr);
    }
    write_atomic(&out.join("loss.csv"), csv.as_bytes())?;
    let first_loss = outcome.history.first().map(|r| r.train_loss);
    let last_loss = outcome.history.last().map(|r| r.train_loss);
    s.manifest(json!({
        "data": data.display().to_string(),
        "model": outcome.best.config,
        "parameters": outcome.best.n_params(),
        "best_epoch": outcome.best_epoch,
        "first_train_loss": first_loss,
        "last_train_loss": last_loss,
        "outputs": ["best.ckpt", "last.ckpt", "loss.csv"],
    }))
    .write(&out)?;
    eprintln!("best epoch {} written to {}", outcome.best_epoch, out.join("best.ckpt").display());
    Ok(())
}
