use std::path::{Path, PathBuf};

use clap::Args;
use meshderiv::dataset::{case_file_name, read_dataset, write_case, Case, Split};
use meshderiv::nn::{read_checkpoint, rollout_model, RebuildPolicy};
use rayon::prelude::*;
use serde_json::json;

use crate::config::Settings;
use crate::{pool, CliError, CliResult};

#[derive(Debug, Args)]
pub struct RolloutArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory of ground-truth containers supplying initial frames.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for prediction containers.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `train`, `val`, `test` or `all`.
    #[arg(long)]
    split: Option<String>,
    /// `frozen` or `every-step` operator rebuilds for lagrangian models.
    #[arg(long)]
    policy: Option<RebuildPolicy>,
    /// Steps per rollout. Default: as many as the ground truth.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
}

enum Outcome {
    Written(String),
    Diverged { id: String, step: usize, error: String },
}

pub fn run(a: RolloutArgs, config: Option<&Path>) -> CliResult {
    let mut s = Settings::load("rollout", config)?;
    let ckpt_path = s.path("checkpoint", a.checkpoint)?;
    let data = s.path("data", a.data)?;
    let out = s.path("out", a.out)?;
    let split = s.get("split", a.split, "test".to_string())?;
    let policy = s.get("policy", a.policy, RebuildPolicy::Frozen)?;
    let steps: Option<usize> = s.opt("steps", a.steps)?;
    let jobs = s.get("jobs", a.jobs, 1usize)?;
    s.finish()?;
    let filter: Option<Split> = if split == "all" { None } else { Some(split.parse()?) };

    let model = read_checkpoint(&ckpt_path)?.model;
    let ds = read_dataset(&data)?;
    let cases: Vec<&Case> = ds
        .cases
        .iter()
        .filter(|c| filter.is_none() || c.split == filter)
        .collect();
    if cases.is_empty() {
        return Err(CliError::Config(format!("no {split} cases in {}", data.display())));
    }
    for c in &cases {
        if c.channels() != model.config.channels.as_slice() {
            return Err(CliError::Config(format!(
                "case {} has channels {:?}; the checkpoint expects {:?}",
                c.id,
                c.channels(),
                model.config.channels
            )));
        }
    }
    std::fs::create_dir_all(&out).map_err(meshderiv::Error::from)?;

    let results: Vec<CliResult<Outcome>> = pool(jobs)?.install(|| {
        cases
            .par_iter()
            .map(|c| {
                let n = steps.unwrap_or(c.frames.len() - 1);
                match rollout_model(&model, &c.mesh, &c.edges, &c.frames[0], &c.globals, n, policy) {
                    Ok(r) => {
                        let pred = Case {
                            id: c.id.clone(),
                            mesh: c.mesh.clone(),
                            edges: c.edges.clone(),
                            frames: r.frames,
                            globals: c.globals.clone(),
                            split: c.split,
                        };
                        let name = case_file_name(&c.id);
                        write_case(&out.join(&name), &pred)?;
                        Ok(Outcome::Written(name))
                    }
                    Err(f) => Ok(Outcome::Diverged {
                        id: c.id.clone(),
                        step: f.step,
                        error: f.error.to_string(),
                    }),
                }
            })
            .collect()
    });
    let mut written = Vec::new();
    let mut diverged = Vec::new();
    for r in results {
        match r? {
            Outcome::Written(name) => written.push(name),
            Outcome::Diverged { id, step, error } => {
                eprintln!("case {id} diverged at step {step}: {error}");
                diverged.push(json!({ "case": id, "step": step, "error": error }));
            }
        }
    }
    s.manifest(json!({
        "checkpoint": ckpt_path.display().to_string(),
        "data": data.display().to_string(),
        "predictions": written,
        "diverged": diverged,
    }))
    .write(&out)?;
    eprintln!("wrote {} rollouts to {}", written.len(), out.display());
    if diverged.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("{} rollouts diverged", diverged.len())))
    }
}
