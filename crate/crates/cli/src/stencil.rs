use std::path::{Path, PathBuf};

use clap::Args;
use meshderiv::mesh::{read_mesh_text, PerturbedMeshSpec};
use meshderiv::stencil_check::{run_stencil_check, StencilCheckOptions};
use serde_json::json;

use crate::config::Settings;
use crate::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct StencilArgs {
    /// Number of random meshes.
    #[arg(long)]
    meshes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also check this mesh (plain-text node and edge list).
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Treat flagged nodes as failures.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    knn: Option<usize>,
    /// Directory for `report.json` and `run.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(a: StencilArgs, config: Option<&Path>) -> CliResult {
    let mut s = Settings::load("stencil-check", config)?;
    let d = StencilCheckOptions::default();
    let m = PerturbedMeshSpec::default();
    let opts = StencilCheckOptions {
        n_meshes: s.get("meshes", a.meshes, d.n_meshes)?,
        seed: s.get("seed", a.seed, d.seed)?,
        mesh: PerturbedMeshSpec {
            nx: s.get("nx", a.nx, m.nx)?,
            ny: s.get("ny", a.ny, m.ny)?,
            jitter: s.get("jitter", a.jitter, m.jitter)?,
            k: s.get("knn", a.knn, m.k)?,
            ..m
        },
        ..d
    };
    let strict = s.switch("strict", a.strict)?;
    let extra_path = s.opt("mesh", a.mesh.map(|p| p.display().to_string()))?;
    let out = s.get("out", a.out.map(|p| p.display().to_string()), "stencil-check".to_string())?;
    s.finish()?;

    let mut extra = Vec::new();
    if let Some(p) = &extra_path {
        let text = std::fs::read_to_string(p)
            .map_err(|e| CliError::Config(format!("cannot read mesh {p}: {e}")))?;
        extra.push(read_mesh_text(&text)?);
    }
    let report = run_stencil_check(&opts, &extra)?;
    print!("{}", report.summary());

    let passed = report.passed(&opts);
    let strict_fail = strict && !report.flagged.is_empty();
    let out = PathBuf::from(out);
    std::fs::create_dir_all(&out).map_err(meshderiv::Error::from)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Failed(e.to_string()))?;
    meshderiv::dataset::write_atomic(&out.join("report.json"), format!("{text}\n").as_bytes())?;
    s.manifest(json!({
        "passed": passed,
        "flagged": report.flagged.len(),
        "flagged_fraction": report.flagged_fraction(),
    }))
    .write(&out)?;

    if !passed {
        println!("FAIL");
        return Err(CliError::Failed("operator exactness or invariance check failed".into()));
    }
    if strict_fail {
        println!("FAIL (strict: {} flagged nodes)", report.flagged.len());
        return Err(CliError::Failed("flagged nodes present under --strict".into()));
    }
    println!("PASS");
    Ok(())
}
