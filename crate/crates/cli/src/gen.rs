use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use meshderiv::datagen::diffusion::{generate_diffusion_dataset, DiffusionSpec, K_KEY, UX_KEY, UY_KEY};
use meshderiv::datagen::shock::{cases_csv, full_grid_rows, generate_shock_case, sample_grid, CaseRow, CflRule, ShockCase};
use meshderiv::dataset::{case_file_name, write_atomic, write_case, Case};
use meshderiv::mesh::PerturbedMeshSpec;
use rayon::prelude::*;
use serde_json::json;

use crate::config::Settings;
use crate::{pool, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Shock,
    Diffusion,
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "shock" => Ok(Self::Shock),
            "diffusion" => Ok(Self::Diffusion),
            other => Err(format!("unknown family {other:?} (shock or diffusion)")),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Shock => "shock",
            Self::Diffusion => "diffusion",
        })
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// `shock` or `diffusion`.
    #[arg(long)]
    family: Option<Family>,
    /// Output directory for containers, `cases.csv` and `run.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Shock: number of grid cases sampled across the splits (default 8).
    #[arg(long)]
    cases: Option<usize>,
    /// Shock: all 500 grid cases with their split labels.
    #[arg(long)]
    full_grid: bool,
    /// Shock: write `cases.csv` without simulating.
    #[arg(long)]
    manifest_only: bool,
    /// Shock: `exact-wave-speed` or `initial-characteristic`.
    #[arg(long)]
    cfl: Option<String>,
    /// Shock: cells per side.
    #[arg(long)]
    cells: Option<usize>,
    /// Shock: stored frames per trajectory.
    #[arg(long)]
    frames: Option<usize>,
    /// Diffusion: stored steps after the initial frame.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
}

pub fn run(a: GenArgs, config: Option<&Path>) -> CliResult {
    let mut s = Settings::load("gen", config)?;
    let family: Family = s.required("family", a.family)?;
    let out = s.path("out", a.out.clone())?;
    let seed = s.get("seed", a.seed, 0u64)?;
    let details = match family {
        Family::Shock => shock(&mut s, &a, &out, seed)?,
        Family::Diffusion => diffusion(&mut s, &a, &out, seed)?,
    };
    s.manifest(details).write(&out)
}

fn shock(s: &mut Settings, a: &GenArgs, out: &Path, seed: u64) -> CliResult<serde_json::Value> {
    let rule: CflRule = s.get("cfl", a.cfl.clone(), "exact-wave-speed".to_string())?.parse()?;
    let full = s.switch("full-grid", a.full_grid)?;
    let manifest_only = s.switch("manifest-only", a.manifest_only)?;
    let template = ShockCase::new(1.0, 1.0);
    let cells = s.get("cells", a.cells, template.n_cells)?;
    let frames = s.get("frames", a.frames, template.n_frames)?;
    let jobs = s.get("jobs", a.jobs, 1usize)?;
    let rows: Vec<CaseRow> = if full {
        full_grid_rows(rule)?
    } else {
        let n = s.get("cases", a.cases, 8usize)?;
        sample_grid(n, seed)?
            .iter()
            .map(|(g, split)| CaseRow::new(g, *split, rule))
            .collect::<meshderiv::Result<_>>()?
    };
    s.finish()?;
    fs::create_dir_all(out).map_err(meshderiv::Error::from)?;
    write_atomic(&out.join("cases.csv"), cases_csv(&rows).as_bytes())?;

    let mut written = Vec::new();
    if !manifest_only {
        let results: Vec<CliResult<String>> = pool(jobs)?.install(|| {
            rows.par_iter()
                .map(|row| {
                    let mut case = ShockCase::new(row.p_left, row.rho_left);
                    case.cfl_rule = rule;
                    case.n_cells = cells;
                    case.n_frames = frames;
                    let c = generate_shock_case(&case, &row.id, Some(row.split))
                        .map_err(|e| CliError::Failed(format!("case {}: {e}", row.id)))?;
                    save(out, &c)
                })
                .collect()
        });
        for r in results {
            written.push(r?);
        }
        eprintln!("wrote {} shock cases to {}", written.len(), out.display());
    }
    Ok(json!({
        "family": "shock",
        "cases": rows.len(),
        "containers": written,
    }))
}

fn save(out: &Path, case: &Case) -> CliResult<String> {
    let name = case_file_name(&case.id);
    write_case(&out.join(&name), case)?;
    Ok(name)
}

fn diffusion(s: &mut Settings, a: &GenArgs, out: &Path, seed: u64) -> CliResult<serde_json::Value> {
    let d = DiffusionSpec::default();
    let m = PerturbedMeshSpec::default();
    let spec = DiffusionSpec {
        n_train: s.get("n-train", a.n_train, d.n_train)?,
        n_val: s.get("n-val", a.n_val, d.n_val)?,
        n_test: s.get("n-test", a.n_test, d.n_test)?,
        mesh: PerturbedMeshSpec {
            nx: s.get("nx", a.nx, m.nx)?,
            ny: s.get("ny", a.ny, m.ny)?,
            jitter: s.get("jitter", None, m.jitter)?,
            k: s.get("knn", None, m.k)?,
            ..m
        },
        k_range: (s.get("k-min", None, d.k_range.0)?, s.get("k-max", None, d.k_range.1)?),
        speed_range: (s.get("speed-min", None, d.speed_range.0)?, s.get("speed-max", None, d.speed_range.1)?),
        angle_range: (s.get("angle-min", None, d.angle_range.0)?, s.get("angle-max", None, d.angle_range.1)?),
        dt: s.get("dt", None, d.dt)?,
        n_steps: s.get("steps", a.steps, d.n_steps)?,
        refinement: s.get("substeps", None, d.refinement)?,
        n_bumps: s.get("bumps", None, d.n_bumps)?,
        boundary_pin: s.get("pin", None, d.boundary_pin)?,
        seed,
    };
    s.finish()?;
    let ds = generate_diffusion_dataset(&spec)?;
    fs::create_dir_all(out).map_err(meshderiv::Error::from)?;
    let mut csv = String::from("case_id,k,u_x,u_y,dt,split\n");
    let mut written = Vec::new();
    for c in &ds.cases {
        let g = |k: &str| c.globals.get(k).unwrap_or(f64::NAN);
        let split = c.split.map_or("", |s| s.as_str());
        let _ = writeln!(csv, "{},{:e},{:e},{:e},{:e},{split}", c.id, g(K_KEY), g(UX_KEY), g(UY_KEY), spec.dt);
        written.push(save(out, c)?);
    }
    write_atomic(&out.join("cases.csv"), csv.as_bytes())?;
    eprintln!("wrote {} diffusion cases to {}", written.len(), out.display());
    Ok(json!({
        "family": "diffusion",
        "cases": ds.cases.len(),
        "containers": written,
    }))
}
