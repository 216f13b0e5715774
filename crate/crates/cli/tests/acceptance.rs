//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use meshderiv::datagen::diffusion::{generate_diffusion_dataset, DiffusionSpec, DIFFUSION_CHANNEL};
use meshderiv::datagen::shock::{full_grid_rows, make_split, parameter_grid, simulate_shock, CflRule, ShockCase};
use meshderiv::dataset::{Split, TrajectoryDataset};
use meshderiv::field::StateField;
use meshderiv::mesh::{make_perturbed_mesh, PerturbedMeshSpec};
use meshderiv::metrics::{self, evaluate_rollout, MetricOptions};
use meshderiv::nn::{check_window_gradient, init_model, rollout_model, train, ModelConfig, RebuildPolicy, TrainConfig};
use meshderiv::simulate::{global_errors, loglog_slope, Integrator};
use meshderiv::stencil_check::{run_stencil_check, StencilCheckOptions};

type Check = Result<(bool, String), String>;

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

struct Log {
    failed: Vec<u8>,
}

impl Log {
    fn line(&mut self, id: u8, name: &str, check: Check) {
        let (ok, detail) = check.unwrap_or_else(|e| (false, format!("error: {e}")));
        if !ok {
            self.failed.push(id);
        }
        println!("{} {id:>2} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// Criteria 1 to 3 share one stencil-check run.
fn stencil_criteria(log: &mut Log) {
    let opts = StencilCheckOptions::default();
    let t = Instant::now();
    let r = match run_stencil_check(&opts, &[]) {
        Ok(r) => r,
        Err(e) => {
            for (id, name) in [(1, "MLS gradient exactness"), (2, "MLS Laplacian exactness"), (3, "operator invariances")] {
                log.line(id, name, Err(fail(&e)));
            }
            return;
        }
    };
    let secs = t.elapsed().as_secs_f64();
    log.line(
        1,
        "MLS gradient exactness",
        Ok((
            r.n_meshes == 100 && r.gradient_ok(&opts) && secs < 10.0,
            format!(
                "max error {:.2e} over {} meshes (jitter {}, k = {}) in {secs:.1} s",
                r.gradient.error, r.n_meshes, opts.mesh.jitter, opts.mesh.k
            ),
        )),
    );
    log.line(
        2,
        "MLS Laplacian exactness",
        Ok((
            r.laplacian_ok(&opts) && r.flagged_ok(&opts),
            format!(
                "max error {:.2e} on unflagged nodes, flagged fraction {:.3}%",
                r.laplacian.error,
                100.0 * r.flagged_fraction()
            ),
        )),
    );
    log.line(
        3,
        "operator invariances",
        Ok((
            r.invariants_ok(),
            format!(
                "linearity {:.1e}, constants {:.1e}, translation bit-identical {} (generic {:.1e}), scale {:.1e} (alpha 2 exact {})",
                r.linearity, r.constant, r.translation_identical, r.translation_rel, r.scale_rel, r.scale_pow2_identical
            ),
        )),
    );
}

fn convergence() -> Check {
    let dts = [0.2, 0.1, 0.05];
    let exact = [(-1.0f64).exp()];
    let mut parts = Vec::new();
    let mut ok = true;
    for (integ, expected, tol) in [(Integrator::Euler, 1.0, 0.1), (Integrator::Heun, 2.0, 0.1), (Integrator::Rk4, 4.0, 0.3)] {
        let mut f = |s: &[f64]| -> meshderiv::Result<Vec<f64>> { Ok(s.iter().map(|v| -v).collect()) };
        let e = global_errors(integ, &mut f, &[1.0], 1.0, &exact, &dts).map_err(fail)?;
        let p = loglog_slope(&dts, &e).map_err(fail)?;
        ok &= (p - expected).abs() <= tol;
        parts.push(format!("{integ} {p:.3}"));
    }
    Ok((ok, format!("observed orders {}", parts.join(", "))))
}

fn gradient_check() -> Check {
    let spec = DiffusionSpec {
        n_train: 2,
        n_val: 0,
        n_test: 0,
        mesh: PerturbedMeshSpec {
            nx: 8,
            ny: 8,
            ..Default::default()
        },
        n_steps: 4,
        ..Default::default()
    };
    let ds = generate_diffusion_dataset(&spec).map_err(fail)?;
    let case = &ds.cases[0];
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    let mut min_checked = usize::MAX;
    for use_mls in [true, false] {
        for integ in [Integrator::Euler, Integrator::Rk4] {
            for k in [1, 4] {
                let mut cfg = ModelConfig::desk(vec![DIFFUSION_CHANNEL.into()], case.globals.keys());
                cfg.use_mls = use_mls;
                cfg.integrator = integ;
                cfg.rounds = 2;
                let model = init_model(cfg, &ds, 3).map_err(fail)?;
                let geom = model.geometry(&case.mesh, &case.edges).map_err(fail)?;
                let globals = model.global_features(&case.globals).map_err(fail)?;
                let truth: Vec<&[f64]> = case.frames[..=k].iter().map(StateField::values).collect();
                let dt = case.globals.dt().ok_or("no dt")?;
                let r = check_window_gradient(&model, &geom, &globals, &truth, dt, 60, 1e-5).map_err(fail)?;
                worst = worst.max(r.worst);
                min_checked = min_checked.min(r.n_checked);
                runs += 1;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((
        worst < 1e-4 && min_checked >= 50 && secs < 60.0,
        format!(
            "worst relative error {worst:.2e} over {runs} configurations x {min_checked} parameters (K 1 and 4, MLS on and off, Euler and RK4) in {secs:.1} s"
        ),
    ))
}

fn shock_tube() -> Check {
    let t = Instant::now();
    let case = ShockCase::new(100_000.0, 1.0);
    let traj = simulate_shock(&case).map_err(fail)?;
    let l1 = traj.density_l1(3).map_err(fail)?;
    let cons = traj.conservation_error();
    let worst_cons = cons.iter().fold(0.0f64, |m, v| m.max(*v));
    let y = traj.y_nonuniformity();
    let secs = t.elapsed().as_secs_f64();
    Ok((
        case.n_cells == 64 && l1 < 0.02 && worst_cons < 1e-10 && y < 1e-12 && secs < 120.0,
        format!(
            "64x64 density L1 {:.3}% of rho_L, conservation {worst_cons:.1e}, y-nonuniformity {y:.1e}, {secs:.1} s",
            100.0 * l1
        ),
    ))
}

fn cfl_range() -> Check {
    let rows = full_grid_rows(CflRule::ExactWaveSpeed).map_err(fail)?;
    let (lo, hi) = rows.iter().fold((f64::MAX, 0.0f64), |(a, b), r| (a.min(r.dt), b.max(r.dt)));
    let ok = (lo / 3.84e-6 - 1.0).abs() <= 0.05 && (hi / 1.41e-5 - 1.0).abs() <= 0.05;
    Ok((ok, format!("dt range [{lo:.4e}, {hi:.4e}] s against [3.84e-6, 1.41e-5] s")))
}

fn split() -> Check {
    let points = parameter_grid();
    let labels = make_split(&points).map_err(fail)?;
    let count = |s: Split| labels.iter().filter(|&&l| l == s).count();
    let at = |p: f64, r: f64| {
        points
            .iter()
            .position(|g| g.p_left == p && g.rho_left == r)
            .map(|k| labels[k])
    };
    let counts = (count(Split::Train), count(Split::Val), count(Split::Test));
    let a = at(50_000.0, 0.5);
    let b = at(100_000.0, 1.0);
    Ok((
        counts == (400, 25, 75) && a == Some(Split::Test) && b == Some(Split::Val),
        format!("counts {counts:?}, (50000, 0.5) {a:?}, (100000, 1.0) {b:?}"),
    ))
}

fn metric_identities() -> Check {
    let (mesh, _) = make_perturbed_mesh(&PerturbedMeshSpec { nx: 16, ny: 16, ..Default::default() }, 2).map_err(fail)?;
    let n = mesh.n_nodes();
    let channels = vec!["h".to_string(), "q".to_string()];
    let frames: Vec<StateField> = (0..6)
        .map(|t| {
            let v = (0..2 * n)
                .map(|i| {
                    let p = mesh.positions()[i / 2];
                    0.2 + 0.5 * ((3.0 * p[0] + t as f64 * 0.3).sin() * p[1]).abs() + 0.1 * (i % 2) as f64
                })
                .collect();
            StateField::new(v, channels.clone(), 0.1 * t as f64)
        })
        .collect::<meshderiv::Result<_>>()
        .map_err(fail)?;
    let opts = MetricOptions {
        depth_channel: Some(0),
        ..Default::default()
    };
    let r = evaluate_rollout("identity", &frames, &frames, mesh.positions(), &opts).map_err(fail)?;
    let mut bad = Vec::new();
    let mut want = |ch: &str, m: &str, v: f64| {
        if r.scalar(ch, m) != Some(v) {
            bad.push(format!("{ch}/{m} = {:?}", r.scalar(ch, m)));
        }
    };
    for ch in ["all", "h", "q"] {
        for m in ["rmse_fin", "rmse_auc", "rrmse_fin", "rrmse_auc"] {
            want(ch, m, 0.0);
        }
    }
    for ch in ["h", "q"] {
        want(ch, "ssim_fin", 1.0);
        want(ch, "ssim_auc", 1.0);
        want(ch, "r2", 1.0);
        want(ch, "nmse", 0.0);
    }
    want("h", "nse", 1.0);
    want("h", "csi_0.3", 1.0);
    let mut exact = |name: &str, got: Option<f64>, v: f64| {
        if got != Some(v) {
            bad.push(format!("{name} = {got:?}"));
        }
    };
    let flat = metrics::auc(&[0.7; 5], &[0.1, 0.2, 0.4, 0.5, 0.9]).map_err(fail)?.value;
    exact("constant AUC", Some(flat), 0.7);
    let ramp = metrics::auc(&[0.0, 0.25, 0.5, 0.75, 1.0], &[0.0, 1.0, 2.0, 3.0, 4.0]).map_err(fail)?.value;
    exact("ramp AUC", Some(ramp), 0.5);

    let depth: Vec<f64> = (0..10).map(|i| 0.1 + 0.07 * i as f64).collect();
    let mean = depth.iter().sum::<f64>() / depth.len() as f64;
    exact("NSE of mean predictor", metrics::nse(&[mean; 10], &depth).map_err(fail)?, 0.0);
    exact("NSE of perfect prediction", metrics::nse(&depth, &depth).map_err(fail)?, 1.0);

    let doubled: Vec<f64> = depth.iter().map(|v| 2.0 * v).collect();
    exact("RRMSE of doubled truth", metrics::rmse_rrmse(&doubled, &depth, 1).map_err(fail)?.1, 1.0);

    // 3 hits, 1 miss, 1 false alarm, 5 correct negatives at threshold 0.3.
    let truth = [0.5, 0.6, 0.7, 0.8, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1];
    let pred = [0.5, 0.6, 0.7, 0.1, 0.8, 0.1, 0.1, 0.1, 0.1, 0.1];
    exact("CSI counting example", metrics::csi(&pred, &truth, 0.3).map_err(fail)?, 0.6);
    Ok((
        bad.is_empty(),
        if bad.is_empty() {
            "perfect rollout gives RMSE 0, SSIM 1, R2 1, NSE 1, CSI 1; mean-predictor NSE 0; CSI 3/5 = 0.6; ramp AUC 0.5; constant AUC exact; RRMSE of 2x truth 1".into()
        } else {
            bad.join(", ")
        },
    ))
}

fn run_cli(dir: &Path, config: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_meshderiv"))
        .current_dir(dir)
        .env_remove("MESHDERIV_SEED")
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .map_err(fail)?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("`{}` exited {}: {}", args.join(" "), out.status, String::from_utf8_lossy(&out.stderr).lines().last().unwrap_or("")))
    }
}

fn pipeline(dir: &Path, config: &Path) -> Result<f64, String> {
    let t = Instant::now();
    run_cli(dir, config, &["gen", "--out", "data"])?;
    run_cli(dir, config, &["train", "--data", "data", "--out", "model"])?;
    run_cli(dir, config, &["rollout", "--checkpoint", "model/best.ckpt", "--data", "data", "--out", "pred"])?;
    run_cli(dir, config, &["eval", "--pred", "pred", "--data", "data", "--out", "eval"])?;
    Ok(t.elapsed().as_secs_f64())
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if let Ok(bytes) = std::fs::read(&p) {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), bytes);
            }
        }
    }
    out
}

/// `case_id -> value` for one channel and metric of `metrics.csv`.
fn metric_column(csv: &str, channel: &str, metric: &str) -> Vec<f64> {
    csv.lines()
        .skip(1)
        .filter_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f.len() == 4 && f[1] == channel && f[2] == metric).then(|| f[3].parse().ok()).flatten()
        })
        .collect()
}

/// Criterion 12, and criterion 9 read from the first pipeline run. Returns
/// the seed-0 held-out RRMSE AUC values for criterion 10.
fn desk_pipeline(log: &mut Log) -> Option<Vec<f64>> {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk-diffusion.conf");
    let config = match config.canonicalize() {
        Ok(c) => c,
        Err(e) => {
            log.line(9, "desk diffusion benchmark", Err(fail(&e)));
            log.line(12, "CLI pipeline", Err(fail(&e)));
            return None;
        }
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline(a.path(), &config);
    let mut aucs = None;
    let c9 = first.as_ref().map_err(Clone::clone).and_then(|_| {
        let csv = std::fs::read_to_string(a.path().join("eval/metrics.csv")).map_err(fail)?;
        let fins = metric_column(&csv, DIFFUSION_CHANNEL, "rrmse_fin");
        aucs = Some(metric_column(&csv, DIFFUSION_CHANNEL, "rrmse_auc"));
        let loss = std::fs::read_to_string(a.path().join("model/loss.csv")).map_err(fail)?;
        let train: Vec<f64> = loss.lines().skip(1).filter_map(|l| l.split(',').nth(1)?.parse().ok()).collect();
        let data = meshderiv::dataset::read_dataset(&a.path().join("data")).map_err(fail)?;
        let nodes = data.cases[0].mesh.n_nodes();
        let n_train = data.split(Split::Train).count();
        let steps = data.cases[0].frames.len() - 1;
        let mean = fins.iter().sum::<f64>() / fins.len().max(1) as f64;
        let (l0, l1) = (train[0], *train.last().unwrap());
        Ok((
            !fins.is_empty() && mean < 0.15 && l1 < 0.1 * l0 && train.len() == 200,
            format!(
                "{n_train} training cases, {nodes} nodes, {steps} steps, {} epochs: held-out mean RRMSE_fin {mean:.4} (cases {}), final train loss {:.2}% of epoch 1",
                train.len(),
                fins.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" "),
                100.0 * l1 / l0
            ),
        ))
    });
    log.line(9, "desk diffusion benchmark", c9);
    let c12 = first.and_then(|t1| {
        let t2 = pipeline(b.path(), &config)?;
        let (fa, fb) = (files(a.path()), files(b.path()));
        let differing: Vec<String> = fa
            .keys()
            .chain(fb.keys())
            .filter(|k| fa.get(*k) != fb.get(*k))
            .map(|k| k.display().to_string())
            .collect();
        Ok((
            t1 < 900.0 && t2 < 900.0 && differing.is_empty() && !fa.is_empty(),
            if differing.is_empty() {
                format!("gen, train, rollout, eval in {t1:.0} s and {t2:.0} s; {} files byte-identical across runs", fa.len())
            } else {
                format!("differing files: {}", differing.join(", "))
            },
        ))
    });
    log.line(12, "CLI pipeline", c12);
    aucs
}

fn held_out_aucs(ds: &TrajectoryDataset, use_mls: bool, seed: u64) -> Result<Vec<f64>, String> {
    let keys = ds.cases[0].globals.keys().into_iter().filter(|k| k != "dt").collect();
    let mut cfg = ModelConfig::desk(vec![DIFFUSION_CHANNEL.into()], keys);
    cfg.use_mls = use_mls;
    let model = init_model(cfg, ds, seed).map_err(fail)?;
    let tc = TrainConfig {
        epochs: 200,
        k: 4,
        lr: 3e-3,
        seed,
    };
    let out = train(model, ds, &tc).map_err(fail)?;
    let opts = MetricOptions {
        ssim_resolution: None,
        ..Default::default()
    };
    ds.split(Split::Test)
        .map(|c| {
            let r = rollout_model(&out.best, &c.mesh, &c.edges, &c.frames[0], &c.globals, c.frames.len() - 1, RebuildPolicy::Frozen)
                .map_err(|f| f.error.to_string())?;
            let m = evaluate_rollout(&c.id, &r.frames, &c.frames, c.mesh.positions(), &opts).map_err(fail)?;
            m.scalar(DIFFUSION_CHANNEL, "rrmse_auc").ok_or_else(|| "undefined RRMSE".to_string())
        })
        .collect()
}

fn ablation(seed0_mls: Option<Vec<f64>>) -> Check {
    let ds = generate_diffusion_dataset(&DiffusionSpec::default()).map_err(fail)?;
    let mut with = Vec::new();
    let mut without = Vec::new();
    let mut per_seed = Vec::new();
    for seed in 0..3u64 {
        let a = match (&seed0_mls, seed) {
            (Some(v), 0) if !v.is_empty() => v.clone(),
            _ => held_out_aucs(&ds, true, seed)?,
        };
        let b = held_out_aucs(&ds, false, seed)?;
        per_seed.push(format!("seed {seed}: {:.4} vs {:.4}", median(a.clone()), median(b.clone())));
        with.extend(a);
        without.extend(b);
    }
    let (m1, m0) = (median(with), median(without));
    Ok((m1 <= m0, format!("median held-out RRMSE AUC with MLS {m1:.4}, without {m0:.4} ({})", per_seed.join("; "))))
}

fn main() {
    let t = Instant::now();
    let mut log = Log { failed: Vec::new() };
    stencil_criteria(&mut log);
    log.line(4, "integrator convergence orders", convergence());
    log.line(5, "gradient check", gradient_check());
    log.line(6, "shock tube", shock_tube());
    log.line(7, "CFL time-step range", cfl_range());
    log.line(8, "split membership", split());
    log.line(11, "metric identities", metric_identities());
    let seed0 = desk_pipeline(&mut log);
    log.line(10, "MLS ablation", ablation(seed0));
    println!(
        "{} of 12 criteria passed in {:.0} s",
        12 - log.failed.len(),
        t.elapsed().as_secs_f64()
    );
    if !log.failed.is_empty() {
        println!("failed: {:?}", log.failed);
        std::process::exit(1);
    }
}
