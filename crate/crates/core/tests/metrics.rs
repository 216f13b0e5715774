use meshderiv::field::StateField;
use meshderiv::mesh::{make_perturbed_mesh, PerturbedMeshSpec};
use meshderiv::metrics::*;
use proptest::prelude::*;

/// Direct SSIM: a full 11×11 window per output pixel, no separability.
fn ssim_naive(x: &[f64], y: &[f64], n: usize, range: f64) -> f64 {
    let w = 11;
    let mut k = vec![0.0; w * w];
    for a in 0..w {
        for b in 0..w {
            let (da, db) = (a as f64 - 5.0, b as f64 - 5.0);
            k[a * w + b] = (-(da * da + db * db) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let m = n - w + 1;
    let mut total = 0.0;
    for r in 0..m {
        for c in 0..m {
            let (mut mx, mut my) = (0.0, 0.0);
            for a in 0..w {
                for b in 0..w {
                    let i = (r + a) * n + c + b;
                    mx += k[a * w + b] * x[i];
                    my += k[a * w + b] * y[i];
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for a in 0..w {
                for b in 0..w {
                    let i = (r + a) * n + c + b;
                    let g = k[a * w + b];
                    vx += g * (x[i] - mx).powi(2);
                    vy += g * (y[i] - my).powi(2);
                    cov += g * (x[i] - mx) * (y[i] - my);
                }
            }
            total += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    total / (m * m) as f64
}

fn smooth_image(n: usize, phase: f64) -> Vec<f64> {
    (0..n * n)
        .map(|i| {
            let (r, c) = ((i / n) as f64 / n as f64, (i % n) as f64 / n as f64);
            (6.0 * r + phase).sin() * (4.0 * c).cos() + 0.3 * r
        })
        .collect()
}

#[test]
fn ssim_matches_direct_window_sum() {
    let n = 24;
    let x = smooth_image(n, 0.0);
    let y: Vec<f64> = smooth_image(n, 0.4).iter().map(|v| 0.8 * v + 0.1).collect();
    let fast = ssim_image(&x, &y, n, 2.0).unwrap().unwrap();
    let slow = ssim_naive(&x, &y, n, 2.0);
    assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
    assert!((-1.0..=1.0).contains(&fast));
}

#[test]
fn shifted_field_keeps_structure() {
    let (mesh, _) = make_perturbed_mesh(&PerturbedMeshSpec::default(), 3).unwrap();
    let truth: Vec<f64> = mesh
        .positions()
        .iter()
        .map(|p| (-((p[0] - 0.5).powi(2) + (p[1] - 0.4).powi(2)) / 0.05).exp())
        .collect();
    let (lo, hi) = truth.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let pred: Vec<f64> = truth.iter().map(|v| v + 0.1 * (hi - lo)).collect();
    let raster = Raster::new(mesh.positions(), DEFAULT_RASTER).unwrap();
    let s = ssim_raster(&pred, &truth, 1, 0, &raster).unwrap().unwrap();
    assert!(s > 0.5 && s < 1.0, "{s}");
    assert_eq!(ssim_raster(&truth, &truth, 1, 0, &raster).unwrap(), Some(1.0));
}

#[test]
fn ground_truth_against_itself() {
    let (mesh, _) = make_perturbed_mesh(&PerturbedMeshSpec { nx: 10, ny: 10, ..Default::default() }, 1).unwrap();
    let n = mesh.n_nodes();
    let channels = vec!["h".to_string(), "q".to_string()];
    let frames: Vec<StateField> = (0..5)
        .map(|t| {
            let v = (0..2 * n)
                .map(|i| {
                    let amp = if i / 2 < n / 2 { 0.3 } else { 0.01 };
                    let base = if i / 2 < n / 2 { 0.4 } else { 0.05 };
                    base + amp * ((i + t) as f64 * 0.7).sin()
                })
                .collect();
            StateField::new(v, channels.clone(), t as f64 * 0.5).unwrap()
        })
        .collect();
    let opts = MetricOptions {
        ssim_resolution: Some(32),
        depth_channel: Some(0),
        ..Default::default()
    };
    let r = evaluate_rollout("c0", &frames, &frames, mesh.positions(), &opts).unwrap();
    assert_eq!(r.times.len(), 4);
    for ch in ["all", "h", "q"] {
        assert_eq!(r.scalar(ch, "rmse_auc"), Some(0.0));
        assert_eq!(r.scalar(ch, "rrmse_fin"), Some(0.0));
    }
    for ch in ["h", "q"] {
        assert_eq!(r.scalar(ch, "ssim_auc"), Some(1.0));
        assert_eq!(r.scalar(ch, "r2"), Some(1.0));
    }
    assert_eq!(r.scalar("h", "nse"), Some(1.0));
    assert_eq!(r.scalar("h", "csi_0.3"), Some(1.0));

    let csv = report_csv(std::slice::from_ref(&r));
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    let expected: usize = r.channels.iter().map(|c| c.scalars(&r.times).len()).sum();
    assert_eq!(rows.len(), expected);
    let mut keys: Vec<_> = rows.iter().map(|l| l.rsplit_once(',').unwrap().0).collect();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), rows.len(), "one row per case, channel and metric");

    let masked = MetricOptions {
        important_depth: Some(IMPORTANT_DEPTH),
        ..opts
    };
    let m = evaluate_rollout("c0", &frames, &frames, mesh.positions(), &masked).unwrap();
    assert!(m.n_nodes < n && m.n_nodes > 0);
}

fn field(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, len)
}

proptest! {
    #[test]
    fn rrmse_is_scale_free(t in field(24), p in field(24), alpha in prop_oneof![-3.0f64..-0.1, 0.1f64..3.0]) {
        let (_, base) = rmse_rrmse(&p, &t, 2).unwrap();
        let ps: Vec<f64> = p.iter().map(|v| alpha * v).collect();
        let ts: Vec<f64> = t.iter().map(|v| alpha * v).collect();
        let (_, scaled) = rmse_rrmse(&ps, &ts, 2).unwrap();
        prop_assert!((base.unwrap() - scaled.unwrap()).abs() <= 1e-12 * base.unwrap().max(1.0));
    }

    #[test]
    fn r2_is_one_minus_nmse(t in field(30), p in field(30)) {
        let r2 = r_squared(&p, &t).unwrap().unwrap();
        let nm = nmse(&p, &t).unwrap().unwrap();
        prop_assert!((r2 - (1.0 - nm)).abs() <= 1e-12 * nm.max(1.0));
        prop_assert!(nse(&p, &t).unwrap().unwrap() <= 1.0);
    }

    #[test]
    fn metrics_ignore_node_order(t in field(20), p in field(20), rot in 0usize..20) {
        let rotate = |v: &[f64]| { let mut w = v.to_vec(); w.rotate_left(rot); w };
        let (pt, pp) = (rotate(&t), rotate(&p));
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
        prop_assert!(close(rmse_rrmse(&p, &t, 1).unwrap().0, rmse_rrmse(&pp, &pt, 1).unwrap().0));
        prop_assert!(close(nmse(&p, &t).unwrap().unwrap(), nmse(&pp, &pt).unwrap().unwrap()));
        prop_assert_eq!(csi(&p, &t, 0.3).unwrap(), csi(&pp, &pt, 0.3).unwrap());
    }

    #[test]
    fn csi_bounded_and_falls_with_false_alarms(t in field(16), p in field(16)) {
        let c = Contingency::count(&p, &t, 0.5);
        if let Some(v) = c.csi() {
            prop_assert!((0.0..=1.0).contains(&v));
            if c.hits > 0 {
                let more = Contingency { false_alarms: c.false_alarms + 1, ..c };
                prop_assert!(more.csi().unwrap() <= v);
            }
        }
    }

    #[test]
    fn auc_ignores_time_units(s in prop::collection::vec(0.0f64..1.0, 2..12), step in 0.01f64..2.0) {
        let times: Vec<f64> = (0..s.len())
            .scan(0.0, |acc, i| {
                *acc += step * (1.0 + 0.5 * (i % 3) as f64);
                Some(*acc)
            })
            .collect();
        let scaled: Vec<f64> = times.iter().map(|t| t * 1000.0).collect();
        let a = auc(&s, &times).unwrap().value;
        let b = auc(&s, &scaled).unwrap().value;
        prop_assert!((a - b).abs() < 1e-12);
        let c = vec![s[0]; s.len()];
        prop_assert!((auc(&c, &times).unwrap().value - s[0]).abs() < 1e-12);
    }
}
