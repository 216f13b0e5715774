use std::time::Instant;

use meshderiv::mesh::{make_perturbed_mesh, EdgeSet, Mesh, PerturbedMeshSpec};
use meshderiv::mls::{MlsOperatorSet, MlsOptions};
use meshderiv::stencil_check::{run_stencil_check, StencilCheckOptions};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn small_mesh(seed: u64, jitter: f64) -> (Mesh, EdgeSet) {
    let spec = PerturbedMeshSpec {
        nx: 9,
        ny: 9,
        jitter,
        ..Default::default()
    };
    make_perturbed_mesh(&spec, seed).unwrap()
}

/// Unweighted least-squares fit of `s_j − s_i` over the neighbors of `i`,
/// solved by SVD on the raw displacements.
fn svd_fit(mesh: &Mesh, edges: &EdgeSet, s: &[f64], i: usize, quadratic: bool) -> DVector<f64> {
    let p = mesh.positions();
    let nbrs: Vec<usize> = edges.edges().iter().filter(|e| e.0 == i).map(|e| e.1).collect();
    let cols = if quadratic { 5 } else { 2 };
    let mut a = DMatrix::zeros(nbrs.len(), cols);
    let mut b = DVector::zeros(nbrs.len());
    for (r, &j) in nbrs.iter().enumerate() {
        let (dx, dy) = (p[j][0] - p[i][0], p[j][1] - p[i][1]);
        let row = [dx, dy, dx * dx, dy * dy, dx * dy];
        for c in 0..cols {
            a[(r, c)] = row[c];
        }
        b[r] = s[j] - s[i];
    }
    a.svd(true, true).solve(&b, 1e-14).unwrap()
}

#[test]
fn full_suite_meets_tolerances() {
    let opts = StencilCheckOptions::default();
    let t = Instant::now();
    let r = run_stencil_check(&opts, &[]).unwrap();
    let elapsed = t.elapsed().as_secs_f64();
    assert_eq!(r.n_meshes, 100);
    assert!(r.gradient_ok(&opts), "{}", r.summary());
    assert!(r.laplacian_ok(&opts), "{}", r.summary());
    assert!(r.flagged_ok(&opts), "{}", r.summary());
    assert!(r.invariants_ok(), "{}", r.summary());
    assert!(elapsed < 10.0, "took {elapsed} s");
}

#[test]
fn matches_independent_svd_fit() {
    let (mesh, edges) = small_mesh(11, 0.3);
    let ops = MlsOperatorSet::build(&mesh, &edges, MlsOptions::default()).unwrap();
    let s: Vec<f64> = mesh.positions().iter().map(|p| (3.0 * p[0]).sin() * (2.0 * p[1]).exp()).collect();
    let g = ops.gradient(&s, 1).unwrap();
    let l = ops.laplacian(&s, 1).unwrap();
    for i in 0..mesh.n_nodes() {
        let lin = svd_fit(&mesh, &edges, &s, i, false);
        let quad = svd_fit(&mesh, &edges, &s, i, true);
        let lap = 2.0 * (quad[2] + quad[3]);
        assert!((g[2 * i] - lin[0]).abs() < 1e-9 * lin[0].abs().max(1.0), "node {i}");
        assert!((g[2 * i + 1] - lin[1]).abs() < 1e-9 * lin[1].abs().max(1.0), "node {i}");
        assert!((l[i] - lap).abs() < 1e-7 * lap.abs().max(1.0), "node {i}: {} vs {lap}", l[i]);
    }
}

#[test]
fn collinear_neighborhood_is_flagged_and_finite() {
    let mut pts: Vec<[f64; 2]> = (0..6).map(|k| [0.1 * k as f64, 0.2]).collect();
    pts.extend((0..9).map(|k| [1.0 + 0.2 * (k % 3) as f64 + 0.01 * k as f64, 0.2 * (k / 3) as f64]));
    let mut pairs = Vec::new();
    for grp in [0..6, 6..15] {
        for i in grp.clone() {
            for j in grp.clone() {
                if i < j {
                    pairs.push((i, j));
                }
            }
        }
    }
    let mesh = Mesh::new(pts).unwrap();
    let edges = EdgeSet::from_undirected(&pairs, mesh.n_nodes()).unwrap();
    let ops = MlsOperatorSet::build(&mesh, &edges, MlsOptions::default()).unwrap();
    assert_eq!(ops.flagged_nodes(), (0..6).collect::<Vec<_>>());
    let s: Vec<f64> = mesh.positions().iter().map(|p| p[0] * p[0] + p[1]).collect();
    assert!(ops.gradient(&s, 1).unwrap().iter().all(|v| v.is_finite()));
    assert!(ops.laplacian(&s, 1).unwrap().iter().all(|v| v.is_finite()));
    let report = run_stencil_check(&StencilCheckOptions { n_meshes: 1, ..Default::default() }, &[(mesh, edges)]).unwrap();
    assert_eq!(report.flagged.len(), 6);
    assert!(report.flagged.iter().all(|&(m, _)| m == 1));
}

#[test]
fn relabeling_nodes_permutes_outputs() {
    let (mesh, edges) = small_mesh(5, 0.3);
    let n = mesh.n_nodes();
    let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
    let mut pos = vec![[0.0; 2]; n];
    for i in 0..n {
        pos[perm[i]] = mesh.positions()[i];
    }
    let edges2 = EdgeSet::new(edges.edges().iter().map(|&(i, j)| (perm[i], perm[j])).collect(), edges.is_symmetric(), n).unwrap();
    let mesh2 = Mesh::new(pos).unwrap();
    let a = MlsOperatorSet::build(&mesh, &edges, MlsOptions::default()).unwrap();
    let b = MlsOperatorSet::build(&mesh2, &edges2, MlsOptions::default()).unwrap();
    let s: Vec<f64> = mesh.positions().iter().map(|p| p[0].cos() + p[1] * p[0]).collect();
    let mut s2 = vec![0.0; n];
    for i in 0..n {
        s2[perm[i]] = s[i];
    }
    let (la, lb) = (a.laplacian(&s, 1).unwrap(), b.laplacian(&s2, 1).unwrap());
    for i in 0..n {
        assert!((la[i] - lb[perm[i]]).abs() < 1e-9 * la[i].abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn polynomial_exactness(seed in 0u64..1000, c in prop::array::uniform6(-2.0f64..2.0), jitter in 0.0f64..0.4) {
        let (mesh, edges) = small_mesh(seed, jitter);
        let ops = MlsOperatorSet::build(&mesh, &edges, MlsOptions::default()).unwrap();
        let affine: Vec<f64> = mesh.positions().iter().map(|p| c[0] + c[1] * p[0] + c[2] * p[1]).collect();
        let g = ops.gradient(&affine, 1).unwrap();
        for i in 0..mesh.n_nodes() {
            prop_assert!((g[2 * i] - c[1]).abs() < 1e-9 && (g[2 * i + 1] - c[2]).abs() < 1e-9);
        }
        let quad: Vec<f64> = mesh
            .positions()
            .iter()
            .map(|p| c[0] + c[1] * p[0] + c[2] * p[1] + c[3] * p[0] * p[0] + c[4] * p[1] * p[1] + c[5] * p[0] * p[1])
            .collect();
        let l = ops.laplacian(&quad, 1).unwrap();
        let flagged = ops.laplacian.flagged();
        for i in 0..mesh.n_nodes() {
            if !flagged[i] {
                prop_assert!((l[i] - 2.0 * (c[3] + c[4])).abs() < 1e-8, "node {} error {}", i, l[i] - 2.0 * (c[3] + c[4]));
            }
        }
    }

    #[test]
    fn channels_are_independent(seed in 0u64..1000, a in -3.0f64..3.0) {
        let (mesh, edges) = small_mesh(seed, 0.3);
        let ops = MlsOperatorSet::build(&mesh, &edges, MlsOptions::default()).unwrap();
        let n = mesh.n_nodes();
        let u: Vec<f64> = mesh.positions().iter().map(|p| (a * p[0]).sin()).collect();
        let v: Vec<f64> = mesh.positions().iter().map(|p| p[1] * p[1] - a * p[0]).collect();
        let both: Vec<f64> = (0..n).flat_map(|i| [u[i], v[i]]).collect();
        let lb = ops.laplacian(&both, 2).unwrap();
        let (lu, lv) = (ops.laplacian(&u, 1).unwrap(), ops.laplacian(&v, 1).unwrap());
        for i in 0..n {
            prop_assert_eq!(lb[2 * i], lu[i]);
            prop_assert_eq!(lb[2 * i + 1], lv[i]);
        }
    }
}
