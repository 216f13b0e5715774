//! Meshes, edge sets and per-node neighborhoods.
//!
//! Nodes live in 2D. A neighborhood is exactly the set of outgoing edges of a
//! node; no radius search is performed anywhere.

use std::fmt::Write as _;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};

pub type Point = [f64; 2];

/// Minimum separation between two nodes, in meters.
pub const COINCIDENCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    positions: Vec<Point>,
}

impl Mesh {
    pub fn new(positions: Vec<Point>) -> Result<Self> {
        let mesh = Self { positions };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn n_nodes(&self) -> usize {
        self.positions.len()
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounds(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.positions {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (lo, hi)
    }

    /// Hash of the exact bit patterns of every coordinate.
    pub fn fingerprint(&self) -> u64 {
        positions_fingerprint(&self.positions)
    }

    fn validate(&self) -> Result<()> {
        if self.positions.len() < 3 {
            return Err(invalid(format!(
                "mesh needs at least 3 nodes, got {}",
                self.positions.len()
            )));
        }
        if let Some(i) = self
            .positions
            .iter()
            .position(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(invalid(format!("node {i} has a non-finite position")));
        }
        // sweep in x so only nearby candidates are compared
        let mut order: Vec<usize> = (0..self.positions.len()).collect();
        order.sort_by(|&a, &b| self.positions[a][0].total_cmp(&self.positions[b][0]));
        for (k, &a) in order.iter().enumerate() {
            let pa = self.positions[a];
            for &b in &order[k + 1..] {
                let pb = self.positions[b];
                if pb[0] - pa[0] > COINCIDENCE_TOL {
                    break;
                }
                if (pb[1] - pa[1]).abs() <= COINCIDENCE_TOL {
                    return Err(invalid(format!("nodes {a} and {b} coincide")));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn positions_fingerprint(positions: &[Point]) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    positions.len().hash(&mut h);
    for p in positions {
        p[0].to_bits().hash(&mut h);
        p[1].to_bits().hash(&mut h);
    }
    h.finish()
}

/// Directed edges `(i, j)`; `j` is a neighbor of `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSet {
    edges: Vec<(usize, usize)>,
    symmetric: bool,
}

impl EdgeSet {
    /// Builds an edge set and checks it against `n_nodes`.
    ///
    /// When `symmetric` is set, every `(i, j)` must have its reverse `(j, i)`.
    pub fn new(edges: Vec<(usize, usize)>, symmetric: bool, n_nodes: usize) -> Result<Self> {
        for (k, &(i, j)) in edges.iter().enumerate() {
            if i >= n_nodes || j >= n_nodes {
                return Err(invalid(format!(
                    "edge {k} ({i}, {j}) out of range for {n_nodes} nodes"
                )));
            }
            if i == j {
                return Err(invalid(format!("edge {k} is a self-loop on node {i}")));
            }
        }
        if symmetric {
            let mut sorted = edges.clone();
            sorted.sort_unstable();
            for &(i, j) in &edges {
                if sorted.binary_search(&(j, i)).is_err() {
                    return Err(invalid(format!(
                        "edge set flagged symmetric but ({j}, {i}) is missing"
                    )));
                }
            }
        }
        Ok(Self { edges, symmetric })
    }

    /// Symmetric closure of an undirected pair list, sorted by `(i, j)`.
    pub fn from_undirected(pairs: &[(usize, usize)], n_nodes: usize) -> Result<Self> {
        let mut edges = Vec::with_capacity(pairs.len() * 2);
        for &(i, j) in pairs {
            edges.push((i, j));
            edges.push((j, i));
        }
        edges.sort_unstable();
        edges.dedup();
        Self::new(edges, true, n_nodes)
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }
}

/// Compressed per-node neighbor lists with edge displacements.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    edge_ids: Vec<usize>,
    displacements: Vec<Point>,
    fingerprint: u64,
}

impl Neighborhood {
    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of neighbor slots, equal to the number of directed edges.
    pub fn n_slots(&self) -> usize {
        self.neighbors.len()
    }

    pub fn range(&self, node: usize) -> std::ops::Range<usize> {
        self.offsets[node]..self.offsets[node + 1]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn neighbors_of(&self, node: usize) -> &[usize] {
        &self.neighbors[self.range(node)]
    }

    pub fn displacements_of(&self, node: usize) -> &[Point] {
        &self.displacements[self.range(node)]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    /// Index into the originating [`EdgeSet`] for each slot.
    pub fn edge_ids(&self) -> &[usize] {
        &self.edge_ids
    }

    pub fn displacements(&self) -> &[Point] {
        &self.displacements
    }

    /// Hash of topology and exact displacement bits. Anything assembled from
    /// this neighborhood can be checked against it.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    fn seal(mut self) -> Self {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.offsets.hash(&mut h);
        self.neighbors.hash(&mut h);
        self.edge_ids.hash(&mut h);
        for d in &self.displacements {
            d[0].to_bits().hash(&mut h);
            d[1].to_bits().hash(&mut h);
        }
        self.fingerprint = h.finish();
        self
    }

    /// Same topology, displacements recomputed from `positions`.
    pub fn with_positions(&self, positions: &[Point]) -> Result<Self> {
        if positions.len() != self.n_nodes() {
            return Err(invalid(format!(
                "expected {} positions, got {}",
                self.n_nodes(),
                positions.len()
            )));
        }
        let mut out = self.clone();
        for i in 0..self.n_nodes() {
            for s in self.range(i) {
                let j = self.neighbors[s];
                out.displacements[s] = sub(positions[j], positions[i]);
            }
        }
        Ok(out.seal())
    }

    /// Relabels nodes: old node `i` becomes `perm[i]`. Slot order within each
    /// node is preserved.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n_nodes();
        let mut inverse = vec![0; n];
        for (old, &new) in perm.iter().enumerate() {
            inverse[new] = old;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        let mut neighbors = Vec::with_capacity(self.n_slots());
        let mut edge_ids = Vec::with_capacity(self.n_slots());
        let mut displacements = Vec::with_capacity(self.n_slots());
        for &old in &inverse {
            for s in self.range(old) {
                neighbors.push(perm[self.neighbors[s]]);
                edge_ids.push(self.edge_ids[s]);
                displacements.push(self.displacements[s]);
            }
            offsets.push(neighbors.len());
        }
        Self {
            offsets,
            neighbors,
            edge_ids,
            displacements,
            fingerprint: 0,
        }
        .seal()
    }
}

#[inline]
pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn build_neighborhoods(mesh: &Mesh, edges: &EdgeSet) -> Result<Neighborhood> {
    let n = mesh.n_nodes();
    let mut counts = vec![0usize; n];
    for (k, &(i, j)) in edges.edges().iter().enumerate() {
        if i >= n || j >= n || i == j {
            return Err(invalid(format!("edge {k} ({i}, {j}) invalid for this mesh")));
        }
        counts[i] += 1;
    }
    if let Some(node) = counts.iter().position(|&c| c == 0) {
        return Err(Error::IsolatedNode { node });
    }
    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0);
    for c in &counts {
        offsets.push(offsets.last().unwrap() + c);
    }
    let total = *offsets.last().unwrap();
    let mut cursor = offsets[..n].to_vec();
    let mut neighbors = vec![0; total];
    let mut edge_ids = vec![0; total];
    let mut displacements = vec![[0.0; 2]; total];
    let pos = mesh.positions();
    for (k, &(i, j)) in edges.edges().iter().enumerate() {
        let s = cursor[i];
        cursor[i] += 1;
        neighbors[s] = j;
        edge_ids[s] = k;
        displacements[s] = sub(pos[j], pos[i]);
    }
    Ok(Neighborhood {
        offsets,
        neighbors,
        edge_ids,
        displacements,
        fingerprint: 0,
    }
    .seal())
}

/// Cell-centered `nx × ny` grid over `[0, extent]²`, node `j * nx + i`.
///
/// Edges connect axis neighbors, plus diagonal neighbors when `diagonals` is set.
pub fn make_regular_grid(
    nx: usize,
    ny: usize,
    extent: f64,
    diagonals: bool,
) -> Result<(Mesh, EdgeSet)> {
    let positions = grid_positions(nx, ny, extent)?;
    let mut pairs = Vec::new();
    let id = |i: usize, j: usize| j * nx + i;
    for j in 0..ny {
        for i in 0..nx {
            if i + 1 < nx {
                pairs.push((id(i, j), id(i + 1, j)));
            }
            if j + 1 < ny {
                pairs.push((id(i, j), id(i, j + 1)));
            }
            if diagonals && i + 1 < nx && j + 1 < ny {
                pairs.push((id(i, j), id(i + 1, j + 1)));
                pairs.push((id(i + 1, j), id(i, j + 1)));
            }
        }
    }
    let n = positions.len();
    Ok((Mesh::new(positions)?, EdgeSet::from_undirected(&pairs, n)?))
}

fn grid_positions(nx: usize, ny: usize, extent: f64) -> Result<Vec<Point>> {
    if nx < 2 || ny < 2 {
        return Err(invalid(format!("grid needs nx, ny >= 2, got {nx} x {ny}")));
    }
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(invalid(format!("extent must be positive, got {extent}")));
    }
    let dx = extent / nx as f64;
    let dy = extent / ny as f64;
    let mut positions = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            positions.push([(i as f64 + 0.5) * dx, (j as f64 + 0.5) * dy]);
        }
    }
    Ok(positions)
}

/// Parameters for [`make_perturbed_mesh`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PerturbedMeshSpec {
    pub nx: usize,
    pub ny: usize,
    pub extent: f64,
    /// Displacement amplitude as a fraction of the grid spacing.
    pub jitter: f64,
    pub k: usize,
}

impl Default for PerturbedMeshSpec {
    fn default() -> Self {
        Self {
            nx: 22,
            ny: 22,
            extent: 1.0,
            jitter: 0.3,
            k: 8,
        }
    }
}

/// Jittered grid with directed k-nearest-neighbor edges.
///
/// Interior nodes move by a uniform offset in `[-jitter, jitter]` grid spacings
/// per axis; boundary nodes stay put. Every node gets exactly `k` neighbors.
pub fn make_perturbed_mesh(spec: &PerturbedMeshSpec, seed: u64) -> Result<(Mesh, EdgeSet)> {
    if !(0.0..0.5).contains(&spec.jitter) {
        return Err(invalid(format!(
            "jitter must lie in [0, 0.5), got {}",
            spec.jitter
        )));
    }
    let mut positions = grid_positions(spec.nx, spec.ny, spec.extent)?;
    if spec.k == 0 || spec.k >= positions.len() {
        return Err(invalid(format!(
            "k must lie in [1, {}), got {}",
            positions.len(),
            spec.k
        )));
    }
    let dx = spec.extent / spec.nx as f64;
    let dy = spec.extent / spec.ny as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for j in 0..spec.ny {
        for i in 0..spec.nx {
            // draw for every node so the stream does not depend on the boundary test
            let ox: f64 = rng.random_range(-1.0..=1.0);
            let oy: f64 = rng.random_range(-1.0..=1.0);
            let interior = i > 0 && j > 0 && i + 1 < spec.nx && j + 1 < spec.ny;
            if interior && spec.jitter > 0.0 {
                let p = &mut positions[j * spec.nx + i];
                p[0] += ox * spec.jitter * dx;
                p[1] += oy * spec.jitter * dy;
            }
        }
    }
    let mesh = Mesh::new(positions)?;
    let edges = knn_edges(&mesh, spec.k)?;
    Ok((mesh, edges))
}

/// Directed edges from each node to its `k` nearest other nodes.
///
/// Ties in distance are broken by node index.
pub fn knn_edges(mesh: &Mesh, k: usize) -> Result<EdgeSet> {
    let n = mesh.n_nodes();
    if k == 0 || k >= n {
        return Err(invalid(format!("k must lie in [1, {n}), got {k}")));
    }
    let pos = mesh.positions();
    let mut edges = Vec::with_capacity(n * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        for j in 0..n {
            if j != i {
                let d = sub(pos[j], pos[i]);
                cand.push((d[0] * d[0] + d[1] * d[1], j));
            }
        }
        cand.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let nearest = &mut cand[..k];
        nearest.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        edges.extend(nearest.iter().map(|&(_, j)| (i, j)));
    }
    EdgeSet::new(edges, false, n)
}

/// Writes the plain-text interchange format.
///
/// ```text
/// nodes <n>
/// <x> <y>          (n lines)
/// edges <m> <symmetric 0|1>
/// <i> <j>          (m lines)
/// ```
pub fn write_mesh_text(mesh: &Mesh, edges: &EdgeSet) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "nodes {}", mesh.n_nodes());
    for p in mesh.positions() {
        let _ = writeln!(out, "{:?} {:?}", p[0], p[1]);
    }
    let _ = writeln!(out, "edges {} {}", edges.len(), edges.is_symmetric() as u8);
    for &(i, j) in edges.edges() {
        let _ = writeln!(out, "{i} {j}");
    }
    out
}

pub fn read_mesh_text(text: &str) -> Result<(Mesh, EdgeSet)> {
    let bad = |line: usize, what: &str| Error::Format(format!("mesh text line {}: {what}", line + 1));
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (ln, header) = lines.next().ok_or_else(|| bad(0, "empty input"))?;
    let n: usize = header
        .strip_prefix("nodes ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| bad(ln, "expected `nodes <n>`"))?;
    let mut positions = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, l) = lines.next().ok_or_else(|| bad(ln, "missing node line"))?;
        let v: Vec<f64> = l
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(ln, "bad coordinate"))?;
        if v.len() != 2 {
            return Err(bad(ln, "expected `x y`"));
        }
        positions.push([v[0], v[1]]);
    }
    let (ln, header) = lines.next().ok_or_else(|| bad(ln, "missing edges header"))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != "edges" {
        return Err(bad(ln, "expected `edges <m> <symmetric>`"));
    }
    let m: usize = parts[1].parse().map_err(|_| bad(ln, "bad edge count"))?;
    let symmetric = parts[2] == "1";
    let mut edges = Vec::with_capacity(m);
    for _ in 0..m {
        let (ln, l) = lines.next().ok_or_else(|| bad(ln, "missing edge line"))?;
        let v: Vec<usize> = l
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(ln, "bad edge index"))?;
        if v.len() != 2 {
            return Err(bad(ln, "expected `i j`"));
        }
        edges.push((v[0], v[1]));
    }
    let mesh = Mesh::new(positions)?;
    let edges = EdgeSet::new(edges, symmetric, mesh.n_nodes())?;
    Ok((mesh, edges))
}
