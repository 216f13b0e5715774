//! The learned right-hand side: message-passing source term and fusion MLP.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{GlobalParams, StateField};
use crate::mesh::{build_neighborhoods, positions_fingerprint, EdgeSet, Mesh, Neighborhood, Point};
use crate::mls::{
    assemble_gradient, assemble_laplacian, GradientStencil, LaplacianStencil, MlsOperatorSet, MlsOptions,
};
use crate::simulate::Integrator;

use super::mlp::{Mlp, MlpTape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub channels: Vec<String>,
    /// Global parameters broadcast to every node, in this order.
    pub global_keys: Vec<String>,
    /// Width of the node state after each round and of the source term.
    pub latent: usize,
    pub edge_hidden: usize,
    pub message: usize,
    pub node_hidden: usize,
    pub fusion_hidden: Vec<usize>,
    pub rounds: usize,
    pub use_mls: bool,
    /// Feed edge displacements to the source term.
    pub use_geometry: bool,
    pub integrator: Integrator,
    /// Channel indices of `[x, y]` displacements for lagrangian meshes.
    pub lagrangian: Option<[usize; 2]>,
    pub mls: MlsOptions,
}

impl ModelConfig {
    /// Full-width configuration (about 40K parameters for three channels).
    pub fn standard(channels: Vec<String>, global_keys: Vec<String>) -> Self {
        Self {
            channels,
            global_keys,
            latent: 64,
            edge_hidden: 64,
            message: 64,
            node_hidden: 64,
            fusion_hidden: vec![64],
            rounds: 2,
            use_mls: true,
            use_geometry: true,
            integrator: Integrator::Euler,
            lagrangian: None,
            mls: MlsOptions::default(),
        }
    }

    /// Narrow configuration that trains in minutes on one core.
    pub fn desk(channels: Vec<String>, global_keys: Vec<String>) -> Self {
        Self {
            latent: 8,
            edge_hidden: 8,
            message: 8,
            node_hidden: 16,
            fusion_hidden: vec![32],
            rounds: 1,
            ..Self::standard(channels, global_keys)
        }
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_globals(&self) -> usize {
        self.global_keys.len()
    }

    pub fn fusion_inputs(&self) -> usize {
        self.n_channels() * if self.use_mls { 4 } else { 1 } + self.latent
    }

    fn round_input(&self, round: usize) -> usize {
        if round == 0 {
            self.n_channels() + self.n_globals()
        } else {
            self.latent
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: &str| Err(Error::Config(m.to_string()));
        if self.channels.is_empty() {
            return cfg("at least one channel is required");
        }
        if self.rounds == 0 {
            return cfg("at least one message-passing round is required");
        }
        if [self.latent, self.edge_hidden, self.message, self.node_hidden].contains(&0)
            || self.fusion_hidden.contains(&0)
        {
            return cfg("layer widths must be positive");
        }
        if let Some([a, b]) = self.lagrangian {
            if a == b || a >= self.n_channels() || b >= self.n_channels() {
                return cfg("lagrangian channels must be two distinct valid indices");
            }
        }
        Ok(())
    }
}

/// Per-channel and per-global scales fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub grad_scale: Vec<f64>,
    pub lap_scale: Vec<f64>,
    /// Typical magnitude of ds/dt per channel.
    pub out_scale: Vec<f64>,
    pub global_mean: Vec<f64>,
    pub global_std: Vec<f64>,
    pub length_scale: f64,
}

/// Replaces zero or non-finite scales by 1.
pub(crate) fn floor_scale(v: f64) -> f64 {
    if v.is_finite() && v > 0.0 {
        v
    } else {
        1.0
    }
}

impl Normalization {
    pub fn identity(n_channels: usize, n_globals: usize) -> Self {
        Self {
            state_mean: vec![0.0; n_channels],
            state_std: vec![1.0; n_channels],
            grad_scale: vec![1.0; n_channels],
            lap_scale: vec![1.0; n_channels],
            out_scale: vec![1.0; n_channels],
            global_mean: vec![0.0; n_globals],
            global_std: vec![1.0; n_globals],
            length_scale: 1.0,
        }
    }

    fn check(&self, config: &ModelConfig) -> Result<()> {
        let nc = config.n_channels();
        let ng = config.n_globals();
        let ok = [&self.state_mean, &self.state_std, &self.grad_scale, &self.lap_scale, &self.out_scale]
            .iter()
            .all(|v| v.len() == nc)
            && self.global_mean.len() == ng
            && self.global_std.len() == ng;
        if !ok {
            return Err(Error::Config("normalization does not match the model widths".into()));
        }
        Ok(())
    }

    pub fn normalized_globals(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.global_mean.iter().zip(&self.global_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Neighborhood and, when MLS features are used, the stencils on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub neighborhood: Neighborhood,
    pub stencils: Option<(GradientStencil, LaplacianStencil)>,
    positions_fingerprint: u64,
    options: MlsOptions,
}

impl Geometry {
    pub fn build(mesh: &Mesh, edges: &EdgeSet, use_mls: bool, options: MlsOptions) -> Result<Self> {
        let nbr = build_neighborhoods(mesh, edges)?;
        Self::from_neighborhood(nbr, mesh.fingerprint(), use_mls, options)
    }

    /// Reuses a prebuilt operator set; errors if it is stale for `positions`.
    pub fn from_operators(ops: &MlsOperatorSet, positions: &[Point]) -> Result<Self> {
        ops.ensure_fresh(positions)?;
        Ok(Self {
            neighborhood: ops.neighborhood.clone(),
            stencils: Some((ops.gradient.clone(), ops.laplacian.clone())),
            positions_fingerprint: positions_fingerprint(positions),
            options: *ops.options(),
        })
    }

    fn from_neighborhood(nbr: Neighborhood, fp: u64, use_mls: bool, options: MlsOptions) -> Result<Self> {
        let stencils = if use_mls {
            Some((assemble_gradient(&nbr, &options)?, assemble_laplacian(&nbr, &options)?))
        } else {
            None
        };
        Ok(Self {
            neighborhood: nbr,
            stencils,
            positions_fingerprint: fp,
            options,
        })
    }

    /// Same topology at new node positions.
    pub fn rebuild(&self, positions: &[Point]) -> Result<Self> {
        let nbr = self.neighborhood.with_positions(positions)?;
        Self::from_neighborhood(
            nbr,
            positions_fingerprint(positions),
            self.stencils.is_some(),
            self.options,
        )
    }

    pub fn n_nodes(&self) -> usize {
        self.neighborhood.n_nodes()
    }

    pub fn has_mls(&self) -> bool {
        self.stencils.is_some()
    }

    pub fn is_fresh_for(&self, positions: &[Point]) -> bool {
        positions_fingerprint(positions) == self.positions_fingerprint
    }

    /// Nodes whose stencils needed regularization.
    pub fn regularized_nodes(&self) -> usize {
        match &self.stencils {
            Some((g, l)) => g
                .flagged()
                .iter()
                .zip(l.flagged())
                .filter(|(a, b)| **a || **b)
                .count(),
            None => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundParams {
    /// One tanh hidden layer over `[h_i, h_j, δr_ij]`, then a linear message.
    pub edge: Mlp,
    /// Maps `[h_i, mean_j m_ij]` to the next node state.
    pub node: Mlp,
}

/// All trainable weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub rounds: Vec<RoundParams>,
    pub fusion: Mlp,
}

impl Network {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rounds = (0..config.rounds)
            .map(|r| {
                let d = config.round_input(r);
                RoundParams {
                    edge: Mlp::new(&[2 * d + 2, config.edge_hidden, config.message], &mut rng),
                    node: Mlp::new(&[d + config.message, config.node_hidden, config.latent], &mut rng),
                }
            })
            .collect();
        let mut widths = vec![config.fusion_inputs()];
        widths.extend(&config.fusion_hidden);
        widths.push(config.n_channels());
        Ok(Self {
            rounds,
            fusion: Mlp::new(&widths, &mut rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            rounds: self
                .rounds
                .iter()
                .map(|r| RoundParams {
                    edge: r.edge.zeros_like(),
                    node: r.node.zeros_like(),
                })
                .collect(),
            fusion: self.fusion.zeros_like(),
        }
    }

    fn mlps(&self) -> impl Iterator<Item = &Mlp> {
        self.rounds
            .iter()
            .flat_map(|r| [&r.edge, &r.node])
            .chain(std::iter::once(&self.fusion))
    }

    fn mlps_mut(&mut self) -> impl Iterator<Item = &mut Mlp> {
        self.rounds
            .iter_mut()
            .flat_map(|r| [&mut r.edge, &mut r.node])
            .chain(std::iter::once(&mut self.fusion))
    }

    pub fn n_params(&self) -> usize {
        self.mlps().map(Mlp::n_params).sum()
    }

    /// Parameters in a fixed order: rounds (edge, node), then fusion; per
    /// layer the weights then the bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for m in self.mlps() {
            for l in &m.layers {
                out.extend_from_slice(&l.w);
                out.extend_from_slice(&l.b);
            }
        }
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(invalid(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                flat.len()
            )));
        }
        let mut pos = 0;
        for m in self.mlps_mut() {
            for l in &mut m.layers {
                for v in [&mut l.w, &mut l.b] {
                    let len = v.len();
                    v.copy_from_slice(&flat[pos..pos + len]);
                    pos += len;
                }
            }
        }
        Ok(())
    }

    fn check_widths(&self, config: &ModelConfig) -> Result<()> {
        let bad = || Error::Config("network widths do not match the configuration".into());
        if self.rounds.len() != config.rounds {
            return Err(bad());
        }
        for (r, rp) in self.rounds.iter().enumerate() {
            let d = config.round_input(r);
            let e = &rp.edge;
            if e.layers.len() != 2
                || e.n_in() != 2 * d + 2
                || e.layers[0].n_out != config.edge_hidden
                || e.n_out() != config.message
                || rp.node.n_in() != d + config.message
                || rp.node.n_out() != config.latent
            {
                return Err(bad());
            }
        }
        if self.fusion.n_in() != config.fusion_inputs() || self.fusion.n_out() != config.n_channels() {
            return Err(bad());
        }
        Ok(())
    }
}

/// Configuration, normalization and weights of the learned operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub norm: Normalization,
    pub net: Network,
}

struct RoundTape {
    h: Vec<f64>,
    /// `tanh` hidden activations per neighbor slot.
    t: Vec<f64>,
    tbar: Vec<f64>,
    node: MlpTape,
}

/// Everything the backward pass needs from one evaluation.
pub struct EvalTape {
    rounds: Vec<RoundTape>,
    fusion: MlpTape,
}

impl ModelParams {
    pub fn new(config: ModelConfig, norm: Normalization, seed: u64) -> Result<Self> {
        let net = Network::new(&config, seed)?;
        Self::from_parts(config, norm, net)
    }

    pub fn from_parts(config: ModelConfig, norm: Normalization, net: Network) -> Result<Self> {
        config.validate()?;
        norm.check(&config)?;
        net.check_widths(&config)?;
        Ok(Self { config, norm, net })
    }

    pub fn n_params(&self) -> usize {
        self.net.n_params()
    }

    /// Normalized global feature vector for `globals`.
    pub fn global_features(&self, globals: &GlobalParams) -> Result<Vec<f64>> {
        Ok(self.norm.normalized_globals(&globals.vector(&self.config.global_keys)?))
    }

    pub fn geometry(&self, mesh: &Mesh, edges: &EdgeSet) -> Result<Geometry> {
        Geometry::build(mesh, edges, self.config.use_mls, self.config.mls)
    }

    /// Node positions implied by `state` for lagrangian models.
    pub fn positions_for(&self, reference: &[Point], state: &[f64]) -> Vec<Point> {
        let nc = self.config.n_channels();
        match self.config.lagrangian {
            Some([cx, cy]) => reference
                .iter()
                .enumerate()
                .map(|(i, p)| [p[0] + state[i * nc + cx], p[1] + state[i * nc + cy]])
                .collect(),
            None => reference.to_vec(),
        }
    }

    fn check_inputs(&self, geom: &Geometry, state: &[f64], globals: &[f64]) -> Result<()> {
        if self.config.use_mls && !geom.has_mls() {
            return Err(invalid("model uses MLS features but the geometry has no stencils"));
        }
        if state.len() != geom.n_nodes() * self.config.n_channels() {
            return Err(invalid("state does not match the geometry and channel count"));
        }
        if globals.len() != self.config.n_globals() {
            return Err(invalid("wrong number of global features"));
        }
        Ok(())
    }

    /// `ds/dt` for a raw node-major state.
    pub fn forward(&self, geom: &Geometry, state: &[f64], globals: &[f64]) -> Result<Vec<f64>> {
        self.forward_taped(geom, state, globals).map(|(y, _)| y)
    }

    /// Runs `forward` through the source term only.
    pub fn source_term(&self, geom: &Geometry, state: &[f64], globals: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(geom, state, globals)?;
        let h0 = self.initial_features(state, globals);
        let mut h = h0;
        let mut base = 0;
        for (r, rp) in self.net.rounds.iter().enumerate() {
            let (next, _) = self.round_forward(r, rp, geom, h, base)?;
            h = next;
            base += 4;
        }
        Ok(h)
    }

    fn initial_features(&self, state: &[f64], globals: &[f64]) -> Vec<f64> {
        let nc = self.config.n_channels();
        let ng = globals.len();
        let n = state.len() / nc;
        let mut h = Vec::with_capacity(n * (nc + ng));
        for node in state.chunks_exact(nc) {
            for c in 0..nc {
                h.push((node[c] - self.norm.state_mean[c]) / self.norm.state_std[c]);
            }
            h.extend_from_slice(globals);
        }
        h
    }

    fn round_forward(
        &self,
        r: usize,
        rp: &RoundParams,
        geom: &Geometry,
        h: Vec<f64>,
        layer_base: usize,
    ) -> Result<(Vec<f64>, RoundTape)> {
        let nbr = &geom.neighborhood;
        let n = nbr.n_nodes();
        let d = self.config.round_input(r);
        let hid = self.config.edge_hidden;
        let l0 = &rp.edge.layers[0];
        let nin = l0.n_in;
        let mut p = vec![0.0; n * hid];
        let mut q = vec![0.0; n * hid];
        for i in 0..n {
            let hi = &h[i * d..(i + 1) * d];
            for o in 0..hid {
                let w = &l0.w[o * nin..(o + 1) * nin];
                p[i * hid + o] = l0.b[o] + super::mlp::dot(&w[..d], hi);
                q[i * hid + o] = super::mlp::dot(&w[d..2 * d], hi);
            }
        }
        let geo = self.geo_scale();
        let mut t = vec![0.0; nbr.n_slots() * hid];
        let mut tbar = vec![0.0; n * hid];
        for i in 0..n {
            let range = nbr.range(i);
            let inv = 1.0 / range.len() as f64;
            let acc = &mut tbar[i * hid..(i + 1) * hid];
            for s in range {
                let j = nbr.neighbors()[s];
                let dr = nbr.displacements()[s];
                let (dx, dy) = (dr[0] * geo, dr[1] * geo);
                let ts = &mut t[s * hid..(s + 1) * hid];
                for o in 0..hid {
                    let w = &l0.w[o * nin + 2 * d..o * nin + 2 * d + 2];
                    let v = super::mlp::tanh(p[i * hid + o] + q[j * hid + o] + w[0] * dx + w[1] * dy);
                    ts[o] = v;
                    acc[o] += v;
                }
            }
            acc.iter_mut().for_each(|v| *v *= inv);
        }
        if tbar.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow { layer: layer_base });
        }
        let mbar = rp.edge.layers[1].forward(&tbar, n);
        if mbar.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow { layer: layer_base + 1 });
        }
        let msg = self.config.message;
        let mut input = Vec::with_capacity(n * (d + msg));
        for i in 0..n {
            input.extend_from_slice(&h[i * d..(i + 1) * d]);
            input.extend_from_slice(&mbar[i * msg..(i + 1) * msg]);
        }
        let node = rp.node.forward(input, n, layer_base + 2)?;
        Ok((node.output().to_vec(), RoundTape { h, t, tbar, node }))
    }

    fn geo_scale(&self) -> f64 {
        if self.config.use_geometry {
            1.0 / self.norm.length_scale
        } else {
            0.0
        }
    }

    /// Forward pass that also records the activations needed by
    /// [`backward`](Self::backward).
    pub fn forward_taped(&self, geom: &Geometry, state: &[f64], globals: &[f64]) -> Result<(Vec<f64>, EvalTape)> {
        self.check_inputs(geom, state, globals)?;
        let nc = self.config.n_channels();
        let n = geom.n_nodes();
        let mut h = self.initial_features(state, globals);
        let mut rounds = Vec::with_capacity(self.config.rounds);
        let mut base = 0;
        for (r, rp) in self.net.rounds.iter().enumerate() {
            let (next, tape) = self.round_forward(r, rp, geom, h, base)?;
            rounds.push(tape);
            h = next;
            base += 4;
        }
        let (grad, lap) = match &geom.stencils {
            Some((g, l)) if self.config.use_mls => (
                Some(g.apply_raw(&geom.neighborhood, state, nc)?),
                Some(l.apply_raw(&geom.neighborhood, state, nc)?),
            ),
            _ => (None, None),
        };
        let width = self.config.fusion_inputs();
        let lat = self.config.latent;
        let mut input = Vec::with_capacity(n * width);
        for i in 0..n {
            for c in 0..nc {
                input.push((state[i * nc + c] - self.norm.state_mean[c]) / self.norm.state_std[c]);
            }
            if let (Some(g), Some(l)) = (&grad, &lap) {
                for c in 0..nc {
                    input.push(g[(i * nc + c) * 2] / self.norm.grad_scale[c]);
                    input.push(g[(i * nc + c) * 2 + 1] / self.norm.grad_scale[c]);
                }
                for c in 0..nc {
                    input.push(l[i * nc + c] / self.norm.lap_scale[c]);
                }
            }
            input.extend_from_slice(&h[i * lat..(i + 1) * lat]);
        }
        let fusion = self.net.fusion.forward(input, n, base)?;
        let y = fusion
            .output()
            .chunks_exact(nc)
            .flat_map(|row| row.iter().zip(&self.norm.out_scale).map(|(v, s)| v * s))
            .collect();
        Ok((y, EvalTape { rounds, fusion }))
    }

    /// Reverse pass of one evaluation. Accumulates parameter gradients into
    /// `grad` and returns `∂L/∂state` for upstream `∂L/∂(ds/dt)`.
    pub fn backward(&self, geom: &Geometry, tape: &EvalTape, d_out: &[f64], grad: &mut Network) -> Result<Vec<f64>> {
        let nc = self.config.n_channels();
        let n = geom.n_nodes();
        let lat = self.config.latent;
        let width = self.config.fusion_inputs();
        let dy: Vec<f64> = d_out
            .chunks_exact(nc)
            .flat_map(|row| row.iter().zip(&self.norm.out_scale).map(|(v, s)| v * s))
            .collect();
        let dx = self.net.fusion.backward(&tape.fusion, &dy, &mut grad.fusion);
        let mut ds = vec![0.0; n * nc];
        let mut dh = vec![0.0; n * lat];
        let mls = self.config.use_mls;
        let mut dgrad = if mls { vec![0.0; n * nc * 2] } else { Vec::new() };
        let mut dlap = if mls { vec![0.0; n * nc] } else { Vec::new() };
        for i in 0..n {
            let row = &dx[i * width..(i + 1) * width];
            for c in 0..nc {
                ds[i * nc + c] += row[c] / self.norm.state_std[c];
            }
            let mut k = nc;
            if mls {
                for c in 0..nc {
                    dgrad[(i * nc + c) * 2] = row[k] / self.norm.grad_scale[c];
                    dgrad[(i * nc + c) * 2 + 1] = row[k + 1] / self.norm.grad_scale[c];
                    k += 2;
                }
                for c in 0..nc {
                    dlap[i * nc + c] = row[k] / self.norm.lap_scale[c];
                    k += 1;
                }
            }
            dh[i * lat..(i + 1) * lat].copy_from_slice(&row[k..k + lat]);
        }
        if mls {
            let (g, l) = geom
                .stencils
                .as_ref()
                .ok_or_else(|| invalid("geometry has no stencils"))?;
            g.adjoint_accumulate(&geom.neighborhood, &dgrad, nc, &mut ds)?;
            l.adjoint_accumulate(&geom.neighborhood, &dlap, nc, &mut ds)?;
        }
        for r in (0..self.config.rounds).rev() {
            dh = self.round_backward(r, geom, &tape.rounds[r], &dh, &mut grad.rounds[r]);
        }
        let d0 = nc + self.config.n_globals();
        for i in 0..n {
            for c in 0..nc {
                ds[i * nc + c] += dh[i * d0 + c] / self.norm.state_std[c];
            }
        }
        Ok(ds)
    }

    fn round_backward(&self, r: usize, geom: &Geometry, tape: &RoundTape, d_out: &[f64], grad: &mut RoundParams) -> Vec<f64> {
        let rp = &self.net.rounds[r];
        let nbr = &geom.neighborhood;
        let n = nbr.n_nodes();
        let d = self.config.round_input(r);
        let msg = self.config.message;
        let hid = self.config.edge_hidden;
        let din = rp.node.backward(&tape.node, d_out, &mut grad.node);
        let mut dh = vec![0.0; n * d];
        let mut dmbar = vec![0.0; n * msg];
        for i in 0..n {
            let row = &din[i * (d + msg)..(i + 1) * (d + msg)];
            dh[i * d..(i + 1) * d].copy_from_slice(&row[..d]);
            dmbar[i * msg..(i + 1) * msg].copy_from_slice(&row[d..]);
        }
        let dtbar = rp.edge.layers[1].backward(&tape.tbar, &dmbar, &mut grad.edge.layers[1]);
        let l0 = &rp.edge.layers[0];
        let g0 = &mut grad.edge.layers[0];
        let nin = l0.n_in;
        let geo = self.geo_scale();
        let mut dp = vec![0.0; n * hid];
        let mut dq = vec![0.0; n * hid];
        for i in 0..n {
            let range = nbr.range(i);
            let inv = 1.0 / range.len() as f64;
            for s in range {
                let j = nbr.neighbors()[s];
                let dr = nbr.displacements()[s];
                let (dx, dy) = (dr[0] * geo, dr[1] * geo);
                for o in 0..hid {
                    let t = tape.t[s * hid + o];
                    let dz = dtbar[i * hid + o] * inv * (1.0 - t * t);
                    dp[i * hid + o] += dz;
                    dq[j * hid + o] += dz;
                    g0.w[o * nin + 2 * d] += dz * dx;
                    g0.w[o * nin + 2 * d + 1] += dz * dy;
                }
            }
        }
        for i in 0..n {
            let hi = &tape.h[i * d..(i + 1) * d];
            let dhi = &mut dh[i * d..(i + 1) * d];
            for o in 0..hid {
                let a = dp[i * hid + o];
                let b = dq[i * hid + o];
                g0.b[o] += a;
                let w = &l0.w[o * nin..(o + 1) * nin];
                let gw = &mut g0.w[o * nin..(o + 1) * nin];
                for k in 0..d {
                    gw[k] += a * hi[k];
                    gw[d + k] += b * hi[k];
                    dhi[k] += w[k] * a + w[d + k] * b;
                }
            }
        }
        dh
    }

    /// Convenience wrapper on a [`StateField`].
    pub fn evaluate(&self, geom: &Geometry, state: &StateField, globals: &GlobalParams) -> Result<Vec<f64>> {
        if state.channels() != self.config.channels.as_slice() {
            return Err(invalid(format!(
                "state channels {:?} do not match the model channels {:?}",
                state.channels(),
                self.config.channels
            )));
        }
        let c = self.global_features(globals)?;
        self.forward(geom, state.values(), &c)
    }
}
