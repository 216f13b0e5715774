//! Dense layers and small tanh MLPs with explicit backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `y = W x + b` with `W` stored row-major as `n_out × n_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            w: vec![0.0; n_in * n_out],
            b: vec![0.0; n_out],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        let mut d = Self::zeros(n_in, n_out);
        for w in &mut d.w {
            *w = rng.random_range(-limit..limit);
        }
        d
    }

    /// Applies the layer to `batch` rows of `x`.
    pub fn forward(&self, x: &[f64], batch: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), batch * self.n_in);
        let mut y = Vec::with_capacity(batch * self.n_out);
        for row in x.chunks_exact(self.n_in) {
            for (o, wrow) in self.w.chunks_exact(self.n_in).enumerate() {
                y.push(self.b[o] + dot(wrow, row));
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut dx = vec![0.0; x.len()];
        for ((row, drow), dxrow) in x
            .chunks_exact(self.n_in)
            .zip(dy.chunks_exact(self.n_out))
            .zip(dx.chunks_exact_mut(self.n_in))
        {
            for (o, &g) in drow.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad.b[o] += g;
                let gw = &mut grad.w[o * self.n_in..(o + 1) * self.n_in];
                let w = &self.w[o * self.n_in..(o + 1) * self.n_in];
                for k in 0..self.n_in {
                    gw[k] += g * row[k];
                    dxrow[k] += g * w[k];
                }
            }
        }
        dx
    }

    pub fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// `tanh` through a single `exp`; absolute error within a few ulps of 1.
#[inline]
pub fn tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Tanh on every hidden layer, identity on the output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations recorded by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct MlpTape {
    batch: usize,
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
}

impl MlpTape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

impl Mlp {
    /// `widths = [in, hidden..., out]`.
    pub fn new<R: Rng>(widths: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        Self {
            layers: widths
                .windows(2)
                .map(|w| Dense::glorot(w[0], w[1], rng))
                .collect(),
        }
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().unwrap().n_out
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.n_in, l.n_out))
                .collect(),
        }
    }

    /// `layer_base` offsets the layer index reported on overflow.
    pub fn forward(&self, x: Vec<f64>, batch: usize, layer_base: usize) -> Result<MlpTape> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(acts.last().unwrap(), batch);
            if l < last {
                y.iter_mut().for_each(|v| *v = tanh(*v));
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericOverflow {
                    layer: layer_base + l,
                });
            }
            acts.push(y);
        }
        Ok(MlpTape { batch, acts })
    }

    /// Returns `∂L/∂x` given `∂L/∂y`, accumulating into `grad`.
    pub fn backward(&self, tape: &MlpTape, dy: &[f64], grad: &mut Mlp) -> Vec<f64> {
        debug_assert_eq!(dy.len(), tape.batch * self.n_out());
        let last = self.layers.len() - 1;
        let mut g = dy.to_vec();
        for l in (0..self.layers.len()).rev() {
            if l < last {
                for (gv, y) in g.iter_mut().zip(&tape.acts[l + 1]) {
                    *gv *= 1.0 - y * y;
                }
            }
            g = self.layers[l].backward(&tape.acts[l], &g, &mut grad.layers[l]);
        }
        g
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_matches_libm() {
        for k in -4000..=4000 {
            let x = k as f64 * 0.0071;
            assert!((tanh(x) - x.tanh()).abs() < 4.0 * f64::EPSILON, "{x}");
        }
        assert_eq!(tanh(800.0), 1.0);
        assert_eq!(tanh(-800.0), -1.0);
        assert!(tanh(f64::NAN).is_nan());
    }
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_bias() {
        let mut m = Mlp::new(&[3, 4, 2], &mut ChaCha8Rng::seed_from_u64(0));
        for l in &mut m.layers {
            l.w.iter_mut().for_each(|w| *w = 0.0);
        }
        m.layers[1].b = vec![0.5, -1.0];
        let t = m.forward(vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0], 2, 0).unwrap();
        assert_eq!(t.output(), &[0.5, -1.0, 0.5, -1.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Mlp::new(&[3, 5, 2], &mut rng);
        let x: Vec<f64> = (0..6).map(|k| (k as f64 * 0.37).sin()).collect();
        let dy = [0.3, -0.7, 1.1, 0.2];
        let loss = |m: &Mlp, x: &[f64]| -> f64 {
            let t = m.forward(x.to_vec(), 2, 0).unwrap();
            t.output().iter().zip(&dy).map(|(a, b)| a * b).sum()
        };
        let tape = m.forward(x.clone(), 2, 0).unwrap();
        let mut grad = m.zeros_like();
        let dx = m.backward(&tape, &dy, &mut grad);
        let eps = 1e-6;
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp[k] += eps;
            let mut xm = x.clone();
            xm[k] -= eps;
            let fd = (loss(&m, &xp) - loss(&m, &xm)) / (2.0 * eps);
            assert!((fd - dx[k]).abs() < 1e-8, "{fd} vs {}", dx[k]);
        }
        for l in 0..2 {
            for k in 0..m.layers[l].w.len() {
                let mut mp = m.clone();
                mp.layers[l].w[k] += eps;
                let mut mm = m.clone();
                mm.layers[l].w[k] -= eps;
                let fd = (loss(&mp, &x) - loss(&mm, &x)) / (2.0 * eps);
                assert!((fd - grad.layers[l].w[k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn overflow_reports_layer() {
        let mut m = Mlp::new(&[1, 2, 1], &mut ChaCha8Rng::seed_from_u64(2));
        m.layers[1].w = vec![f64::INFINITY, 0.0];
        let err = m.forward(vec![1.0], 1, 10).unwrap_err();
        assert!(matches!(err, Error::NumericOverflow { layer: 11 }));
    }
}
