//! Multilayer-perceptron control variates.
//!
//! The forward pass carries the value, the input Jacobian and the input
//! Laplacian of every layer, so `g = Δu + ∇u · ∇log π` is exact. Parameter
//! gradients of `g` come from a hand-written reverse pass over that extended
//! forward pass.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cv::{ControlVariate, Trainable};
use crate::error::{ensure_finite, Error, Result};
use crate::samples::ScoredSampleSet;
use crate::training::{batch_objective_gradient, Objective, ObjectiveGradient, Regularizer};

pub const DEFAULT_HIDDEN_LAYERS: usize = 6;
pub const DEFAULT_HIDDEN_WIDTH: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    /// `σ'(0) = 0`; second and third derivatives are zero everywhere.
    Relu,
}

impl Activation {
    /// `(σ, σ', σ'', σ''')` at `a`.
    fn derivatives(self, a: f64) -> (f64, f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let t = a.tanh();
                let d1 = 1.0 - t * t;
                (t, d1, -2.0 * t * d1, -2.0 * d1 * (1.0 - 3.0 * t * t))
            }
            Activation::Relu => {
                if a > 0.0 {
                    (a, 1.0, 0.0, 0.0)
                } else {
                    (0.0, 0.0, 0.0, 0.0)
                }
            }
        }
    }
}

/// Fully connected network `R^d → R`; every layer but the last is followed by
/// the activation. Weights are row-major `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
    activation: Activation,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Per-layer values kept by the forward pass for the reverse pass.
struct LayerCache {
    /// Layer input: value, Jacobian (`width × d`, row-major), Laplacian.
    h: Vec<f64>,
    jh: Vec<f64>,
    lh: Vec<f64>,
    /// Pre-activation.
    a: Vec<f64>,
    ja: Vec<f64>,
    la: Vec<f64>,
}

impl Mlp {
    /// Glorot-uniform weights and zero biases.
    pub fn new(widths: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        Self::validate_widths(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(widths.len() - 1);
        let mut biases = Vec::with_capacity(widths.len() - 1);
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push((0..fan_in * fan_out).map(|_| rng.random_range(-limit..=limit)).collect());
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            widths: widths.to_vec(),
            activation,
            weights,
            biases,
        })
    }

    /// Six hidden tanh layers of width 20.
    pub fn default_architecture(d: usize, seed: u64) -> Result<Self> {
        let mut widths = vec![d];
        widths.extend(std::iter::repeat_n(DEFAULT_HIDDEN_WIDTH, DEFAULT_HIDDEN_LAYERS));
        widths.push(1);
        Self::new(&widths, Activation::Tanh, seed)
    }

    pub fn from_parts(
        widths: Vec<usize>,
        activation: Activation,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        Self::validate_widths(&widths)?;
        let net = Self {
            widths,
            activation,
            weights,
            biases,
        };
        net.validate_parameters()?;
        Ok(net)
    }

    fn validate_widths(widths: &[usize]) -> Result<()> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid layer widths {widths:?}")));
        }
        if widths[widths.len() - 1] != 1 {
            return Err(Error::InvalidArgument("the output width must be 1".into()));
        }
        Ok(())
    }

    fn validate_parameters(&self) -> Result<()> {
        let layers = self.widths.len() - 1;
        if self.weights.len() != layers || self.biases.len() != layers {
            return Err(Error::InvalidArgument(format!("expected {layers} weight and bias arrays")));
        }
        for (l, w) in self.widths.windows(2).enumerate() {
            if self.weights[l].len() != w[0] * w[1] {
                return Err(Error::LengthMismatch {
                    what: "layer weights",
                    left: self.weights[l].len(),
                    right: w[0] * w[1],
                });
            }
            if self.biases[l].len() != w[1] {
                return Err(Error::LengthMismatch {
                    what: "layer biases",
                    left: self.biases[l].len(),
                    right: w[1],
                });
            }
            ensure_finite(&self.weights[l], "network weights")?;
            ensure_finite(&self.biases[l], "network biases")?;
        }
        Ok(())
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.weights[layer]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer]
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().zip(&self.biases).map(|(w, b)| w.len() + b.len()).sum()
    }

    /// Flat parameters: for each layer its weights, then its biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_params(), "parameter length");
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&params[at..at + nw]);
            at += nw;
            b.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
    }

    fn forward_cached(&self, x: &[f64]) -> (Vec<LayerCache>, f64, Vec<f64>, f64) {
        let d = self.input_dim();
        assert_eq!(x.len(), d, "input dimension");
        let mut h = x.to_vec();
        let mut jh = vec![0.0; d * d];
        for l in 0..d {
            jh[l * d + l] = 1.0;
        }
        let mut lh = vec![0.0; d];
        let mut caches = Vec::with_capacity(self.num_layers());
        let last = self.num_layers() - 1;
        for (layer, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (n_in, n_out) = (self.widths[layer], self.widths[layer + 1]);
            let mut a = b.clone();
            let mut ja = vec![0.0; n_out * d];
            let mut la = vec![0.0; n_out];
            for k in 0..n_out {
                let row = &w[k * n_in..(k + 1) * n_in];
                for (j, &wkj) in row.iter().enumerate() {
                    a[k] += wkj * h[j];
                    la[k] += wkj * lh[j];
                    for l in 0..d {
                        ja[k * d + l] += wkj * jh[j * d + l];
                    }
                }
            }
            let (mut z, mut jz, mut lz) = (a.clone(), ja.clone(), la.clone());
            if layer < last {
                for k in 0..n_out {
                    let (s0, s1, s2, _) = self.activation.derivatives(a[k]);
                    z[k] = s0;
                    let mut q = 0.0;
                    for l in 0..d {
                        let v = ja[k * d + l];
                        q += v * v;
                        jz[k * d + l] = s1 * v;
                    }
                    lz[k] = s2 * q + s1 * la[k];
                }
            }
            caches.push(LayerCache {
                h: std::mem::replace(&mut h, z),
                jh: std::mem::replace(&mut jh, jz),
                lh: std::mem::replace(&mut lh, lz),
                a,
                ja,
                la,
            });
        }
        (caches, h[0], jh, lh[0])
    }

    /// `(u(x), ∇u(x), Δu(x))`.
    pub fn forward_with_derivatives(&self, x: &[f64]) -> (f64, Vec<f64>, f64) {
        let (_, u, grad, lap) = self.forward_cached(x);
        (u, grad, lap)
    }

    /// Writes `∂g(x)/∂params` (flat layout of [`Mlp::params`]) for
    /// `g = Δu + ∇u · score`, and returns `g`.
    pub fn stein_value_and_param_grad(&self, x: &[f64], score: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.input_dim();
        let (caches, _, grad_u, lap_u) = self.forward_cached(x);
        let value = lap_u + crate::cv::dot(&grad_u, score);

        // Adjoints of the current layer output (value, Jacobian, Laplacian).
        let mut z_bar = vec![0.0];
        let mut jz_bar = score.to_vec();
        let mut lz_bar = vec![1.0];

        let mut offsets = Vec::with_capacity(self.num_layers());
        let mut at = 0;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            offsets.push(at);
            at += w.len() + b.len();
        }
        let last = self.num_layers() - 1;
        for layer in (0..self.num_layers()).rev() {
            let c = &caches[layer];
            let (n_in, n_out) = (self.widths[layer], self.widths[layer + 1]);
            let (a_bar, ja_bar, la_bar) = if layer < last {
                let mut a_bar = vec![0.0; n_out];
                let mut ja_bar = vec![0.0; n_out * d];
                let mut la_bar = vec![0.0; n_out];
                for k in 0..n_out {
                    let (_, s1, s2, s3) = self.activation.derivatives(c.a[k]);
                    let lzb = lz_bar[k];
                    la_bar[k] = s1 * lzb;
                    let (mut q, mut cross) = (0.0, 0.0);
                    for l in 0..d {
                        let ja = c.ja[k * d + l];
                        let jzb = jz_bar[k * d + l];
                        q += ja * ja;
                        cross += jzb * ja;
                        ja_bar[k * d + l] = 2.0 * s2 * lzb * ja + s1 * jzb;
                    }
                    a_bar[k] = s3 * q * lzb + s2 * c.la[k] * lzb + s2 * cross + s1 * z_bar[k];
                }
                (a_bar, ja_bar, la_bar)
            } else {
                (z_bar.clone(), jz_bar.clone(), lz_bar.clone())
            };

            let w = &self.weights[layer];
            let off = offsets[layer];
            let (gw, rest) = grad[off..off + w.len() + n_out].split_at_mut(w.len());
            for k in 0..n_out {
                for j in 0..n_in {
                    let mut v = a_bar[k] * c.h[j] + la_bar[k] * c.lh[j];
                    for l in 0..d {
                        v += ja_bar[k * d + l] * c.jh[j * d + l];
                    }
                    gw[k * n_in + j] = v;
                }
                rest[k] = a_bar[k];
            }

            if layer > 0 {
                let mut h_bar = vec![0.0; n_in];
                let mut jh_bar = vec![0.0; n_in * d];
                let mut lh_bar = vec![0.0; n_in];
                for k in 0..n_out {
                    for j in 0..n_in {
                        let wkj = w[k * n_in + j];
                        h_bar[j] += wkj * a_bar[k];
                        lh_bar[j] += wkj * la_bar[k];
                        for l in 0..d {
                            jh_bar[j * d + l] += wkj * ja_bar[k * d + l];
                        }
                    }
                }
                z_bar = h_bar;
                jz_bar = jh_bar;
                lz_bar = lh_bar;
            }
        }
        value
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let net: Mlp = serde_json::from_reader(std::io::BufReader::new(file))?;
        Self::validate_widths(&net.widths)?;
        net.validate_parameters()?;
        Ok(net)
    }
}

pub fn mlp_forward_with_derivatives(net: &Mlp, x: &[f64]) -> (f64, Vec<f64>, f64) {
    net.forward_with_derivatives(x)
}

/// Network control variate `g = Δu + ∇u · ∇log π` with a fitted offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnCV {
    pub net: Mlp,
    pub offset: f64,
}

impl NnCV {
    pub fn new(net: Mlp) -> Self {
        Self { net, offset: 0.0 }
    }
}

pub fn nn_cv_eval(net: &Mlp, x: &[f64], score: &[f64]) -> f64 {
    let (_, grad, lap) = net.forward_with_derivatives(x);
    lap + crate::cv::dot(&grad, score)
}

/// Objective plus `λ · mean(g²)` over the whole `batch`, with its gradient.
pub fn nn_param_gradient(cv: &NnCV, batch: &ScoredSampleSet, objective: Objective, lambda: f64) -> Result<ObjectiveGradient> {
    let rows: Vec<usize> = (0..batch.len()).collect();
    batch_objective_gradient(cv, batch, &rows, objective, Regularizer::MeanGSquared, lambda)
}

impl ControlVariate for NnCV {
    fn dim(&self) -> usize {
        self.net.input_dim()
    }

    fn eval(&self, x: &[f64], score: &[f64]) -> f64 {
        nn_cv_eval(&self.net, x, score)
    }

    fn offset(&self) -> f64 {
        self.offset
    }
}

impl Trainable for NnCV {
    fn num_params(&self) -> usize {
        self.net.num_params()
    }

    fn params(&self) -> Vec<f64> {
        self.net.params()
    }

    fn set_params(&mut self, params: &[f64]) {
        self.net.set_params(params);
    }

    fn set_offset(&mut self, offset: f64) {
        self.offset = offset;
    }

    fn eval_with_param_grad(&self, x: &[f64], score: &[f64], grad: &mut [f64]) -> f64 {
        self.net.stein_value_and_param_grad(x, score, grad)
    }

    fn is_linear(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_grad_lap(net: &Mlp, x: &[f64], h: f64) -> (Vec<f64>, f64) {
        let d = x.len();
        let u0 = net.forward_with_derivatives(x).0;
        let mut grad = vec![0.0; d];
        let mut lap = 0.0;
        for l in 0..d {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[l] += h;
            xm[l] -= h;
            let (up, um) = (net.forward_with_derivatives(&xp).0, net.forward_with_derivatives(&xm).0);
            grad[l] = (up - um) / (2.0 * h);
            lap += (up - 2.0 * u0 + um) / (h * h);
        }
        (grad, lap)
    }

    #[test]
    fn zero_weights_give_constant() {
        let mut net = Mlp::new(&[2, 4, 1], Activation::Tanh, 1).unwrap();
        let zeros = vec![0.0; net.num_params()];
        net.set_params(&zeros);
        net.biases_mut(1)[0] = 0.75;
        let (u, g, l) = net.forward_with_derivatives(&[0.3, -1.0]);
        assert_eq!(u, 0.75);
        assert_eq!(g, vec![0.0, 0.0]);
        assert_eq!(l, 0.0);
        assert_eq!(nn_cv_eval(&net, &[0.3, -1.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn single_affine_layer() {
        let net = Mlp::from_parts(vec![3, 1], Activation::Tanh, vec![vec![0.5, -1.0, 2.0]], vec![vec![0.1]]).unwrap();
        let (u, g, l) = net.forward_with_derivatives(&[1.0, 1.0, 1.0]);
        assert!((u - 1.6).abs() < 1e-15);
        assert_eq!(g, vec![0.5, -1.0, 2.0]);
        assert_eq!(l, 0.0);
        // Standard normal score -x: g = -w·x.
        let x = [0.2, 0.4, -0.3];
        let s: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((nn_cv_eval(&net, &x, &s) - (-(0.1 - 0.4 - 0.6))).abs() < 1e-15);
    }

    #[test]
    fn tanh_derivatives_match_finite_differences() {
        for seed in 0..20 {
            let net = Mlp::new(&[3, 7, 5, 1], Activation::Tanh, seed).unwrap();
            let x = [0.3 - 0.05 * seed as f64, -0.7, 0.2 + 0.03 * seed as f64];
            let (_, g, l) = net.forward_with_derivatives(&x);
            let (fg, fl) = fd_grad_lap(&net, &x, 1e-4);
            for (a, b) in g.iter().zip(&fg) {
                assert!((a - b).abs() <= 1e-4 * a.abs().max(1e-3), "{a} vs {b}");
            }
            assert!((l - fl).abs() <= 1e-4 * l.abs().max(1e-2), "{l} vs {fl}");
        }
    }

    #[test]
    fn relu_laplacian_vanishes() {
        let net = Mlp::new(&[2, 8, 8, 1], Activation::Relu, 3).unwrap();
        let x = [0.4, -0.9];
        let (_, g, l) = net.forward_with_derivatives(&x);
        assert_eq!(l, 0.0);
        let s = [1.5, 0.25];
        assert_eq!(nn_cv_eval(&net, &x, &s), g[0] * s[0] + g[1] * s[1]);
    }

    #[test]
    fn param_grad_matches_finite_differences() {
        for seed in 0..20 {
            for activation in [Activation::Tanh, Activation::Relu] {
                let cv = NnCV::new(Mlp::new(&[2, 5, 4, 1], activation, seed).unwrap());
                let x = [0.5, -0.3 + 0.02 * seed as f64];
                let s = [-0.5, 0.8];
                let mut grad = vec![0.0; cv.num_params()];
                cv.eval_with_param_grad(&x, &s, &mut grad);
                let p0 = cv.params();
                let h = 1e-6;
                for i in 0..p0.len() {
                    let mut c = cv.clone();
                    let mut p = p0.clone();
                    p[i] += h;
                    c.set_params(&p);
                    let up = c.eval(&x, &s);
                    p[i] -= 2.0 * h;
                    c.set_params(&p);
                    let um = c.eval(&x, &s);
                    let fd = (up - um) / (2.0 * h);
                    assert!((grad[i] - fd).abs() <= 1e-4 * grad[i].abs().max(1e-3), "param {i}: {} vs {fd}", grad[i]);
                }
            }
        }
    }

    #[test]
    fn zero_params_give_zero_cv() {
        let mut cv = NnCV::new(Mlp::default_architecture(3, 5).unwrap());
        let z = vec![0.0; cv.num_params()];
        cv.set_params(&z);
        assert_eq!(cv.eval(&[0.1, 0.2, 0.3], &[1.0, 1.0, 1.0]), 0.0);
    }

    #[test]
    fn output_layer_homogeneity() {
        let mut net = Mlp::new(&[2, 6, 1], Activation::Tanh, 9).unwrap();
        let x = [0.3, 0.1];
        let s = [-0.3, -0.1];
        let base = nn_cv_eval(&net, &x, &s);
        for w in net.weights_mut(1) {
            *w *= 2.5;
        }
        assert!((nn_cv_eval(&net, &x, &s) - 2.5 * base).abs() < 1e-12);
    }

    #[test]
    fn default_architecture_shape() {
        let net = Mlp::default_architecture(4, 0).unwrap();
        assert_eq!(net.widths(), &[4, 20, 20, 20, 20, 20, 20, 1]);
        assert!(Mlp::new(&[2, 3, 2], Activation::Tanh, 0).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = Mlp::new(&[2, 3, 1], Activation::Relu, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        net.save_checkpoint(&path).unwrap();
        assert_eq!(Mlp::load_checkpoint(&path).unwrap(), net);
    }
}
