//! Single-Gaussian heteroscedastic mixture density network.
//!
//! A tanh MLP maps an input window to `2 * output_dim` numbers: the first half
//! is the predictive mean, the second half is a raw pre-activation that a
//! clamped softplus turns into a per-dimension variance.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::SupervisedDataset;
use crate::loss::Likelihood;
use crate::par::{self, Exec};
use crate::{Error, Result};

pub const SIGMA2_MIN: f64 = 1e-6;
pub const SIGMA2_MAX: f64 = 1e6;
/// Raw variance pre-activations are clamped to this range before softplus.
pub const RAW_MIN: f64 = -40.0;
pub const RAW_MAX: f64 = SIGMA2_MAX - SIGMA2_MIN;

const CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MdnArchitecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl Default for MdnArchitecture {
    fn default() -> Self {
        MdnArchitecture { input_dim: 20, hidden: vec![10, 10], output_dim: 4, activation: Activation::Tanh }
    }
}

impl MdnArchitecture {
    /// `(fan_in, fan_out)` of every dense layer, output layer last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden);
        widths.push(2 * self.output_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| (i + 1) * o).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("all layer widths must be positive"));
        }
        Ok(())
    }
}

/// Flat vector of all weights and biases.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(n: usize) -> Self {
        ParamVector(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn squared_norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }
}

impl std::ops::Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MdnOutput {
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Map a raw head output to a variance in `[SIGMA2_MIN, SIGMA2_MAX]`.
pub fn positive_map(raw: f64) -> f64 {
    softplus(raw.clamp(RAW_MIN, RAW_MAX)) + SIGMA2_MIN
}

fn positive_map_grad(raw: f64) -> f64 {
    if (RAW_MIN..=RAW_MAX).contains(&raw) {
        sigmoid(raw)
    } else {
        0.0
    }
}

/// Activation buffers for one network, reused across items.
pub struct Workspace {
    /// activations[0] is the input; activations[l] the output of layer l.
    activations: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_next: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Mdn {
    arch: MdnArchitecture,
    layers: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    n_params: usize,
}

impl Mdn {
    pub fn new(arch: MdnArchitecture) -> Result<Self> {
        arch.validate()?;
        let layers = arch.layer_dims();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut off = 0;
        for &(i, o) in &layers {
            offsets.push(off);
            off += (i + 1) * o;
        }
        Ok(Mdn { arch, layers, offsets, n_params: off })
    }

    pub fn architecture(&self) -> &MdnArchitecture {
        &self.arch
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn workspace(&self) -> Workspace {
        let mut activations = vec![vec![0.0; self.arch.input_dim]];
        for &(_, o) in &self.layers {
            activations.push(vec![0.0; o]);
        }
        let widest = self.layers.iter().map(|&(i, o)| i.max(o)).max().unwrap_or(0);
        Workspace { activations, delta: vec![0.0; widest], delta_next: vec![0.0; widest] }
    }

    /// Fan-in scaled Gaussian weights, zero biases, and variance-head biases
    /// set so that the initial variance is about 1.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R, scale: f64) -> Result<ParamVector> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::invalid(format!("init scale must be positive, got {scale}")));
        }
        let mut theta = vec![0.0; self.n_params];
        for (&(fan_in, fan_out), &off) in self.layers.iter().zip(&self.offsets) {
            let std = scale / (fan_in as f64).sqrt();
            for w in &mut theta[off..off + fan_in * fan_out] {
                *w = std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let (fan_in, fan_out) = *self.layers.last().unwrap();
        let bias_off = *self.offsets.last().unwrap() + fan_in * fan_out;
        let unit_raw = (1.0f64 - SIGMA2_MIN).exp_m1().ln();
        for b in &mut theta[bias_off + self.arch.output_dim..bias_off + fan_out] {
            *b = unit_raw;
        }
        Ok(ParamVector(theta))
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params {
            return Err(Error::invalid(format!(
                "parameter vector has length {}, architecture needs {}",
                theta.len(),
                self.n_params
            )));
        }
        Ok(())
    }

    /// Run the network, leaving all layer outputs in `ws`; the last layer
    /// holds `[mu, raw]`.
    fn run(&self, theta: &[f64], x: &[f64], ws: &mut Workspace) {
        ws.activations[0].copy_from_slice(x);
        let last = self.layers.len() - 1;
        for (l, (&(fan_in, fan_out), &off)) in self.layers.iter().zip(&self.offsets).enumerate() {
            let (prev, rest) = ws.activations.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut rest[0];
            let weights = &theta[off..off + fan_in * fan_out];
            let biases = &theta[off + fan_in * fan_out..off + (fan_in + 1) * fan_out];
            for j in 0..fan_out {
                let row = &weights[j * fan_in..(j + 1) * fan_in];
                let z = biases[j] + row.iter().zip(input.iter()).map(|(w, a)| w * a).sum::<f64>();
                out[j] = if l == last { z } else { z.tanh() };
            }
        }
    }

    fn item_log_likelihood(&self, theta: &[f64], x: &[f64], y: &[f64], ws: &mut Workspace) -> f64 {
        self.run(theta, x, ws);
        let out = ws.activations.last().unwrap();
        let dim = self.arch.output_dim;
        let mut ll = 0.0;
        for d in 0..dim {
            let s2 = positive_map(out[dim + d]);
            let r = y[d] - out[d];
            ll += -0.5 * (2.0 * PI * s2).ln() - r * r / (2.0 * s2);
        }
        ll
    }

    pub fn forward(&self, theta: &[f64], x: &[f64]) -> Result<MdnOutput> {
        self.check_theta(theta)?;
        if x.len() != self.arch.input_dim {
            return Err(Error::invalid(format!("input has length {}, expected {}", x.len(), self.arch.input_dim)));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("input contains non-finite values"));
        }
        let mut ws = self.workspace();
        self.run(theta, x, &mut ws);
        let out = ws.activations.last().unwrap();
        let dim = self.arch.output_dim;
        Ok(MdnOutput {
            mu: out[..dim].to_vec(),
            sigma2: out[dim..].iter().map(|&r| positive_map(r)).collect(),
        })
    }

    pub fn log_likelihood(&self, theta: &[f64], x: &[f64], y: &[f64]) -> Result<f64> {
        let out = self.forward(theta, x)?;
        if y.len() != self.arch.output_dim {
            return Err(Error::invalid("target dimension mismatch"));
        }
        Ok(gaussian_log_density(y, &out.mu, &out.sigma2))
    }

    /// Per-item log-likelihoods for every item of `ds`, in dataset order.
    pub fn log_likelihoods(&self, theta: &[f64], ds: &SupervisedDataset, exec: Exec) -> Vec<f64> {
        let n = ds.len();
        let chunks = par::map_range(exec, n.div_ceil(CHUNK), |c| {
            let mut ws = self.workspace();
            (c * CHUNK..((c + 1) * CHUNK).min(n))
                .map(|i| self.item_log_likelihood(theta, ds.x(i), ds.y(i), &mut ws))
                .collect::<Vec<_>>()
        });
        chunks.concat()
    }

    /// Log-likelihoods for the listed items only.
    pub fn log_likelihoods_of(&self, theta: &[f64], ds: &SupervisedDataset, items: &[usize], exec: Exec) -> Vec<f64> {
        let chunks = par::map_slice(exec, &items.chunks(CHUNK).collect::<Vec<_>>(), |chunk| {
            let mut ws = self.workspace();
            chunk
                .iter()
                .map(|&i| self.item_log_likelihood(theta, ds.x(i), ds.y(i), &mut ws))
                .collect::<Vec<_>>()
        });
        chunks.concat()
    }

    /// Predictive mean and variance for one input, written into `mu` and
    /// `sigma2`; no input validation.
    pub fn predict_into(&self, theta: &[f64], x: &[f64], ws: &mut Workspace, mu: &mut [f64], sigma2: &mut [f64]) {
        self.run(theta, x, ws);
        let out = ws.activations.last().unwrap();
        let dim = self.arch.output_dim;
        mu.copy_from_slice(&out[..dim]);
        for (s, &r) in sigma2.iter_mut().zip(&out[dim..]) {
            *s = positive_map(r);
        }
    }

    /// Moments `(mu, sigma2)` for every item, flattened item-major.
    pub fn predict_all(&self, theta: &[f64], ds: &SupervisedDataset) -> (Vec<f64>, Vec<f64>) {
        let dim = self.arch.output_dim;
        let mut ws = self.workspace();
        let mut mu = Vec::with_capacity(ds.len() * dim);
        let mut s2 = Vec::with_capacity(ds.len() * dim);
        for i in 0..ds.len() {
            self.run(theta, ds.x(i), &mut ws);
            let out = ws.activations.last().unwrap();
            mu.extend_from_slice(&out[..dim]);
            s2.extend(out[dim..].iter().map(|&r| positive_map(r)));
        }
        (mu, s2)
    }

    /// Accumulate the gradient of `-log p(y|x, theta)` for one item into `grad`.
    fn accumulate_grad(&self, theta: &[f64], x: &[f64], y: &[f64], ws: &mut Workspace, grad: &mut [f64]) {
        self.run(theta, x, ws);
        let dim = self.arch.output_dim;
        let n_layers = self.layers.len();
        {
            let out = &ws.activations[n_layers];
            for d in 0..dim {
                let raw = out[dim + d];
                let s2 = positive_map(raw);
                let r = y[d] - out[d];
                ws.delta[d] = -r / s2;
                ws.delta[dim + d] = (0.5 / s2 - r * r / (2.0 * s2 * s2)) * positive_map_grad(raw);
            }
        }
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = self.layers[l];
            let off = self.offsets[l];
            let input = &ws.activations[l];
            let (gw, gb) = grad[off..off + (fan_in + 1) * fan_out].split_at_mut(fan_in * fan_out);
            for j in 0..fan_out {
                let dj = ws.delta[j];
                gb[j] += dj;
                for (g, a) in gw[j * fan_in..(j + 1) * fan_in].iter_mut().zip(input) {
                    *g += dj * a;
                }
            }
            if l > 0 {
                let weights = &theta[off..off + fan_in * fan_out];
                for k in 0..fan_in {
                    let mut s = 0.0;
                    for j in 0..fan_out {
                        s += weights[j * fan_in + k] * ws.delta[j];
                    }
                    let a = input[k];
                    ws.delta_next[k] = s * (1.0 - a * a);
                }
                std::mem::swap(&mut ws.delta, &mut ws.delta_next);
            }
        }
    }

    /// Exact gradient of `-sum_i log p(y_i | x_i, theta)` over `batch`,
    /// accumulated in dataset order.
    pub fn grad_neg_log_likelihood(&self, theta: &[f64], batch: &SupervisedDataset) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        if batch.is_empty() {
            return Err(Error::invalid("gradient batch must be nonempty"));
        }
        let items: Vec<usize> = (0..batch.len()).collect();
        Ok(self.grad_items(theta, batch, &items))
    }

    pub(crate) fn grad_items(&self, theta: &[f64], ds: &SupervisedDataset, items: &[usize]) -> Vec<f64> {
        let mut grad = vec![0.0; self.n_params];
        let mut ws = self.workspace();
        for &i in items {
            self.accumulate_grad(theta, ds.x(i), ds.y(i), &mut ws, &mut grad);
        }
        grad
    }
}

/// `sum_d log N(y_d; mu_d, sigma2_d)`.
pub fn gaussian_log_density(y: &[f64], mu: &[f64], sigma2: &[f64]) -> f64 {
    y.iter()
        .zip(mu)
        .zip(sigma2)
        .map(|((y, m), s2)| -0.5 * (2.0 * PI * s2).ln() - (y - m).powi(2) / (2.0 * s2))
        .sum()
}

/// An MDN evaluated on a fixed dataset.
#[derive(Clone, Copy, Debug)]
pub struct MdnTarget<'a> {
    pub net: &'a Mdn,
    pub data: &'a SupervisedDataset,
}

impl<'a> MdnTarget<'a> {
    pub fn new(net: &'a Mdn, data: &'a SupervisedDataset) -> Self {
        MdnTarget { net, data }
    }
}

impl Likelihood for MdnTarget<'_> {
    fn n_params(&self) -> usize {
        self.net.n_params()
    }

    fn n_items(&self) -> usize {
        self.data.len()
    }

    fn log_likelihood(&self, theta: &[f64], item: usize) -> f64 {
        let mut ws = self.net.workspace();
        self.net.item_log_likelihood(theta, self.data.x(item), self.data.y(item), &mut ws)
    }

    fn log_likelihoods(&self, theta: &[f64], exec: Exec) -> Vec<f64> {
        self.net.log_likelihoods(theta, self.data, exec)
    }

    fn log_likelihoods_of(&self, theta: &[f64], items: &[usize], exec: Exec) -> Vec<f64> {
        self.net.log_likelihoods_of(theta, self.data, items, exec)
    }

    fn grad_neg_log_likelihood(&self, theta: &[f64], items: &[usize]) -> Vec<f64> {
        self.net.grad_items(theta, self.data, items)
    }
}
