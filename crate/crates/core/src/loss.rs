//! Posterior losses, mini-batch draws, and the noisy loss-difference
//! estimator (mean `delta` and variance-of-the-mean `chi2`) that drives the
//! penalty acceptance rule.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::par::{self, Exec};
use crate::{Error, Result};

/// Per-datum log-likelihood source over an indexed dataset.
pub trait Likelihood: Sync {
    fn n_params(&self) -> usize;
    fn n_items(&self) -> usize;
    fn log_likelihood(&self, theta: &[f64], item: usize) -> f64;

    fn log_likelihoods(&self, theta: &[f64], exec: Exec) -> Vec<f64> {
        par::map_range(exec, self.n_items(), |i| self.log_likelihood(theta, i))
    }

    fn log_likelihoods_of(&self, theta: &[f64], items: &[usize], exec: Exec) -> Vec<f64> {
        par::map_slice(exec, items, |&i| self.log_likelihood(theta, i))
    }

    /// Gradient of `-sum_{i in items} log p(y_i | x_i, theta)`.
    fn grad_neg_log_likelihood(&self, theta: &[f64], items: &[usize]) -> Vec<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorKind {
    GaussianL2,
}

/// `p(theta) ∝ exp(-lambda ||theta||^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSpec {
    pub kind: PriorKind,
    pub lambda: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec { kind: PriorKind::GaussianL2, lambda: 1e-5 }
    }
}

impl PriorSpec {
    pub fn gaussian(lambda: f64) -> Result<Self> {
        let p = PriorSpec { kind: PriorKind::GaussianL2, lambda };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::invalid(format!("prior lambda must be positive, got {}", self.lambda)));
        }
        Ok(())
    }

    /// `log p(theta)` with the normalizing constant fixed to zero.
    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        match self.kind {
            PriorKind::GaussianL2 => -self.lambda * theta.iter().map(|v| v * v).sum::<f64>(),
        }
    }

    /// Gradient of `-log p(theta)`.
    pub fn grad_neg_log_prior(&self, theta: &[f64]) -> Vec<f64> {
        match self.kind {
            PriorKind::GaussianL2 => theta.iter().map(|v| 2.0 * self.lambda * v).collect(),
        }
    }
}

pub fn log_prior(theta: &[f64], prior: &PriorSpec) -> f64 {
    prior.log_prior(theta)
}

/// Loss from a precomputed log-prior and per-item log-likelihoods:
/// `-log p(theta) - weight * sum_{i in items} ll[i]`.
pub fn loss_from_cache(log_prior: f64, ll: &[f64], items: &[usize], weight: f64) -> f64 {
    let s: f64 = items.iter().map(|&i| ll[i]).sum();
    -log_prior - weight * s
}

/// `-log p(theta) - sum_{i in D} log p(y_i | x_i, theta)` on the whole dataset.
pub fn batch_loss<L: Likelihood + ?Sized>(lik: &L, theta: &[f64], prior: &PriorSpec) -> Result<f64> {
    weighted_loss(lik, theta, prior, lik.n_items())
}

/// Tempered loss: the likelihood sum rescaled by `target_n / |D|`.
pub fn weighted_loss<L: Likelihood + ?Sized>(lik: &L, theta: &[f64], prior: &PriorSpec, target_n: usize) -> Result<f64> {
    if lik.n_items() == 0 {
        return Err(Error::invalid("loss needs a nonempty dataset"));
    }
    if target_n == 0 {
        return Err(Error::invalid("target_N must be at least 1"));
    }
    let ll = lik.log_likelihoods(theta, Exec::default());
    let s: f64 = ll.iter().sum();
    let weight = target_n as f64 / lik.n_items() as f64;
    Ok(-prior.log_prior(theta) - weight * s)
}

/// Gradient of [`weighted_loss`].
pub fn grad_weighted_loss<L: Likelihood + ?Sized>(lik: &L, theta: &[f64], prior: &PriorSpec, items: &[usize], target_n: usize) -> Vec<f64> {
    let weight = target_n as f64 / items.len() as f64;
    let mut g = lik.grad_neg_log_likelihood(theta, items);
    for (gi, pi) in g.iter_mut().zip(prior.grad_neg_log_prior(theta)) {
        *gi = weight * *gi + pi;
    }
    g
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchMode {
    #[default]
    WithReplacement,
    Partition,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiniBatchPlan {
    /// Items per batch (N).
    pub batch_size: usize,
    /// Batches per estimate (M).
    pub num_batches: usize,
    #[serde(default)]
    pub mode: BatchMode,
}

impl Default for MiniBatchPlan {
    fn default() -> Self {
        MiniBatchPlan { batch_size: 60, num_batches: 100, mode: BatchMode::WithReplacement }
    }
}

impl MiniBatchPlan {
    pub fn validate(&self, train_len: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size N must be at least 1"));
        }
        if self.num_batches < 2 {
            return Err(Error::VarianceUndefined(self.num_batches));
        }
        if self.mode == BatchMode::Partition && self.batch_size * self.num_batches > train_len {
            return Err(Error::invalid(format!(
                "partition of {} x {} items infeasible for {} training items",
                self.num_batches, self.batch_size, train_len
            )));
        }
        if self.mode == BatchMode::WithReplacement && train_len == 0 {
            return Err(Error::invalid("cannot draw batches from an empty training set"));
        }
        Ok(())
    }
}

/// Index lists into the training set, one per mini-batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MiniBatches(pub Vec<Vec<usize>>);

impl MiniBatches {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Vec<usize>> {
        self.0.iter()
    }

    pub fn materialize(&self, train: &crate::dataset::SupervisedDataset) -> Vec<crate::dataset::SupervisedDataset> {
        self.0.iter().map(|b| train.select(b)).collect()
    }
}

pub fn draw_minibatches<R: Rng + ?Sized>(train_len: usize, plan: &MiniBatchPlan, rng: &mut R) -> Result<MiniBatches> {
    plan.validate(train_len)?;
    let n = plan.batch_size;
    let m = plan.num_batches;
    let batches = match plan.mode {
        BatchMode::WithReplacement => (0..m)
            .map(|_| (0..n).map(|_| rng.random_range(0..train_len)).collect())
            .collect(),
        BatchMode::Partition => {
            let mut order: Vec<usize> = (0..train_len).collect();
            order.shuffle(rng);
            order.chunks_exact(n).take(m).map(|c| c.to_vec()).collect()
        }
    };
    Ok(MiniBatches(batches))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossDiffEstimate {
    pub delta: f64,
    pub chi2: f64,
    pub m: usize,
    pub per_batch_diffs: Vec<f64>,
}

impl LossDiffEstimate {
    /// Mean and unbiased variance-of-the-mean of per-batch differences,
    /// reduced in index order.
    pub fn from_diffs(diffs: Vec<f64>) -> Result<Self> {
        let m = diffs.len();
        if m < 2 {
            return Err(Error::VarianceUndefined(m));
        }
        let mf = m as f64;
        let delta = diffs.iter().sum::<f64>() / mf;
        let ss: f64 = diffs.iter().map(|d| (d - delta) * (d - delta)).sum();
        let chi2 = ss / (mf * (mf - 1.0));
        Ok(LossDiffEstimate { delta, chi2, m, per_batch_diffs: diffs })
    }
}

/// Per-batch differences `L_j(theta') - L_j(theta)` from cached per-item
/// log-likelihoods of both parameter vectors.
pub fn loss_diff_from_cache(
    ll_new: &[f64],
    log_prior_new: f64,
    ll_old: &[f64],
    log_prior_old: f64,
    batches: &MiniBatches,
    target_n: usize,
) -> Result<LossDiffEstimate> {
    let diffs = batches
        .iter()
        .map(|b| {
            let w = target_n as f64 / b.len() as f64;
            loss_from_cache(log_prior_new, ll_new, b, w) - loss_from_cache(log_prior_old, ll_old, b, w)
        })
        .collect();
    LossDiffEstimate::from_diffs(diffs)
}

/// Estimate the loss difference between `theta_new` and `theta_old` from
/// `batches` (indices into `lik`'s dataset). Each batch loss carries the full
/// prior term and a likelihood weight of `target_n / |batch|`.
pub fn loss_diff_estimate<L: Likelihood + ?Sized>(
    lik: &L,
    theta_new: &[f64],
    theta_old: &[f64],
    batches: &MiniBatches,
    prior: &PriorSpec,
    target_n: usize,
) -> Result<LossDiffEstimate> {
    loss_diff_estimate_with(lik, theta_new, theta_old, batches, prior, target_n, Exec::default())
}

pub fn loss_diff_estimate_with<L: Likelihood + ?Sized>(
    lik: &L,
    theta_new: &[f64],
    theta_old: &[f64],
    batches: &MiniBatches,
    prior: &PriorSpec,
    target_n: usize,
    exec: Exec,
) -> Result<LossDiffEstimate> {
    if batches.len() < 2 {
        return Err(Error::VarianceUndefined(batches.len()));
    }
    if target_n == 0 {
        return Err(Error::invalid("target_N must be at least 1"));
    }
    if batches.iter().any(|b| b.is_empty()) {
        return Err(Error::invalid("mini-batches must be nonempty"));
    }
    let lp_new = prior.log_prior(theta_new);
    let lp_old = prior.log_prior(theta_old);
    let diffs = par::map_slice(exec, &batches.0, |b| {
        let w = target_n as f64 / b.len() as f64;
        let s_new: f64 = b.iter().map(|&i| lik.log_likelihood(theta_new, i)).sum();
        let s_old: f64 = b.iter().map(|&i| lik.log_likelihood(theta_old, i)).sum();
        (-lp_new - w * s_new) - (-lp_old - w * s_old)
    });
    LossDiffEstimate::from_diffs(diffs)
}
