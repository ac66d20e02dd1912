//! Posterior-predictive evaluation of retained chain samples.
//!
//! The predictive distribution at `x` is the uniform mixture of the per-sample
//! Gaussians. We report its averaged negative log-likelihood, its one-sigma
//! coverage (using the exact mixture mean and standard deviation), and the
//! average coverage error against the 68.2% target.

use serde::Serialize;

use crate::dataset::SupervisedDataset;
use crate::mdn::{gaussian_log_density, Mdn, ParamVector};
use crate::par::{self, Exec};
use crate::{Error, Result};

/// One-sigma coverage target.
pub const TARGET_COVERAGE: f64 = 0.682;

const CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveMoments {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Mixture mean and standard deviation from component moments.
pub fn mixture_moments(mus: &[Vec<f64>], sigma2s: &[Vec<f64>]) -> PredictiveMoments {
    let j = mus.len() as f64;
    let dim = mus[0].len();
    let mut mu = vec![0.0; dim];
    for m in mus {
        for d in 0..dim {
            mu[d] += m[d];
        }
    }
    mu.iter_mut().for_each(|v| *v /= j);
    // Law of total variance: E[sigma2] + Var[mu], centred for stability.
    let mut var = vec![0.0; dim];
    for (m, s2) in mus.iter().zip(sigma2s) {
        for d in 0..dim {
            var[d] += s2[d] + (m[d] - mu[d]).powi(2);
        }
    }
    let sigma = var.into_iter().map(|v| (v / j).sqrt()).collect();
    PredictiveMoments { mu, sigma }
}

pub fn predictive_moments(net: &Mdn, samples: &[ParamVector], x: &[f64]) -> Result<PredictiveMoments> {
    if samples.is_empty() {
        return Err(Error::invalid("need at least one posterior sample"));
    }
    let mut mus = Vec::with_capacity(samples.len());
    let mut s2s = Vec::with_capacity(samples.len());
    for theta in samples {
        let out = net.forward(theta, x)?;
        mus.push(out.mu);
        s2s.push(out.sigma2);
    }
    Ok(mixture_moments(&mus, &s2s))
}

/// `log(sum_j exp(v_j))` with a max shift.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Per-datum log mixture density and coverage count over all dimensions.
struct DatumEval {
    log_mix: f64,
    covered: usize,
}

fn evaluate_datum(net: &Mdn, samples: &[ParamVector], x: &[f64], y: &[f64], ws: &mut crate::mdn::Workspace) -> DatumEval {
    let dim = y.len();
    let mut mus = vec![vec![0.0; dim]; samples.len()];
    let mut s2s = vec![vec![0.0; dim]; samples.len()];
    let mut lls = Vec::with_capacity(samples.len());
    for (k, theta) in samples.iter().enumerate() {
        net.predict_into(theta, x, ws, &mut mus[k], &mut s2s[k]);
        lls.push(gaussian_log_density(y, &mus[k], &s2s[k]));
    }
    let log_mix = log_sum_exp(&lls) - (samples.len() as f64).ln();
    let m = mixture_moments(&mus, &s2s);
    let covered = (0..dim).filter(|&d| (y[d] - m.mu[d]).abs() <= m.sigma[d]).count();
    DatumEval { log_mix, covered }
}

fn evaluate_all(net: &Mdn, samples: &[ParamVector], ds: &SupervisedDataset, exec: Exec) -> Result<Vec<DatumEval>> {
    if samples.is_empty() {
        return Err(Error::invalid("need at least one posterior sample"));
    }
    if ds.is_empty() {
        return Err(Error::invalid("evaluation dataset is empty"));
    }
    if let Some(bad) = samples.iter().find(|t| t.len() != net.n_params()) {
        return Err(Error::invalid(format!("sample has length {}, model needs {}", bad.len(), net.n_params())));
    }
    let n = ds.len();
    let chunks = par::map_range(exec, n.div_ceil(CHUNK), |c| {
        let mut ws = net.workspace();
        (c * CHUNK..((c + 1) * CHUNK).min(n))
            .map(|i| evaluate_datum(net, samples, ds.x(i), ds.y(i), &mut ws))
            .collect::<Vec<_>>()
    });
    Ok(chunks.into_iter().flatten().collect())
}

/// `-(1/L) sum_i log((1/J) sum_j p(y_i | x_i, theta_j))`.
pub fn avg_nll(net: &Mdn, samples: &[ParamVector], ds: &SupervisedDataset) -> Result<f64> {
    let evals = evaluate_all(net, samples, ds, Exec::default())?;
    Ok(-evals.iter().map(|e| e.log_mix).sum::<f64>() / evals.len() as f64)
}

/// One-sigma coverage and `|0.682 - coverage|`.
pub fn coverage_and_ace(net: &Mdn, samples: &[ParamVector], ds: &SupervisedDataset) -> Result<(f64, f64)> {
    let evals = evaluate_all(net, samples, ds, Exec::default())?;
    let cov = coverage_from(&evals, ds.y_dim());
    Ok((cov, ace(cov)))
}

fn coverage_from(evals: &[DatumEval], dim: usize) -> f64 {
    let hits: usize = evals.iter().map(|e| e.covered).sum();
    hits as f64 / (dim * evals.len()) as f64
}

pub fn ace(coverage: f64) -> f64 {
    (TARGET_COVERAGE - coverage).abs()
}

/// Coverage from explicit predictive moments.
pub fn coverage_of(ys: &[Vec<f64>], moments: &[PredictiveMoments]) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (y, m) in ys.iter().zip(moments) {
        for d in 0..y.len() {
            total += 1;
            if (y[d] - m.mu[d]).abs() <= m.sigma[d] {
                hits += 1;
            }
        }
    }
    hits as f64 / total as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub sampler: String,
    pub n: usize,
    pub m: usize,
    pub split: Split,
    pub avg_nll: f64,
    pub coverage: f64,
    pub ace: f64,
    pub acceptance_rate: f64,
    pub j: usize,
    pub seed: u64,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "sampler,N,M,split,avg_nll,coverage,ace,acceptance_rate,J,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.sampler, self.n, self.m, self.split, self.avg_nll, self.coverage, self.ace, self.acceptance_rate, self.j, self.seed
        )
    }
}

/// Evaluate NLL and coverage in one pass over the dataset.
pub fn evaluate(net: &Mdn, samples: &[ParamVector], ds: &SupervisedDataset) -> Result<(f64, f64, f64)> {
    let evals = evaluate_all(net, samples, ds, Exec::default())?;
    let nll = -evals.iter().map(|e| e.log_mix).sum::<f64>() / evals.len() as f64;
    let cov = coverage_from(&evals, ds.y_dim());
    Ok((nll, cov, ace(cov)))
}
