#![allow(dead_code)]

use std::sync::OnceLock;

use pbnn::dataset::SupervisedDataset;
use pbnn::experiment::{prepare_data, DataConfig, PreparedData};
use pbnn::mdn::Mdn;
use pbnn::pendulum::{simulate, PendulumParams, PendulumState};
use rand::seq::index::sample;
use rand::Rng;

/// Default pendulum pipeline, built once per test binary.
pub fn pendulum_data() -> &'static PreparedData {
    static DATA: OnceLock<PreparedData> = OnceLock::new();
    DATA.get_or_init(|| {
        let obs = simulate(&PendulumParams::default(), &PendulumState::default()).unwrap();
        prepare_data(&obs, &DataConfig::default()).unwrap()
    })
}

fn neg_ll(net: &Mdn, theta: &[f64], batch: &SupervisedDataset) -> f64 {
    batch.iter().map(|(x, y)| -net.log_likelihood(theta, x, y).unwrap()).sum()
}

/// Largest relative error between the analytic gradient and central
/// differences with step `h` over `n_coords` random coordinates. Components
/// smaller than `floor` in magnitude are compared on an absolute scale.
pub fn max_fd_relative_error<R: Rng>(net: &Mdn, theta: &[f64], batch: &SupervisedDataset, n_coords: usize, h: f64, floor: f64, rng: &mut R) -> f64 {
    let grad = net.grad_neg_log_likelihood(theta, batch).unwrap();
    let mut worst: f64 = 0.0;
    for k in sample(rng, theta.len(), n_coords) {
        let mut plus = theta.to_vec();
        let mut minus = theta.to_vec();
        plus[k] += h;
        minus[k] -= h;
        let fd = (neg_ll(net, &plus, batch) - neg_ll(net, &minus, batch)) / (2.0 * h);
        let scale = grad[k].abs().max(fd.abs()).max(floor);
        worst = worst.max((grad[k] - fd).abs() / scale);
    }
    worst
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Number of adjacent pairs where `v` increases.
pub fn inversions_non_increasing(v: &[f64]) -> usize {
    v.windows(2).filter(|w| w[1] > w[0]).count()
}

/// Population moments of the per-batch difference `d_j` under
/// with-replacement batches of `n` items with per-item differences `e`,
/// plus a constant `offset`: (mean, variance, fourth central moment).
pub fn batch_diff_moments(e: &[f64], n: usize, offset: f64) -> (f64, f64, f64) {
    let len = e.len() as f64;
    let mean_e = e.iter().sum::<f64>() / len;
    let var_e = e.iter().map(|v| (v - mean_e).powi(2)).sum::<f64>() / len;
    let mu4_e = e.iter().map(|v| (v - mean_e).powi(4)).sum::<f64>() / len;
    let nf = n as f64;
    // Sum of n iid terms: variance adds; fourth central moment is
    // n*mu4 + 3n(n-1)*var^2.
    let var_d = nf * var_e;
    let mu4_d = nf * mu4_e + 3.0 * nf * (nf - 1.0) * var_e * var_e;
    (offset + nf * mean_e, var_d, mu4_d)
}

/// Variance of the unbiased sample variance of `m` iid draws.
pub fn sample_variance_variance(var: f64, mu4: f64, m: usize) -> f64 {
    let mf = m as f64;
    mu4 / mf - var * var * (mf - 3.0) / (mf * (mf - 1.0))
}
