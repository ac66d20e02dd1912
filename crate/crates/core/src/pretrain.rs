//! Deterministic pre-optimization of the starting point for the chains:
//! full-batch Adam on the full training loss for a fixed iteration count.

use serde::{Deserialize, Serialize};

use crate::loss::{grad_weighted_loss, Likelihood, PriorSpec};
use crate::mdn::{Mdn, ParamVector};
use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub init_scale: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { iterations: 1500, learning_rate: 5e-3, init_scale: 1.0 }
    }
}

/// Fresh initialization from `seed`, then `cfg.iterations` Adam steps.
pub fn pretrain<L: Likelihood + ?Sized>(net: &Mdn, lik: &L, prior: &PriorSpec, cfg: &PretrainConfig, seed: u64) -> Result<ParamVector> {
    let theta = net.init_params(&mut stream_rng(seed, Stream::Init), cfg.init_scale)?;
    minimize(lik, prior, theta, cfg)
}

pub fn minimize<L: Likelihood + ?Sized>(lik: &L, prior: &PriorSpec, theta: ParamVector, cfg: &PretrainConfig) -> Result<ParamVector> {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let items: Vec<usize> = (0..lik.n_items()).collect();
    let n = items.len();
    let mut theta = theta.into_inner();
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    for t in 1..=cfg.iterations {
        let g = grad_weighted_loss(lik, &theta, prior, &items, n);
        // per-datum scale keeps the learning rate independent of |train|
        let scale = 1.0 / n as f64;
        let c1 = 1.0 - B1.powi(t as i32);
        let c2 = 1.0 - B2.powi(t as i32);
        for i in 0..theta.len() {
            let gi = g[i] * scale;
            m[i] = B1 * m[i] + (1.0 - B1) * gi;
            v[i] = B2 * v[i] + (1.0 - B2) * gi * gi;
            theta[i] -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
        }
        if !theta.iter().all(|x| x.is_finite()) {
            return Err(Error::ChainDiverged { step: t, reason: "pre-optimization produced non-finite parameters".into() });
        }
    }
    Ok(ParamVector::new(theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SupervisedDataset;
    use crate::loss::batch_loss;
    use crate::mdn::{MdnArchitecture, MdnTarget};

    #[test]
    fn reduces_loss_and_is_deterministic() {
        let net = Mdn::new(MdnArchitecture { input_dim: 2, hidden: vec![5], output_dim: 1, ..Default::default() }).unwrap();
        let mut ds = SupervisedDataset::new(2, 1);
        for i in 0..50 {
            let a = i as f64 / 25.0 - 1.0;
            ds.push(&[a, a * a], &[(3.0 * a).sin()]);
        }
        let lik = MdnTarget::new(&net, &ds);
        let prior = PriorSpec::default();
        let cfg = PretrainConfig { iterations: 300, learning_rate: 1e-2, init_scale: 1.0 };
        let start = net.init_params(&mut stream_rng(1, Stream::Init), 1.0).unwrap();
        let l0 = batch_loss(&lik, &start, &prior).unwrap();
        let a = pretrain(&net, &lik, &prior, &cfg, 1).unwrap();
        let b = pretrain(&net, &lik, &prior, &cfg, 1).unwrap();
        assert_eq!(a, b);
        assert!(batch_loss(&lik, &a, &prior).unwrap() < l0);
    }
}
