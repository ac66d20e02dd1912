//! Markov chains over network parameters.
//!
//! Five kernels share one driver ([`Chain`]):
//!
//! * `Vanilla`: Metropolis-Hastings on the exact full-training-set loss.
//! * `Tempered`: as vanilla, with the likelihood reweighted to `target_n`.
//! * `Batched`: MH on the mini-batch estimate `delta` alone (biased).
//! * `Pbnn`: MH on `delta` with the noise penalty `-chi2 / 2`.
//! * `Sgld`: unadjusted stochastic-gradient Langevin updates.
//!
//! Randomness is split into named streams (proposal, batch draws, accept
//! tests) so that runs of different kernels with one seed are pairable.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::loss::{draw_minibatches, grad_weighted_loss, loss_diff_from_cache, Likelihood, MiniBatchPlan, PriorSpec};
use crate::mdn::ParamVector;
use crate::par::Exec;
use crate::rng::{derive_seed, stream_rng, RngPosition, Stream};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Pbnn,
    Vanilla,
    Batched,
    Tempered,
    Sgld,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 5] =
        [SamplerKind::Vanilla, SamplerKind::Tempered, SamplerKind::Batched, SamplerKind::Sgld, SamplerKind::Pbnn];

    pub fn tag(&self) -> &'static str {
        match self {
            SamplerKind::Pbnn => "pbnn",
            SamplerKind::Vanilla => "vanilla",
            SamplerKind::Batched => "batched",
            SamplerKind::Tempered => "tempered",
            SamplerKind::Sgld => "sgld",
        }
    }

    pub fn uses_minibatch_estimate(&self) -> bool {
        matches!(self, SamplerKind::Pbnn | SamplerKind::Batched)
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pbnn" => Ok(SamplerKind::Pbnn),
            "vanilla" => Ok(SamplerKind::Vanilla),
            "batched" => Ok(SamplerKind::Batched),
            "tempered" => Ok(SamplerKind::Tempered),
            "sgld" => Ok(SamplerKind::Sgld),
            other => Err(Error::Config(format!("unknown sampler '{other}'"))),
        }
    }
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalKind {
    #[default]
    SymmetricGaussian,
    LangevinDrift,
}

/// Proposal kernel. `step` is the random-walk standard deviation for the
/// symmetric kernel, and the step size `eta` for the drifted kernel and for
/// SGLD.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalSpec {
    pub kind: ProposalKind,
    pub step: f64,
}

impl ProposalSpec {
    pub fn symmetric(step: f64) -> Self {
        ProposalSpec { kind: ProposalKind::SymmetricGaussian, step }
    }

    pub fn langevin(eta: f64) -> Self {
        ProposalSpec { kind: ProposalKind::LangevinDrift, step: eta }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub sampler: SamplerKind,
    pub plan: MiniBatchPlan,
    pub proposal: ProposalSpec,
    pub prior: PriorSpec,
    /// Likelihood weight of the tempered and SGLD losses.
    pub target_n: usize,
}

impl ChainConfig {
    pub fn validate(&self, n_items: usize) -> Result<()> {
        if self.burn_in >= self.n_steps {
            return Err(Error::Config(format!("burn_in ({}) must be below n_steps ({})", self.burn_in, self.n_steps)));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if !(self.proposal.step.is_finite() && self.proposal.step > 0.0) {
            return Err(Error::Config(format!("proposal step must be positive, got {}", self.proposal.step)));
        }
        self.prior.validate()?;
        if self.target_n == 0 {
            return Err(Error::Config("target_n must be at least 1".into()));
        }
        if n_items == 0 {
            return Err(Error::Config("training set is empty".into()));
        }
        match self.sampler {
            SamplerKind::Pbnn | SamplerKind::Batched => self.plan.validate(n_items)?,
            SamplerKind::Sgld if self.plan.batch_size == 0 || self.plan.batch_size > n_items => {
                return Err(Error::Config(format!("SGLD batch size must be in 1..={n_items}")));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn retained_count(&self) -> usize {
        (self.n_steps - self.burn_in) / self.thin
    }

    /// Total likelihood weight of the loss this sampler targets.
    fn target_weight(&self, n_items: usize) -> usize {
        match self.sampler {
            SamplerKind::Vanilla => n_items,
            SamplerKind::Tempered | SamplerKind::Sgld => self.target_n,
            SamplerKind::Pbnn | SamplerKind::Batched => self.plan.batch_size,
        }
    }
}

/// Inputs of one noisy accept test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoisyAcceptanceInputs {
    pub delta: f64,
    pub sigma2: f64,
    /// `log q(theta | theta') - log q(theta' | theta)`.
    pub log_q_ratio: f64,
}

/// `log_q_ratio - delta - sigma2 / 2`, or without the penalty term.
pub fn log_acceptance(inp: &NoisyAcceptanceInputs, penalty: bool) -> f64 {
    let pen = if penalty { 0.5 * inp.sigma2 } else { 0.0 };
    inp.log_q_ratio - inp.delta - pen
}

/// Penalty acceptance probability `min(1, q-ratio * exp(-delta - sigma2/2))`.
pub fn penalty_acceptance(inp: &NoisyAcceptanceInputs) -> f64 {
    log_acceptance(inp, true).min(0.0).exp()
}

/// MH decision for a uniform draw `u` in `[0, 1)`: accept iff `u <= A`.
pub fn mh_accept(log_accept: f64, u: f64) -> bool {
    log_accept >= 0.0 || u.ln() <= log_accept
}

/// `log q(theta | theta') - log q(theta' | theta)` for the drifted kernel
/// `q(b | a) = N(b; a - eta * grad(a), 2 eta I)`.
pub fn langevin_log_q_ratio(theta: &[f64], theta_new: &[f64], grad: &[f64], grad_new: &[f64], eta: f64) -> f64 {
    let mut fwd = 0.0;
    let mut bwd = 0.0;
    for i in 0..theta.len() {
        let f = theta_new[i] - theta[i] + eta * grad[i];
        let b = theta[i] - theta_new[i] + eta * grad_new[i];
        fwd += f * f;
        bwd += b * b;
    }
    (fwd - bwd) / (4.0 * eta)
}

/// Draw `theta' = theta - eta * grad(theta) + sqrt(2 eta) * eps` and return it
/// with the exact log proposal ratio and the gradient at `theta'`.
pub fn langevin_proposal<R, G>(theta: &[f64], grad: &[f64], eta: f64, mut grad_fn: G, rng: &mut R) -> (Vec<f64>, f64, Vec<f64>)
where
    R: Rng + ?Sized,
    G: FnMut(&[f64]) -> Vec<f64>,
{
    let noise = (2.0 * eta).sqrt();
    let theta_new: Vec<f64> = theta
        .iter()
        .zip(grad)
        .map(|(t, g)| t - eta * g + noise * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let grad_new = grad_fn(&theta_new);
    let ratio = langevin_log_q_ratio(theta, &theta_new, grad, &grad_new, eta);
    (theta_new, ratio, grad_new)
}

/// `theta - eta * grad + sqrt(2 eta) * eps`.
pub fn sgld_update(theta: &[f64], grad: &[f64], eta: f64, eps: &[f64]) -> Vec<f64> {
    let noise = (2.0 * eta).sqrt();
    theta.iter().zip(grad).zip(eps).map(|((t, g), e)| t - eta * g + noise * e).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub delta: f64,
    pub chi2: f64,
    pub accepted: bool,
    pub log_q_ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainRecord {
    pub samples: Vec<ParamVector>,
    pub accept_count: usize,
    pub step_log: Vec<StepDiagnostics>,
}

impl ChainRecord {
    pub fn acceptance_rate(&self) -> f64 {
        if self.step_log.is_empty() {
            0.0
        } else {
            self.accept_count as f64 / self.step_log.len() as f64
        }
    }

    /// Step log as CSV `step,delta,chi2,accepted,log_q_ratio`.
    pub fn step_log_csv(&self) -> String {
        let mut s = String::from("step,delta,chi2,accepted,log_q_ratio\n");
        for (i, d) in self.step_log.iter().enumerate() {
            s.push_str(&format!("{},{},{},{},{}\n", i + 1, d.delta, d.chi2, d.accepted as u8, d.log_q_ratio));
        }
        s
    }
}

/// Per-item log-likelihoods of one parameter vector, filled on demand.
#[derive(Clone, Debug)]
struct LazyLogLik {
    values: Vec<f64>,
    known: Vec<bool>,
}

impl LazyLogLik {
    fn new(n: usize) -> Self {
        LazyLogLik { values: vec![0.0; n], known: vec![false; n] }
    }

    fn ensure<L: Likelihood + ?Sized>(&mut self, lik: &L, theta: &[f64], items: impl Iterator<Item = usize>, exec: Exec) {
        let mut missing: Vec<usize> = Vec::new();
        for i in items {
            if !self.known[i] {
                self.known[i] = true;
                missing.push(i);
            }
        }
        if missing.is_empty() {
            return;
        }
        let vals = lik.log_likelihoods_of(theta, &missing, exec);
        for (i, v) in missing.into_iter().zip(vals) {
            self.values[i] = v;
        }
    }
}

#[derive(Clone, Debug)]
struct PointState {
    theta: Vec<f64>,
    log_prior: f64,
    ll: LazyLogLik,
    grad: Option<Vec<f64>>,
}

impl PointState {
    fn new(theta: Vec<f64>, prior: &PriorSpec, n_items: usize) -> Self {
        let log_prior = prior.log_prior(&theta);
        PointState { theta, log_prior, ll: LazyLogLik::new(n_items), grad: None }
    }
}

/// Serializable snapshot of a chain, sufficient to resume it bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainCheckpoint {
    pub config: ChainConfig,
    pub step: usize,
    pub accept_count: usize,
    pub theta: Vec<f64>,
    pub proposal_rng: RngPosition,
    pub batch_rng: RngPosition,
    pub accept_rng: RngPosition,
    #[serde(skip)]
    pub samples: Vec<ParamVector>,
    #[serde(skip)]
    pub step_log: Vec<StepDiagnostics>,
}

pub struct Chain<'a, L: Likelihood + ?Sized> {
    cfg: ChainConfig,
    lik: &'a L,
    current: PointState,
    proposal_rng: ChaCha8Rng,
    batch_rng: ChaCha8Rng,
    accept_rng: ChaCha8Rng,
    step: usize,
    accept_count: usize,
    samples: Vec<ParamVector>,
    step_log: Vec<StepDiagnostics>,
    all_items: Vec<usize>,
    exec: Exec,
}

impl<'a, L: Likelihood + ?Sized> Chain<'a, L> {
    pub fn new(cfg: ChainConfig, lik: &'a L, theta0: &ParamVector) -> Result<Self> {
        cfg.validate(lik.n_items())?;
        if theta0.len() != lik.n_params() {
            return Err(Error::invalid(format!("initial parameters have length {}, model needs {}", theta0.len(), lik.n_params())));
        }
        if !theta0.is_finite() {
            return Err(Error::invalid("initial parameters must be finite"));
        }
        let n = lik.n_items();
        Ok(Chain {
            current: PointState::new(theta0.to_vec(), &cfg.prior, n),
            proposal_rng: stream_rng(cfg.seed, Stream::Proposal),
            batch_rng: stream_rng(cfg.seed, Stream::Batches),
            accept_rng: stream_rng(cfg.seed, Stream::Accept),
            step: 0,
            accept_count: 0,
            samples: Vec::with_capacity(cfg.retained_count()),
            step_log: Vec::with_capacity(cfg.n_steps),
            all_items: (0..n).collect(),
            exec: Exec::default(),
            cfg,
            lik,
        })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn resume(checkpoint: ChainCheckpoint, lik: &'a L) -> Result<Self> {
        let mut chain = Chain::new(checkpoint.config.clone(), lik, &ParamVector::new(checkpoint.theta.clone()))?;
        chain.step = checkpoint.step;
        chain.accept_count = checkpoint.accept_count;
        chain.proposal_rng = checkpoint.proposal_rng.restore()?;
        chain.batch_rng = checkpoint.batch_rng.restore()?;
        chain.accept_rng = checkpoint.accept_rng.restore()?;
        chain.samples = checkpoint.samples;
        chain.step_log = checkpoint.step_log;
        Ok(chain)
    }

    pub fn checkpoint(&self) -> ChainCheckpoint {
        ChainCheckpoint {
            config: self.cfg.clone(),
            step: self.step,
            accept_count: self.accept_count,
            theta: self.current.theta.clone(),
            proposal_rng: RngPosition::capture(&self.proposal_rng),
            batch_rng: RngPosition::capture(&self.batch_rng),
            accept_rng: RngPosition::capture(&self.accept_rng),
            samples: self.samples.clone(),
            step_log: self.step_log.clone(),
        }
    }

    pub fn config(&self) -> &ChainConfig {
        &self.cfg
    }

    pub fn theta(&self) -> &[f64] {
        &self.current.theta
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.cfg.n_steps
    }

    fn weight_total(&self) -> usize {
        self.cfg.target_weight(self.lik.n_items())
    }

    fn full_gradient(&self, theta: &[f64]) -> Vec<f64> {
        grad_weighted_loss(self.lik, theta, &self.cfg.prior, &self.all_items, self.weight_total())
    }

    fn propose(&mut self) -> (Vec<f64>, f64, Option<Vec<f64>>) {
        match self.cfg.proposal.kind {
            ProposalKind::SymmetricGaussian => {
                let s = self.cfg.proposal.step;
                let rng = &mut self.proposal_rng;
                let theta_new = self.current.theta.iter().map(|t| t + s * rng.sample::<f64, _>(StandardNormal)).collect();
                (theta_new, 0.0, None)
            }
            ProposalKind::LangevinDrift => {
                if self.current.grad.is_none() {
                    self.current.grad = Some(self.full_gradient(&self.current.theta));
                }
                let grad = self.current.grad.clone().unwrap();
                let eta = self.cfg.proposal.step;
                let lik = self.lik;
                let prior = self.cfg.prior;
                let all = &self.all_items;
                let w = self.weight_total();
                let (theta_new, ratio, grad_new) = langevin_proposal(
                    &self.current.theta,
                    &grad,
                    eta,
                    |t| grad_weighted_loss(lik, t, &prior, all, w),
                    &mut self.proposal_rng,
                );
                (theta_new, ratio, Some(grad_new))
            }
        }
    }

    /// One transition of the configured kernel.
    pub fn step(&mut self) -> Result<StepDiagnostics> {
        let diag = match self.cfg.sampler {
            SamplerKind::Sgld => self.sgld_step()?,
            kind => self.mh_step(kind)?,
        };
        self.step += 1;
        if diag.accepted {
            self.accept_count += 1;
        }
        self.step_log.push(diag);
        if self.step > self.cfg.burn_in && (self.step - self.cfg.burn_in) % self.cfg.thin == 0 {
            self.samples.push(ParamVector::new(self.current.theta.clone()));
        }
        Ok(diag)
    }

    fn mh_step(&mut self, kind: SamplerKind) -> Result<StepDiagnostics> {
        let (theta_new, log_q_ratio, grad_new) = self.propose();
        let mut proposed = PointState::new(theta_new, &self.cfg.prior, self.lik.n_items());
        proposed.grad = grad_new;
        let n = self.lik.n_items();

        let (delta, chi2) = if kind.uses_minibatch_estimate() {
            let batches = draw_minibatches(n, &self.cfg.plan, &mut self.batch_rng)?;
            let items = || batches.iter().flat_map(|b| b.iter().copied());
            self.current.ll.ensure(self.lik, &self.current.theta, items(), self.exec);
            proposed.ll.ensure(self.lik, &proposed.theta, items(), self.exec);
            let est = loss_diff_from_cache(
                &proposed.ll.values,
                proposed.log_prior,
                &self.current.ll.values,
                self.current.log_prior,
                &batches,
                self.cfg.plan.batch_size,
            )?;
            (est.delta, est.chi2)
        } else {
            self.current.ll.ensure(self.lik, &self.current.theta, 0..n, self.exec);
            proposed.ll.ensure(self.lik, &proposed.theta, 0..n, self.exec);
            let w = self.weight_total() as f64 / n as f64;
            let s_new: f64 = proposed.ll.values.iter().sum();
            let s_old: f64 = self.current.ll.values.iter().sum();
            let l_new = -proposed.log_prior - w * s_new;
            let l_old = -self.current.log_prior - w * s_old;
            (l_new - l_old, 0.0)
        };

        let inputs = NoisyAcceptanceInputs { delta, sigma2: chi2, log_q_ratio };
        let log_a = log_acceptance(&inputs, kind == SamplerKind::Pbnn);
        if log_a.is_nan() {
            return Err(Error::ChainDiverged { step: self.step + 1, reason: format!("non-finite loss difference (delta={delta}, chi2={chi2})") });
        }
        let u: f64 = self.accept_rng.random();
        let accepted = mh_accept(log_a, u);
        if accepted {
            self.current = proposed;
        }
        Ok(StepDiagnostics { delta, chi2, accepted, log_q_ratio })
    }

    fn sgld_step(&mut self) -> Result<StepDiagnostics> {
        let n = self.lik.n_items();
        let batch = rand::seq::index::sample(&mut self.batch_rng, n, self.cfg.plan.batch_size).into_vec();
        let grad = grad_weighted_loss(self.lik, &self.current.theta, &self.cfg.prior, &batch, self.cfg.target_n);
        let eps: Vec<f64> = (0..grad.len()).map(|_| self.proposal_rng.sample::<f64, _>(StandardNormal)).collect();
        let next = sgld_update(&self.current.theta, &grad, self.cfg.proposal.step, &eps);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::ChainDiverged { step: self.step + 1, reason: "non-finite SGLD update".into() });
        }
        self.current = PointState::new(next, &self.cfg.prior, n);
        Ok(StepDiagnostics { delta: 0.0, chi2: 0.0, accepted: true, log_q_ratio: 0.0 })
    }

    /// Advance until `n_steps` have been taken in total.
    pub fn run_to_end(&mut self) -> Result<()> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(())
    }

    /// Advance by at most `n` further steps.
    pub fn advance(&mut self, n: usize) -> Result<()> {
        for _ in 0..n {
            if self.is_finished() {
                break;
            }
            self.step()?;
        }
        Ok(())
    }

    pub fn record(&self) -> ChainRecord {
        ChainRecord { samples: self.samples.clone(), accept_count: self.accept_count, step_log: self.step_log.clone() }
    }

    pub fn into_record(self) -> ChainRecord {
        ChainRecord { samples: self.samples, accept_count: self.accept_count, step_log: self.step_log }
    }
}

/// Run a full chain from `theta0`.
pub fn run_chain<L: Likelihood + ?Sized>(cfg: &ChainConfig, lik: &L, theta0: &ParamVector) -> Result<ChainRecord> {
    let mut chain = Chain::new(cfg.clone(), lik, theta0)?;
    chain.run_to_end()?;
    Ok(chain.into_record())
}

/// Settings of the pre-run step-size tuner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningSpec {
    pub target_acceptance: f64,
    pub rounds: usize,
    pub steps_per_round: usize,
}

impl Default for TuningSpec {
    fn default() -> Self {
        TuningSpec { target_acceptance: 0.25, rounds: 12, steps_per_round: 100 }
    }
}

/// Tune the symmetric proposal std towards a target acceptance with short
/// pilot chains. The returned step is then held fixed for measurement.
pub fn tune_step<L: Likelihood + ?Sized>(cfg: &ChainConfig, lik: &L, theta0: &ParamVector, tuning: &TuningSpec) -> Result<f64> {
    let mut step = cfg.proposal.step;
    let mut theta = theta0.clone();
    for round in 0..tuning.rounds {
        let pilot = ChainConfig {
            n_steps: tuning.steps_per_round,
            burn_in: 0,
            thin: tuning.steps_per_round,
            seed: derive_seed(cfg.seed, "tuning", round as u64),
            proposal: ProposalSpec { step, ..cfg.proposal },
            ..cfg.clone()
        };
        let mut chain = Chain::new(pilot, lik, &theta)?;
        chain.run_to_end()?;
        let rate = chain.accept_count as f64 / tuning.steps_per_round as f64;
        theta = ParamVector::new(chain.theta().to_vec());
        // Robbins-Monro style multiplicative update on log step.
        let gain = 1.0 / (1.0 + round as f64).sqrt();
        step *= (2.0 * gain * (rate - tuning.target_acceptance)).exp();
    }
    Ok(step)
}
