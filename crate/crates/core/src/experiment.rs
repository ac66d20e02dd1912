//! Experiment driver behind the `pbnn` binary: data generation, single runs,
//! the five-model benchmark, the batch-size sweep and the oracle suite.
//!
//! All randomness flows from `ExperimentConfig::seed` through derived seeds
//! and named streams. Every CSV a command writes carries the resolved config
//! hash in its last column, except the trajectory CSV and step logs whose
//! layouts are fixed; their hash goes into a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{split_sequential, SupervisedDataset};
use crate::io::{self, DatasetSidecar};
use crate::loss::{MiniBatchPlan, PriorSpec};
use crate::mdn::{Mdn, MdnArchitecture, MdnTarget, ParamVector};
use crate::metrics::{self, EvalReport, Split};
use crate::oracles::{self, CheckRow};
use crate::par::{self, Exec};
use crate::pendulum::{self, Observation, PendulumParams, PendulumState, Standardizer, DEFAULT_LAGS};
use crate::pretrain::{pretrain, PretrainConfig};
use crate::rng::derive_seed;
use crate::samplers::{tune_step, Chain, ChainConfig, ChainRecord, ProposalKind, ProposalSpec, SamplerKind, TuningSpec};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Trajectory CSV; defaults to `<out_dir>/pendulum.csv`.
    pub path: Option<PathBuf>,
    pub pendulum: PendulumParams,
    pub initial_state: PendulumState,
    pub lags: Vec<usize>,
    pub n_train: usize,
    pub standardize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            pendulum: PendulumParams::default(),
            initial_state: PendulumState::default(),
            lags: DEFAULT_LAGS.to_vec(),
            n_train: 2992,
            standardize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSettings {
    pub sampler: SamplerKind,
    pub n_steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Retained samples J; when set, overrides `thin`.
    pub samples: Option<usize>,
    pub plan: MiniBatchPlan,
    pub proposal: ProposalKind,
    /// Fixed proposal scale for every MH sampler; tuned per kernel when absent.
    pub step: Option<f64>,
    /// Starting scale of the tuner.
    pub initial_step: f64,
    pub tuning: TuningSpec,
    pub prior: PriorSpec,
    /// Likelihood weight of the tempered and SGLD targets.
    pub target_n: usize,
    pub sgld_eta: f64,
}

impl Default for ChainSettings {
    fn default() -> Self {
        ChainSettings {
            sampler: SamplerKind::Pbnn,
            n_steps: 200_000,
            burn_in: 50_000,
            thin: 100,
            samples: None,
            plan: MiniBatchPlan::default(),
            proposal: ProposalKind::SymmetricGaussian,
            step: None,
            initial_step: 1e-3,
            tuning: TuningSpec::default(),
            prior: PriorSpec::default(),
            target_n: 60,
            sgld_eta: 1e-5,
        }
    }
}

impl ChainSettings {
    pub fn effective_thin(&self) -> usize {
        match self.samples {
            Some(j) if j > 0 => ((self.n_steps - self.burn_in.min(self.n_steps)) / j).max(1),
            _ => self.thin,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSettings {
    pub replicates: usize,
    pub samplers: Vec<SamplerKind>,
    /// Leading test items written to the bands CSV.
    pub band_points: usize,
}

impl Default for BenchmarkSettings {
    fn default() -> Self {
        BenchmarkSettings { replicates: 3, samplers: SamplerKind::ALL.to_vec(), band_points: 200 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub batch_sizes: Vec<usize>,
    /// Batches per estimate; `floor(|train| / N)` when absent.
    pub num_batches: Option<usize>,
    pub replicates: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings { batch_sizes: vec![15, 30, 60, 120, 240], num_batches: None, replicates: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSettings {
    pub deltas: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub mc_delta: f64,
    pub mc_sigmas: Vec<f64>,
    pub mc_steps: usize,
    pub mc_seeds: usize,
    pub mc_tolerance: f64,
}

impl Default for ValidateSettings {
    fn default() -> Self {
        ValidateSettings {
            deltas: oracles::DEFAULT_DELTA_GRID.to_vec(),
            sigmas: oracles::DEFAULT_SIGMA_GRID.to_vec(),
            mc_delta: 1.0,
            mc_sigmas: vec![1.0, 2.0],
            mc_steps: 1_000_000,
            mc_seeds: 3,
            mc_tolerance: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub workers: Option<usize>,
    pub data: DataConfig,
    pub model: MdnArchitecture,
    pub chain: ChainSettings,
    pub pretrain: PretrainConfig,
    pub benchmark: BenchmarkSettings,
    pub sweep: SweepSettings,
    pub validate: ValidateSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            workers: None,
            data: DataConfig::default(),
            model: MdnArchitecture::default(),
            chain: ChainSettings::default(),
            pretrain: PretrainConfig::default(),
            benchmark: BenchmarkSettings::default(),
            sweep: SweepSettings::default(),
            validate: ValidateSettings::default(),
        }
    }
}

/// Command-line overrides; `None` keeps the config value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub sampler: Option<SamplerKind>,
    pub batch_size: Option<usize>,
    pub num_batches: Option<usize>,
    pub workers: Option<usize>,
    pub n_steps: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub step: Option<f64>,
    pub replicates: Option<usize>,
    pub sweep_batch_sizes: Option<Vec<usize>>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.out_dir {
            self.out_dir = v.clone();
        }
        if let Some(v) = &o.data {
            self.data.path = Some(v.clone());
        }
        if let Some(v) = o.sampler {
            self.chain.sampler = v;
        }
        if let Some(v) = o.batch_size {
            self.chain.plan.batch_size = v;
        }
        if let Some(v) = o.num_batches {
            self.chain.plan.num_batches = v;
        }
        if let Some(v) = o.workers {
            self.workers = Some(v);
        }
        if let Some(v) = o.n_steps {
            self.chain.n_steps = v;
        }
        if let Some(v) = o.burn_in {
            self.chain.burn_in = v;
        }
        if let Some(v) = o.thin {
            self.chain.thin = v;
            self.chain.samples = None;
        }
        if let Some(v) = o.step {
            self.chain.step = Some(v);
        }
        if let Some(v) = o.replicates {
            self.benchmark.replicates = v;
        }
        if let Some(v) = &o.sweep_batch_sizes {
            self.sweep.batch_sizes = v.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        self.data.pendulum.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.data.lags.is_empty() || self.data.lags.contains(&0) {
            return cfg_err("lags must be non-empty and positive".into());
        }
        if self.model.input_dim != 4 * self.data.lags.len() || self.model.output_dim != 4 {
            return cfg_err(format!(
                "model expects {} inputs / {} outputs, data provides {} / 4",
                self.model.input_dim,
                self.model.output_dim,
                4 * self.data.lags.len()
            ));
        }
        let c = &self.chain;
        if c.burn_in >= c.n_steps {
            return cfg_err(format!("burn_in ({}) must be below n_steps ({})", c.burn_in, c.n_steps));
        }
        if c.effective_thin() == 0 || (c.n_steps - c.burn_in) / c.effective_thin() == 0 {
            return cfg_err("chain settings retain no samples".into());
        }
        if let Some(s) = c.step {
            if !(s.is_finite() && s > 0.0) {
                return cfg_err(format!("proposal step must be positive, got {s}"));
            }
        }
        if !(c.initial_step.is_finite() && c.initial_step > 0.0) || !(c.sgld_eta.is_finite() && c.sgld_eta > 0.0) {
            return cfg_err("initial_step and sgld_eta must be positive".into());
        }
        c.prior.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.pretrain.init_scale <= 0.0 || !(self.pretrain.learning_rate > 0.0) {
            return cfg_err("pretrain init_scale and learning_rate must be positive".into());
        }
        if self.benchmark.replicates == 0 || self.sweep.replicates == 0 {
            return cfg_err("replicates must be at least 1".into());
        }
        if self.sweep.batch_sizes.is_empty() || self.sweep.batch_sizes.contains(&0) {
            return cfg_err("sweep batch sizes must be non-empty and positive".into());
        }
        if self.validate.mc_seeds == 0 {
            return cfg_err("mc_seeds must be at least 1".into());
        }
        if self.workers == Some(0) {
            return cfg_err("workers must be at least 1".into());
        }
        Ok(())
    }

    /// SHA-256 of the resolved config, ignoring fields that cannot change
    /// any output value (paths and worker count).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.workers = None;
        c.data.path = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes)[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn data_path(&self) -> PathBuf {
        self.data.path.clone().unwrap_or_else(|| self.out_dir.join("pendulum.csv"))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, contents)?;
    Ok(())
}

fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Training and test splits ready for the network.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: SupervisedDataset,
    pub test: SupervisedDataset,
    pub standardizer: Option<Standardizer>,
    /// Observation index of the first supervised target.
    pub first_target: usize,
}

/// Window the trajectory, standardize with constants fit on the
/// observations the training split touches, and split sequentially.
pub fn prepare_data(obs: &[Observation], data: &DataConfig) -> Result<PreparedData> {
    let max_lag = *data.lags.iter().max().ok_or_else(|| Error::Config("no lags".into()))?;
    let standardizer = if data.standardize {
        let end = (max_lag + data.n_train).min(obs.len());
        Some(Standardizer::fit(&obs[..end])?)
    } else {
        None
    };
    let scaled: Vec<Observation> = match &standardizer {
        Some(s) => obs.iter().map(|o| s.apply(o)).collect(),
        None => obs.to_vec(),
    };
    let ds = pendulum::build_dataset(&scaled, &data.lags)?;
    let (train, test) = split_sequential(&ds, data.n_train)?;
    Ok(PreparedData { train, test, standardizer, first_target: max_lag })
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let path = cfg.data_path();
    if !path.exists() {
        return Err(Error::Config(format!("dataset {} not found; run generate-data first", path.display())));
    }
    let obs = io::parse_trajectory_csv(&fs::read_to_string(&path)?)?;
    prepare_data(&obs, &cfg.data)
}

#[derive(Clone, Debug)]
pub struct GenerateOutput {
    pub csv: PathBuf,
    pub sidecar: PathBuf,
    pub n_observations: usize,
    pub n_items: usize,
}

pub fn cmd_generate_data(cfg: &ExperimentConfig) -> Result<GenerateOutput> {
    cfg.validate()?;
    let obs = pendulum::simulate(&cfg.data.pendulum, &cfg.data.initial_state)?;
    let prepared = prepare_data(&obs, &cfg.data)?;
    let csv = cfg.data_path();
    write_file(&csv, &io::trajectory_csv(&obs))?;
    let sidecar = DatasetSidecar {
        params: cfg.data.pendulum.clone(),
        initial_state: cfg.data.initial_state,
        seed: cfg.seed,
        lags: cfg.data.lags.clone(),
        n_train: cfg.data.n_train,
        standardization: prepared.standardizer.clone(),
        config_hash: cfg.hash(),
    };
    let side = sidecar_path(&csv);
    write_file(&side, &(serde_json::to_string_pretty(&sidecar)? + "\n"))?;
    Ok(GenerateOutput {
        csv,
        sidecar: side,
        n_observations: obs.len(),
        n_items: prepared.train.len() + prepared.test.len(),
    })
}

/// Everything shared by the chains of one replicate.
struct Replicate {
    seed: u64,
    theta0: ParamVector,
    /// Proposal scale per tuned kernel.
    steps: Vec<(SamplerKind, f64)>,
}

impl Replicate {
    fn step(&self, sampler: SamplerKind) -> f64 {
        let kernel = tuning_kernel(sampler).unwrap_or(sampler);
        self.steps.iter().find(|(k, _)| *k == kernel).map(|(_, s)| *s).unwrap_or(f64::NAN)
    }
}

fn replicate_seed(cfg: &ExperimentConfig, r: usize) -> u64 {
    derive_seed(cfg.seed, "replicate", r as u64)
}

/// Kernel whose tuned step a sampler uses. PBNN borrows the batched step
/// since the two differ only by the penalty; SGLD uses its fixed eta.
fn tuning_kernel(sampler: SamplerKind) -> Option<SamplerKind> {
    match sampler {
        SamplerKind::Pbnn => Some(SamplerKind::Batched),
        SamplerKind::Sgld => None,
        s => Some(s),
    }
}

fn chain_config(cfg: &ExperimentConfig, sampler: SamplerKind, plan: MiniBatchPlan, seed: u64, step: f64) -> ChainConfig {
    let c = &cfg.chain;
    let proposal = match sampler {
        SamplerKind::Sgld => ProposalSpec { kind: ProposalKind::SymmetricGaussian, step: c.sgld_eta },
        _ => ProposalSpec { kind: c.proposal, step },
    };
    ChainConfig {
        n_steps: c.n_steps,
        burn_in: c.burn_in,
        thin: c.effective_thin(),
        seed: derive_seed(seed, sampler.tag(), 0),
        sampler,
        plan,
        proposal,
        prior: c.prior,
        target_n: c.target_n,
    }
}

/// Pre-optimized start and the proposal scales of the kernels `samplers`
/// need, each tuned from that start towards the target acceptance.
fn prepare_replicate(cfg: &ExperimentConfig, net: &Mdn, lik: &MdnTarget<'_>, seed: u64, samplers: &[SamplerKind]) -> Result<Replicate> {
    let theta0 = pretrain(net, lik, &cfg.chain.prior, &cfg.pretrain, seed)?;
    let mut kernels: Vec<SamplerKind> = samplers.iter().filter_map(|&s| tuning_kernel(s)).collect();
    kernels.sort_by_key(|k| k.tag());
    kernels.dedup();
    let mut steps = Vec::new();
    for kernel in kernels {
        let step = match cfg.chain.step {
            Some(s) => s,
            None => {
                let pilot = ChainConfig {
                    seed: derive_seed(seed, "tune", 0),
                    ..chain_config(cfg, kernel, cfg.chain.plan, seed, cfg.chain.initial_step)
                };
                tune_step(&pilot, lik, &theta0, &cfg.chain.tuning)?
            }
        };
        steps.push((kernel, step));
    }
    Ok(Replicate { seed, theta0, steps })
}

fn build_net(cfg: &ExperimentConfig) -> Result<Mdn> {
    Mdn::new(cfg.model.clone()).map_err(|e| Error::Config(e.to_string()))
}

struct Evaluated {
    train: (f64, f64, f64),
    test: (f64, f64, f64),
}

fn evaluate_record(net: &Mdn, record: &ChainRecord, data: &PreparedData) -> Result<Evaluated> {
    Ok(Evaluated {
        train: metrics::evaluate(net, &record.samples, &data.train)?,
        test: metrics::evaluate(net, &record.samples, &data.test)?,
    })
}

fn model_n(cfg: &ExperimentConfig, sampler: SamplerKind, plan: &MiniBatchPlan, n_train: usize) -> (usize, usize) {
    match sampler {
        SamplerKind::Vanilla => (n_train, 1),
        SamplerKind::Tempered => (cfg.chain.target_n, 1),
        SamplerKind::Sgld => (plan.batch_size, 1),
        SamplerKind::Pbnn | SamplerKind::Batched => (plan.batch_size, plan.num_batches),
    }
}

fn reports(cfg: &ExperimentConfig, sampler: SamplerKind, seed: u64, record: &ChainRecord, ev: &Evaluated, n_train: usize) -> [EvalReport; 2] {
    let (n, m) = model_n(cfg, sampler, &cfg.chain.plan, n_train);
    let make = |split, (nll, cov, ace): (f64, f64, f64)| EvalReport {
        sampler: sampler.tag().into(),
        n,
        m,
        split,
        avg_nll: nll,
        coverage: cov,
        ace,
        acceptance_rate: record.acceptance_rate(),
        j: record.samples.len(),
        seed,
    };
    [make(Split::Train, ev.train), make(Split::Test, ev.test)]
}

fn report_csv(rows: &[EvalReport], hash: &str) -> String {
    let mut s = format!("{},config_hash\n", EvalReport::CSV_HEADER);
    for r in rows {
        s.push_str(&format!("{},{hash}\n", r.csv_row()));
    }
    s
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: PathBuf,
    pub step_log: PathBuf,
    pub checkpoint: PathBuf,
    pub reports: Vec<EvalReport>,
}

/// Run the configured sampler for seed `cfg.seed`, optionally resuming from
/// a checkpoint, and evaluate on both splits.
pub fn cmd_run(cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<RunOutput> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let net = build_net(cfg)?;
    let lik = MdnTarget::new(&net, &data.train);
    let sampler = cfg.chain.sampler;
    let tag = sampler.tag();
    let out = RunOutput {
        report: cfg.out_dir.join(format!("report_{tag}.csv")),
        step_log: cfg.out_dir.join(format!("steplog_{tag}.csv")),
        checkpoint: cfg.out_dir.join(format!("checkpoint_{tag}.bin")),
        reports: Vec::new(),
    };
    fs::create_dir_all(&cfg.out_dir)?;
    par::with_workers(cfg.workers, || {
        let mut chain = match resume {
            Some(path) => {
                let (arch, ck) = io::load_checkpoint(path)?;
                if arch != cfg.model {
                    return Err(Error::Config("checkpoint architecture differs from config".into()));
                }
                Chain::resume(ck, &lik)?
            }
            None => {
                let rep = prepare_replicate(cfg, &net, &lik, cfg.seed, &[sampler])?;
                Chain::new(chain_config(cfg, sampler, cfg.chain.plan, rep.seed, rep.step(sampler)), &lik, &rep.theta0)?
            }
        };
        let result = chain.run_to_end();
        let record = chain.record();
        write_file(&out.step_log, &record.step_log_csv())?;
        write_file(
            &sidecar_path(&out.step_log),
            &(serde_json::to_string_pretty(&serde_json::json!({ "config_hash": cfg.hash(), "sampler": tag }))? + "\n"),
        )?;
        io::save_checkpoint(&out.checkpoint, &cfg.model, &chain.checkpoint())?;
        result?;
        let ev = evaluate_record(&net, &record, &data)?;
        let rows = reports(cfg, sampler, cfg.seed, &record, &ev, data.train.len());
        write_file(&out.report, &report_csv(&rows, &cfg.hash()))?;
        Ok(RunOutput { reports: rows.to_vec(), ..out.clone() })
    })
}

/// Per-model aggregate over replicates.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkRow {
    pub model: SamplerKind,
    pub n: usize,
    pub m: usize,
    pub test_nll: Vec<f64>,
    pub train_nll: Vec<f64>,
    pub test_ace: Vec<f64>,
    pub test_coverage: Vec<f64>,
    pub acceptance: Vec<f64>,
    pub j: usize,
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; `None` for fewer than two values.
pub fn sample_std(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v);
    Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

impl BenchmarkRow {
    pub const CSV_HEADER: &'static str = "model,N,M,R,test_nll_mean,test_nll_std_across_seeds,train_nll_mean,train_nll_std_across_seeds,\
test_ace_mean,test_ace_std_across_seeds,test_coverage_mean,acceptance_rate_mean,J,config_hash";

    pub fn csv_row(&self, hash: &str) -> String {
        let std = |v: &[f64]| sample_std(v).map(|s| s.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{hash}",
            self.model,
            self.n,
            self.m,
            self.test_nll.len(),
            mean(&self.test_nll),
            std(&self.test_nll),
            mean(&self.train_nll),
            std(&self.train_nll),
            mean(&self.test_ace),
            std(&self.test_ace),
            mean(&self.test_coverage),
            mean(&self.acceptance),
            self.j
        )
    }
}

pub const BANDS_HEADER: &str = "model,dim,t,y_true,mu_star,sigma_star,config_hash";

#[derive(Clone, Debug)]
pub struct BenchmarkOutput {
    pub summary: PathBuf,
    pub runs: PathBuf,
    pub bands: PathBuf,
    pub rows: Vec<BenchmarkRow>,
}

struct ModelRun {
    sampler: SamplerKind,
    seed: u64,
    record: ChainRecord,
    ev: Evaluated,
}

fn band_rows(net: &Mdn, sampler: SamplerKind, samples: &[ParamVector], data: &PreparedData, points: usize, hash: &str) -> Result<String> {
    let mut s = String::new();
    let t0 = data.first_target + data.train.len();
    for i in 0..points.min(data.test.len()) {
        let m = metrics::predictive_moments(net, samples, data.test.x(i))?;
        let y = data.test.y(i);
        for d in 0..y.len() {
            s.push_str(&format!("{},{},{},{},{},{},{hash}\n", sampler, d + 1, t0 + i, y[d], m.mu[d], m.sigma[d]));
        }
    }
    Ok(s)
}

/// Run every configured model over `benchmark.replicates` seeds.
pub fn cmd_benchmark(cfg: &ExperimentConfig) -> Result<BenchmarkOutput> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let net = build_net(cfg)?;
    let lik = MdnTarget::new(&net, &data.train);
    let hash = cfg.hash();
    let samplers = cfg.benchmark.samplers.clone();
    fs::create_dir_all(&cfg.out_dir)?;
    let runs: Vec<ModelRun> = par::with_workers(cfg.workers, || -> Result<Vec<ModelRun>> {
        let reps: Vec<u64> = (0..cfg.benchmark.replicates).map(|r| replicate_seed(cfg, r)).collect();
        let prepared = par::map_slice(Exec::default(), &reps, |&seed| prepare_replicate(cfg, &net, &lik, seed, &samplers));
        let prepared: Vec<Replicate> = prepared.into_iter().collect::<Result<_>>()?;
        let jobs: Vec<(usize, SamplerKind)> = (0..prepared.len()).flat_map(|r| samplers.iter().map(move |&s| (r, s))).collect();
        par::map_slice(Exec::default(), &jobs, |&(r, sampler)| {
            let rep = &prepared[r];
            let cc = chain_config(cfg, sampler, cfg.chain.plan, rep.seed, rep.step(sampler));
            let mut chain = Chain::new(cc, &lik, &rep.theta0)?;
            chain.run_to_end()?;
            let record = chain.into_record();
            let ev = evaluate_record(&net, &record, &data)?;
            Ok(ModelRun { sampler, seed: rep.seed, record, ev })
        })
        .into_iter()
        .collect()
    })?;

    let mut per_run = Vec::new();
    for run in &runs {
        per_run.extend(reports(cfg, run.sampler, run.seed, &run.record, &run.ev, data.train.len()));
    }
    let mut rows = Vec::new();
    for &sampler in &samplers {
        let mine: Vec<&ModelRun> = runs.iter().filter(|r| r.sampler == sampler).collect();
        let (n, m) = model_n(cfg, sampler, &cfg.chain.plan, data.train.len());
        rows.push(BenchmarkRow {
            model: sampler,
            n,
            m,
            test_nll: mine.iter().map(|r| r.ev.test.0).collect(),
            train_nll: mine.iter().map(|r| r.ev.train.0).collect(),
            test_ace: mine.iter().map(|r| r.ev.test.2).collect(),
            test_coverage: mine.iter().map(|r| r.ev.test.1).collect(),
            acceptance: mine.iter().map(|r| r.record.acceptance_rate()).collect(),
            j: mine[0].record.samples.len(),
        });
    }

    let mut summary = format!("{}\n", BenchmarkRow::CSV_HEADER);
    for row in &rows {
        summary.push_str(&row.csv_row(&hash));
        summary.push('\n');
    }
    // Bands for the mini-batch models of the first replicate.
    let mut bands = format!("{BANDS_HEADER}\n");
    for run in runs.iter().filter(|r| r.seed == replicate_seed(cfg, 0) && r.sampler != SamplerKind::Vanilla) {
        bands.push_str(&band_rows(&net, run.sampler, &run.record.samples, &data, cfg.benchmark.band_points, &hash)?);
    }
    let out = BenchmarkOutput {
        summary: cfg.out_dir.join("benchmark.csv"),
        runs: cfg.out_dir.join("benchmark_runs.csv"),
        bands: cfg.out_dir.join("bands.csv"),
        rows,
    };
    write_file(&out.summary, &summary)?;
    write_file(&out.runs, &report_csv(&per_run, &hash))?;
    write_file(&out.bands, &bands)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub m: usize,
    pub test_avg_nll: f64,
    pub acceptance_rate: f64,
    pub coverage: f64,
    pub ace: f64,
    pub j: usize,
    pub seed: u64,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "N,M,test_avg_nll,log10_acceptance,acceptance_rate,coverage,ace,J,seed,config_hash";

    pub fn log10_acceptance(&self) -> f64 {
        self.acceptance_rate.log10()
    }

    pub fn csv_row(&self, hash: &str) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{hash}",
            self.n,
            self.m,
            self.test_avg_nll,
            self.log10_acceptance(),
            self.acceptance_rate,
            self.coverage,
            self.ace,
            self.j,
            self.seed
        )
    }
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub csv: PathBuf,
    pub rows: Vec<SweepRow>,
}

/// PBNN at every batch size of `sweep.batch_sizes`, from a shared start and
/// the proposal scale tuned on the batched kernel at `chain.plan`. Rows
/// average over `sweep.replicates` seeds.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let net = build_net(cfg)?;
    let lik = MdnTarget::new(&net, &data.train);
    let n_train = data.train.len();
    let plans: Vec<MiniBatchPlan> = cfg
        .sweep
        .batch_sizes
        .iter()
        .map(|&n| {
            let m = cfg.sweep.num_batches.unwrap_or((n_train / n).max(2));
            let plan = MiniBatchPlan { batch_size: n, num_batches: m, mode: cfg.chain.plan.mode };
            plan.validate(n_train).map(|_| plan).map_err(|e| Error::Config(format!("batch size {n}: {e}")))
        })
        .collect::<Result<_>>()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let hash = cfg.hash();
    let base = derive_seed(cfg.seed, "sweep", 0);
    let results = par::with_workers(cfg.workers, || -> Result<Vec<(usize, f64, f64, f64, f64, usize)>> {
        let reps: Vec<u64> = (0..cfg.sweep.replicates).map(|r| derive_seed(base, "replicate", r as u64)).collect();
        let prepared: Vec<Replicate> = par::map_slice(Exec::default(), &reps, |&seed| prepare_replicate(cfg, &net, &lik, seed, &[SamplerKind::Pbnn]))
            .into_iter()
            .collect::<Result<_>>()?;
        let jobs: Vec<(usize, usize)> = (0..plans.len()).flat_map(|p| (0..prepared.len()).map(move |r| (p, r))).collect();
        par::map_slice(Exec::default(), &jobs, |&(p, r)| {
            let rep = &prepared[r];
            let cc = chain_config(cfg, SamplerKind::Pbnn, plans[p], rep.seed, rep.step(SamplerKind::Pbnn));
            let mut chain = Chain::new(cc, &lik, &rep.theta0)?;
            chain.run_to_end()?;
            let record = chain.into_record();
            let (nll, cov, ace) = metrics::evaluate(&net, &record.samples, &data.test)?;
            Ok((p, nll, record.acceptance_rate(), cov, ace, record.samples.len()))
        })
        .into_iter()
        .collect()
    })?;
    let mut rows = Vec::new();
    for (p, plan) in plans.iter().enumerate() {
        let mine: Vec<_> = results.iter().filter(|r| r.0 == p).collect();
        let avg = |f: fn(&(usize, f64, f64, f64, f64, usize)) -> f64| mine.iter().map(|r| f(r)).sum::<f64>() / mine.len() as f64;
        rows.push(SweepRow {
            n: plan.batch_size,
            m: plan.num_batches,
            test_avg_nll: avg(|r| r.1),
            acceptance_rate: avg(|r| r.2),
            coverage: avg(|r| r.3),
            ace: avg(|r| r.4),
            j: mine[0].5,
            seed: cfg.seed,
        });
    }
    let mut csv = format!("{}\n", SweepRow::CSV_HEADER);
    for r in &rows {
        csv.push_str(&r.csv_row(&hash));
        csv.push('\n');
    }
    let path = cfg.out_dir.join("sweep.csv");
    write_file(&path, &csv)?;
    Ok(SweepOutput { csv: path, rows })
}

#[derive(Clone, Debug)]
pub struct ValidateOutput {
    pub csv_path: PathBuf,
    pub csv: String,
    pub rows: Vec<CheckRow>,
    pub all_pass: bool,
}

/// Oracle grid plus the two-state Monte Carlo checks.
pub fn cmd_validate(cfg: &ExperimentConfig) -> Result<ValidateOutput> {
    cfg.validate()?;
    let v = &cfg.validate;
    let mut rows = oracles::validation_grid(&v.deltas, &v.sigmas);
    let seeds: Vec<u64> = (0..v.mc_seeds).map(|i| derive_seed(cfg.seed, "validate", i as u64)).collect();
    rows.extend(oracles::monte_carlo_checks(v.mc_delta, &v.mc_sigmas, v.mc_steps, &seeds, v.mc_tolerance));
    let hash = cfg.hash();
    let mut csv = format!("{},config_hash\n", CheckRow::CSV_HEADER);
    for r in &rows {
        csv.push_str(&format!("{},{hash}\n", r.csv()));
    }
    let csv_path = cfg.out_dir.join("validate.csv");
    write_file(&csv_path, &csv)?;
    let all_pass = rows.iter().all(|r| r.pass);
    Ok(ValidateOutput { csv_path, csv, rows, all_pass })
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::ChainDiverged { .. } | Error::IntegrationDiverged { .. } => 3,
        _ => 2,
    }
}
