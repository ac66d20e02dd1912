//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Pass criterion numbers as arguments to run a subset.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use pbnn::experiment::{cmd_benchmark, cmd_generate_data, cmd_sweep, ExperimentConfig};
use pbnn::loss::{draw_minibatches, loss_diff_from_cache, BatchMode, Likelihood, MiniBatchPlan, PriorSpec};
use pbnn::mdn::{Mdn, MdnArchitecture, MdnTarget};
use pbnn::oracles::{self, monte_carlo_checks, DEFAULT_DELTA_GRID, DEFAULT_SIGMA_GRID};
use pbnn::par::Exec;
use pbnn::pendulum::{energy, step_rk4, PendulumParams, PendulumState};
use pbnn::rng::{stream_rng, Stream};
use pbnn::samplers::SamplerKind;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

mod common;

type Check = (bool, String);

fn c1_oracle_exactness() -> Check {
    let mut worst_ratio: f64 = 0.0;
    let mut worst_quad: f64 = 0.0;
    for &d in &DEFAULT_DELTA_GRID {
        for &s in &DEFAULT_SIGMA_GRID {
            let (pa, pb) = oracles::two_state_stationary(&oracles::TwoStateTarget { delta: d, sigma: s }, true);
            worst_ratio = worst_ratio.max(((pb / pa) / (-d).exp() - 1.0).abs());
            for penalty in [true, false] {
                let gap = (oracles::expected_acceptance(d, s, penalty) - oracles::expected_acceptance_quadrature(d, s, penalty)).abs();
                worst_quad = worst_quad.max(gap);
            }
        }
    }
    let on = oracles::averaged_detailed_balance_residual(0.7, 1.3, true);
    let off = oracles::averaged_detailed_balance_residual(0.7, 1.3, false);
    let pass = worst_ratio < 1e-8 && on < 1e-8 && off > 0.05 && worst_quad < 1e-8;
    (pass, format!("max stationary ratio error {worst_ratio:.1e}, residual on {on:.1e}, off {off:.3}, closed form vs quadrature {worst_quad:.1e}"))
}

fn c2_monte_carlo_exactness() -> Check {
    let rows = monte_carlo_checks(1.0, &[1.0, 2.0], 1_000_000, &[1, 2, 3], 0.01);
    let worst = |name: &str| rows.iter().filter(|r| r.check == name).map(|r| r.value).fold(0.0, f64::max);
    let pass = rows.iter().all(|r| r.pass);
    (pass, format!("Delta=1, sigma in {{1,2}}, 3 seeds x 1e6 steps: max TV(penalty, target) {:.1e}, max |TV(plain) - predicted| {:.1e}", worst("mc_penalty_tv"), worst("mc_plain_tv_gap")))
}

fn c3_unbiasedness() -> Check {
    let data = common::pendulum_data();
    let net = Mdn::new(MdnArchitecture::default()).unwrap();
    let lik = MdnTarget::new(&net, &data.train);
    let prior = PriorSpec::default();
    let mut rng = stream_rng(3, Stream::Init);
    let theta = net.init_params(&mut rng, 1.0).unwrap();
    let theta_new: Vec<f64> = theta.iter().map(|t| t + 0.01 * rng.sample::<f64, _>(StandardNormal)).collect();
    let ll_old = lik.log_likelihoods(&theta, Exec::default());
    let ll_new = lik.log_likelihoods(&theta_new, Exec::default());
    let (lp_old, lp_new) = (prior.log_prior(&theta), prior.log_prior(&theta_new));
    let plan = MiniBatchPlan { batch_size: 60, num_batches: 100, mode: BatchMode::WithReplacement };
    let e: Vec<f64> = ll_old.iter().zip(&ll_new).map(|(o, n)| o - n).collect();
    let (mean_d, var_d, mu4_d) = common::batch_diff_moments(&e, 60, lp_old - lp_new);
    let chi2_pop = var_d / 100.0;
    let chi2_var = common::sample_variance_variance(var_d, mu4_d, 100) / 1e4;
    let draws = 10_000;
    let mut brng = stream_rng(3, Stream::Batches);
    let (mut sd, mut sc) = (0.0, 0.0);
    for _ in 0..draws {
        let b = draw_minibatches(data.train.len(), &plan, &mut brng).unwrap();
        let est = loss_diff_from_cache(&ll_new, lp_new, &ll_old, lp_old, &b, 60).unwrap();
        sd += est.delta;
        sc += est.chi2;
    }
    let k = draws as f64;
    let z_d = (sd / k - mean_d) / (chi2_pop / k).sqrt();
    let z_c = (sc / k - chi2_pop) / (chi2_var / k).sqrt();
    (z_d.abs() < 3.0 && z_c.abs() < 3.0, format!("1e4 draws: delta z = {z_d:.2}, chi2 z = {z_c:.2} (population delta {mean_d:.4}, chi2 {chi2_pop:.4e})"))
}

fn c4_gradient() -> Check {
    let data = common::pendulum_data();
    let net = Mdn::new(MdnArchitecture::default()).unwrap();
    let mut rng = stream_rng(4, Stream::Init);
    let mut worst: f64 = 0.0;
    for i in 0..5 {
        let theta = net.init_params(&mut rng, 1.0 + 0.5 * i as f64).unwrap();
        let items = sample(&mut rng, data.train.len(), 60).into_vec();
        let batch = data.train.select(&items);
        worst = worst.max(common::max_fd_relative_error(&net, &theta, &batch, 50, 1e-5, 1e-3, &mut rng));
    }
    (worst < 1e-5, format!("max relative error {worst:.2e} over 5 instances x 50 coordinates"))
}

fn c5_pendulum() -> Check {
    let p = PendulumParams::default();
    let mut s = PendulumState::default();
    let e0 = energy(&s, &p);
    let mut drift: f64 = 0.0;
    for _ in 0..10_000 {
        s = step_rk4(&s, &p).unwrap();
        drift = drift.max(((energy(&s, &p) - e0) / e0).abs());
    }
    let d = common::pendulum_data();
    let counts = (d.train.len() + d.test.len(), d.train.len(), d.test.len());
    (drift < 1e-6 && counts == (9975, 2992, 6983), format!("relative energy drift {drift:.2e}; items {} = {} train + {} test", counts.0, counts.1, counts.2))
}

/// Test-scale settings for the benchmark and sweep criteria.
const BENCH_CONFIG: &str = r#"{
  "seed": 2024,
  "chain": {"n_steps": 6000, "burn_in": 2000, "thin": 40},
  "benchmark": {"replicates": 3, "samplers": ["tempered", "batched", "sgld", "pbnn"], "band_points": 50}
}"#;

const SWEEP_CONFIG: &str = r#"{
  "seed": 2024,
  "chain": {"n_steps": 4000, "burn_in": 1000, "thin": 30}
}"#;

fn config_in(json: &str, dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_json(json).unwrap();
    cfg.out_dir = dir.to_path_buf();
    cfg
}

fn c6_benchmark_ordering() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(BENCH_CONFIG, dir.path());
    cmd_generate_data(&cfg).unwrap();
    let out = match cmd_benchmark(&cfg) {
        Ok(o) => o,
        Err(e) => return (false, format!("benchmark failed: {e}")),
    };
    let row = |k: SamplerKind| out.rows.iter().find(|r| r.model == k).unwrap();
    let pb = row(SamplerKind::Pbnn);
    let others = [SamplerKind::Batched, SamplerKind::Tempered, SamplerKind::Sgld];
    let nll_ok = others.iter().all(|&k| pbnn::experiment::mean(&pb.test_nll) < pbnn::experiment::mean(&row(k).test_nll));
    let ace_ok = others.iter().all(|&k| pbnn::experiment::mean(&pb.test_ace) < pbnn::experiment::mean(&row(k).test_ace));
    let table: Vec<String> = out
        .rows
        .iter()
        .map(|r| {
            format!(
                "{} nll {:.3} ace {:.3} acc {:.3}",
                r.model,
                pbnn::experiment::mean(&r.test_nll),
                pbnn::experiment::mean(&r.test_ace),
                pbnn::experiment::mean(&r.acceptance)
            )
        })
        .collect();
    (nll_ok && ace_ok, format!("R=3, 6000 steps: {} (nll order {}, ace order {})", table.join("; "), nll_ok, ace_ok))
}

fn c7_sweep_trends() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(SWEEP_CONFIG, dir.path());
    cmd_generate_data(&cfg).unwrap();
    let out = match cmd_sweep(&cfg) {
        Ok(o) => o,
        Err(e) => return (false, format!("sweep failed: {e}")),
    };
    let n: Vec<f64> = out.rows.iter().map(|r| r.n as f64).collect();
    let acc: Vec<f64> = out.rows.iter().map(|r| r.log10_acceptance()).collect();
    let nll: Vec<f64> = out.rows.iter().map(|r| r.test_avg_nll).collect();
    let rho_acc = common::spearman(&n, &acc);
    let rho_nll = common::spearman(&n, &nll);
    let inv = common::inversions_non_increasing(&acc);
    let pass = inv <= 1 && rho_acc <= -0.8 && rho_nll <= -0.8;
    let pts: Vec<String> = out.rows.iter().map(|r| format!("N={} log10acc {:.2} nll {:.3}", r.n, r.log10_acceptance(), r.test_avg_nll)).collect();
    (pass, format!("{}; rho(acc) {rho_acc:.2}, rho(nll) {rho_nll:.2}, inversions {inv}", pts.join(", ")))
}

const TINY: &str = r#"{
  "pretrain": {"iterations": 10},
  "chain": {"n_steps": 40, "burn_in": 20, "thin": 4,
            "tuning": {"rounds": 2, "steps_per_round": 10},
            "plan": {"batch_size": 20, "num_batches": 5}},
  "benchmark": {"replicates": 2, "band_points": 5},
  "sweep": {"batch_sizes": [30, 60]},
  "validate": {"mc_steps": 20000, "mc_seeds": 1, "mc_tolerance": 0.05}
}"#;

fn run_all_subcommands(root: &Path) -> Vec<(String, Vec<u8>)> {
    let cfg = root.join("cfg.json");
    fs::write(&cfg, TINY).unwrap();
    let out = root.join("out");
    let bin = env!("CARGO_BIN_EXE_pbnn");
    let common_args = ["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "5"];
    for sub in [&["generate-data"][..], &["run", "--sampler", "pbnn"], &["run", "--sampler", "sgld"], &["benchmark"], &["sweep"], &["validate"]] {
        let o = Command::new(bin).args(sub).args(common_args).output().unwrap();
        assert!(o.status.success(), "{sub:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn c8_determinism() -> Check {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = run_all_subcommands(a.path());
    let fb = run_all_subcommands(b.path());
    let names: Vec<&str> = fa.iter().map(|f| f.0.as_str()).collect();
    (fa == fb && fa.len() >= 9, format!("{} CSV files byte-identical across reruns: {}", fa.len(), names.join(", ")))
}

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(u32, &str, fn() -> Check); 8] = [
        (1, "penalty exactness (oracle)", c1_oracle_exactness),
        (2, "penalty exactness (Monte Carlo)", c2_monte_carlo_exactness),
        (3, "estimator unbiasedness", c3_unbiasedness),
        (4, "gradient correctness", c4_gradient),
        (5, "pendulum integrity", c5_pendulum),
        (6, "benchmark ordering", c6_benchmark_ordering),
        (7, "sweep trends", c7_sweep_trends),
        (8, "determinism", c8_determinism),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = check();
        println!("criterion {id} [{name}] {} ({:.1}s): {detail}", if pass { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
        if !pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
