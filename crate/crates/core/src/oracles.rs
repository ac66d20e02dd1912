//! Closed-form and brute-force checks of the noisy acceptance rule on an
//! abstract two-state target, independent of any network.
//!
//! The noisy loss difference is modelled as `delta ~ N(Delta, sigma^2)`.
//! With the penalty `c = sigma^2 / 2` the expected acceptance satisfies
//! detailed balance exactly; without it the chain's stationary law is
//! flattened towards uniform.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::rng::{stream_rng, Stream};
use crate::samplers::{log_acceptance, mh_accept, NoisyAcceptanceInputs};

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn normal_pdf(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TwoStateTarget {
    /// `L(b) - L(a)`.
    pub delta: f64,
    /// Standard deviation of the noise on each loss-difference draw.
    pub sigma: f64,
}

fn penalty_offset(sigma: f64, penalty: bool) -> f64 {
    if penalty {
        0.5 * sigma * sigma
    } else {
        0.0
    }
}

/// `E[min(1, exp(-d - c))]` for `d ~ N(delta, sigma^2)`, closed form.
pub fn expected_acceptance(delta: f64, sigma: f64, penalty: bool) -> f64 {
    assert!(sigma >= 0.0, "sigma must be non-negative");
    let c = penalty_offset(sigma, penalty);
    if sigma == 0.0 {
        return (-delta - c).min(0.0).exp();
    }
    let below = normal_cdf((-delta - c) / sigma);
    let above = (-delta - c + 0.5 * sigma * sigma).exp() * normal_cdf((delta + c) / sigma - sigma);
    below + above
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64, m: f64, fm: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let err = left + right - whole;
        if depth == 0 || err.abs() <= 15.0 * tol {
            return left + right + err / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1) + recurse(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 50)
}

/// Same expectation as [`expected_acceptance`], by numerical quadrature.
pub fn expected_acceptance_quadrature(delta: f64, sigma: f64, penalty: bool) -> f64 {
    let c = penalty_offset(sigma, penalty);
    if sigma == 0.0 {
        return (-delta - c).min(0.0).exp();
    }
    let lo = delta - 40.0 * sigma;
    let hi = delta + 40.0 * sigma;
    let kink = (-c).clamp(lo, hi);
    let left = |d: f64| normal_pdf(d, delta, sigma);
    let right = |d: f64| (-d - c).exp() * normal_pdf(d, delta, sigma);
    // Split at the kink of min(1, .) and at the mode for a well-resolved peak.
    let mut total = 0.0;
    let mut pieces = vec![lo, kink, delta, hi];
    pieces.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for w in pieces.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        total += if b <= kink { adaptive_simpson(&left, a, b, 1e-14) } else { adaptive_simpson(&right, a, b, 1e-14) };
    }
    total
}

/// `|E[A | Delta] - exp(-Delta) * E[A | -Delta]|`: zero when averaged
/// detailed balance holds for a symmetric proposal.
pub fn averaged_detailed_balance_residual(delta: f64, sigma: f64, penalty: bool) -> f64 {
    (expected_acceptance(delta, sigma, penalty) - (-delta).exp() * expected_acceptance(-delta, sigma, penalty)).abs()
}

/// Exact stationary law `(pi_a, pi_b)` of the two-state chain that always
/// proposes the other state and accepts with the expected noisy acceptance.
pub fn two_state_stationary(t: &TwoStateTarget, penalty: bool) -> (f64, f64) {
    let p_ab = expected_acceptance(t.delta, t.sigma, penalty);
    let p_ba = expected_acceptance(-t.delta, t.sigma, penalty);
    // Stationary vector of [[1 - p_ab, p_ab], [p_ba, 1 - p_ba]].
    let z = p_ab + p_ba;
    (p_ba / z, p_ab / z)
}

/// Exact target `(1, exp(-Delta)) / (1 + exp(-Delta))`.
pub fn two_state_target(delta: f64) -> (f64, f64) {
    // written via the logistic to stay finite for large |delta|
    let pa = 1.0 / (1.0 + (-delta).exp());
    (pa, 1.0 - pa)
}

/// Simulate the two-state chain with synthetic Gaussian noise on each
/// loss-difference draw and return the empirical occupation `(f_a, f_b)`.
pub fn simulate_two_state(t: &TwoStateTarget, penalty: bool, n_steps: usize, seed: u64) -> (f64, f64) {
    let mut noise = stream_rng(seed, Stream::Noise);
    let mut accept = stream_rng(seed, Stream::Accept);
    let mut in_a = true;
    let mut count_a = 0usize;
    for _ in 0..n_steps {
        let mean = if in_a { t.delta } else { -t.delta };
        let d = mean + t.sigma * noise.sample::<f64, _>(StandardNormal);
        let inputs = NoisyAcceptanceInputs { delta: d, sigma2: t.sigma * t.sigma, log_q_ratio: 0.0 };
        let u: f64 = accept.random();
        if mh_accept(log_acceptance(&inputs, penalty), u) {
            in_a = !in_a;
        }
        if in_a {
            count_a += 1;
        }
    }
    let fa = count_a as f64 / n_steps as f64;
    (fa, 1.0 - fa)
}

/// Total-variation distance between two distributions on two states.
pub fn tv_two_state(p: (f64, f64), q: (f64, f64)) -> f64 {
    0.5 * ((p.0 - q.0).abs() + (p.1 - q.1).abs())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub check: &'static str,
    pub delta: f64,
    pub sigma: f64,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl CheckRow {
    pub const CSV_HEADER: &'static str = "check,delta,sigma,value,threshold,pass";

    pub fn csv(&self) -> String {
        format!("{},{},{},{:e},{:e},{}", self.check, self.delta, self.sigma, self.value, self.threshold, self.pass)
    }
}

pub const DEFAULT_DELTA_GRID: [f64; 5] = [-3.0, -1.0, 0.0, 1.0, 3.0];
pub const DEFAULT_SIGMA_GRID: [f64; 5] = [0.0, 0.5, 1.0, 2.0, 3.0];

/// Run every oracle check over a `(Delta, sigma)` grid.
pub fn validation_grid(deltas: &[f64], sigmas: &[f64]) -> Vec<CheckRow> {
    let mut rows = Vec::new();
    for &delta in deltas {
        for &sigma in sigmas {
            for penalty in [true, false] {
                let gap = (expected_acceptance(delta, sigma, penalty) - expected_acceptance_quadrature(delta, sigma, penalty)).abs();
                rows.push(CheckRow {
                    check: if penalty { "closed_form_vs_quadrature_penalty" } else { "closed_form_vs_quadrature_plain" },
                    delta,
                    sigma,
                    value: gap,
                    threshold: 1e-8,
                    pass: gap < 1e-8,
                });
            }
            let (pa, pb) = two_state_stationary(&TwoStateTarget { delta, sigma }, true);
            let rel = ((pb / pa) / (-delta).exp() - 1.0).abs();
            rows.push(CheckRow { check: "penalty_stationary_ratio", delta, sigma, value: rel, threshold: 1e-8, pass: rel < 1e-8 });
            let res = averaged_detailed_balance_residual(delta, sigma, true);
            rows.push(CheckRow { check: "penalty_detailed_balance", delta, sigma, value: res, threshold: 1e-8, pass: res < 1e-8 });
        }
    }
    let res_off = averaged_detailed_balance_residual(0.7, 1.3, false);
    rows.push(CheckRow { check: "plain_detailed_balance_violated", delta: 0.7, sigma: 1.3, value: res_off, threshold: 0.05, pass: res_off > 0.05 });
    rows
}

/// Simulated two-state chains at `delta` for every noise level and seed.
/// With the penalty the occupation must match the exact target; without it
/// the observed TV from the target must match the oracle-predicted TV.
pub fn monte_carlo_checks(delta: f64, sigmas: &[f64], n_steps: usize, seeds: &[u64], tol: f64) -> Vec<CheckRow> {
    let target = two_state_target(delta);
    let mut rows = Vec::new();
    for &sigma in sigmas {
        let t = TwoStateTarget { delta, sigma };
        let predicted_plain = tv_two_state(two_state_stationary(&t, false), target);
        for &seed in seeds {
            let tv = tv_two_state(simulate_two_state(&t, true, n_steps, seed), target);
            rows.push(CheckRow { check: "mc_penalty_tv", delta, sigma, value: tv, threshold: tol, pass: tv < tol });
            let observed = tv_two_state(simulate_two_state(&t, false, n_steps, seed), target);
            let gap = (observed - predicted_plain).abs();
            rows.push(CheckRow { check: "mc_plain_tv_gap", delta, sigma, value: gap, threshold: tol, pass: gap < tol });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_cases() {
        assert_eq!(expected_acceptance(0.0, 0.0, false), 1.0);
        for d in [-2.0, -0.1, 0.0, 0.4, 3.0] {
            assert_eq!(expected_acceptance(d, 0.0, false), (-d as f64).min(0.0).exp());
            assert_eq!(expected_acceptance(d, 0.0, true), (-d as f64).min(0.0).exp());
        }
    }

    #[test]
    fn closed_form_matches_quadrature_at_unit_point() {
        for penalty in [true, false] {
            let a = expected_acceptance(1.0, 1.0, penalty);
            let b = expected_acceptance_quadrature(1.0, 1.0, penalty);
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn detailed_balance_residuals() {
        assert!(averaged_detailed_balance_residual(0.0, 1.7, true) < 1e-15);
        assert!(averaged_detailed_balance_residual(0.0, 1.7, false) < 1e-15);
        assert!(averaged_detailed_balance_residual(0.7, 1.3, true) < 1e-8);
        assert!(averaged_detailed_balance_residual(0.7, 1.3, false) > 0.05);
    }

    #[test]
    fn stationary_cases() {
        for sigma in [0.0, 1.0, 3.0] {
            for penalty in [true, false] {
                let (a, b) = two_state_stationary(&TwoStateTarget { delta: 0.0, sigma }, penalty);
                assert!((a - 0.5).abs() < 1e-15 && (b - 0.5).abs() < 1e-15);
            }
        }
        let (a, b) = two_state_stationary(&TwoStateTarget { delta: 1.0, sigma: 0.0 }, false);
        assert!((a / b - std::f64::consts::E).abs() < 1e-12);
        let (a, b) = two_state_stationary(&TwoStateTarget { delta: 1.0, sigma: 2.0 }, true);
        assert!((a / b / std::f64::consts::E - 1.0).abs() < 1e-8);
        let (a2, b2) = two_state_stationary(&TwoStateTarget { delta: 1.0, sigma: 2.0 }, false);
        assert!(a2 / b2 < std::f64::consts::E && a2 / b2 > 1.0);
    }

    #[test]
    fn no_penalty_flattens_monotonically() {
        let mut last = f64::INFINITY;
        for sigma in [0.0, 0.5, 1.0, 2.0, 3.0] {
            let (a, b) = two_state_stationary(&TwoStateTarget { delta: 1.0, sigma }, false);
            let r = a / b;
            assert!(r <= last + 1e-12 && r >= 1.0);
            last = r;
        }
    }

    #[test]
    fn default_grid_passes() {
        let rows = validation_grid(&DEFAULT_DELTA_GRID, &DEFAULT_SIGMA_GRID);
        let failed: Vec<_> = rows.iter().filter(|r| !r.pass).collect();
        assert!(failed.is_empty(), "{failed:?}");
    }

    #[test]
    fn short_simulation_is_deterministic() {
        let t = TwoStateTarget { delta: 1.0, sigma: 1.0 };
        assert_eq!(simulate_two_state(&t, true, 1000, 5), simulate_two_state(&t, true, 1000, 5));
    }
}
