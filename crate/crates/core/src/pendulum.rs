//! Frictionless double pendulum, integrated with fixed-step RK4, and the
//! lagged-window transformation that turns its trajectory into a supervised
//! forecasting dataset.

use serde::{Deserialize, Serialize};

use crate::dataset::SupervisedDataset;
use crate::{Error, Result};

/// Lags (in observation steps) used to build each input window.
pub const DEFAULT_LAGS: [usize; 5] = [20, 21, 22, 23, 24];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PendulumParams {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    pub g: f64,
    /// Integration step in seconds.
    pub dt: f64,
    /// Integration steps between recorded observations.
    pub obs_stride: usize,
    /// Number of recorded observations (trajectory length).
    pub n_observations: usize,
}

impl Default for PendulumParams {
    fn default() -> Self {
        PendulumParams {
            m1: 1.0,
            m2: 1.0,
            l1: 1.0,
            l2: 1.0,
            g: 9.81,
            dt: 1e-3,
            obs_stride: 10,
            n_observations: 9999,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m1", self.m1),
            ("m2", self.m2),
            ("l1", self.l1),
            ("l2", self.l2),
            ("g", self.g),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be strictly positive, got {v}")));
            }
        }
        if self.obs_stride == 0 {
            return Err(Error::invalid("obs_stride must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PendulumState {
    pub phi1: f64,
    pub phi2: f64,
    pub omega1: f64,
    pub omega2: f64,
}

impl Default for PendulumState {
    fn default() -> Self {
        PendulumState { phi1: 2.0, phi2: 2.5, omega1: 0.0, omega2: 0.0 }
    }
}

impl PendulumState {
    pub fn is_finite(&self) -> bool {
        self.phi1.is_finite() && self.phi2.is_finite() && self.omega1.is_finite() && self.omega2.is_finite()
    }

    fn axpy(&self, h: f64, d: &PendulumState) -> PendulumState {
        PendulumState {
            phi1: self.phi1 + h * d.phi1,
            phi2: self.phi2 + h * d.phi2,
            omega1: self.omega1 + h * d.omega1,
            omega2: self.omega2 + h * d.omega2,
        }
    }
}

/// Cartesian coordinates `(x1, z1, x2, z2)` of both masses.
pub type Observation = [f64; 4];

/// Time derivative of the state from the Euler-Lagrange equations.
fn derivative(s: &PendulumState, p: &PendulumParams) -> PendulumState {
    let PendulumParams { m1, m2, l1, l2, g, .. } = *p;
    let diff = s.phi1 - s.phi2;
    let den = 2.0 * m1 + m2 - m2 * (2.0 * diff).cos();
    let w1sq = s.omega1 * s.omega1;
    let w2sq = s.omega2 * s.omega2;

    let a1 = -g * (2.0 * m1 + m2) * s.phi1.sin()
        - m2 * g * (s.phi1 - 2.0 * s.phi2).sin()
        - 2.0 * diff.sin() * m2 * (w2sq * l2 + w1sq * l1 * diff.cos());
    let a2 = 2.0 * diff.sin() * (w1sq * l1 * (m1 + m2) + g * (m1 + m2) * s.phi1.cos() + w2sq * l2 * m2 * diff.cos());

    PendulumState {
        phi1: s.omega1,
        phi2: s.omega2,
        omega1: a1 / (l1 * den),
        omega2: a2 / (l2 * den),
    }
}

/// Advance the state by one RK4 step of size `params.dt`.
pub fn step_rk4(state: &PendulumState, params: &PendulumParams) -> Result<PendulumState> {
    step_rk4_dt(state, params, params.dt)
}

pub(crate) fn step_rk4_dt(state: &PendulumState, params: &PendulumParams, h: f64) -> Result<PendulumState> {
    if !state.is_finite() {
        return Err(Error::IntegrationDiverged { dt: h });
    }
    let k1 = derivative(state, params);
    let k2 = derivative(&state.axpy(h / 2.0, &k1), params);
    let k3 = derivative(&state.axpy(h / 2.0, &k2), params);
    let k4 = derivative(&state.axpy(h, &k3), params);
    let next = PendulumState {
        phi1: state.phi1 + h / 6.0 * (k1.phi1 + 2.0 * k2.phi1 + 2.0 * k3.phi1 + k4.phi1),
        phi2: state.phi2 + h / 6.0 * (k1.phi2 + 2.0 * k2.phi2 + 2.0 * k3.phi2 + k4.phi2),
        omega1: state.omega1 + h / 6.0 * (k1.omega1 + 2.0 * k2.omega1 + 2.0 * k3.omega1 + k4.omega1),
        omega2: state.omega2 + h / 6.0 * (k1.omega2 + 2.0 * k2.omega2 + 2.0 * k3.omega2 + k4.omega2),
    };
    if !next.is_finite() {
        return Err(Error::IntegrationDiverged { dt: h });
    }
    Ok(next)
}

pub fn observe(state: &PendulumState, params: &PendulumParams) -> Observation {
    let (s1, c1) = state.phi1.sin_cos();
    let (s2, c2) = state.phi2.sin_cos();
    let x1 = params.l1 * s1;
    let z1 = -params.l1 * c1;
    [x1, z1, x1 + params.l2 * s2, z1 - params.l2 * c2]
}

/// Total mechanical energy (kinetic + potential), in joules.
pub fn energy(state: &PendulumState, params: &PendulumParams) -> f64 {
    let PendulumParams { m1, m2, l1, l2, g, .. } = *params;
    let (w1, w2) = (state.omega1, state.omega2);
    let kinetic = 0.5 * m1 * l1 * l1 * w1 * w1
        + 0.5 * m2 * (l1 * l1 * w1 * w1 + l2 * l2 * w2 * w2 + 2.0 * l1 * l2 * w1 * w2 * (state.phi1 - state.phi2).cos());
    let potential = -(m1 + m2) * g * l1 * state.phi1.cos() - m2 * g * l2 * state.phi2.cos();
    kinetic + potential
}

/// Integrate from `initial`, recording an observation every `obs_stride`
/// steps (the initial state is observation 0).
pub fn simulate(params: &PendulumParams, initial: &PendulumState) -> Result<Vec<Observation>> {
    params.validate()?;
    if !initial.is_finite() {
        return Err(Error::invalid("initial state must be finite"));
    }
    let mut out = Vec::with_capacity(params.n_observations);
    let mut state = *initial;
    for i in 0..params.n_observations {
        if i > 0 {
            for _ in 0..params.obs_stride {
                state = step_rk4(&state, params)?;
            }
        }
        out.push(observe(&state, params));
    }
    Ok(out)
}

/// Window a trajectory: item for time `t` has input
/// `concat(y[t - lags[0]], ..., y[t - lags[k]])` and target `y[t]`.
pub fn build_dataset(trajectory: &[Observation], lags: &[usize]) -> Result<SupervisedDataset> {
    let max_lag = *lags.iter().max().ok_or_else(|| Error::invalid("lags must be nonempty"))?;
    if trajectory.len() <= max_lag {
        return Err(Error::InsufficientData { needed: max_lag, got: trajectory.len() });
    }
    let mut ds = SupervisedDataset::new(4 * lags.len(), 4);
    let mut x = Vec::with_capacity(4 * lags.len());
    for t in max_lag..trajectory.len() {
        x.clear();
        for &lag in lags {
            x.extend_from_slice(&trajectory[t - lag]);
        }
        ds.push(&x, &trajectory[t]);
    }
    Ok(ds)
}

/// Per-coordinate affine standardization, fit on a training slice only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; 4],
    pub std: [f64; 4],
}

impl Standardizer {
    pub fn identity() -> Self {
        Standardizer { mean: [0.0; 4], std: [1.0; 4] }
    }

    pub fn fit(observations: &[Observation]) -> Result<Self> {
        if observations.len() < 2 {
            return Err(Error::InsufficientData { needed: 1, got: observations.len() });
        }
        let n = observations.len() as f64;
        let mut mean = [0.0; 4];
        for o in observations {
            for d in 0..4 {
                mean[d] += o[d];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; 4];
        for o in observations {
            for d in 0..4 {
                var[d] += (o[d] - mean[d]).powi(2);
            }
        }
        let mut std = [0.0; 4];
        for d in 0..4 {
            std[d] = (var[d] / (n - 1.0)).sqrt();
            if !(std[d] > 0.0) {
                return Err(Error::invalid(format!("coordinate {d} has zero variance")));
            }
        }
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, o: &Observation) -> Observation {
        let mut out = [0.0; 4];
        for d in 0..4 {
            out[d] = (o[d] - self.mean[d]) / self.std[d];
        }
        out
    }
}
