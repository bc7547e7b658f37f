//! Fluid limit of the combinatorial model.
//!
//! The state is the vector of cumulative fractions `q̄[i][j]` (servers with at
//! least `i` type-I jobs and exactly `j` type-II jobs), truncated at level
//! `i_max` with `q̄[i_max + 1][.] = 0`. The dynamics switch on the idle
//! fraction `q00 = q̄00 - q̄10`: while idle servers exist every arrival is
//! absorbed by them, and once they are gone type-I jobs queue at the reduced
//! rate `λ̃ = (λ - μ1 q10 - μ2 q01)^+`. The indicator `1{q00 = 0}` is
//! emulated by `q00 < eps0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{JobType, ServerConfig};
use crate::trajectory::Trajectory;

pub const DEFAULT_EPS0: f64 = 1e-15;
pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_I_MAX: usize = 12;
/// Largest monotonicity repair accepted after a step.
pub const REPAIR_LIMIT: f64 = 1e-6;
/// Indicator flips per unit time above which a run is flagged as chattering.
pub const CHATTER_RATE: f64 = 1e3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FluidError {
    #[error("invalid fluid parameters: {0}")]
    Params(String),
    #[error("invalid fluid state: {0}")]
    State(String),
    #[error("monotonicity violated by {violation:e} at level {level} (column {column}) at t = {t}; reduce dt")]
    Diagnostic { t: f64, level: usize, column: usize, violation: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluidParams {
    pub d1: u32,
    pub lambda: f64,
    pub mu1: f64,
    pub mu2: f64,
    #[serde(default = "default_eps0")]
    pub eps0: f64,
}

fn default_eps0() -> f64 {
    DEFAULT_EPS0
}

impl FluidParams {
    pub fn new(d1: u32, lambda: f64, mu1: f64, mu2: f64) -> Result<Self, FluidError> {
        let p = Self { d1, lambda, mu1, mu2, eps0: DEFAULT_EPS0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), FluidError> {
        let finite = [self.lambda, self.mu1, self.mu2, self.eps0].iter().all(|x| x.is_finite());
        if self.d1 == 0 || !finite || self.lambda < 0.0 || self.eps0 < 0.0 {
            return Err(FluidError::Params(format!("{self:?}")));
        }
        if !(self.mu1 > self.mu2 && self.mu2 > 0.0) {
            return Err(FluidError::Params(format!(
                "need mu1 > mu2 > 0, got mu1={} mu2={}",
                self.mu1, self.mu2
            )));
        }
        Ok(())
    }
}

/// Cumulative fractions `q̄[i][j]`, `0 <= i <= i_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluidState {
    pub qbar: Vec<[f64; 2]>,
}

impl FluidState {
    /// All servers idle.
    pub fn empty(i_max: usize) -> Self {
        let mut qbar = vec![[0.0; 2]; i_max + 1];
        qbar[0][0] = 1.0;
        Self { qbar }
    }

    /// Builds the cumulative vector from exact-configuration fractions
    /// `q[i][j]`; missing levels are zero.
    pub fn from_fractions(q: &[[f64; 2]], i_max: usize) -> Result<Self, FluidError> {
        let sum: f64 = q.iter().map(|c| c[0] + c[1]).sum();
        if q.iter().flatten().any(|&x| !(0.0..=1.0).contains(&x)) || (sum - 1.0).abs() > 1e-9 {
            return Err(FluidError::State(format!("fractions must lie in [0,1] and sum to 1, sum={sum}")));
        }
        let mut qbar = vec![[0.0; 2]; i_max + 1];
        for j in 0..2 {
            let mut acc = 0.0;
            for i in (0..q.len()).rev() {
                acc += q[i][j];
                if i <= i_max {
                    qbar[i][j] = acc;
                }
            }
        }
        let state = Self { qbar };
        state.validate()?;
        Ok(state)
    }

    pub fn i_max(&self) -> usize {
        self.qbar.len() - 1
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.qbar.get(i).map_or(0.0, |c| c[j])
    }

    /// Exact-configuration fractions `q[i][j] = q̄[i][j] - q̄[i+1][j]`.
    pub fn fractions(&self) -> Vec<[f64; 2]> {
        (0..self.qbar.len())
            .map(|i| [self.at(i, 0) - self.at(i + 1, 0), self.at(i, 1) - self.at(i + 1, 1)])
            .collect()
    }

    pub fn q00(&self) -> f64 {
        self.at(0, 0) - self.at(1, 0)
    }

    pub fn validate(&self) -> Result<(), FluidError> {
        if self.qbar.is_empty() {
            return Err(FluidError::State("no levels".into()));
        }
        let tol = 1e-9;
        if (self.at(0, 0) + self.at(0, 1) - 1.0).abs() > tol {
            return Err(FluidError::State("q̄00 + q̄01 must equal 1".into()));
        }
        for j in 0..2 {
            for i in 0..self.qbar.len() {
                let x = self.qbar[i][j];
                if !(-tol..=1.0 + tol).contains(&x) || (i > 0 && x > self.qbar[i - 1][j] + tol) {
                    return Err(FluidError::State(format!("q̄[{i}][{j}] = {x} breaks monotonicity or bounds")));
                }
            }
        }
        Ok(())
    }
}

/// `λ̃ = (λ - μ1 q10 - μ2 q01)^+`.
pub fn tilde_lambda(params: &FluidParams, state: &FluidState) -> f64 {
    let q10 = state.at(1, 0) - state.at(2, 0);
    let q01 = state.at(0, 1) - state.at(1, 1);
    (params.lambda - params.mu1 * q10 - params.mu2 * q01).max(0.0)
}

/// Right-hand side of the fluid equations.
pub fn drift(params: &FluidParams, state: &FluidState) -> Vec<[f64; 2]> {
    let q = |i: usize, j: usize| state.at(i, j);
    let d = params.d1 as i32;
    let (lam, mu1, mu2) = (params.lambda, params.mu1, params.mu2);
    let q00 = state.q00();
    let no_idle = q00 < params.eps0;
    let lt = tilde_lambda(params, state);
    let queue = if no_idle { lt } else { 0.0 };
    let busy_all = (1.0 - q00).powi(d);

    let mut out = vec![[0.0; 2]; state.qbar.len()];
    out[0][0] = mu2 * (q(0, 1) - q(1, 1)) - lam * busy_all + queue;
    out[0][1] = mu2 * (q(1, 1) - q(0, 1)) + if no_idle { lam - lt } else { lam * busy_all };
    if out.len() > 1 {
        out[1][0] = mu1 * (q(2, 0) - q(1, 0)) + if no_idle { 0.0 } else { lam * (1.0 - busy_all) };
        out[1][1] = mu1 * (q(2, 1) - q(1, 1))
            + queue * ((q(1, 0) + q(0, 1)).powi(d) - (q(1, 0) + q(1, 1)).powi(d));
    }
    for i in 2..out.len() {
        let mid = q(i, 0) + q(i - 1, 1);
        out[i][0] = mu1 * (q(i + 1, 0) - q(i, 0))
            + queue * ((q(i - 1, 0) + q(i - 1, 1)).powi(d) - mid.powi(d));
        out[i][1] = mu1 * (q(i + 1, 1) - q(i, 1)) + queue * (mid.powi(d) - (q(i, 0) + q(i, 1)).powi(d));
    }
    out
}

/// Outcome of [`integrate`].
#[derive(Debug, Clone)]
pub struct FluidRun {
    pub trajectory: Trajectory,
    pub final_state: FluidState,
    /// Changes of the idle indicator between consecutive steps.
    pub indicator_flips: u64,
    /// More than [`CHATTER_RATE`] flips per unit time.
    pub chatter: bool,
    /// Largest monotonicity repair applied after a step.
    pub max_repair: f64,
}

fn axpy(base: &FluidState, k: &[[f64; 2]], h: f64) -> FluidState {
    FluidState {
        qbar: base.qbar.iter().zip(k).map(|(q, k)| [q[0] + h * k[0], q[1] + h * k[1]]).collect(),
    }
}

/// Restores bounds, `q̄00 + q̄01 = 1` and monotonicity after a step.
///
/// A negative idle fraction is an overshoot of the `q00 = 0` boundary and is
/// projected onto it. Other monotonicity breaks are repaired when small and
/// reported otherwise. Returns the largest repair.
fn project(state: &mut FluidState, t: f64) -> Result<f64, FluidError> {
    for cell in state.qbar.iter_mut() {
        for x in cell.iter_mut() {
            *x = x.clamp(0.0, 1.0);
        }
    }
    if state.qbar.len() > 1 && state.qbar[0][0] < state.qbar[1][0] {
        state.qbar[0][0] = state.qbar[1][0];
    }
    state.qbar[0][1] = 1.0 - state.qbar[0][0];
    let mut worst = 0.0f64;
    for j in 0..2 {
        for i in 1..state.qbar.len() {
            let excess = state.qbar[i][j] - state.qbar[i - 1][j];
            if excess > 0.0 {
                if excess > REPAIR_LIMIT {
                    return Err(FluidError::Diagnostic { t, level: i, column: j, violation: excess });
                }
                worst = worst.max(excess);
                state.qbar[i][j] = state.qbar[i - 1][j];
            }
        }
    }
    Ok(worst)
}

/// Fixed-step RK4 from `initial` over `[0, horizon]`, sampling roughly every
/// `sample_dt` (rounded to a whole number of steps).
pub fn integrate(
    params: &FluidParams,
    initial: &FluidState,
    horizon: f64,
    dt: f64,
    sample_dt: f64,
) -> Result<FluidRun, FluidError> {
    params.validate()?;
    initial.validate()?;
    if !(dt > 0.0 && dt.is_finite() && horizon >= 0.0 && sample_dt > 0.0) {
        return Err(FluidError::Params(format!(
            "need dt > 0, horizon >= 0, sample_dt > 0; got dt={dt} horizon={horizon} sample_dt={sample_dt}"
        )));
    }
    let steps = (horizon / dt).round() as u64;
    let every = ((sample_dt / dt).round() as u64).max(1);
    let mut traj = Trajectory::new(initial.i_max());
    let mut state = initial.clone();
    traj.push(0.0, &state.qbar);
    let mut flips = 0u64;
    let mut max_repair = 0.0f64;
    let mut idle = state.q00() < params.eps0;

    for step in 1..=steps {
        let t = step as f64 * dt;
        let k1 = drift(params, &state);
        let k2 = drift(params, &axpy(&state, &k1, dt / 2.0));
        let k3 = drift(params, &axpy(&state, &k2, dt / 2.0));
        let k4 = drift(params, &axpy(&state, &k3, dt));
        for (i, cell) in state.qbar.iter_mut().enumerate() {
            for j in 0..2 {
                cell[j] += dt / 6.0 * (k1[i][j] + 2.0 * k2[i][j] + 2.0 * k3[i][j] + k4[i][j]);
            }
        }
        max_repair = max_repair.max(project(&mut state, t)?);
        let now = state.q00() < params.eps0;
        if now != idle {
            flips += 1;
            idle = now;
        }
        if step % every == 0 || step == steps {
            traj.push(t, &state.qbar);
        }
    }
    let span = steps as f64 * dt;
    Ok(FluidRun {
        trajectory: traj,
        final_state: state,
        indicator_flips: flips,
        chatter: span > 0.0 && flips as f64 / span > CHATTER_RATE,
        max_repair,
    })
}

/// Allocation probabilities of an arriving job in the large-system limit,
/// given exact-configuration fractions `q[i][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionProbs {
    pub p00_type_i: f64,
    pub p00_type_ii: f64,
    /// `busy[i][j]`: type-I arrival at a server in configuration `(i, j)`
    /// other than `(0, 0)`; `busy[0][0]` is unused and zero.
    pub busy: Vec<[f64; 2]>,
}

impl TransitionProbs {
    pub fn get(&self, config: ServerConfig, job_type: JobType) -> f64 {
        match (config.type_i, config.type_ii, job_type) {
            (0, 0, JobType::I) => self.p00_type_i,
            (0, 0, JobType::II) => self.p00_type_ii,
            (_, _, JobType::II) => 0.0,
            (i, j, JobType::I) => self
                .busy
                .get(i as usize)
                .and_then(|c| c.get(j as usize))
                .copied()
                .unwrap_or(0.0),
        }
    }

    pub fn total(&self) -> f64 {
        self.p00_type_i + self.p00_type_ii + self.busy.iter().map(|c| c[0] + c[1]).sum::<f64>()
    }
}

/// `p00(I) = 1 - (1-q00)^d`, `p00(II) = 1{q00>0}(1-q00)^d`, and, when no
/// server is idle, the probability that `(i, j)` is the smallest
/// configuration among `d` sampled servers.
pub fn transition_probs(q: &[[f64; 2]], d1: u32) -> TransitionProbs {
    let d = d1 as i32;
    let q00 = q.first().map_or(0.0, |c| c[0]);
    // tail[i] = fraction with at least i type-I jobs
    let mut tail = vec![0.0; q.len() + 1];
    for i in (0..q.len()).rev() {
        tail[i] = tail[i + 1] + q[i][0] + q[i][1];
    }
    let none_idle = q00 <= 0.0;
    let mut busy = vec![[0.0; 2]; q.len()];
    if none_idle {
        for i in 0..q.len() {
            let above = q[i][1] + tail[i + 1];
            if i >= 1 {
                busy[i][0] = tail[i].powi(d) - above.powi(d);
            }
            busy[i][1] = above.powi(d) - tail[i + 1].powi(d);
        }
    }
    let all_busy = (1.0 - q00).powi(d);
    TransitionProbs {
        p00_type_i: 1.0 - all_busy,
        p00_type_ii: if q00 > 0.0 { all_busy } else { 0.0 },
        busy,
    }
}
