//! Event-driven simulation of the affinity-scheduling Markov chain.
//!
//! One aggregate arrival clock runs at the family's total rate. Departures
//! use two aggregate clocks: `mu1` times the number of servers working on a
//! type-I job, and `mu2` times the number of servers working on their type-II
//! job. The firing server is drawn uniformly from the matching class, which
//! reproduces independent exponential service clocks exactly.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    allocate, apply_arrival, complete_service, FamilyVariant, JobType, ModelError,
    OccupancyState, SelectionFamily, ServerClass, ServerConfig, ServerId, ServiceRates,
};
use crate::rng::{self, SimRng};
use crate::trajectory::Trajectory;

pub const DEFAULT_I_MAX: usize = 12;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Empty,
    AllOneTypeII,
    Explicit(Vec<ServerConfig>),
}

impl InitialState {
    pub fn build(&self, n: usize) -> Result<OccupancyState, SimError> {
        match self {
            InitialState::Empty => Ok(OccupancyState::empty(n)),
            InitialState::AllOneTypeII => Ok(OccupancyState::all_one_type_ii(n)),
            InitialState::Explicit(configs) => {
                if configs.len() != n {
                    return Err(SimError::Config(format!(
                        "initial state lists {} servers, family has {n}",
                        configs.len()
                    )));
                }
                Ok(OccupancyState::from_configs(configs.clone())?)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub family: SelectionFamily,
    pub rates: ServiceRates,
    pub horizon: f64,
    pub seed: u64,
    pub sample_dt: f64,
    pub initial: InitialState,
    pub i_max: usize,
}

impl SimConfig {
    pub fn new(family: SelectionFamily, rates: ServiceRates) -> Self {
        Self {
            family,
            rates,
            horizon: 100.0,
            seed: 0,
            sample_dt: 0.1,
            initial: InitialState::Empty,
            i_max: DEFAULT_I_MAX,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.rates.validate()?;
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(SimError::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.sample_dt.is_finite() && self.sample_dt > 0.0) {
            return Err(SimError::Config(format!("sample_dt must be positive, got {}", self.sample_dt)));
        }
        if !self.family.total_rate().is_finite() {
            return Err(SimError::Config("total arrival rate is not finite".into()));
        }
        Ok(())
    }
}

/// Draws a primary selection into `out`.
///
/// General families pick a selection with probability proportional to its
/// rate, graph families pick a node uniformly and return its closed
/// neighborhood, and combinatorial families return a uniform `d`-subset.
pub fn sample_selection_into<R: Rng + ?Sized>(
    family: &SelectionFamily,
    rng: &mut R,
    out: &mut Vec<ServerId>,
) {
    out.clear();
    match family.variant() {
        FamilyVariant::Combinatorial { d } => {
            out.extend(rand::seq::index::sample(rng, family.n_servers(), *d).iter());
        }
        FamilyVariant::Graph { .. } => {
            let v = rng.random_range(0..family.n_servers());
            out.extend_from_slice(&family.selections()[v].servers);
        }
        FamilyVariant::General => {
            let cum = family.cumulative_rates();
            let total = family.total_rate();
            let target = rng.random::<f64>() * total;
            let k = cum.partition_point(|&c| c <= target).min(cum.len() - 1);
            out.extend_from_slice(&family.selections()[k].servers);
        }
    }
}

pub fn sample_selection<R: Rng + ?Sized>(family: &SelectionFamily, rng: &mut R) -> Vec<ServerId> {
    let mut out = Vec::new();
    sample_selection_into(family, rng, &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    Arrival { server: ServerId, job_type: JobType },
    Completion { server: ServerId, job_type: JobType },
}

/// Counters and time integrals accumulated over a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub horizon: f64,
    pub events: u64,
    pub arrivals_type_i: u64,
    pub arrivals_type_ii: u64,
    pub completions_type_i: u64,
    pub completions_type_ii: u64,
    /// Time average of the total number of type-I jobs.
    pub mean_type_i_jobs: f64,
    /// Time average of the total number of type-II jobs.
    pub mean_type_ii_jobs: f64,
    pub final_fractions: Vec<[f64; 2]>,
}

/// Stepwise driver over one sample path.
pub struct Simulator {
    family: SelectionFamily,
    rates: ServiceRates,
    state: OccupancyState,
    rng: SimRng,
    time: f64,
    selection: Vec<ServerId>,
}

impl Simulator {
    pub fn new(config: &SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let state = config.initial.build(config.family.n_servers())?;
        Ok(Self {
            family: config.family.clone(),
            rates: config.rates,
            state,
            rng: rng::stream(config.seed, rng::streams::SIMULATION),
            time: 0.0,
            selection: Vec::new(),
        })
    }

    pub fn state(&self) -> &OccupancyState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    fn departure_rates(&self) -> (f64, f64) {
        (
            self.rates.mu1 * self.state.count_in(ServerClass::TypeI) as f64,
            self.rates.mu2 * self.state.count_in(ServerClass::TypeIIOnly) as f64,
        )
    }

    pub fn total_rate(&self) -> f64 {
        let (d1, d2) = self.departure_rates();
        self.family.total_rate() + d1 + d2
    }

    /// Time of the next event, or `None` when nothing can happen.
    pub fn next_event_time(&mut self) -> Option<f64> {
        let rate = self.total_rate();
        if rate <= 0.0 {
            return None;
        }
        let e: f64 = Exp1.sample(&mut self.rng);
        Some(self.time + e / rate)
    }

    /// Applies one event at time `t` (from [`Simulator::next_event_time`]).
    pub fn fire(&mut self, t: f64) -> Result<Event, SimError> {
        self.time = t;
        let arrivals = self.family.total_rate();
        let (dep1, dep2) = self.departure_rates();
        let u = self.rng.random::<f64>() * (arrivals + dep1 + dep2);
        if u < arrivals {
            let mut selection = std::mem::take(&mut self.selection);
            sample_selection_into(&self.family, &mut self.rng, &mut selection);
            let alloc = allocate(&self.state, &selection, &mut self.rng);
            self.selection = selection;
            let alloc = alloc?;
            apply_arrival(&mut self.state, alloc.server, alloc.job_type)?;
            return Ok(Event::Arrival { server: alloc.server, job_type: alloc.job_type });
        }
        let class = if u < arrivals + dep1 || dep2 == 0.0 {
            ServerClass::TypeI
        } else {
            ServerClass::TypeIIOnly
        };
        let server = *self
            .state
            .servers_in(class)
            .choose(&mut self.rng)
            .expect("class with positive rate is nonempty");
        let job_type = complete_service(&mut self.state, server)?;
        Ok(Event::Completion { server, job_type })
    }
}

/// Runs one sample path and returns the fluid-scaled trajectory sampled every
/// `sample_dt` on `[0, horizon]`.
pub fn run(config: &SimConfig) -> Result<Trajectory, SimError> {
    run_with_summary(config).map(|(traj, _)| traj)
}

pub fn run_with_summary(config: &SimConfig) -> Result<(Trajectory, RunSummary), SimError> {
    let mut sim = Simulator::new(config)?;
    let mut traj = Trajectory::new(config.i_max);
    let mut summary = RunSummary { horizon: config.horizon, ..Default::default() };
    let mut next_sample = 0u64;
    let sample_time = |k: u64| k as f64 * config.sample_dt;
    let mut type_i_area = 0.0;
    let mut type_ii_area = 0.0;
    let mut type_i = sim.state.total_type_i() as f64;
    let mut type_ii = sim.state.total_type_ii() as f64;

    loop {
        let t_next = sim.next_event_time().unwrap_or(f64::INFINITY);
        let until = t_next.min(config.horizon);
        while sample_time(next_sample) <= until {
            traj.push(sample_time(next_sample), &sim.state.fractions(config.i_max));
            next_sample += 1;
        }
        type_i_area += type_i * (until - sim.time);
        type_ii_area += type_ii * (until - sim.time);
        if t_next > config.horizon {
            break;
        }
        match sim.fire(t_next)? {
            Event::Arrival { job_type: JobType::I, .. } => {
                summary.arrivals_type_i += 1;
                type_i += 1.0;
            }
            Event::Arrival { job_type: JobType::II, .. } => {
                summary.arrivals_type_ii += 1;
                type_ii += 1.0;
            }
            Event::Completion { job_type: JobType::I, .. } => {
                summary.completions_type_i += 1;
                type_i -= 1.0;
            }
            Event::Completion { job_type: JobType::II, .. } => {
                summary.completions_type_ii += 1;
                type_ii -= 1.0;
            }
        }
        summary.events += 1;
    }
    summary.mean_type_i_jobs = type_i_area / config.horizon;
    summary.mean_type_ii_jobs = type_ii_area / config.horizon;
    summary.final_fractions = sim.state.fractions(config.i_max);
    Ok((traj, summary))
}

/// Independent replications of `base` under the given seeds, run in
/// parallel. Results are returned in seed order.
pub fn run_replications(
    base: &SimConfig,
    seeds: &[u64],
) -> Vec<Result<(Trajectory, RunSummary), SimError>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut cfg = base.clone();
            cfg.seed = seed;
            run_with_summary(&cfg)
        })
        .collect()
}

/// Key of an allocation outcome: configuration of the receiving server before
/// the arrival, and the type assigned to the job.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AllocationKey {
    pub config: ServerConfig,
    pub job_type: JobType,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AllocationFrequencies {
    pub arrivals: u64,
    pub counts: BTreeMap<AllocationKey, u64>,
}

impl AllocationFrequencies {
    pub fn frequency(&self, config: ServerConfig, job_type: JobType) -> f64 {
        let c = self.counts.get(&AllocationKey { config, job_type }).copied().unwrap_or(0);
        c as f64 / self.arrivals.max(1) as f64
    }
}

/// Replays `n_arrivals` independent arrivals against a frozen state and
/// tallies where they would be placed.
pub fn empirical_allocation_frequencies(
    state: &OccupancyState,
    family: &SelectionFamily,
    n_arrivals: u64,
    seed: u64,
) -> Result<AllocationFrequencies, SimError> {
    if family.n_servers() != state.n_servers() {
        return Err(SimError::Config(format!(
            "family has {} servers, state has {}",
            family.n_servers(),
            state.n_servers()
        )));
    }
    if family.total_rate() <= 0.0 && !matches!(family.variant(), FamilyVariant::Combinatorial { .. }) {
        return Err(SimError::Config("family has no positive-rate selection".into()));
    }
    let mut rng = rng::stream(seed, rng::streams::FROZEN_REPLAY);
    let mut out = AllocationFrequencies { arrivals: n_arrivals, counts: BTreeMap::new() };
    let mut selection = Vec::new();
    for _ in 0..n_arrivals {
        sample_selection_into(family, &mut rng, &mut selection);
        let a = allocate(state, &selection, &mut rng)?;
        let key = AllocationKey { config: state.configs()[a.server], job_type: a.job_type };
        *out.counts.entry(key).or_default() += 1;
    }
    Ok(out)
}
