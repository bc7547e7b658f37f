//! Server configurations, selection families and the allocation policy.
//!
//! A server holds `type_i` jobs that run at rate `mu1` and at most one
//! `type_ii` job that runs at rate `mu2` only while no type-I job is present
//! (preemptive priority). The cumulative counts `Q̄[i][j]` (servers with at
//! least `i` type-I jobs and exactly `j` type-II jobs) are cached and kept in
//! step with every mutation.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type ServerId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("server id {id} out of range for {n} servers")]
    InvalidServer { id: ServerId, n: usize },
    #[error("primary selection is empty")]
    EmptySelection,
    #[error("invalid selection family: {0}")]
    InvalidFamily(String),
    #[error("invalid service rates: {0}")]
    InvalidRates(String),
    #[error("server {server} has inadmissible configuration {config} (at most one type-II job)")]
    InadmissibleConfig { server: ServerId, config: ServerConfig },
    #[error("type-II job sent to server {server} with configuration {config}")]
    PolicyViolation { server: ServerId, config: ServerConfig },
    #[error("service completion at empty server {server}")]
    EmptyServer { server: ServerId },
}

/// Number of type-I and type-II jobs at one server.
///
/// The derived ordering is lexicographic in `(type_i, type_ii)`, which is the
/// order in which the policy ranks busy primary servers.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct ServerConfig {
    pub type_i: u32,
    pub type_ii: u32,
}

impl ServerConfig {
    pub const IDLE: ServerConfig = ServerConfig { type_i: 0, type_ii: 0 };

    pub const fn new(type_i: u32, type_ii: u32) -> Self {
        Self { type_i, type_ii }
    }

    pub fn is_idle(&self) -> bool {
        self.type_i == 0 && self.type_ii == 0
    }

    pub fn total(&self) -> u32 {
        self.type_i + self.type_ii
    }

    pub fn class(&self) -> ServerClass {
        if self.type_i > 0 {
            ServerClass::TypeI
        } else if self.type_ii > 0 {
            ServerClass::TypeIIOnly
        } else {
            ServerClass::Idle
        }
    }

    /// Current processing rate under preemptive priority for type-I jobs.
    pub fn service_rate(&self, rates: ServiceRates) -> f64 {
        match self.class() {
            ServerClass::TypeI => rates.mu1,
            ServerClass::TypeIIOnly => rates.mu2,
            ServerClass::Idle => 0.0,
        }
    }
}

impl std::fmt::Display for ServerConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.type_i, self.type_ii)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JobType {
    I,
    II,
}

/// What a server is currently doing; determines which service clock it is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ServerClass {
    Idle,
    TypeI,
    TypeIIOnly,
}

impl ServerClass {
    const ALL: [ServerClass; 3] = [ServerClass::Idle, ServerClass::TypeI, ServerClass::TypeIIOnly];

    fn index(self) -> usize {
        match self {
            ServerClass::Idle => 0,
            ServerClass::TypeI => 1,
            ServerClass::TypeIIOnly => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceRates {
    pub mu1: f64,
    pub mu2: f64,
}

impl ServiceRates {
    pub fn new(mu1: f64, mu2: f64) -> Result<Self, ModelError> {
        let rates = Self { mu1, mu2 };
        rates.validate()?;
        Ok(rates)
    }

    /// Requires `mu1 > mu2 > 0`, both finite.
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.mu1.is_finite() && self.mu2.is_finite()) {
            return Err(ModelError::InvalidRates("rates must be finite".into()));
        }
        if !(self.mu2 > 0.0 && self.mu1 > self.mu2) {
            return Err(ModelError::InvalidRates(format!(
                "need mu1 > mu2 > 0, got mu1={} mu2={}",
                self.mu1, self.mu2
            )));
        }
        Ok(())
    }
}

/// Set of server ids with O(1) insert, remove and uniform draw.
#[derive(Debug, Clone, Default)]
struct IndexedSet {
    members: Vec<ServerId>,
    slot: Vec<usize>,
}

impl IndexedSet {
    const ABSENT: usize = usize::MAX;

    fn with_capacity(n: usize) -> Self {
        Self { members: Vec::with_capacity(n), slot: vec![Self::ABSENT; n] }
    }

    fn insert(&mut self, id: ServerId) {
        debug_assert_eq!(self.slot[id], Self::ABSENT);
        self.slot[id] = self.members.len();
        self.members.push(id);
    }

    fn remove(&mut self, id: ServerId) {
        let at = self.slot[id];
        debug_assert_ne!(at, Self::ABSENT);
        let last = self.members.pop().expect("nonempty");
        if last != id {
            self.members[at] = last;
            self.slot[last] = at;
        }
        self.slot[id] = Self::ABSENT;
    }
}

/// Full system state: one configuration per server plus cached counts.
#[derive(Debug, Clone)]
pub struct OccupancyState {
    configs: Vec<ServerConfig>,
    /// `cumulative[j][i]` = number of servers with at least `i` type-I jobs
    /// and exactly `j` type-II jobs.
    cumulative: [Vec<usize>; 2],
    classes: [IndexedSet; 3],
}

impl OccupancyState {
    /// All `n` servers idle.
    pub fn empty(n: usize) -> Self {
        Self::build(vec![ServerConfig::IDLE; n])
    }

    /// Every server holds exactly one type-II job.
    pub fn all_one_type_ii(n: usize) -> Self {
        Self::build(vec![ServerConfig::new(0, 1); n])
    }

    /// Explicit admissible state: at most one type-II job per server.
    pub fn from_configs(configs: Vec<ServerConfig>) -> Result<Self, ModelError> {
        if let Some((server, &config)) = configs.iter().enumerate().find(|(_, c)| c.type_ii > 1) {
            return Err(ModelError::InadmissibleConfig { server, config });
        }
        Ok(Self::build(configs))
    }

    fn build(configs: Vec<ServerConfig>) -> Self {
        let n = configs.len();
        let cumulative = cumulative_from_configs(&configs);
        let mut classes = [
            IndexedSet::with_capacity(n),
            IndexedSet::with_capacity(n),
            IndexedSet::with_capacity(n),
        ];
        for (id, c) in configs.iter().enumerate() {
            classes[c.class().index()].insert(id);
        }
        Self { configs, cumulative, classes }
    }

    pub fn n_servers(&self) -> usize {
        self.configs.len()
    }

    pub fn configs(&self) -> &[ServerConfig] {
        &self.configs
    }

    pub fn config(&self, id: ServerId) -> Result<ServerConfig, ModelError> {
        self.configs
            .get(id)
            .copied()
            .ok_or(ModelError::InvalidServer { id, n: self.configs.len() })
    }

    /// `Q̄[i][j]`; zero above the highest occupied level.
    pub fn cumulative(&self, i: usize, j: usize) -> usize {
        self.cumulative
            .get(j)
            .and_then(|col| col.get(i))
            .copied()
            .unwrap_or(0)
    }

    /// Cached column `Q̄[.][j]` for `j` in `{0, 1}`, trimmed of trailing zeros
    /// except level 0.
    pub fn cumulative_column(&self, j: usize) -> &[usize] {
        &self.cumulative[j]
    }

    /// Recomputes the cumulative counts from the configurations and compares
    /// them with the cache.
    pub fn cache_is_consistent(&self) -> bool {
        let fresh = cumulative_from_configs(&self.configs);
        let classes_ok = ServerClass::ALL.iter().all(|&class| {
            let set = &self.classes[class.index()];
            set.members.iter().all(|&id| self.configs[id].class() == class)
                && set.members.len()
                    == self.configs.iter().filter(|c| c.class() == class).count()
        });
        fresh == self.cumulative && classes_ok
    }

    pub fn servers_in(&self, class: ServerClass) -> &[ServerId] {
        &self.classes[class.index()].members
    }

    pub fn count_in(&self, class: ServerClass) -> usize {
        self.classes[class.index()].members.len()
    }

    pub fn total_jobs(&self) -> u64 {
        self.configs.iter().map(|c| u64::from(c.total())).sum()
    }

    pub fn total_type_i(&self) -> u64 {
        self.configs.iter().map(|c| u64::from(c.type_i)).sum()
    }

    pub fn total_type_ii(&self) -> u64 {
        self.configs.iter().map(|c| u64::from(c.type_ii)).sum()
    }

    /// Fluid-scaled cumulative fractions `Q̄[i][j] / N` for `i <= i_max`.
    pub fn fractions(&self, i_max: usize) -> Vec<[f64; 2]> {
        let n = self.n_servers().max(1) as f64;
        (0..=i_max)
            .map(|i| [self.cumulative(i, 0) as f64 / n, self.cumulative(i, 1) as f64 / n])
            .collect()
    }

    pub fn service_rate(&self, id: ServerId, rates: ServiceRates) -> Result<f64, ModelError> {
        Ok(self.config(id)?.service_rate(rates))
    }

    fn check_id(&self, id: ServerId) -> Result<(), ModelError> {
        if id < self.configs.len() {
            Ok(())
        } else {
            Err(ModelError::InvalidServer { id, n: self.configs.len() })
        }
    }

    fn set_config(&mut self, id: ServerId, new: ServerConfig) {
        let old = self.configs[id];
        let col = &mut self.cumulative[old.type_ii as usize];
        for level in 0..=old.type_i as usize {
            col[level] -= 1;
        }
        while col.len() > 1 && col.last() == Some(&0) {
            col.pop();
        }
        let col = &mut self.cumulative[new.type_ii as usize];
        if col.len() <= new.type_i as usize {
            col.resize(new.type_i as usize + 1, 0);
        }
        for level in 0..=new.type_i as usize {
            col[level] += 1;
        }
        if old.class() != new.class() {
            self.classes[old.class().index()].remove(id);
            self.classes[new.class().index()].insert(id);
        }
        self.configs[id] = new;
    }
}

fn cumulative_from_configs(configs: &[ServerConfig]) -> [Vec<usize>; 2] {
    let mut exact: [Vec<usize>; 2] = [vec![0], vec![0]];
    for c in configs {
        let col = &mut exact[c.type_ii as usize];
        if col.len() <= c.type_i as usize {
            col.resize(c.type_i as usize + 1, 0);
        }
        col[c.type_i as usize] += 1;
    }
    for col in exact.iter_mut() {
        for i in (0..col.len().saturating_sub(1)).rev() {
            col[i] += col[i + 1];
        }
    }
    exact
}

/// Result of the allocation decision for one arriving job.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Allocation {
    pub server: ServerId,
    pub job_type: JobType,
}

/// Decides where an arriving job with the given primary selection goes.
///
/// 1. an idle primary server receives it as type I;
/// 2. otherwise an idle secondary server receives it as type II;
/// 3. otherwise the primary server with the fewest type-I jobs, ties broken
///    by fewer type-II jobs, receives it as type I.
///
/// Remaining ties are broken uniformly at random. The state is not modified.
pub fn allocate<R: Rng + ?Sized>(
    state: &OccupancyState,
    primary: &[ServerId],
    rng: &mut R,
) -> Result<Allocation, ModelError> {
    if primary.is_empty() {
        return Err(ModelError::EmptySelection);
    }
    for &id in primary {
        state.check_id(id)?;
    }

    let mut idle_seen = 0u32;
    let mut idle_pick = None;
    for &id in primary {
        if state.configs[id].is_idle() {
            idle_seen += 1;
            if rng.random_range(0..idle_seen) == 0 {
                idle_pick = Some(id);
            }
        }
    }
    if let Some(server) = idle_pick {
        return Ok(Allocation { server, job_type: JobType::I });
    }

    // No primary server is idle, so every idle server is secondary.
    if let Some(&server) = state.servers_in(ServerClass::Idle).choose(rng) {
        return Ok(Allocation { server, job_type: JobType::II });
    }

    let mut best = ServerConfig::new(u32::MAX, u32::MAX);
    let mut ties = 0u32;
    let mut pick = primary[0];
    for &id in primary {
        let c = state.configs[id];
        if c < best {
            best = c;
            ties = 1;
            pick = id;
        } else if c == best {
            ties += 1;
            if rng.random_range(0..ties) == 0 {
                pick = id;
            }
        }
    }
    Ok(Allocation { server: pick, job_type: JobType::I })
}

/// Adds one job of `job_type` at `server`.
///
/// A type-II job may only join a completely idle server; anything else means
/// the caller bypassed [`allocate`].
pub fn apply_arrival(
    state: &mut OccupancyState,
    server: ServerId,
    job_type: JobType,
) -> Result<(), ModelError> {
    let config = state.config(server)?;
    let next = match job_type {
        JobType::I => ServerConfig::new(config.type_i + 1, config.type_ii),
        JobType::II => {
            if !config.is_idle() {
                return Err(ModelError::PolicyViolation { server, config });
            }
            ServerConfig::new(0, 1)
        }
    };
    state.set_config(server, next);
    Ok(())
}

/// Completes the job in service at `server`: a type-I job if any is present,
/// else the type-II job.
pub fn complete_service(state: &mut OccupancyState, server: ServerId) -> Result<JobType, ModelError> {
    let config = state.config(server)?;
    let (next, done) = match config.class() {
        ServerClass::TypeI => (ServerConfig::new(config.type_i - 1, config.type_ii), JobType::I),
        ServerClass::TypeIIOnly => (ServerConfig::new(0, config.type_ii - 1), JobType::II),
        ServerClass::Idle => return Err(ModelError::EmptyServer { server }),
    };
    state.set_config(server, next);
    Ok(done)
}

/// One primary selection and its arrival rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub servers: Vec<ServerId>,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FamilyVariant {
    /// Arbitrary explicit selections with individual rates.
    General,
    /// One closed neighborhood per node, each at the same rate.
    Graph { adjacency: Vec<Vec<ServerId>> },
    /// All `C(N, d)` subsets of size `d`, never materialized.
    Combinatorial { d: usize },
}

/// The set of primary selections with their arrival rates.
#[derive(Debug, Clone)]
pub struct SelectionFamily {
    n_servers: usize,
    variant: FamilyVariant,
    selections: Vec<Selection>,
    /// Per-server rate for graph and combinatorial families.
    lambda: Option<f64>,
    total_rate: f64,
    cumulative_rates: Vec<f64>,
}

impl SelectionFamily {
    pub fn general(n_servers: usize, selections: Vec<Selection>) -> Result<Self, ModelError> {
        if n_servers == 0 {
            return Err(ModelError::InvalidFamily("no servers".into()));
        }
        let selections = selections
            .into_iter()
            .map(|s| normalize_selection(n_servers, s))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::explicit(n_servers, FamilyVariant::General, selections, None))
    }

    /// Graph family: node `v` contributes its closed neighborhood at rate
    /// `lambda`. `adjacency[v]` lists the neighbors of `v`.
    pub fn graph(adjacency: Vec<Vec<ServerId>>, lambda: f64) -> Result<Self, ModelError> {
        let n = adjacency.len();
        if n == 0 {
            return Err(ModelError::InvalidFamily("empty graph".into()));
        }
        check_rate(lambda)?;
        let mut selections = Vec::with_capacity(n);
        for (v, nbrs) in adjacency.iter().enumerate() {
            let mut servers = Vec::with_capacity(nbrs.len() + 1);
            servers.push(v);
            servers.extend_from_slice(nbrs);
            selections.push(normalize_selection(n, Selection { servers, rate: lambda })?);
        }
        Ok(Self::explicit(n, FamilyVariant::Graph { adjacency }, selections, Some(lambda)))
    }

    /// Combinatorial family: each arrival picks `d` of `n_servers` uniformly;
    /// total rate `lambda * n_servers`.
    pub fn combinatorial(n_servers: usize, d: usize, lambda: f64) -> Result<Self, ModelError> {
        if d == 0 || d > n_servers {
            return Err(ModelError::InvalidFamily(format!(
                "selection size d={d} must lie in 1..={n_servers}"
            )));
        }
        check_rate(lambda)?;
        Ok(Self {
            n_servers,
            variant: FamilyVariant::Combinatorial { d },
            selections: Vec::new(),
            lambda: Some(lambda),
            total_rate: lambda * n_servers as f64,
            cumulative_rates: Vec::new(),
        })
    }

    fn explicit(
        n_servers: usize,
        variant: FamilyVariant,
        selections: Vec<Selection>,
        lambda: Option<f64>,
    ) -> Self {
        let mut acc = 0.0;
        let cumulative_rates = selections
            .iter()
            .map(|s| {
                acc += s.rate;
                acc
            })
            .collect();
        Self { n_servers, variant, selections, lambda, total_rate: acc, cumulative_rates }
    }

    pub fn n_servers(&self) -> usize {
        self.n_servers
    }

    pub fn variant(&self) -> &FamilyVariant {
        &self.variant
    }

    /// Explicit selections; empty for the combinatorial family.
    pub fn selections(&self) -> &[Selection] {
        &self.selections
    }

    pub fn total_rate(&self) -> f64 {
        self.total_rate
    }

    /// Per-server rate `lambda` of graph and combinatorial families.
    pub fn lambda(&self) -> Option<f64> {
        self.lambda
    }

    /// Rate `nu = lambda N / C(N, d)` of one combinatorial selection.
    pub fn combinatorial_selection_rate(&self) -> Option<f64> {
        match self.variant {
            FamilyVariant::Combinatorial { d } => {
                let ln_count = crate::binom::ln_binomial(self.n_servers as u64, d as u64);
                Some((self.total_rate.ln() - ln_count).exp())
            }
            _ => None,
        }
    }

    pub(crate) fn cumulative_rates(&self) -> &[f64] {
        &self.cumulative_rates
    }
}

fn check_rate(rate: f64) -> Result<(), ModelError> {
    if rate.is_finite() && rate >= 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidFamily(format!("rate {rate} must be finite and nonnegative")))
    }
}

fn normalize_selection(n: usize, mut s: Selection) -> Result<Selection, ModelError> {
    check_rate(s.rate)?;
    if s.servers.is_empty() {
        return Err(ModelError::EmptySelection);
    }
    if let Some(&id) = s.servers.iter().find(|&&id| id >= n) {
        return Err(ModelError::InvalidServer { id, n });
    }
    s.servers.sort_unstable();
    s.servers.dedup();
    Ok(s)
}
