//! Sample-path couplings between the affinity system and a reference system.
//!
//! Both systems are viewed through their ordered server states: position 1
//! holds the least loaded server. The affinity side is ordered by
//! `(type_i, type_ii)` and keeps its concrete servers, because allocation
//! depends on which servers form a selection. The reference side is a sorted
//! vector of queue lengths.
//!
//! Type-I service completions are coupled on one clock of rate `mu1 N`.
//! Arrivals are coupled per policy:
//!
//! * RA: potential arrivals at rate `lambda0 N` land at a uniform position in
//!   the reference system and are thinned into arrivals of the affinity
//!   system by the optimal split.
//! * MJSQ(k): every arrival joins position `k + 1` in the reference system
//!   and a uniform closed neighborhood in the affinity system.
//! * JSQ(k): one uniform draw is pushed through the step functions
//!   `f_aff` and `f_ref`; the affinity selection is the worst-case block of
//!   `d + 1` consecutive positions starting at `n_aff`.
//!
//! Type-II completions run on their own `mu2 N` clock and never touch the
//! reference system.

use std::fmt;
use std::io::Write;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::binom::binomial;
use crate::graph::Adjacency;
use crate::model::{
    allocate, apply_arrival, complete_service, Allocation, JobType, ModelError, OccupancyState,
    SelectionFamily, ServerClass, ServerConfig, ServerId, ServiceRates,
};
use crate::rng::{self, streams};
use crate::stability::{self, SplitSolution, StabilityError};

/// Slack allowed when comparing a server load with `lambda0`.
pub const LOAD_TOL: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CouplingError {
    #[error("invalid coupling configuration: {0}")]
    Config(String),
    #[error("coupling consistency violated: {0}")]
    Consistency(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
}

/// Nondecreasing step function on positions `1..=N`, stored as exact
/// fractions `numerator / denominator` alongside their rounded values.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    numerators: Vec<BigUint>,
    denominator: BigUint,
    values: Vec<f64>,
}

impl StepFunction {
    fn from_fractions(numerators: Vec<BigUint>, denominator: BigUint) -> Self {
        let den = BigInt::from(denominator.clone());
        let values = numerators
            .iter()
            .map(|num| {
                BigRational::new(BigInt::from(num.clone()), den.clone())
                    .to_f64()
                    .expect("ratio in [0, 1]")
            })
            .collect();
        Self { numerators, denominator, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `f(x)` for a 1-based position `x`.
    pub fn value(&self, x: usize) -> f64 {
        self.values[x - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Smallest position `n` with `f(n) >= u`.
    pub fn inverse(&self, u: f64) -> usize {
        self.values.partition_point(|&v| v < u).min(self.values.len() - 1) + 1
    }

    /// Exact pointwise comparison `self(n) >= other(n)` for all `n`.
    pub fn dominates(&self, other: &StepFunction) -> bool {
        self.len() == other.len()
            && self.numerators.iter().zip(&other.numerators).all(|(a, b)| {
                a * &other.denominator >= b * &self.denominator
            })
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.numerators.windows(2).all(|w| w[0] <= w[1])
            && self.numerators.last() == Some(&self.denominator)
    }
}

/// Distribution of the lowest position among `k` uniformly chosen servers:
/// `f_ref(x) = sum_{i<=x} C(N-i, k-1) / C(N, k)`.
pub fn build_f_ref(n: usize, k: usize) -> Result<StepFunction, CouplingError> {
    if !(1..=n).contains(&k) {
        return Err(CouplingError::Config(format!("need 1 <= k <= N, got N={n} k={k}")));
    }
    let (n64, k64) = (n as u64, k as u64);
    let mut acc = BigUint::zero();
    let numerators = (1..=n64)
        .map(|x| {
            if x <= n64 - k64 + 1 {
                acc += binomial(n64 - x, k64 - 1);
            }
            acc.clone()
        })
        .collect();
    Ok(StepFunction::from_fractions(numerators, binomial(n64, k64)))
}

/// Worst-case block stacking for the closed neighborhoods of a `d`-regular
/// graph. Each position is the lowest member of at most `d + 1` selections;
/// `d + 1` blocks start at position 1 and the remaining `N - d - 1` are pushed
/// as high as possible, `d + 1` per position downward from `N - d`:
/// `f_aff(x) = max((d+1)/N, 1 - (d+1)(N-d-x)/N)` for `x < N - d`, else 1.
pub fn build_f_aff(n: usize, d: usize) -> Result<StepFunction, CouplingError> {
    if !(1..n).contains(&d) {
        return Err(CouplingError::Config(format!("need 1 <= d < N, got N={n} d={d}")));
    }
    let numerators = (1..=n)
        .map(|x| {
            let num = if x >= n - d {
                n
            } else {
                n.saturating_sub((d + 1) * (n - d - x)).max(d + 1)
            };
            BigUint::from(num)
        })
        .collect();
    Ok(StepFunction::from_fractions(numerators, BigUint::from(n)))
}

/// Tail-sum comparison `sum_{i>=m} aff_i <= sum_{i>=m} ref_i` for all
/// `m >= 1`, where `aff[i]` and `ref[i]` count servers with at least `i`
/// jobs (index 0 is ignored).
pub fn majorized_cumulative(aff: &[usize], reference: &[usize]) -> bool {
    let top = aff.len().max(reference.len());
    let (mut sa, mut sr) = (0usize, 0usize);
    for m in (1..top).rev() {
        sa += aff.get(m).copied().unwrap_or(0);
        sr += reference.get(m).copied().unwrap_or(0);
        if sa > sr {
            return false;
        }
    }
    true
}

/// [`majorized_cumulative`] for per-server job counts.
pub fn check_majorization(aff: &[u32], reference: &[u32]) -> bool {
    majorized_cumulative(&cumulative_counts(aff), &cumulative_counts(reference))
}

/// `Q̄_i` = number of entries `>= i`, for `i = 0..=max`.
pub fn cumulative_counts(levels: &[u32]) -> Vec<usize> {
    let top = levels.iter().copied().max().unwrap_or(0) as usize;
    let mut cum = vec![0usize; top + 1];
    for &v in levels {
        cum[v as usize] += 1;
    }
    for i in (0..top).rev() {
        cum[i] += cum[i + 1];
    }
    cum
}

/// Level at ordered position `n` (1-based): `max{ j : Q̄_j >= N - n + 1 }`
/// with `N = Q̄_0`.
pub fn position_index(cumulative: &[usize], n: usize) -> usize {
    let total = cumulative.first().copied().unwrap_or(0);
    assert!((1..=total).contains(&n), "position {n} outside 1..={total}");
    cumulative.iter().rposition(|&q| q > total - n).unwrap_or(0)
}

/// Effect of one potential type-I service completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServiceOutcome {
    /// Departure at the same 1-based position in both systems.
    Both(usize),
    AffOnly(usize),
    RefOnly(usize),
    None,
}

/// Effect of one (potential) arrival.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArrivalOutcome {
    /// Reference insertion position, `None` when the reference system sees
    /// no arrival.
    pub pos_ref: Option<usize>,
    /// Affinity allocation, `None` for a thinned-out potential arrival.
    pub allocation: Option<Allocation>,
    /// First position holding the receiving server's configuration before a
    /// type-I arrival.
    pub pos_aff: Option<usize>,
}

impl ArrivalOutcome {
    /// Whether the type-I insertion sits at or below the reference insertion.
    pub fn ordered(&self) -> bool {
        match (self.pos_aff, self.pos_ref) {
            (Some(a), Some(r)) => a <= r,
            (Some(_), None) => false,
            _ => true,
        }
    }
}

/// Joint state of the affinity system and the reference system.
#[derive(Debug, Clone)]
pub struct CoupledState {
    aff: OccupancyState,
    /// `order[p]` is the server at 0-based position `p`.
    order: Vec<ServerId>,
    position: Vec<usize>,
    ref_q: Vec<u32>,
    /// `ref_cum[i]`: reference servers with at least `i` jobs.
    ref_cum: Vec<usize>,
    ref_total: u64,
}

impl CoupledState {
    pub fn empty(n: usize) -> Self {
        Self {
            aff: OccupancyState::empty(n),
            order: (0..n).collect(),
            position: (0..n).collect(),
            ref_q: vec![0; n],
            ref_cum: vec![n],
            ref_total: 0,
        }
    }

    pub fn n_servers(&self) -> usize {
        self.order.len()
    }

    pub fn aff(&self) -> &OccupancyState {
        &self.aff
    }

    /// Affinity configurations in position order.
    pub fn aff_ordered(&self) -> Vec<ServerConfig> {
        self.order.iter().map(|&s| self.aff.configs()[s]).collect()
    }

    /// Server at 1-based position `pos`.
    pub fn aff_server_at(&self, pos: usize) -> ServerId {
        self.order[pos - 1]
    }

    /// 1-based position of `server`.
    pub fn aff_position_of(&self, server: ServerId) -> usize {
        self.position[server] + 1
    }

    pub fn ref_ordered(&self) -> &[u32] {
        &self.ref_q
    }

    pub fn ref_total(&self) -> u64 {
        self.ref_total
    }

    /// Servers with at least `i` type-I jobs, `i = 0, 1, ...`.
    pub fn aff_cumulative(&self) -> Vec<usize> {
        let (c0, c1) = (self.aff.cumulative_column(0), self.aff.cumulative_column(1));
        let top = c0.len().max(c1.len());
        let mut cum: Vec<usize> = (0..top)
            .map(|i| c0.get(i).copied().unwrap_or(0) + c1.get(i).copied().unwrap_or(0))
            .collect();
        while cum.len() > 1 && cum.last() == Some(&0) {
            cum.pop();
        }
        cum
    }

    pub fn ref_cumulative(&self) -> &[usize] {
        &self.ref_cum
    }

    pub fn check_majorization(&self) -> bool {
        majorized_cumulative(&self.aff_cumulative(), &self.ref_cum)
    }

    /// Both orderings hold and the position map is a consistent permutation.
    pub fn is_consistent(&self) -> bool {
        let configs = self.aff.configs();
        self.order.windows(2).all(|w| configs[w[0]] <= configs[w[1]])
            && self.order.iter().enumerate().all(|(p, &s)| self.position[s] == p)
            && self.ref_q.windows(2).all(|w| w[0] <= w[1])
            && cumulative_counts(&self.ref_q) == self.ref_cum
            && self.aff.cache_is_consistent()
    }

    fn config_at(&self, p: usize) -> ServerConfig {
        self.aff.configs()[self.order[p]]
    }

    /// Moves `server` to restore the ordering after its configuration changed.
    fn reposition(&mut self, server: ServerId) {
        let c = self.aff.configs()[server];
        let mut p = self.position[server];
        while p + 1 < self.order.len() && self.config_at(p + 1) < c {
            self.swap(p, p + 1);
            p += 1;
        }
        while p > 0 && self.config_at(p - 1) > c {
            self.swap(p, p - 1);
            p -= 1;
        }
    }

    fn swap(&mut self, a: usize, b: usize) {
        self.order.swap(a, b);
        self.position[self.order[a]] = a;
        self.position[self.order[b]] = b;
    }

    /// One job joins the reference server at 0-based position `p`. The last
    /// entry with the same length is incremented, which keeps the vector
    /// sorted and yields the same ordered state.
    fn ref_insert(&mut self, p: usize) {
        let v = self.ref_q[p];
        let j = self.ref_q.partition_point(|&x| x <= v) - 1;
        self.ref_q[j] += 1;
        let level = v as usize + 1;
        if self.ref_cum.len() <= level {
            self.ref_cum.push(0);
        }
        self.ref_cum[level] += 1;
        self.ref_total += 1;
    }

    /// One job leaves the reference server at 0-based position `p`; the
    /// first entry with the same length is decremented.
    fn ref_remove(&mut self, p: usize) {
        let v = self.ref_q[p];
        debug_assert!(v > 0);
        let j = self.ref_q.partition_point(|&x| x < v);
        self.ref_q[j] -= 1;
        self.ref_cum[v as usize] -= 1;
        while self.ref_cum.len() > 1 && self.ref_cum.last() == Some(&0) {
            self.ref_cum.pop();
        }
        self.ref_total -= 1;
    }

    fn aff_complete_at(&mut self, p: usize) -> Result<(), CouplingError> {
        let server = self.order[p];
        complete_service(&mut self.aff, server)?;
        self.reposition(server);
        Ok(())
    }

    /// Allocates in the affinity system and returns the allocation with the
    /// 1-based first position of the receiving configuration for type I.
    fn aff_arrive<R: Rng + ?Sized>(
        &mut self,
        primary: &[ServerId],
        rng: &mut R,
    ) -> Result<(Allocation, Option<usize>), CouplingError> {
        let alloc = allocate(&self.aff, primary, rng)?;
        let pos = (alloc.job_type == JobType::I).then(|| {
            let c = self.aff.configs()[alloc.server];
            self.order.partition_point(|&s| self.aff.configs()[s] < c) + 1
        });
        apply_arrival(&mut self.aff, alloc.server, alloc.job_type)?;
        self.reposition(alloc.server);
        Ok((alloc, pos))
    }

    /// Potential type-I completion driven by `x` (branch) and `u` (position).
    pub fn service_step(&mut self, x: f64, u: f64) -> Result<ServiceOutcome, CouplingError> {
        let n = self.n_servers();
        let w_aff = n - self.aff.count_in(ServerClass::Idle) - self.aff.count_in(ServerClass::TypeIIOnly);
        let w_ref = self.ref_cum.get(1).copied().unwrap_or(0);
        let w = w_aff.min(w_ref);
        let wmax = w_aff.max(w_ref);
        let pick = |lo: usize, len: usize| lo + ((u * len as f64) as usize).min(len - 1);
        // active positions are the top |W_P| ones
        if x * (n as f64) <= w as f64 && w > 0 {
            let p = pick(n - w, w);
            self.aff_complete_at(p)?;
            self.ref_remove(p);
            Ok(ServiceOutcome::Both(p + 1))
        } else if x * (n as f64) <= wmax as f64 && wmax > w {
            let p = pick(n - wmax, wmax - w);
            if w_aff > w_ref {
                self.aff_complete_at(p)?;
                Ok(ServiceOutcome::AffOnly(p + 1))
            } else {
                self.ref_remove(p);
                Ok(ServiceOutcome::RefOnly(p + 1))
            }
        } else {
            Ok(ServiceOutcome::None)
        }
    }

    /// Potential type-II completion at a uniform server (`u`); only
    /// type-II-only servers complete. Returns the server that completed.
    pub fn type_ii_step(&mut self, u: f64) -> Result<Option<ServerId>, CouplingError> {
        let n = self.n_servers();
        let server = ((u * n as f64) as usize).min(n - 1);
        if self.aff.configs()[server].class() != ServerClass::TypeIIOnly {
            return Ok(None);
        }
        complete_service(&mut self.aff, server)?;
        self.reposition(server);
        Ok(Some(server))
    }

    /// RA coupling at a potential arrival: the reference system receives a
    /// job at `n_star`; the affinity system accepts with probability
    /// `lambda*_s / lambda0` (via `y1`) for the server `s` at `n_star`, and
    /// picks a selection containing `s` with weight `lambda_S p*_{Ss}`
    /// (via `y2`).
    pub fn ra_arrival_step<R: Rng + ?Sized>(
        &mut self,
        ra: &RaCoupling,
        n_star: usize,
        y1: f64,
        y2: f64,
        rng: &mut R,
    ) -> Result<ArrivalOutcome, CouplingError> {
        let s = self.order[n_star - 1];
        let load = ra.loads[s];
        if load > ra.lambda0 + LOAD_TOL {
            return Err(CouplingError::Consistency(format!(
                "server {s} load {load} exceeds lambda0 {}",
                ra.lambda0
            )));
        }
        let mut out = ArrivalOutcome { pos_ref: Some(n_star), allocation: None, pos_aff: None };
        if y1 * ra.lambda0 < load {
            let weights = &ra.by_server[s];
            let target = y2 * weights.last().map_or(0.0, |w| w.1);
            let idx = weights.partition_point(|w| w.1 <= target).min(weights.len() - 1);
            let (alloc, pos) = self.aff_arrive(&ra.selections[weights[idx].0], rng)?;
            out.allocation = Some(alloc);
            out.pos_aff = pos;
        }
        self.ref_insert(n_star - 1);
        Ok(out)
    }

    /// MJSQ(k) coupling: the reference system receives the job at position
    /// `k + 1`; the affinity system uses the closed neighborhood of `node`.
    pub fn mjsq_arrival_step<R: Rng + ?Sized>(
        &mut self,
        mjsq: &MjsqCoupling,
        node: ServerId,
        rng: &mut R,
    ) -> Result<ArrivalOutcome, CouplingError> {
        let (alloc, pos) = self.aff_arrive(&mjsq.neighborhoods[node], rng)?;
        self.ref_insert(mjsq.k);
        Ok(ArrivalOutcome { pos_ref: Some(mjsq.k + 1), allocation: Some(alloc), pos_aff: pos })
    }

    /// JSQ(k) coupling: `x` is mapped through both step functions; the
    /// affinity selection is positions `n_aff ..= n_aff + d`.
    pub fn jsq_arrival_step<R: Rng + ?Sized>(
        &mut self,
        jsq: &JsqCoupling,
        x: f64,
        rng: &mut R,
    ) -> Result<ArrivalOutcome, CouplingError> {
        let n_aff = jsq.f_aff.inverse(x);
        let n_ref = jsq.f_ref.inverse(x);
        if n_aff > n_ref {
            return Err(CouplingError::Consistency(format!(
                "n_aff = {n_aff} above n_ref = {n_ref} at x = {x}"
            )));
        }
        let selection: Vec<ServerId> = self.order[n_aff - 1..n_aff + jsq.d].to_vec();
        let (alloc, pos) = self.aff_arrive(&selection, rng)?;
        self.ref_insert(n_ref - 1);
        Ok(ArrivalOutcome { pos_ref: Some(n_ref), allocation: Some(alloc), pos_aff: pos })
    }
}

/// RA reference system fed by the optimal split of a selection family.
#[derive(Debug, Clone)]
pub struct RaCoupling {
    lambda0: f64,
    loads: Vec<f64>,
    selections: Vec<Vec<ServerId>>,
    /// Per server: selections containing it with cumulative weights
    /// `lambda_S p*_{Sn}`.
    by_server: Vec<Vec<(usize, f64)>>,
}

impl RaCoupling {
    pub fn new(family: &SelectionFamily, split: &SplitSolution) -> Result<Self, CouplingError> {
        let n = family.n_servers();
        let mut by_server = vec![Vec::new(); n];
        for (idx, sel) in family.selections().iter().enumerate() {
            for &(server, p) in &split.splits[idx] {
                let w = sel.rate * p;
                if w > 0.0 {
                    let acc = by_server[server].last().map_or(0.0, |x: &(usize, f64)| x.1);
                    by_server[server].push((idx, acc + w));
                }
            }
        }
        for (s, w) in by_server.iter().enumerate() {
            let total = w.last().map_or(0.0, |x| x.1);
            if (total - split.loads[s]).abs() > LOAD_TOL * split.loads[s].max(1.0) {
                return Err(CouplingError::Consistency(format!(
                    "server {s}: split weights sum to {total}, load is {}",
                    split.loads[s]
                )));
            }
        }
        Ok(Self {
            lambda0: split.lambda0,
            loads: split.loads.clone(),
            selections: family.selections().iter().map(|s| s.servers.clone()).collect(),
            by_server,
        })
    }

    /// Computes the optimal split first.
    pub fn from_family(family: &SelectionFamily) -> Result<Self, CouplingError> {
        Self::new(family, &stability::lambda0(family)?)
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    pub fn loads(&self) -> &[f64] {
        &self.loads
    }
}

/// MJSQ(k) reference system for a graph with minimum degree `N - k - 1`.
#[derive(Debug, Clone)]
pub struct MjsqCoupling {
    k: usize,
    lambda: f64,
    neighborhoods: Vec<Vec<ServerId>>,
}

impl MjsqCoupling {
    pub fn new(adjacency: &Adjacency, k: usize, lambda: f64) -> Result<Self, CouplingError> {
        let n = adjacency.len();
        if k >= n {
            return Err(CouplingError::Config(format!("need k < N, got N={n} k={k}")));
        }
        let min_deg = crate::graph::min_degree(adjacency);
        if min_deg + k + 1 < n {
            return Err(CouplingError::Config(format!(
                "minimum degree {min_deg} is below N - k - 1 = {}",
                n - k - 1
            )));
        }
        check_rate(lambda)?;
        let family = SelectionFamily::graph(adjacency.clone(), lambda)?;
        Ok(Self {
            k,
            lambda,
            neighborhoods: family.selections().iter().map(|s| s.servers.clone()).collect(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// JSQ(k) reference system for the worst-case stacking of a `d`-regular
/// graph.
#[derive(Debug, Clone)]
pub struct JsqCoupling {
    d: usize,
    k: usize,
    lambda: f64,
    f_aff: StepFunction,
    f_ref: StepFunction,
}

impl JsqCoupling {
    /// Fails unless `f_aff >= f_ref` pointwise.
    pub fn new(n: usize, d: usize, k: usize, lambda: f64) -> Result<Self, CouplingError> {
        let f_aff = build_f_aff(n, d)?;
        let f_ref = build_f_ref(n, k)?;
        if !f_aff.dominates(&f_ref) {
            return Err(CouplingError::Config(format!(
                "f_aff does not dominate f_ref for N={n} d={d} k={k}"
            )));
        }
        check_rate(lambda)?;
        Ok(Self { d, k, lambda, f_aff, f_ref })
    }

    pub fn f_aff(&self) -> &StepFunction {
        &self.f_aff
    }

    pub fn f_ref(&self) -> &StepFunction {
        &self.f_ref
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

fn check_rate(lambda: f64) -> Result<(), CouplingError> {
    if lambda.is_finite() && lambda >= 0.0 {
        Ok(())
    } else {
        Err(CouplingError::Config(format!("arrival rate {lambda} must be finite and nonnegative")))
    }
}

#[derive(Debug, Clone)]
pub enum CouplingPolicy {
    Ra(RaCoupling),
    Mjsq(MjsqCoupling),
    Jsq(JsqCoupling),
}

impl CouplingPolicy {
    pub fn n_servers(&self) -> usize {
        match self {
            Self::Ra(ra) => ra.loads.len(),
            Self::Mjsq(m) => m.neighborhoods.len(),
            Self::Jsq(j) => j.f_aff.len(),
        }
    }

    /// Per-server rate of (potential) arrivals in the reference system.
    pub fn arrival_rate(&self) -> f64 {
        match self {
            Self::Ra(ra) => ra.lambda0,
            Self::Mjsq(m) => m.lambda,
            Self::Jsq(j) => j.lambda,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Ra(_) => "ra",
            Self::Mjsq(_) => "mjsq",
            Self::Jsq(_) => "jsq",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CoupledEventKind {
    Arrival,
    Service,
    TypeIiService,
}

impl fmt::Display for CoupledEventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Arrival => "arrival",
            Self::Service => "service",
            Self::TypeIiService => "type_ii_service",
        })
    }
}

/// One row of the coupled-event log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupledEvent {
    pub t: f64,
    pub event_kind: CoupledEventKind,
    pub pos_aff: Option<usize>,
    pub pos_ref: Option<usize>,
    pub ok: bool,
}

/// Writes `t,event_kind,pos_aff,pos_ref,ok`.
pub fn write_event_log<W: Write>(events: &[CoupledEvent], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for e in events {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CouplingReport {
    pub seed: u64,
    pub events: u64,
    pub time: f64,
    pub ref_arrivals: u64,
    pub aff_arrivals_type_i: u64,
    pub aff_arrivals_type_ii: u64,
    pub majorization_violations: u64,
    /// Type-I insertions above the reference insertion position.
    pub position_violations: u64,
    /// Time-averaged number of jobs in the reference system.
    pub mean_ref_jobs: f64,
    /// Time-averaged number of type-I jobs in the affinity system.
    pub mean_aff_type_i: f64,
    pub final_ref_jobs: u64,
    pub final_aff_type_i: u64,
    #[serde(skip)]
    pub log: Vec<CoupledEvent>,
}

/// Runs `events` coupled events from two empty systems and checks the
/// majorization after each one.
pub fn run_coupling(
    policy: &CouplingPolicy,
    rates: ServiceRates,
    events: u64,
    seed: u64,
    record_log: bool,
) -> Result<CouplingReport, CouplingError> {
    rates.validate()?;
    let n = policy.n_servers();
    let nf = n as f64;
    let arrival = policy.arrival_rate() * nf;
    let (service, service_ii) = (rates.mu1 * nf, rates.mu2 * nf);
    let total = arrival + service + service_ii;
    let mut rng = rng::stream(seed, streams::COUPLING);
    let mut state = CoupledState::empty(n);
    let mut report = CouplingReport { seed, ..Default::default() };
    let (mut t, mut area_ref, mut area_aff) = (0.0f64, 0.0f64, 0.0f64);

    for _ in 0..events {
        let e: f64 = Exp1.sample(&mut rng);
        let dt = e / total;
        area_ref += dt * state.ref_total() as f64;
        area_aff += dt * state.aff.total_type_i() as f64;
        t += dt;
        let u = rng.random::<f64>() * total;
        let (kind, pos_aff, pos_ref) = if u < arrival {
            let out = match policy {
                CouplingPolicy::Ra(ra) => {
                    let n_star = rng.random_range(1..=n);
                    let (y1, y2): (f64, f64) = (rng.random(), rng.random());
                    state.ra_arrival_step(ra, n_star, y1, y2, &mut rng)?
                }
                CouplingPolicy::Mjsq(m) => {
                    let node = rng.random_range(0..n);
                    state.mjsq_arrival_step(m, node, &mut rng)?
                }
                CouplingPolicy::Jsq(j) => {
                    let x: f64 = rng.random();
                    state.jsq_arrival_step(j, x, &mut rng)?
                }
            };
            report.ref_arrivals += u64::from(out.pos_ref.is_some());
            match out.allocation.map(|a| a.job_type) {
                Some(JobType::I) => report.aff_arrivals_type_i += 1,
                Some(JobType::II) => report.aff_arrivals_type_ii += 1,
                None => {}
            }
            if !out.ordered() {
                report.position_violations += 1;
            }
            (CoupledEventKind::Arrival, out.pos_aff, out.pos_ref)
        } else if u < arrival + service {
            let (x, v): (f64, f64) = (rng.random(), rng.random());
            match state.service_step(x, v)? {
                ServiceOutcome::Both(p) => (CoupledEventKind::Service, Some(p), Some(p)),
                ServiceOutcome::AffOnly(p) => (CoupledEventKind::Service, Some(p), None),
                ServiceOutcome::RefOnly(p) => (CoupledEventKind::Service, None, Some(p)),
                ServiceOutcome::None => (CoupledEventKind::Service, None, None),
            }
        } else {
            let server = state.type_ii_step(rng.random())?;
            (CoupledEventKind::TypeIiService, server.map(|s| state.aff_position_of(s)), None)
        };
        let ok = state.check_majorization();
        if !ok {
            report.majorization_violations += 1;
        }
        if record_log {
            report.log.push(CoupledEvent { t, event_kind: kind, pos_aff, pos_ref, ok });
        }
        report.events += 1;
    }
    report.time = t;
    if t > 0.0 {
        report.mean_ref_jobs = area_ref / t;
        report.mean_aff_type_i = area_aff / t;
    }
    report.final_ref_jobs = state.ref_total();
    report.final_aff_type_i = state.aff.total_type_i();
    Ok(report)
}

/// [`run_coupling`] over several seeds in parallel, without logs.
pub fn run_coupling_seeds(
    policy: &CouplingPolicy,
    rates: ServiceRates,
    events: u64,
    seeds: &[u64],
) -> Result<Vec<CouplingReport>, CouplingError> {
    seeds.par_iter().map(|&seed| run_coupling(policy, rates, events, seed, false)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph;
    use crate::model::Selection;
    use crate::rng::SimRng;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn rates() -> ServiceRates {
        ServiceRates::new(1.0, 0.5).unwrap()
    }

    /// Greedy worst-case stacking, one block per closed neighborhood: each
    /// position can be the lowest member of at most `d + 1` blocks, the first
    /// `d + 1` blocks start at position 1 and the rest as high as possible.
    fn stacking_oracle(n: usize, d: usize) -> Vec<f64> {
        let mut starts = vec![0usize; n + 1];
        starts[1] = d + 1;
        let mut left = n - d - 1;
        let mut pos = n - d;
        while left > 0 {
            let take = left.min(d + 1);
            starts[pos] += take;
            left -= take;
            pos -= 1;
        }
        let mut acc = 0;
        (1..=n)
            .map(|x| {
                acc += starts[x];
                acc as f64 / n as f64
            })
            .collect()
    }

    #[test]
    fn f_ref_values() {
        let f = build_f_ref(12, 3).unwrap();
        assert_eq!(f.value(1), 0.25);
        assert_eq!(f.value(10), 1.0);
        assert!(f.value(9) < 1.0);
        assert!(f.is_nondecreasing());
        let g = build_f_ref(7, 1).unwrap();
        for x in 1..=7 {
            assert!((g.value(x) - x as f64 / 7.0).abs() < 1e-15);
        }
        assert!(build_f_ref(5, 0).is_err());
        assert!(build_f_ref(5, 6).is_err());
    }

    #[test]
    fn f_ref_matches_minimum_of_random_subsets() {
        // enumerate all 3-subsets of 8 positions
        let (n, k) = (8usize, 3usize);
        let mut counts = vec![0usize; n + 1];
        let mut total = 0;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize == k {
                counts[mask.trailing_zeros() as usize + 1] += 1;
                total += 1;
            }
        }
        let f = build_f_ref(n, k).unwrap();
        let mut acc = 0;
        for x in 1..=n {
            acc += counts[x];
            assert!((f.value(x) - acc as f64 / total as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn f_aff_values() {
        let f = build_f_aff(12, 2).unwrap();
        for x in 1..=7 {
            assert_eq!(f.value(x), 0.25, "x={x}");
        }
        assert_eq!(f.value(8), 0.5);
        assert_eq!(f.value(9), 0.75);
        for x in 10..=12 {
            assert_eq!(f.value(x), 1.0);
        }
        let g = build_f_aff(50, 31).unwrap();
        assert_eq!(g.value(1), 32.0 / 50.0);
        assert_eq!(g.value(18), 32.0 / 50.0);
        assert_eq!(g.value(19), 1.0);
        assert!(build_f_aff(5, 5).is_err());
    }

    #[test]
    fn f_aff_matches_stacking_oracle() {
        for n in 2..=60 {
            for d in 1..n {
                let f = build_f_aff(n, d).unwrap();
                assert!(f.is_nondecreasing());
                let oracle = stacking_oracle(n, d);
                for x in 1..=n {
                    assert!((f.value(x) - oracle[x - 1]).abs() < 1e-15, "n={n} d={d} x={x}");
                }
            }
        }
    }

    #[test]
    fn density_condition_implies_dominance() {
        for n in 3..=60 {
            for k in 1..=n {
                for d in 1..n {
                    if stability::dregular_condition(n, d, k).unwrap() {
                        let (fa, fr) = (build_f_aff(n, d).unwrap(), build_f_ref(n, k).unwrap());
                        assert!(fa.dominates(&fr), "n={n} d={d} k={k}");
                    }
                }
            }
        }
    }

    #[test]
    fn inverse_transform() {
        let f = build_f_aff(12, 2).unwrap();
        assert_eq!(f.inverse(0.0), 1);
        assert_eq!(f.inverse(0.25), 1);
        assert_eq!(f.inverse(0.26), 8);
        assert_eq!(f.inverse(1.0), 10);
        let jsq = JsqCoupling::new(50, 31, 2, 0.8).unwrap();
        let mut rng = SimRng::seed_from_u64(3);
        for _ in 0..100_000 {
            let x: f64 = rng.random();
            let (a, r) = (jsq.f_aff().inverse(x), jsq.f_ref().inverse(x));
            assert!(a <= r && a <= 19 && r <= 49);
        }
        let x = 0.999_999_999;
        assert!(jsq.f_aff().inverse(x) <= 19 && jsq.f_ref().inverse(x) <= 49);
        assert!(JsqCoupling::new(50, 30, 2, 0.8).is_err());
    }

    #[test]
    fn majorization_examples() {
        assert!(check_majorization(&[0, 0, 0], &[0, 0, 0]));
        assert!(check_majorization(&[0, 1, 3], &[0, 1, 3]));
        assert!(!check_majorization(&[0, 0, 2], &[0, 1, 1]));
        assert!(check_majorization(&[0, 1, 1], &[0, 0, 2]));
        assert!(!check_majorization(&[1], &[0]));
    }

    #[test]
    fn position_index_examples() {
        for n in 1..=5 {
            assert_eq!(position_index(&[5], n), 0);
        }
        assert_eq!(position_index(&[10, 4, 1], 10), 2);
        assert_eq!(position_index(&[10, 4, 1], 7), 1);
        assert_eq!(position_index(&[10, 4, 1], 6), 0);
        let levels = [0u32, 0, 1, 1, 3, 5];
        let cum = cumulative_counts(&levels);
        for (p, &v) in levels.iter().enumerate() {
            assert_eq!(position_index(&cum, p + 1), v as usize);
        }
    }

    fn loaded(n: usize, aff_levels: &[u32], ref_levels: &[u32]) -> CoupledState {
        let mut st = CoupledState::empty(n);
        let mut rng = SimRng::seed_from_u64(0);
        for (p, &v) in aff_levels.iter().enumerate() {
            for _ in 0..v {
                let s = st.order.iter().copied().find(|&s| s == p).unwrap();
                st.aff_arrive(&[s], &mut rng).unwrap();
            }
        }
        st.ref_q = ref_levels.to_vec();
        st.ref_q.sort_unstable();
        st.ref_cum = cumulative_counts(&st.ref_q);
        st.ref_total = ref_levels.iter().map(|&v| u64::from(v)).sum();
        assert!(st.is_consistent());
        st
    }

    #[test]
    fn service_branches() {
        let mut st = loaded(4, &[1, 1, 1, 1], &[1, 1, 1, 1]);
        assert_eq!(st.service_step(0.1, 0.0).unwrap(), ServiceOutcome::Both(1));
        assert_eq!(st.aff().total_type_i(), 3);
        assert_eq!(st.ref_total(), 3);

        let mut st = loaded(4, &[0, 0, 0, 0], &[0, 0, 2, 1]);
        match st.service_step(0.3, 0.5).unwrap() {
            ServiceOutcome::RefOnly(p) => assert!(p >= 3),
            other => panic!("{other:?}"),
        }
        assert_eq!(st.aff().total_type_i(), 0);

        // |W_aff| = 3, |W_ref| = 7, N = 10
        let aff = [1u32, 1, 1, 0, 0, 0, 0, 0, 0, 0];
        let refq = [1u32, 1, 1, 1, 1, 1, 1, 0, 0, 0];
        for (x, expect) in [(0.25, "both"), (0.3, "both"), (0.5, "ref"), (0.7, "ref"), (0.71, "none")] {
            for u in [0.0, 0.5, 0.999] {
                let mut st = loaded(10, &aff, &refq);
                match (st.service_step(x, u).unwrap(), expect) {
                    (ServiceOutcome::Both(p), "both") => assert!((8..=10).contains(&p)),
                    (ServiceOutcome::RefOnly(p), "ref") => assert!((4..=7).contains(&p)),
                    (ServiceOutcome::None, "none") => {}
                    (got, _) => panic!("x={x}: {got:?}"),
                }
                assert!(st.is_consistent());
            }
        }
    }

    #[test]
    fn ra_steps() {
        let n = 5;
        let fam = SelectionFamily::general(
            n,
            vec![Selection { servers: (0..n).collect(), rate: 0.8 * n as f64 }],
        )
        .unwrap();
        let ra = RaCoupling::from_family(&fam).unwrap();
        assert!((ra.lambda0() - 0.8).abs() < 1e-9);
        let mut st = CoupledState::empty(n);
        let mut rng = SimRng::seed_from_u64(1);
        let out = st.ra_arrival_step(&ra, 3, 0.999, 0.5, &mut rng).unwrap();
        assert!(out.allocation.is_some() && out.ordered());
        assert_eq!(out.pos_aff, Some(1));

        // thinned arrival: lambda*_n < lambda0
        let fam = SelectionFamily::general(
            2,
            vec![Selection { servers: vec![0], rate: 0.2 }, Selection { servers: vec![1], rate: 0.6 }],
        )
        .unwrap();
        let ra = RaCoupling::from_family(&fam).unwrap();
        let mut st = CoupledState::empty(2);
        let n_star = st.aff_position_of(0);
        let out = st.ra_arrival_step(&ra, n_star, 0.5, 0.5, &mut rng).unwrap();
        assert_eq!(out.allocation, None);
        assert_eq!(st.ref_total(), 1);
        assert_eq!(st.aff().total_jobs(), 0);

        let fam = SelectionFamily::general(
            3,
            vec![Selection { servers: vec![0, 1], rate: 1.0 }, Selection { servers: vec![1, 2], rate: 1.0 }],
        )
        .unwrap();
        let ra = RaCoupling::from_family(&fam).unwrap();
        assert!((ra.lambda0() - 2.0 / 3.0).abs() < 1e-8);
        let mut st = CoupledState::empty(3);
        for _ in 0..200 {
            let (n_star, y1, y2) = (rng.random_range(1..=3), rng.random(), rng.random());
            let out = st.ra_arrival_step(&ra, n_star, y1, y2, &mut rng).unwrap();
            assert!(out.allocation.is_some() && out.ordered());
        }
    }

    #[test]
    fn ra_rejects_inconsistent_split() {
        let fam = SelectionFamily::general(2, vec![Selection { servers: vec![0, 1], rate: 2.0 }]).unwrap();
        let bad = SplitSolution { lambda0: 0.5, splits: vec![vec![(0, 1.0), (1, 0.0)]], loads: vec![2.0, 0.0] };
        let ra = RaCoupling::new(&fam, &bad).unwrap();
        let mut st = CoupledState::empty(2);
        let pos = st.aff_position_of(0);
        let mut rng = SimRng::seed_from_u64(0);
        assert!(matches!(
            st.ra_arrival_step(&ra, pos, 0.1, 0.1, &mut rng),
            Err(CouplingError::Consistency(_))
        ));
    }

    #[test]
    fn mjsq_steps() {
        let mut rng = SimRng::seed_from_u64(2);
        let complete = MjsqCoupling::new(&graph::complete(6), 0, 0.5).unwrap();
        let mut st = CoupledState::empty(6);
        let out = st.mjsq_arrival_step(&complete, 4, &mut rng).unwrap();
        assert_eq!((out.pos_aff, out.pos_ref), (Some(1), Some(1)));

        let edgeless = MjsqCoupling::new(&graph::edgeless(4), 3, 0.5).unwrap();
        let mut st = CoupledState::empty(4);
        let out = st.mjsq_arrival_step(&edgeless, 2, &mut rng).unwrap();
        assert_eq!(out.pos_ref, Some(4));
        assert_eq!(st.ref_ordered(), &[0, 0, 0, 1]);

        assert!(MjsqCoupling::new(&graph::cycle(10), 2, 0.5).is_err());
        assert!(MjsqCoupling::new(&graph::regular(10, 7).unwrap(), 2, 0.5).is_ok());
    }

    #[test]
    fn mjsq_type_i_positions_bounded() {
        let policy = CouplingPolicy::Mjsq(MjsqCoupling::new(&graph::regular(10, 7).unwrap(), 2, 0.8).unwrap());
        let report = run_coupling(&policy, rates(), 10_000, 5, true).unwrap();
        let arrivals: Vec<_> =
            report.log.iter().filter(|e| e.event_kind == CoupledEventKind::Arrival).collect();
        assert!(arrivals.len() > 1000);
        assert!(arrivals.iter().all(|e| e.pos_aff.is_none_or(|p| p <= 3)));
        assert!(arrivals.iter().any(|e| e.pos_aff.is_some()));
        assert_eq!(report.position_violations, 0);
        assert_eq!(report.majorization_violations, 0);
    }

    #[test]
    fn event_log_csv() {
        let policy = CouplingPolicy::Jsq(JsqCoupling::new(12, 8, 1, 0.7).unwrap());
        let report = run_coupling(&policy, rates(), 50, 9, true).unwrap();
        let mut buf = Vec::new();
        write_event_log(&report.log, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,event_kind,pos_aff,pos_ref,ok"));
        assert_eq!(lines.count(), 50);
    }

    fn ra_random_family(n: usize, seed: u64) -> SelectionFamily {
        let mut rng = SimRng::seed_from_u64(seed);
        let selections = (0..2 * n)
            .map(|_| {
                let size = rng.random_range(1..=n);
                let servers = rand::seq::index::sample(&mut rng, n, size).into_vec();
                Selection { servers, rate: rng.random::<f64>() }
            })
            .collect();
        SelectionFamily::general(n, selections).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn orderings_and_majorization_hold(seed in any::<u64>(), which in 0usize..3) {
            let policy = match which {
                0 => CouplingPolicy::Ra(RaCoupling::from_family(&ra_random_family(6, seed)).unwrap()),
                1 => CouplingPolicy::Mjsq(MjsqCoupling::new(&graph::regular(8, 5).unwrap(), 2, 0.9).unwrap()),
                _ => CouplingPolicy::Jsq(JsqCoupling::new(10, 7, 2, 0.9).unwrap()),
            };
            let n = policy.n_servers();
            let lam = policy.arrival_rate() * n as f64;
            let mut rng = rng::stream(seed, streams::COUPLING);
            let mut st = CoupledState::empty(n);
            for _ in 0..400 {
                let u = rng.random::<f64>() * (lam + 1.5 * n as f64);
                if u < lam {
                    let out = match &policy {
                        CouplingPolicy::Ra(ra) => {
                            let n_star = rng.random_range(1..=n);
                            let (y1, y2) = (rng.random(), rng.random());
                            st.ra_arrival_step(ra, n_star, y1, y2, &mut rng).unwrap()
                        }
                        CouplingPolicy::Mjsq(m) => {
                            let node = rng.random_range(0..n);
                            st.mjsq_arrival_step(m, node, &mut rng).unwrap()
                        }
                        CouplingPolicy::Jsq(j) => {
                            let x = rng.random();
                            st.jsq_arrival_step(j, x, &mut rng).unwrap()
                        }
                    };
                    prop_assert!(out.ordered());
                } else if u < lam + n as f64 {
                    st.service_step(rng.random(), rng.random()).unwrap();
                } else {
                    st.type_ii_step(rng.random()).unwrap();
                }
                prop_assert!(st.is_consistent());
                prop_assert!(st.check_majorization());
                let aff_levels: Vec<u32> = st.aff_ordered().iter().map(|c| c.type_i).collect();
                prop_assert!(check_majorization(&aff_levels, st.ref_ordered()));
            }
        }
    }
}
