//! Load bounds for the general and graph families.
//!
//! `lambda0` is the smallest achievable maximum per-server load when each
//! selection's arrival stream may be split fractionally over its members. A
//! random-assignment reference system at this per-server rate dominates the
//! affinity policy, so `lambda0 < mu1` suffices for stability.
//!
//! The graph-density conditions compare the affinity policy on dense graphs
//! against MJSQ(k) and JSQ(k) reference systems. The JSQ(k) condition involves
//! binomials that quickly exceed machine integers and is evaluated exactly.

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binom::binomial;
use crate::maxflow::FlowNetwork;
use crate::model::{FamilyVariant, SelectionFamily, ServerId};

/// Absolute tolerance on `lambda0`.
pub const LAMBDA0_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("invalid parameters: {0}")]
    Parameters(String),
    #[error("combinatorial families are symmetric: lambda0 equals the per-server rate {0}")]
    Symmetric(f64),
}

/// Optimal fractional split of every selection's stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSolution {
    pub lambda0: f64,
    /// `splits[s]` lists `(server, p)` for selection `s`; the `p` sum to one.
    pub splits: Vec<Vec<(ServerId, f64)>>,
    /// Resulting load `lambda*_n` of every server.
    pub loads: Vec<f64>,
}

impl SplitSolution {
    pub fn split(&self, selection: usize, server: ServerId) -> f64 {
        self.splits[selection]
            .iter()
            .find(|(n, _)| *n == server)
            .map_or(0.0, |(_, p)| *p)
    }
}

/// Minimizes the maximum server load over fractional splits.
///
/// Binary search on the candidate load `c`; `c` is feasible when the network
/// source → selection (capacity `lambda_S`) → member server (unbounded) →
/// sink (capacity `c`) carries the whole arrival rate.
pub fn lambda0(family: &SelectionFamily) -> Result<SplitSolution, StabilityError> {
    if let FamilyVariant::Combinatorial { .. } = family.variant() {
        return Err(StabilityError::Symmetric(family.lambda().unwrap_or(0.0)));
    }
    let n = family.n_servers();
    let selections = family.selections();
    let total: f64 = selections.iter().map(|s| s.rate).sum();

    let uniform = |s: &crate::model::Selection| {
        let p = 1.0 / s.servers.len() as f64;
        s.servers.iter().map(|&id| (id, p)).collect::<Vec<_>>()
    };
    if total <= 0.0 {
        return Ok(SplitSolution {
            lambda0: 0.0,
            splits: selections.iter().map(uniform).collect(),
            loads: vec![0.0; n],
        });
    }

    let mut uniform_load = vec![0.0; n];
    for s in selections {
        for &id in &s.servers {
            uniform_load[id] += s.rate / s.servers.len() as f64;
        }
    }
    let mut lo = total / n as f64;
    let mut hi = uniform_load.iter().cloned().fold(0.0, f64::max);

    let eps = 1e-14 * total.max(1.0);
    let route = |cap: f64| {
        let source = 0;
        let sink = 1;
        let mut g = FlowNetwork::new(2 + selections.len() + n, eps);
        let mut member_arcs = Vec::with_capacity(selections.len());
        for (k, s) in selections.iter().enumerate() {
            let node = 2 + k;
            g.add_arc(source, node, s.rate);
            member_arcs.push(
                s.servers
                    .iter()
                    .map(|&id| (id, g.add_arc(node, 2 + selections.len() + id, f64::INFINITY)))
                    .collect::<Vec<_>>(),
            );
        }
        for id in 0..n {
            g.add_arc(2 + selections.len() + id, sink, cap);
        }
        let flow = g.max_flow(source, sink);
        (flow, g, member_arcs)
    };
    let feasible = |flow: f64| flow >= total - 1e-12 * total.max(1.0);

    while hi - lo > LAMBDA0_TOL {
        let mid = 0.5 * (lo + hi);
        if feasible(route(mid).0) {
            hi = mid;
        } else {
            lo = mid;
        }
    }

    let (_, g, member_arcs) = route(hi);
    let mut loads = vec![0.0; n];
    let splits = selections
        .iter()
        .zip(&member_arcs)
        .map(|(s, arcs)| {
            let flows: Vec<(ServerId, f64)> = arcs.iter().map(|&(id, a)| (id, g.flow(a).max(0.0))).collect();
            let routed: f64 = flows.iter().map(|(_, f)| f).sum();
            let split = if s.rate <= 0.0 || routed <= 0.0 {
                uniform(s)
            } else {
                flows.into_iter().map(|(id, f)| (id, f / routed)).collect()
            };
            for &(id, p) in &split {
                loads[id] += s.rate * p;
            }
            split
        })
        .collect();
    let lambda0 = loads.iter().cloned().fold(0.0, f64::max);
    Ok(SplitSolution { lambda0, splits, loads })
}

/// MJSQ(k) stability: `lambda N < mu1 (N - k)`.
pub fn mjsq_condition(n: usize, k: usize, lambda: f64, mu1: f64) -> bool {
    k < n && lambda * (n as f64) < mu1 * (n - k) as f64
}

/// Density condition under which the affinity policy on a `d`-regular graph
/// with `N` nodes is dominated by JSQ(k):
/// `sum_{i=1}^{N-d-1} C(N-i, k-1) < (d+1)/N * C(N, k)`, cross-multiplied and
/// evaluated in exact integers.
pub fn dregular_condition(n: usize, d: usize, k: usize) -> Result<bool, StabilityError> {
    if !(1..=n).contains(&k) || !(1..n).contains(&d) {
        return Err(StabilityError::Parameters(format!(
            "need 1 <= k <= N and 1 <= d < N, got N={n} d={d} k={k}"
        )));
    }
    let (n64, k64) = (n as u64, k as u64);
    let lhs: BigUint = (1..n64 - d as u64).map(|i| binomial(n64 - i, k64 - 1)).sum();
    let rhs = binomial(n64, k64) * (d as u64 + 1);
    Ok(lhs * n64 < rhs)
}

/// Smallest degree `d` satisfying [`dregular_condition`]; `d = N - 1` always
/// qualifies.
pub fn min_regular_degree(n: usize, k: usize) -> Result<usize, StabilityError> {
    for d in 1..n {
        if dregular_condition(n, d, k)? {
            return Ok(d);
        }
    }
    Err(StabilityError::Parameters(format!("no admissible degree for N={n}")))
}

/// `(k, d_min)` rows for the given `k` values.
pub fn min_degree_table(n: usize, ks: &[usize]) -> Result<Vec<(usize, usize)>, StabilityError> {
    ks.iter().map(|&k| Ok((k, min_regular_degree(n, k)?))).collect()
}
