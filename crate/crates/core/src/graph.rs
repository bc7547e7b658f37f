//! Graph topologies for the graph family.

use thiserror::Error;

use crate::model::ServerId;

pub type Adjacency = Vec<Vec<ServerId>>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("unknown graph generator `{0}` (expected cycle:n, complete:n, path:n, edgeless:n or regular:n:d)")]
    Unknown(String),
    #[error("bad graph parameters: {0}")]
    Parameters(String),
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    EdgeOutOfRange(usize, usize, usize),
}

pub fn cycle(n: usize) -> Adjacency {
    circulant(n, &[1])
}

pub fn complete(n: usize) -> Adjacency {
    (0..n).map(|v| (0..n).filter(|&u| u != v).collect()).collect()
}

pub fn path(n: usize) -> Adjacency {
    from_edges(n, &(1..n).map(|v| (v - 1, v)).collect::<Vec<_>>()).expect("in range")
}

pub fn edgeless(n: usize) -> Adjacency {
    vec![Vec::new(); n]
}

/// `d`-regular circulant graph on `n` nodes: node `v` is joined to
/// `v ± 1, ..., v ± d/2`, plus the antipode `v + n/2` when `d` is odd.
pub fn regular(n: usize, d: usize) -> Result<Adjacency, GraphError> {
    if d >= n {
        return Err(GraphError::Parameters(format!("degree {d} must be below n={n}")));
    }
    if d % 2 == 1 && n % 2 == 1 {
        return Err(GraphError::Parameters(format!("no {d}-regular graph on {n} nodes (odd degree, odd order)")));
    }
    let mut offsets: Vec<usize> = (1..=d / 2).collect();
    if d % 2 == 1 {
        offsets.push(n / 2);
    }
    Ok(circulant(n, &offsets))
}

fn circulant(n: usize, offsets: &[usize]) -> Adjacency {
    (0..n)
        .map(|v| {
            let mut nbrs: Vec<usize> = offsets
                .iter()
                .flat_map(|&o| [(v + o) % n, (v + n - o % n) % n])
                .filter(|&u| u != v)
                .collect();
            nbrs.sort_unstable();
            nbrs.dedup();
            nbrs
        })
        .collect()
}

/// Undirected graph from an edge list; self-loops and repeated edges are
/// dropped.
pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Adjacency, GraphError> {
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in edges {
        if u >= n || v >= n {
            return Err(GraphError::EdgeOutOfRange(u, v, n));
        }
        if u != v {
            adj[u].push(v);
            adj[v].push(u);
        }
    }
    for nbrs in adj.iter_mut() {
        nbrs.sort_unstable();
        nbrs.dedup();
    }
    Ok(adj)
}

pub fn min_degree(adj: &Adjacency) -> usize {
    adj.iter().map(Vec::len).min().unwrap_or(0)
}

/// Parses a named generator such as `cycle:10` or `regular:20:16`.
pub fn parse_generator(spec: &str) -> Result<Adjacency, GraphError> {
    let parts: Vec<&str> = spec.trim().split(':').collect();
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| GraphError::Parameters(format!("`{s}` is not a node count")))
    };
    let adj = match parts.as_slice() {
        ["cycle", n] => cycle(num(n)?),
        ["complete", n] => complete(num(n)?),
        ["path", n] => path(num(n)?),
        ["edgeless", n] => edgeless(num(n)?),
        ["regular", n, d] => regular(num(n)?, num(d)?)?,
        _ => return Err(GraphError::Unknown(spec.to_string())),
    };
    if adj.is_empty() {
        return Err(GraphError::Parameters("graph needs at least one node".into()));
    }
    Ok(adj)
}
