//! Selection-family and graph specs.
//!
//! * `combinatorial:N:d` - all `d`-subsets of `N` servers, per-server rate
//!   from `rates[0]`
//! * `graph:<graph>` - closed neighborhoods, per-server rate `rates[0]`
//! * `path:N` - the pairs `{i, i+1}`, one rate per pair
//! * `0,1;1,2;...` - explicit selections, one rate per selection
//!
//! A graph is a named generator (`cycle:n`, `complete:n`, `path:n`,
//! `edgeless:n`, `regular:n:d`) or the path of an edge-list file with one
//! `u v` pair per line.

use std::path::Path;

use affinity::graph::{self, Adjacency, GraphError};
use affinity::model::{Selection, SelectionFamily};

use crate::error::{config, CliError};

pub fn parse_graph(spec: &str) -> Result<Adjacency, CliError> {
    match graph::parse_generator(spec) {
        Ok(adj) => Ok(adj),
        Err(GraphError::Unknown(_)) if Path::new(spec).is_file() => read_edge_list(Path::new(spec)),
        Err(e) => Err(config(e)),
    }
}

/// `u v` per line; `#` starts a comment. The node count is one past the
/// largest index.
fn read_edge_list(path: &Path) -> Result<Adjacency, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let ids: Vec<usize> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::Config(format!("{}:{}: bad edge `{line}`", path.display(), lineno + 1)))?;
        match ids.as_slice() {
            [u, v] => edges.push((*u, *v)),
            _ => {
                return Err(CliError::Config(format!(
                    "{}:{}: expected two node ids",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    let n = edges.iter().map(|&(u, v)| u.max(v) + 1).max().unwrap_or(0);
    if n == 0 {
        return Err(CliError::Config(format!("{}: no edges", path.display())));
    }
    graph::from_edges(n, &edges).map_err(config)
}

fn per_selection(rates: &[f64], count: usize) -> Result<Vec<f64>, CliError> {
    match rates.len() {
        1 => Ok(vec![rates[0]; count]),
        m if m == count => Ok(rates.to_vec()),
        m => Err(CliError::Config(format!("{m} rates given for {count} selections"))),
    }
}

fn single_rate(rates: &[f64]) -> Result<f64, CliError> {
    match rates {
        [r] => Ok(*r),
        _ => Err(CliError::Config(format!("expected one per-server rate, got {}", rates.len()))),
    }
}

/// Parses a family spec. `n` overrides the server count of explicit
/// selections, which otherwise is one past the largest id.
pub fn parse_family(spec: &str, rates: &[f64], n: Option<usize>) -> Result<SelectionFamily, CliError> {
    let spec = spec.trim();
    if let Some(rest) = spec.strip_prefix("combinatorial:") {
        let parts: Vec<usize> = rest
            .split(':')
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::Config(format!("bad combinatorial spec `{spec}`")))?;
        let [n, d] = parts.as_slice() else {
            return Err(CliError::Config(format!("expected combinatorial:N:d, got `{spec}`")));
        };
        return SelectionFamily::combinatorial(*n, *d, single_rate(rates)?).map_err(config);
    }
    if let Some(rest) = spec.strip_prefix("graph:") {
        return SelectionFamily::graph(parse_graph(rest)?, single_rate(rates)?).map_err(config);
    }
    let (servers, sets): (usize, Vec<Vec<usize>>) = if let Some(rest) = spec.strip_prefix("path:") {
        let m: usize = rest.parse().map_err(|_| CliError::Config(format!("bad path spec `{spec}`")))?;
        if m < 2 {
            return Err(CliError::Config("path family needs at least two servers".into()));
        }
        (m, (0..m - 1).map(|i| vec![i, i + 1]).collect())
    } else {
        let sets: Vec<Vec<usize>> = spec
            .split(';')
            .map(|s| {
                s.split(',')
                    .map(|x| x.trim().parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| CliError::Config(format!("bad selection `{s}` in `{spec}`")))
            })
            .collect::<Result<_, _>>()?;
        let max = sets.iter().flatten().max().map_or(0, |m| m + 1);
        (n.unwrap_or(max), sets)
    };
    let rates = per_selection(rates, sets.len())?;
    let selections = sets.into_iter().zip(rates).map(|(servers, rate)| Selection { servers, rate }).collect();
    SelectionFamily::general(servers, selections).map_err(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use affinity::model::FamilyVariant;

    #[test]
    fn path_pairs() {
        let f = parse_family("path:3", &[1.0, 1.0], None).unwrap();
        assert_eq!(f.n_servers(), 3);
        assert_eq!(f.selections()[1].servers, vec![1, 2]);
        assert!(parse_family("path:3", &[1.0, 1.0, 1.0], None).is_err());
    }

    #[test]
    fn explicit_sets() {
        let f = parse_family("0,1;2", &[2.0], None).unwrap();
        assert_eq!(f.n_servers(), 3);
        assert_eq!(f.total_rate(), 4.0);
        assert_eq!(parse_family("0;1", &[1.0], Some(5)).unwrap().n_servers(), 5);
        assert!(parse_family("0,x", &[1.0], None).is_err());
    }

    #[test]
    fn named_families() {
        let f = parse_family("combinatorial:10:3", &[0.5], None).unwrap();
        assert_eq!(f.variant(), &FamilyVariant::Combinatorial { d: 3 });
        let g = parse_family("graph:cycle:10", &[0.5], None).unwrap();
        assert_eq!(g.selections().len(), 10);
        assert!(parse_family("graph:wheel:4", &[0.5], None).is_err());
    }
}
