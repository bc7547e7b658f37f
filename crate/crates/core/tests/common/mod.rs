#![allow(dead_code)]

use affinity::fluid::transition_probs;
use affinity::model::{JobType, OccupancyState, SelectionFamily, ServerConfig};
use affinity::simulate::{empirical_allocation_frequencies, AllocationKey};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pearson statistic over `(observed, expected)` cells. Cells with expected
/// count below 5 are pooled, in ascending order of expectation, until each
/// pooled cell reaches 5. Returns the statistic and degrees of freedom.
pub fn pearson(cells: &[(f64, f64)]) -> (f64, usize) {
    let mut sorted: Vec<(f64, f64)> = cells.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut pooled = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (obs, exp) in sorted {
        o += obs;
        e += exp;
        if e >= 5.0 {
            pooled.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match pooled.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => pooled.push((o, e)),
        }
    }
    let stat = pooled.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    (stat, pooled.len().saturating_sub(1))
}

pub fn chi2_critical(df: usize, level: f64) -> f64 {
    ChiSquared::new(df as f64).unwrap().inverse_cdf(1.0 - level)
}

/// Builds a state of `n` servers from exact-configuration fractions
/// `q[i][j]`; rounding slack goes to the largest cell.
pub fn state_from_fractions(n: usize, q: &[[f64; 2]]) -> OccupancyState {
    let mut counts: Vec<(ServerConfig, usize)> = Vec::new();
    for (i, row) in q.iter().enumerate() {
        for (j, &f) in row.iter().enumerate() {
            counts.push((ServerConfig::new(i as u32, j as u32), (f * n as f64).round() as usize));
        }
    }
    let total: usize = counts.iter().map(|c| c.1).sum();
    let big = counts.iter().enumerate().max_by_key(|(_, c)| c.1).unwrap().0;
    counts[big].1 = counts[big].1 + n - total;
    let configs = counts.iter().flat_map(|&(c, k)| std::iter::repeat_n(c, k)).collect();
    OccupancyState::from_configs(configs).unwrap()
}

/// Exact-configuration fractions `q[i][j]` for `i < levels`.
pub fn exact_fractions(state: &OccupancyState, levels: usize) -> Vec<[f64; 2]> {
    let cum = state.fractions(levels);
    (0..levels).map(|i| [cum[i][0] - cum[i + 1][0], cum[i][1] - cum[i + 1][1]]).collect()
}

/// Chi-square comparison of replayed allocations on a frozen state against
/// the large-system transition probabilities. Returns `(stat, critical)`.
pub fn allocation_chi2(n: usize, d: usize, q: &[[f64; 2]], arrivals: u64, seed: u64) -> (f64, f64) {
    let state = state_from_fractions(n, q);
    let family = SelectionFamily::combinatorial(n, d, 1.0).unwrap();
    let freq = empirical_allocation_frequencies(&state, &family, arrivals, seed).unwrap();
    let probs = transition_probs(&exact_fractions(&state, q.len()), d as u32);
    let mut cells = Vec::new();
    for (i, row) in q.iter().enumerate() {
        for j in 0..row.len() {
            let c = ServerConfig::new(i as u32, j as u32);
            for t in [JobType::I, JobType::II] {
                let p = probs.get(c, t);
                let o = freq.counts.get(&AllocationKey { config: c, job_type: t }).copied().unwrap_or(0);
                if p > 0.0 || o > 0 {
                    cells.push((o as f64, p * arrivals as f64));
                }
            }
        }
    }
    let (stat, df) = pearson(&cells);
    (stat, chi2_critical(df, 0.01))
}
