//! Dinic's maximum flow on real capacities.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
struct Arc {
    to: usize,
    cap: f64,
    rev: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct FlowNetwork {
    arcs: Vec<Vec<Arc>>,
    level: Vec<i64>,
    cursor: Vec<usize>,
    eps: f64,
}

/// Handle to an arc, used to read back its flow.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ArcId {
    from: usize,
    index: usize,
}

impl FlowNetwork {
    /// `eps` is the residual capacity below which an arc counts as saturated.
    pub(crate) fn new(nodes: usize, eps: f64) -> Self {
        Self { arcs: vec![Vec::new(); nodes], level: vec![0; nodes], cursor: vec![0; nodes], eps }
    }

    pub(crate) fn add_arc(&mut self, from: usize, to: usize, cap: f64) -> ArcId {
        let index = self.arcs[from].len();
        let rev = self.arcs[to].len() + usize::from(from == to);
        self.arcs[from].push(Arc { to, cap, rev });
        self.arcs[to].push(Arc { to: from, cap: 0.0, rev: index });
        ArcId { from, index }
    }

    /// Flow currently routed through `id`.
    pub(crate) fn flow(&self, id: ArcId) -> f64 {
        let arc = &self.arcs[id.from][id.index];
        self.arcs[arc.to][arc.rev].cap
    }

    fn bfs(&mut self, s: usize, t: usize) -> bool {
        self.level.iter_mut().for_each(|l| *l = -1);
        self.level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for a in &self.arcs[v] {
                if a.cap > self.eps && self.level[a.to] < 0 {
                    self.level[a.to] = self.level[v] + 1;
                    queue.push_back(a.to);
                }
            }
        }
        self.level[t] >= 0
    }

    fn dfs(&mut self, v: usize, t: usize, pushed: f64) -> f64 {
        if v == t {
            return pushed;
        }
        while self.cursor[v] < self.arcs[v].len() {
            let i = self.cursor[v];
            let Arc { to, cap, rev } = self.arcs[v][i];
            if cap > self.eps && self.level[to] == self.level[v] + 1 {
                let got = self.dfs(to, t, pushed.min(cap));
                if got > 0.0 {
                    self.arcs[v][i].cap -= got;
                    self.arcs[to][rev].cap += got;
                    return got;
                }
            }
            self.cursor[v] += 1;
        }
        0.0
    }

    pub(crate) fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut total = 0.0;
        while self.bfs(s, t) {
            self.cursor.iter_mut().for_each(|c| *c = 0);
            loop {
                let pushed = self.dfs(s, t, f64::INFINITY);
                if pushed <= 0.0 {
                    break;
                }
                total += pushed;
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classic_network() {
        // textbook six-node network, max flow 23
        let mut g = FlowNetwork::new(6, 1e-12);
        let edges = [
            (0, 1, 16.0),
            (0, 2, 13.0),
            (2, 1, 4.0),
            (1, 3, 12.0),
            (3, 2, 9.0),
            (2, 4, 14.0),
            (4, 3, 7.0),
            (3, 5, 20.0),
            (4, 5, 4.0),
        ];
        for (u, v, c) in edges {
            g.add_arc(u, v, c);
        }
        assert!((g.max_flow(0, 5) - 23.0).abs() < 1e-12);
    }

    #[test]
    fn flow_readback() {
        let mut g = FlowNetwork::new(3, 1e-12);
        let a = g.add_arc(0, 1, 2.5);
        let b = g.add_arc(1, 2, 1.0);
        assert!((g.max_flow(0, 2) - 1.0).abs() < 1e-15);
        assert!((g.flow(a) - 1.0).abs() < 1e-15);
        assert!((g.flow(b) - 1.0).abs() < 1e-15);
    }
}
