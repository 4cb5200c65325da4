//! Multi-label MRF refinement by graph cuts.
//!
//! Energy: sum of unary costs (-log parcel probability, clamped) plus a
//! Potts term lambda per edge whose endpoints disagree. Minimized with
//! alpha-expansion; each binary move is solved exactly as an s-t min-cut
//! (Potts is a metric, so every move is optimal).

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::net::CROSS_ENTROPY_CLAMP;

/// Unary costs, the neighborhood structure and the smoothness weight.
#[derive(Debug, Clone)]
pub struct MrfProblem {
    /// N x C matrix of unary costs.
    pub unary: Array2<f64>,
    /// Undirected edges, each once.
    pub edges: Vec<(u32, u32)>,
    /// Potts weight, >= 0. Every edge counts the same.
    pub lambda: f64,
}

impl MrfProblem {
    /// Builds the problem from parcel probabilities: unary = -log p,
    /// probabilities floored at the cross-entropy clamp.
    pub fn from_probabilities(
        probs: &Array2<f64>,
        edges: Vec<(u32, u32)>,
        lambda: f64,
    ) -> Result<Self> {
        if lambda < 0.0 {
            return Err(Error::InvalidArg(format!("lambda must be >= 0, got {lambda}")));
        }
        let unary = probs.mapv(|p| -p.max(CROSS_ENTROPY_CLAMP).ln());
        Ok(MrfProblem {
            unary,
            edges,
            lambda,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.unary.nrows()
    }

    pub fn n_labels(&self) -> usize {
        self.unary.ncols()
    }
}

/// Total energy of a labeling.
pub fn mrf_energy(labels: &[usize], problem: &MrfProblem) -> Result<f64> {
    let c = problem.n_labels();
    if labels.len() != problem.n_nodes() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} nodes",
            labels.len(),
            problem.n_nodes()
        )));
    }
    let mut energy = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        if l >= c {
            return Err(Error::LabelOutOfRange {
                node: i,
                label: l as i64,
                n_classes: c,
            });
        }
        energy += problem.unary[(i, l)];
    }
    for &(i, j) in &problem.edges {
        if labels[i as usize] != labels[j as usize] {
            energy += problem.lambda;
        }
    }
    Ok(energy)
}

/// Outcome of one expansion run.
#[derive(Debug, Clone)]
pub struct ExpansionResult {
    pub labels: Vec<usize>,
    pub energy: f64,
    /// Energy after each accepted move, for the monotonicity contract.
    pub energy_trace: Vec<f64>,
    pub cycles: usize,
}

/// Alpha-expansion: cycles over labels in ascending order, each expansion
/// solved by max-flow; a move is accepted only if it strictly lowers the
/// energy. Stops when a full cycle changes nothing.
pub fn alpha_expansion(problem: &MrfProblem, init: &[usize]) -> Result<ExpansionResult> {
    let c = problem.n_labels();
    let mut labels = init.to_vec();
    let mut energy = mrf_energy(&labels, problem)?;
    let mut trace = vec![energy];
    let mut cycles = 0usize;

    const MAX_CYCLES: usize = 100;
    loop {
        cycles += 1;
        let mut changed = false;
        for alpha in 0..c {
            let candidate = expansion_move(problem, &labels, alpha);
            let cand_energy = mrf_energy(&candidate, problem)?;
            if cand_energy < energy - 1e-12 {
                labels = candidate;
                energy = cand_energy;
                trace.push(energy);
                changed = true;
            }
        }
        if !changed || cycles >= MAX_CYCLES {
            break;
        }
    }
    Ok(ExpansionResult {
        labels,
        energy,
        energy_trace: trace,
        cycles,
    })
}

/// One binary expansion move: each node keeps its label (x = 0) or takes
/// alpha (x = 1). The pairwise table is submodular for the Potts model, so
/// the reduction to min-cut is exact.
fn expansion_move(problem: &MrfProblem, labels: &[usize], alpha: usize) -> Vec<usize> {
    let n = problem.n_nodes();
    let lambda = problem.lambda;

    // theta0/theta1: cost of x_i = 0 / 1 after folding pairwise terms.
    let mut theta0 = vec![0.0f64; n];

    let mut theta1 = vec![0.0f64; n];
    for i in 0..n {
        theta0[i] = problem.unary[(i, labels[i])];
        theta1[i] = problem.unary[(i, alpha)];
    }

    let mut net_edges: Vec<(u32, u32, f64)> = Vec::new();
    if lambda > 0.0 {
        for &(i, j) in &problem.edges {
            let (li, lj) = (labels[i as usize], labels[j as usize]);
            // Pairwise table over (x_i, x_j):
            //   a = V(li, lj), b = V(li, alpha), c2 = V(alpha, lj), d = 0.
            let v = |x: usize, y: usize| if x == y { 0.0 } else { lambda };
            let a = v(li, lj);
            let b = v(li, alpha);
            let c2 = v(alpha, lj);
            // E(x_i, x_j) = a + (c2-a) x_i + (-c2) x_j + (b+c2-a) (1-x_i) x_j
            theta1[i as usize] += c2 - a;
            theta0[j as usize] += c2; // -c2 on x_j folded as +c2 on keep side
            // Residual pairwise cost (b + c2 - a) * (1 - x_i) * x_j: paid
            // when i stays on the source side and j crosses to alpha.
            let cap = b + c2 - a;
            if cap > 0.0 {
                net_edges.push((i, j, cap));
            }
        }
    }

    // Min-cut: source side = keep (x = 0), sink side = alpha (x = 1).
    // s->i capacity charges x_i = 1, i->t charges x_i = 0.
    let mut flow = MaxFlow::new(n + 2);
    let source = n;
    let sink = n + 1;
    for i in 0..n {
        // Only the difference matters; shift both by the minimum.
        let base = theta0[i].min(theta1[i]);
        let c0 = theta0[i] - base;
        let c1 = theta1[i] - base;
        if c1 > 0.0 {
            flow.add_edge(source, i, c1);
        }
        if c0 > 0.0 {
            flow.add_edge(i, sink, c0);
        }
    }
    for (u, v, cap) in net_edges {
        flow.add_edge(u as usize, v as usize, cap);
    }
    flow.max_flow(source, sink);
    let on_source_side = flow.min_cut_side(source);

    let mut out = labels.to_vec();
    for i in 0..n {
        if !on_source_side[i] {
            out[i] = alpha;
        }
    }
    out
}

const FLOW_EPS: f64 = 1e-11;

/// Dinic max-flow with f64 capacities.
pub struct MaxFlow {
    head: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<f64>,
    level: Vec<i32>,
    iter: Vec<usize>,
}

impl MaxFlow {
    pub fn new(n: usize) -> Self {
        MaxFlow {
            head: vec![Vec::new(); n],
            to: Vec::new(),
            cap: Vec::new(),
            level: vec![0; n],
            iter: vec![0; n],
        }
    }

    /// Directed edge u -> v with the given capacity (reverse capacity 0).
    pub fn add_edge(&mut self, u: usize, v: usize, capacity: f64) {
        let e = self.to.len();
        self.to.push(v);
        self.cap.push(capacity);
        self.head[u].push(e);
        self.to.push(u);
        self.cap.push(0.0);
        self.head[v].push(e + 1);
    }

    fn bfs(&mut self, s: usize, t: usize) -> bool {
        self.level.fill(-1);
        let mut queue = std::collections::VecDeque::new();
        self.level[s] = 0;
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            for &e in &self.head[u] {
                let v = self.to[e];
                if self.cap[e] > FLOW_EPS && self.level[v] < 0 {
                    self.level[v] = self.level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        self.level[t] >= 0
    }

    fn dfs(&mut self, u: usize, t: usize, pushed: f64) -> f64 {
        if u == t {
            return pushed;
        }
        while self.iter[u] < self.head[u].len() {
            let e = self.head[u][self.iter[u]];
            let v = self.to[e];
            if self.cap[e] > FLOW_EPS && self.level[v] == self.level[u] + 1 {
                let d = self.dfs(v, t, pushed.min(self.cap[e]));
                if d > FLOW_EPS {
                    self.cap[e] -= d;
                    self.cap[e ^ 1] += d;
                    return d;
                }
            }
            self.iter[u] += 1;
        }
        0.0
    }

    /// Runs Dinic and returns the max-flow value.
    pub fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut flow = 0.0;
        while self.bfs(s, t) {
            self.iter.fill(0);
            loop {
                let f = self.dfs(s, t, f64::INFINITY);
                if f <= FLOW_EPS {
                    break;
                }
                flow += f;
            }
        }
        flow
    }

    /// After max_flow: nodes reachable from `s` in the residual graph.
    pub fn min_cut_side(&self, s: usize) -> Vec<bool> {
        let mut side = vec![false; self.head.len()];
        let mut queue = std::collections::VecDeque::new();
        side[s] = true;
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            for &e in &self.head[u] {
                let v = self.to[e];
                if self.cap[e] > FLOW_EPS && !side[v] {
                    side[v] = true;
                    queue.push_back(v);
                }
            }
        }
        side
    }

    /// Sum of original capacities crossing the cut (requires the caller to
    /// pass the pre-flow capacities). Used as a solver self-check: the cut
    /// value equals the max-flow value.
    pub fn cut_value(&self, side: &[bool], original_caps: &[f64]) -> f64 {
        let mut total = 0.0;
        for u in 0..self.head.len() {
            if !side[u] {
                continue;
            }
            for &e in &self.head[u] {
                // Skip reverse edges (odd index pairs with zero original cap).
                if original_caps[e] <= 0.0 {
                    continue;
                }
                if !side[self.to[e]] {
                    total += original_caps[e];
                }
            }
        }
        total
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.cap.clone()
    }
}

/// Per-node argmin of the unary costs, ties to the lowest label. With
/// unaries built from probabilities this is the probability argmax.
pub fn unary_argmin(problem: &MrfProblem) -> Vec<usize> {
    (0..problem.n_nodes())
        .map(|i| {
            let row = problem.unary.row(i);
            let mut best = 0usize;
            let mut best_v = f64::INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if v < best_v {
                    best_v = v;
                    best = j;
                }
            }
            best
        })
        .collect()
}
