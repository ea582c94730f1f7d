//! Weighted digraphs, Laplacians and connectivity.
//!
//! Edge convention used throughout the crate: `weights[(i, j)] > 0` means
//! agent `j` influences agent `i` (edge `j -> i`).

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Entries with magnitude below this are treated as absent edges.
pub const EDGE_EPS: f64 = 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid size: a graph needs at least one node")]
    InvalidSize,
    #[error("invalid threshold {0}: delta must be positive")]
    InvalidThreshold(f64),
    #[error("laplacian is rank deficient (no directed spanning tree)")]
    RankDeficient,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDigraph {
    weights: DMatrix<f64>,
}

impl WeightedDigraph {
    pub fn new(weights: DMatrix<f64>) -> Result<Self, GraphError> {
        if weights.nrows() != weights.ncols() {
            return Err(GraphError::InvalidGraph(format!(
                "adjacency must be square, got {}x{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        if weights.nrows() == 0 {
            return Err(GraphError::InvalidSize);
        }
        for i in 0..weights.nrows() {
            for j in 0..weights.ncols() {
                let w = weights[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(GraphError::InvalidGraph(format!(
                        "weight ({}, {}) = {w} is not a finite nonnegative number",
                        i + 1,
                        j + 1
                    )));
                }
                if i == j && w != 0.0 {
                    return Err(GraphError::InvalidGraph(format!(
                        "self loop on node {}",
                        i + 1
                    )));
                }
            }
        }
        Ok(Self { weights })
    }

    /// Builds a graph from 0-indexed `(i, j, w)` triples meaning edge `j -> i`.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::InvalidSize);
        }
        let mut weights = DMatrix::zeros(n, n);
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(GraphError::InvalidGraph(format!(
                    "edge ({}, {}) out of range for {n} nodes",
                    i + 1,
                    j + 1
                )));
            }
            weights[(i, j)] = w;
        }
        Self::new(weights)
    }

    pub fn empty(n: usize) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::InvalidSize);
        }
        Self::new(DMatrix::zeros(n, n))
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.weights[(to, from)].abs() >= EDGE_EPS
    }

    /// Edges as 0-indexed `(i, j, w)` triples (edge `j -> i`), row-major order.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let w = self.weights[(i, j)];
                if w.abs() >= EDGE_EPS {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut lap = -self.weights.clone();
        for i in 0..n {
            lap[(i, i)] = self.weights.row(i).sum();
        }
        lap
    }

    /// Recovers the graph underlying a Laplacian (`W = -offdiag(L)`).
    pub fn from_laplacian(lap: &DMatrix<f64>) -> Result<Self, GraphError> {
        let n = lap.nrows();
        let mut weights = DMatrix::zeros(n, lap.ncols());
        for i in 0..n {
            for j in 0..lap.ncols() {
                if i != j {
                    let w = -lap[(i, j)];
                    weights[(i, j)] = if w.abs() < EDGE_EPS { 0.0 } else { w };
                }
            }
        }
        Self::new(weights)
    }
}

pub fn build_laplacian(g: &WeightedDigraph) -> DMatrix<f64> {
    g.laplacian()
}

/// Directed path `1 -> 2 -> ... -> n` with unit weights. Node 1 is the leader.
pub fn path_graph(n: usize) -> Result<WeightedDigraph, GraphError> {
    let edges: Vec<_> = (1..n).map(|i| (i, i - 1, 1.0)).collect();
    WeightedDigraph::from_edges(n, &edges)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReachabilityReport {
    pub has_spanning_tree: bool,
    /// 0-indexed nodes from which every node is reachable.
    pub roots: Vec<usize>,
}

fn reachable_from(g: &WeightedDigraph, root: usize) -> Vec<bool> {
    let n = g.n();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    while let Some(k) = queue.pop_front() {
        for (i, s) in seen.iter_mut().enumerate() {
            if !*s && g.has_edge(k, i) {
                *s = true;
                queue.push_back(i);
            }
        }
    }
    seen
}

pub fn spanning_tree_check(g: &WeightedDigraph) -> ReachabilityReport {
    let roots: Vec<usize> = (0..g.n())
        .filter(|&k| reachable_from(g, k).into_iter().all(|r| r))
        .collect();
    ReachabilityReport {
        has_spanning_tree: !roots.is_empty(),
        roots,
    }
}

/// Keeps only the edges with weight at least `delta`.
pub fn delta_graph(g: &WeightedDigraph, delta: f64) -> Result<WeightedDigraph, GraphError> {
    if delta.is_nan() || delta <= 0.0 {
        return Err(GraphError::InvalidThreshold(delta));
    }
    let weights = g.weights.map(|w| if w >= delta { w } else { 0.0 });
    Ok(WeightedDigraph { weights })
}

/// Moore–Penrose inverse of a Laplacian whose graph has a directed spanning
/// tree.
///
/// Such an `L` has rank `n - 1`, right kernel `u = 𝟙/√n` and a left kernel
/// `v` (unit norm), and then `L⁺ = (L + v uᵀ)⁻¹ - u vᵀ`.
pub fn laplacian_pseudoinverse(lap: &DMatrix<f64>) -> Result<DMatrix<f64>, GraphError> {
    if lap.nrows() != lap.ncols() {
        return Err(GraphError::InvalidGraph("laplacian must be square".into()));
    }
    let g = WeightedDigraph::from_laplacian(lap)?;
    if !spanning_tree_check(&g).has_spanning_tree {
        return Err(GraphError::RankDeficient);
    }
    let n = lap.nrows();
    if n == 1 {
        return Ok(DMatrix::zeros(1, 1));
    }
    // left kernel: eigenvector of L Lᵀ for its smallest eigenvalue
    let eig = (lap * lap.transpose()).symmetric_eigen();
    let k = eig.eigenvalues.imin();
    let v = eig.eigenvectors.column(k).normalize();
    let u = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let bordered = lap + &v * u.transpose();
    let inv = bordered.try_inverse().ok_or(GraphError::RankDeficient)?;
    Ok(inv - &u * v.transpose())
}

/// Boolean support of `(W_k + I)(W_{k-1} + I)···(W_1 + I)`; `stages[0]` is `W_1`.
pub fn communication_footprint(stages: &[DMatrix<u8>]) -> Result<DMatrix<u8>, GraphError> {
    let first = stages
        .first()
        .ok_or_else(|| GraphError::InvalidInput("no stages given".into()))?;
    let n = first.nrows();
    for (k, w) in stages.iter().enumerate() {
        if w.nrows() != n || w.ncols() != n {
            return Err(GraphError::InvalidInput(format!(
                "stage {} has shape {}x{}, expected {n}x{n}",
                k + 1,
                w.nrows(),
                w.ncols()
            )));
        }
        if w.iter().any(|&v| v > 1) {
            return Err(GraphError::InvalidInput(format!(
                "stage {} is not a 0/1 matrix",
                k + 1
            )));
        }
    }
    let mut acc = DMatrix::<bool>::from_fn(n, n, |i, j| i == j);
    for w in stages {
        let factor = DMatrix::<bool>::from_fn(n, n, |i, j| i == j || w[(i, j)] == 1);
        acc = DMatrix::from_fn(n, n, |i, j| (0..n).any(|m| factor[(i, m)] && acc[(m, j)]));
    }
    Ok(acc.map(u8::from))
}
