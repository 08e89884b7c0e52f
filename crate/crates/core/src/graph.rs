//! Communication topologies and doubly-stochastic mixing matrices.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;

/// Tolerance on row/column sums accepted by [`spectral_gap`].
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Undirected graph over nodes `0..n`; edges are stored as `(lo, hi)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Topology {
    /// Builds a topology from unordered pairs. Duplicates and reversed
    /// duplicates collapse into one edge.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidTopology("node count must be positive".into()));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i == j {
                return Err(Error::InvalidTopology(format!("self-edge ({i}, {i})")));
            }
            if i >= n || j >= n {
                return Err(Error::InvalidTopology(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            set.insert((i.min(j), i.max(j)));
        }
        Ok(Self { n, edges: set })
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        Self { n, edges }
    }

    pub fn path(n: usize) -> Self {
        let edges = (1..n).map(|i| (i - 1, i)).collect();
        Self { n, edges }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    /// Breadth-first reachability from node 0.
    pub fn is_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(u) = queue.pop_front() {
            for &w in &adj[u] {
                if !seen[w] {
                    seen[w] = true;
                    reached += 1;
                    queue.push_back(w);
                }
            }
        }
        reached == self.n
    }
}

/// Consensus weights `W` with cached spectral quantities.
#[derive(Debug, Clone)]
pub struct MixingMatrix {
    w: DMatrix<f64>,
    rho: f64,
    norm_w_minus_i: f64,
}

impl MixingMatrix {
    /// Wraps an arbitrary doubly-stochastic matrix.
    pub fn from_matrix(w: DMatrix<f64>) -> Result<Self> {
        let rho = spectral_gap(&w)?;
        let n = w.nrows();
        let norm_w_minus_i = linalg::spectral_norm(&(&w - DMatrix::identity(n, n)));
        Ok(Self {
            w,
            rho,
            norm_w_minus_i,
        })
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.w[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Spectral radius of `W − 11ᵀ/n`.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `‖W − I‖₂`.
    pub fn norm_w_minus_i(&self) -> f64 {
        self.norm_w_minus_i
    }

    /// Applies `W ⊗ I_m` to a stacked vector, summing neighbours in
    /// ascending index order.
    pub fn mix_into(&self, v: &[f64], m: usize, out: &mut [f64]) {
        let n = self.n();
        debug_assert_eq!(v.len(), n * m);
        for i in 0..n {
            let dst = &mut out[i * m..(i + 1) * m];
            dst.fill(0.0);
            for j in 0..n {
                let wij = self.w[(i, j)];
                if wij == 0.0 {
                    continue;
                }
                for (d, s) in dst.iter_mut().zip(&v[j * m..(j + 1) * m]) {
                    *d += wij * s;
                }
            }
        }
    }
}

/// Metropolis–Hastings weights: `w_ij = 1 / (1 + max(deg_i, deg_j))` on
/// edges, with the diagonal absorbing the remainder of each row.
pub fn build_metropolis(topology: &Topology) -> Result<MixingMatrix> {
    if !topology.is_connected() {
        return Err(Error::DisconnectedGraph);
    }
    let n = topology.n();
    let deg = topology.degrees();
    let mut w = DMatrix::zeros(n, n);
    for (i, j) in topology.edges() {
        let wij = 1.0 / (1 + deg[i].max(deg[j])) as f64;
        w[(i, j)] = wij;
        w[(j, i)] = wij;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    MixingMatrix::from_matrix(w)
}

/// Largest singular value of `W − 11ᵀ/n`, which equals its spectral radius
/// for symmetric `W`.
pub fn spectral_gap(w: &DMatrix<f64>) -> Result<f64> {
    let n = w.nrows();
    if w.ncols() != n || n == 0 {
        return Err(Error::ShapeMismatch(format!(
            "mixing matrix must be square and nonempty, got {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }
    let mut deviation: f64 = 0.0;
    for i in 0..n {
        deviation = deviation.max((w.row(i).sum() - 1.0).abs());
        deviation = deviation.max((w.column(i).sum() - 1.0).abs());
    }
    if deviation > STOCHASTIC_TOL {
        return Err(Error::NotStochastic { deviation });
    }
    let centered = w - DMatrix::from_element(n, n, 1.0 / n as f64);
    Ok(linalg::spectral_norm(&centered))
}

/// Erdős–Rényi draw over all pairs; a disconnected draw is augmented with a
/// random spanning tree taken from the same seeded stream.
pub fn random_connected_topology(n: usize, edge_prob: f64, seed: u64) -> Result<Topology> {
    if n < 2 {
        return Err(Error::InvalidTopology(format!(
            "random topology needs at least 2 nodes, got {n}"
        )));
    }
    if !(edge_prob > 0.0 && edge_prob <= 1.0) {
        return Err(Error::InvalidTopology(format!(
            "edge probability must lie in (0, 1], got {edge_prob}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < edge_prob {
                edges.push((i, j));
            }
        }
    }
    let mut topology = Topology::new(n, edges)?;
    if !topology.is_connected() {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for idx in 1..n {
            let parent = order[rng.random_range(0..idx)];
            let child = order[idx];
            topology
                .edges
                .insert((parent.min(child), parent.max(child)));
        }
    }
    debug_assert!(topology.is_connected());
    Ok(topology)
}
