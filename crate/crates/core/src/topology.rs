//! Communication graphs: edge lists, random geometric generation,
//! Laplacians, and spectral summaries.
//!
//! Graphs are undirected and simple, over nodes `0..n_nodes`. The
//! Laplacian convention is `L = D - A`, so `L` is symmetric positive
//! semidefinite with zero row sums, and the second-smallest eigenvalue
//! (algebraic connectivity) is positive exactly when the graph is
//! connected.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use thiserror::Error;

use crate::scalar::{count, Real};

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("graph needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("edge ({0}, {1}) out of range for {2} nodes")]
    EdgeOutOfRange(usize, usize, usize),
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("radius must be positive and finite, got {0}")]
    BadRadius(f64),
    #[error(
        "no connected geometric graph in {attempts} attempts (n = {n_nodes}, radius = {radius}); \
         increase the radius or the attempt budget"
    )]
    DisconnectedAfterRetries {
        n_nodes: usize,
        radius: f64,
        attempts: usize,
    },
    #[error("eigensolver failed to converge on a {0}x{0} Laplacian")]
    EigenFailure(usize),
    #[error("edge-list parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Undirected simple graph with its Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology<T: Real> {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    laplacian: DMatrix<T>,
}

/// Sorted Laplacian spectrum plus the summary statistics used in reports.
#[derive(Debug, Clone)]
pub struct SpectralSummary<T: Real> {
    /// Eigenvalues in ascending order; the first is 0 up to round-off.
    pub eigenvalues: Vec<T>,
    /// Second-smallest eigenvalue; positive iff connected.
    pub algebraic_connectivity: T,
    /// Largest eigenvalue.
    pub max_eigenvalue: T,
    /// `|E| / (N(N-1)/2)`, edge density relative to the complete graph.
    pub relative_degree: T,
}

impl<T: Real> Topology<T> {
    /// Builds a graph from an edge list. Edges are deduplicated and
    /// normalized to `(min, max)`; self-loops and out-of-range indices
    /// are rejected.
    pub fn from_edges(
        n_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, TopologyError> {
        if n_nodes < 2 {
            return Err(TopologyError::TooFewNodes(n_nodes));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(TopologyError::SelfLoop(a));
            }
            if a >= n_nodes || b >= n_nodes {
                return Err(TopologyError::EdgeOutOfRange(a, b, n_nodes));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();

        let mut neighbors = vec![Vec::new(); n_nodes];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }

        let mut laplacian = DMatrix::zeros(n_nodes, n_nodes);
        for &(a, b) in &edges {
            laplacian[(a, b)] = -T::one();
            laplacian[(b, a)] = -T::one();
        }
        for (i, list) in neighbors.iter().enumerate() {
            laplacian[(i, i)] = count(list.len());
        }

        Ok(Self {
            n_nodes,
            edges,
            neighbors,
            laplacian,
        })
    }

    /// Complete graph on `n_nodes` nodes.
    pub fn complete(n_nodes: usize) -> Result<Self, TopologyError> {
        let edges = (0..n_nodes).flat_map(|i| (i + 1..n_nodes).map(move |j| (i, j)));
        Self::from_edges(n_nodes, edges)
    }

    /// Path graph `0 - 1 - ... - (n_nodes - 1)`.
    pub fn path(n_nodes: usize) -> Result<Self, TopologyError> {
        Self::from_edges(n_nodes, (1..n_nodes).map(|i| (i - 1, i)))
    }

    /// Random geometric graph: nodes uniform in the unit square, an edge
    /// wherever the Euclidean distance is at most `radius`. Redraws until
    /// connected, up to `max_attempts` position sets; positions are
    /// discarded once the edge set is built.
    pub fn random_geometric<R: Rng + ?Sized>(
        n_nodes: usize,
        radius: T,
        max_attempts: usize,
        rng: &mut R,
    ) -> Result<Self, TopologyError> {
        if n_nodes < 2 {
            return Err(TopologyError::TooFewNodes(n_nodes));
        }
        let radius_f = radius.to_f64().unwrap_or(f64::NAN);
        if !(radius_f.is_finite() && radius_f > 0.0) {
            return Err(TopologyError::BadRadius(radius_f));
        }
        let r2 = radius * radius;
        for _ in 0..max_attempts {
            let positions: Vec<(T, T)> = (0..n_nodes)
                .map(|_| (T::unit_uniform(rng), T::unit_uniform(rng)))
                .collect();
            let mut edges = Vec::new();
            for i in 0..n_nodes {
                for j in i + 1..n_nodes {
                    let dx = positions[i].0 - positions[j].0;
                    let dy = positions[i].1 - positions[j].1;
                    if dx * dx + dy * dy <= r2 {
                        edges.push((i, j));
                    }
                }
            }
            let graph = Self::from_edges(n_nodes, edges)?;
            if graph.is_connected() {
                return Ok(graph);
            }
        }
        Err(TopologyError::DisconnectedAfterRetries {
            n_nodes,
            radius: radius_f,
            attempts: max_attempts,
        })
    }

    /// The conventional radius `sqrt(ln N / N)` at which a random
    /// geometric graph on `N` nodes is connected with high probability.
    pub fn connectivity_radius(n_nodes: usize) -> T {
        let n = n_nodes as f64;
        crate::scalar::real((n.ln() / n).sqrt())
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Edges as `(min, max)` pairs in lexicographic order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Sorted neighbor list of `node`.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    /// `L = D - A`.
    pub fn laplacian(&self) -> &DMatrix<T> {
        &self.laplacian
    }

    /// 0/1 adjacency matrix, reconstructed from the edge list.
    pub fn adjacency(&self) -> DMatrix<T> {
        let mut a = DMatrix::zeros(self.n_nodes, self.n_nodes);
        for &(i, j) in &self.edges {
            a[(i, j)] = T::one();
            a[(j, i)] = T::one();
        }
        a
    }

    /// `|E| / (N(N-1)/2)`.
    pub fn relative_degree(&self) -> T {
        let pairs = self.n_nodes * (self.n_nodes - 1) / 2;
        count::<T>(self.edges.len()) / count::<T>(pairs)
    }

    /// Breadth-first reachability from node 0.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n_nodes];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        let mut visited = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    visited += 1;
                    queue.push_back(v);
                }
            }
        }
        visited == self.n_nodes
    }

    /// Full Laplacian spectrum via a symmetric eigensolver, plus the
    /// connectivity and density summaries derived from it.
    pub fn spectral_summary(&self) -> Result<SpectralSummary<T>, TopologyError> {
        let eigen = SymmetricEigen::try_new(self.laplacian.clone(), T::default_epsilon(), 10_000)
            .ok_or(TopologyError::EigenFailure(self.n_nodes))?;
        let mut eigenvalues: Vec<T> = eigen.eigenvalues.iter().copied().collect();
        eigenvalues.sort_by(|a, b| a.partial_cmp(b).expect("real eigenvalues"));
        Ok(SpectralSummary {
            algebraic_connectivity: eigenvalues[1],
            max_eigenvalue: eigenvalues[self.n_nodes - 1],
            relative_degree: self.relative_degree(),
            eigenvalues,
        })
    }

    // --- edge-list text format -------------------------------------------
    //
    //   line 1: node count N
    //   then one "i j" pair per line, 0-indexed
    //
    // Blank lines and lines starting with '#' are ignored on input.

    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{}", self.n_nodes).unwrap();
        for &(i, j) in &self.edges {
            writeln!(out, "{i} {j}").unwrap();
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self, TopologyError> {
        let mut n_nodes = None;
        let mut edges = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse = |tok: &str| {
                tok.parse::<usize>().map_err(|e| TopologyError::Parse {
                    line: idx + 1,
                    reason: format!("bad index {tok:?}: {e}"),
                })
            };
            if n_nodes.is_none() {
                n_nodes = Some(parse(line)?);
                continue;
            }
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) => edges.push((parse(a)?, parse(b)?)),
                _ => {
                    return Err(TopologyError::Parse {
                        line: idx + 1,
                        reason: format!("expected \"i j\", got {line:?}"),
                    })
                }
            }
        }
        let n_nodes = n_nodes.ok_or(TopologyError::Parse {
            line: 0,
            reason: "empty edge-list file".into(),
        })?;
        Self::from_edges(n_nodes, edges)
    }

    pub fn write_edge_list(&self, path: impl AsRef<Path>) -> Result<(), TopologyError> {
        Ok(std::fs::write(path, self.to_edge_list())?)
    }

    pub fn read_edge_list(path: impl AsRef<Path>) -> Result<Self, TopologyError> {
        Self::from_edge_list(&std::fs::read_to_string(path)?)
    }
}
