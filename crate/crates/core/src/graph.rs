//! Communication topology of the follower network and the pinning matrix
//! `H` obtained from the leader-augmented Laplacian.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("topology needs at least one follower")]
    NoFollowers,
    #[error("self-loop on follower {0}")]
    SelfLoop(usize),
    #[error("edge {0}-{1} references a follower outside 1..={2}")]
    DanglingEdge(usize, usize, usize),
    #[error("pin {0} references a follower outside 1..={1}")]
    DanglingPin(usize, usize),
    #[error("leader pin set is empty; no follower receives the leader signal")]
    EmptyPins,
    #[error("follower {0} unreachable from the leader")]
    Unreachable(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EigenError {
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("matrix is not symmetric (entry ({0},{1}) differs from its transpose by {2:e})")]
    NotSymmetric(usize, usize, f64),
    #[error("symmetric eigensolver did not converge")]
    NoConvergence,
}

/// Undirected follower graph plus the set of followers that hear the leader.
///
/// Followers are numbered `1..=n_followers`. Edges are stored normalized as
/// `(i, j)` with `i < j`, so the follower subgraph is undirected by
/// construction; pins are directed edges from the leader.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n_followers: usize,
    edges: BTreeSet<(usize, usize)>,
    pins: BTreeSet<usize>,
}

impl Topology {
    /// Builds a topology without checking reachability. Use
    /// [`Topology::new`] for a validated value.
    pub fn unchecked(
        n_followers: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        pins: impl IntoIterator<Item = usize>,
    ) -> Self {
        let edges = edges
            .into_iter()
            .map(|(i, j)| if i <= j { (i, j) } else { (j, i) })
            .collect();
        Self {
            n_followers,
            edges,
            pins: pins.into_iter().collect(),
        }
    }

    pub fn new(
        n_followers: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        pins: impl IntoIterator<Item = usize>,
    ) -> Result<Self, TopologyError> {
        let t = Self::unchecked(n_followers, edges, pins);
        validate_topology(&t)?;
        Ok(t)
    }

    pub fn n_followers(&self) -> usize {
        self.n_followers
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn pins(&self) -> impl Iterator<Item = usize> + '_ {
        self.pins.iter().copied()
    }

    pub fn is_pinned(&self, follower: usize) -> bool {
        self.pins.contains(&follower)
    }

    /// Follower neighbours of `follower` (1-based), excluding the leader.
    pub fn neighbours(&self, follower: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(i, j)| {
                if i == follower {
                    Some(j)
                } else if j == follower {
                    Some(i)
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn degree(&self, follower: usize) -> usize {
        self.edges
            .iter()
            .filter(|&&(i, j)| i == follower || j == follower)
            .count()
    }
}

/// Checks the standing graph assumptions: valid indices, no self-loops, a
/// nonempty pin set, and every follower reachable from the leader node.
pub fn validate_topology(t: &Topology) -> Result<(), TopologyError> {
    let n = t.n_followers;
    if n == 0 {
        return Err(TopologyError::NoFollowers);
    }
    for &(i, j) in &t.edges {
        if i == j {
            return Err(TopologyError::SelfLoop(i));
        }
        if i == 0 || j > n {
            return Err(TopologyError::DanglingEdge(i, j, n));
        }
    }
    for &p in &t.pins {
        if p == 0 || p > n {
            return Err(TopologyError::DanglingPin(p, n));
        }
    }
    if t.pins.is_empty() {
        return Err(TopologyError::EmptyPins);
    }

    let mut seen = vec![false; n + 1];
    let mut queue: VecDeque<usize> = t.pins.iter().copied().collect();
    for &p in &t.pins {
        seen[p] = true;
    }
    while let Some(i) = queue.pop_front() {
        for j in t.neighbours(i) {
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    match (1..=n).find(|&i| !seen[i]) {
        Some(i) => Err(TopologyError::Unreachable(i)),
        None => Ok(()),
    }
}

/// Pinning matrix `H` together with its smallest eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct PinningMatrix {
    pub h: DMatrix<f64>,
    pub lambda1: f64,
}

impl PinningMatrix {
    pub fn from_topology(t: &Topology) -> Result<Self, GraphError> {
        let h = build_h(t)?;
        let lambda1 = smallest_eigenvalue(&h)?;
        Ok(Self { h, lambda1 })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
}

/// `H[i][i] = deg(i) + [i pinned]`, `H[i][j] = -1` on follower edges.
pub fn build_h(t: &Topology) -> Result<DMatrix<f64>, TopologyError> {
    validate_topology(t)?;
    let n = t.n_followers;
    let mut h = DMatrix::zeros(n, n);
    for &(i, j) in &t.edges {
        h[(i - 1, j - 1)] = -1.0;
        h[(j - 1, i - 1)] = -1.0;
        h[(i - 1, i - 1)] += 1.0;
        h[(j - 1, j - 1)] += 1.0;
    }
    for &p in &t.pins {
        h[(p - 1, p - 1)] += 1.0;
    }
    Ok(h)
}

pub fn smallest_eigenvalue(h: &DMatrix<f64>) -> Result<f64, EigenError> {
    let (r, c) = h.shape();
    if r != c {
        return Err(EigenError::NotSquare(r, c));
    }
    let scale = h.amax().max(1.0);
    for i in 0..r {
        for j in (i + 1)..r {
            let d = (h[(i, j)] - h[(j, i)]).abs();
            if d > 1e-12 * scale {
                return Err(EigenError::NotSymmetric(i, j, d));
            }
        }
    }
    let eig = h
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 0)
        .ok_or(EigenError::NoConvergence)?;
    Ok(eig.eigenvalues.min())
}
