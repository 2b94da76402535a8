//! Communication graph: doubly stochastic weight matrices and the spectrum
//! of `B = I - A` that gates the fixed step sizes.

use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, Mat};

/// Undirected weighted communication graph over `n` players.
///
/// `weights` is symmetric, nonnegative and row-stochastic; off-diagonal
/// positive entries correspond exactly to edges.
#[derive(Debug, Clone)]
pub struct GraphTopology {
    pub n: usize,
    /// Unordered node pairs, 0-based, `i < j`, no self-loops.
    pub edges: Vec<(usize, usize)>,
    /// Symmetric doubly stochastic weight matrix including self-weights.
    pub weights: Mat,
    /// Per-node neighbor indices (excluding the node itself).
    pub neighbor_lists: Vec<Vec<usize>>,
}

/// Spectrum of `B = I - A` in ascending order.
#[derive(Debug, Clone)]
pub struct SpectralInfo {
    /// Second-smallest eigenvalue of `B`; positive for connected graphs with
    /// at least two nodes, 0 for the single-node graph.
    pub lambda2: f64,
    /// Largest eigenvalue of `B`.
    pub lambda_n: f64,
    pub eigenvalues: Vec<f64>,
}

const ROW_SUM_TOL: f64 = 1e-12;

/// Build the Metropolis-Hastings weight matrix for the given edge list.
///
/// Edges are 1-based pairs as they appear in run configs. Each edge weight is
/// `1 / (1 + max(deg_i, deg_j))` and the self-weight absorbs the remainder,
/// so the matrix is symmetric and doubly stochastic for any connected graph.
pub fn build_metropolis(n: usize, edges: &[(usize, usize)]) -> Result<GraphTopology> {
    if n == 0 {
        return Err(Error::InvalidEdge("player count must be at least 1".into()));
    }
    let mut canon: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
    for &(a, b) in edges {
        if a < 1 || a > n || b < 1 || b > n {
            return Err(Error::InvalidEdge(format!("({a}, {b}) out of range 1..={n}")));
        }
        if a == b {
            return Err(Error::InvalidEdge(format!("self-loop at node {a}")));
        }
        let (i, j) = (a.min(b) - 1, a.max(b) - 1);
        if !canon.contains(&(i, j)) {
            canon.push((i, j));
        }
    }
    canon.sort_unstable();

    let mut degree = vec![0usize; n];
    for &(i, j) in &canon {
        degree[i] += 1;
        degree[j] += 1;
    }

    let mut weights = Mat::zeros(n, n);
    for &(i, j) in &canon {
        let w = 1.0 / (1.0 + degree[i].max(degree[j]) as f64);
        *weights.at_mut(i, j) = w;
        *weights.at_mut(j, i) = w;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| weights.at(i, j)).sum();
        *weights.at_mut(i, i) = 1.0 - off;
    }

    finish_topology(n, canon, weights)
}

/// Validate a user-supplied weight matrix and derive the edge set from its
/// positive off-diagonal entries.
pub fn from_weights(weights: Mat) -> Result<GraphTopology> {
    let n = weights.rows;
    if n == 0 || weights.cols != n {
        return Err(Error::DimensionMismatch { expected: n, got: weights.cols });
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if weights.at(i, j) > 0.0 {
                edges.push((i, j));
            }
        }
    }
    finish_topology(n, edges, weights)
}

fn finish_topology(n: usize, edges: Vec<(usize, usize)>, weights: Mat) -> Result<GraphTopology> {
    for i in 0..n {
        let mut row_sum = 0.0;
        for j in 0..n {
            let w = weights.at(i, j);
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::InvalidEdge(format!("weight a[{i}][{j}] = {w} outside [0, 1]")));
            }
            if (weights.at(i, j) - weights.at(j, i)).abs() > 0.0 {
                return Err(Error::InvalidEdge(format!("weight matrix asymmetric at ({i}, {j})")));
            }
            row_sum += w;
        }
        if (row_sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InvalidEdge(format!("row {i} sums to {row_sum}, expected 1")));
        }
    }

    let mut neighbor_lists = vec![Vec::new(); n];
    for &(i, j) in &edges {
        neighbor_lists[i].push(j);
        neighbor_lists[j].push(i);
    }
    for l in &mut neighbor_lists {
        l.sort_unstable();
    }

    // Connectivity by traversal; intentionally independent of the spectrum.
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &v in &neighbor_lists[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    if seen.iter().any(|&s| !s) {
        return Err(Error::DisconnectedGraph);
    }

    Ok(GraphTopology { n, edges, weights, neighbor_lists })
}

impl GraphTopology {
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights.at(i, j)
    }

    /// Weighted neighborhood average `sum_j a_ij v_j` including the
    /// self-weight term, reading only neighbor values.
    pub fn mix<'a, F>(&self, i: usize, value: F, out: &mut [f64])
    where
        F: Fn(usize) -> &'a [f64],
    {
        out.fill(0.0);
        let own = value(i);
        let aii = self.weight(i, i);
        for (o, v) in out.iter_mut().zip(own) {
            *o = aii * v;
        }
        for &j in &self.neighbor_lists[i] {
            let w = self.weight(i, j);
            for (o, v) in out.iter_mut().zip(value(j)) {
                *o += w * v;
            }
        }
    }
}

/// Eigenvalues of `B = I - A` in ascending order.
pub fn spectral_bounds(g: &GraphTopology) -> Result<SpectralInfo> {
    let n = g.n;
    let mut b = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let a = g.weights.at(i, j);
            *b.at_mut(i, j) = if i == j { 1.0 - a } else { -a };
        }
    }
    let (eigenvalues, _) = sym_eigen(&b)?;
    if eigenvalues[0].abs() > 1e-10 {
        return Err(Error::NumericalFailure(format!(
            "smallest eigenvalue of I - A should be 0, got {}",
            eigenvalues[0]
        )));
    }
    let lambda2 = if n >= 2 { eigenvalues[1] } else { 0.0 };
    let lambda_n = *eigenvalues.last().unwrap();
    Ok(SpectralInfo { lambda2, lambda_n, eigenvalues })
}
