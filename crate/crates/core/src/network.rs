//! Random geometric sensor networks and local-degree consensus weights.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// Maximum number of position redraws in [`generate_geometric_network`].
pub const RETRY_CAP: usize = 1000;

/// A connected, non-bipartite sensor graph with its consensus weights.
///
/// Edges are stored as `(i, j)` with `i < j`, sorted lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorNetwork {
    side: f64,
    positions: Vec<[f64; 2]>,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    weights: DMatrix<f64>,
}

impl SensorNetwork {
    /// Builds a network from explicit positions and edges.
    ///
    /// Fails unless the graph is connected and, for two or more nodes, not
    /// bipartite. A single node needs no edges.
    pub fn new(side: f64, positions: Vec<[f64; 2]>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = positions.len();
        if n == 0 {
            return Err(Error::InvalidParameter(
                "network needs at least one node".into(),
            ));
        }
        if !side.is_finite() || side <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "side must be positive, got {side}"
            )));
        }
        let edges = normalize_edges(edges, n)?;
        if !is_connected(&edges, n) {
            return Err(Error::InvalidParameter(
                "network graph is not connected".into(),
            ));
        }
        if n > 1 && is_bipartite(&edges, n) {
            return Err(Error::InvalidParameter(
                "network graph is bipartite; consensus would not converge".into(),
            ));
        }
        let neighbors = adjacency(&edges, n);
        let weights = local_degree_weights(&edges, n);
        Ok(Self {
            side,
            positions,
            edges,
            neighbors,
            weights,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.positions.len()
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, k: usize) -> &[usize] {
        &self.neighbors[k]
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn spectral_convergence_factor(&self) -> f64 {
        spectral_convergence_factor(&self.weights)
    }

    /// Plain-text form: `N side`, then `N` lines `x y`, then one `i j` line
    /// per edge (0-based).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{} {}", self.n_nodes(), self.side).unwrap();
        for [x, y] in &self.positions {
            writeln!(out, "{x} {y}").unwrap();
        }
        for (i, j) in &self.edges {
            writeln!(out, "{i} {j}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let (line_no, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty network file".into(),
        })?;
        let mut fields = header.split_whitespace();
        let n: usize = parse_field(fields.next(), line_no, "node count")?;
        let side: f64 = parse_field(fields.next(), line_no, "side")?;
        expect_end(fields, line_no)?;

        let mut positions = Vec::with_capacity(n);
        for _ in 0..n {
            let (line_no, line) = lines.next().ok_or(Error::Parse {
                line: line_no,
                message: format!("expected {n} position lines"),
            })?;
            let mut f = line.split_whitespace();
            let x: f64 = parse_field(f.next(), line_no, "x")?;
            let y: f64 = parse_field(f.next(), line_no, "y")?;
            expect_end(f, line_no)?;
            positions.push([x, y]);
        }
        let mut edges = Vec::new();
        for (line_no, line) in lines {
            let mut f = line.split_whitespace();
            let i: usize = parse_field(f.next(), line_no, "edge endpoint")?;
            let j: usize = parse_field(f.next(), line_no, "edge endpoint")?;
            expect_end(f, line_no)?;
            edges.push((i, j));
        }
        Self::new(side, positions, &edges)
    }

    /// Short content hash of [`Self::to_text`], used to tag experiment output.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn parse_field<T: std::str::FromStr>(field: Option<&str>, line: usize, what: &str) -> Result<T> {
    let raw = field.ok_or_else(|| Error::Parse {
        line,
        message: format!("missing {what}"),
    })?;
    raw.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what}: {raw:?}"),
    })
}

fn expect_end<'a>(mut fields: impl Iterator<Item = &'a str>, line: usize) -> Result<()> {
    match fields.next() {
        None => Ok(()),
        Some(extra) => Err(Error::Parse {
            line,
            message: format!("unexpected trailing field {extra:?}"),
        }),
    }
}

fn normalize_edges(edges: &[(usize, usize)], n: usize) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::with_capacity(edges.len());
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(Error::InvalidParameter(format!(
                "edge ({a},{b}) references a node outside 0..{n}"
            )));
        }
        if a == b {
            return Err(Error::InvalidParameter(format!("self-loop at node {a}")));
        }
        out.push((a.min(b), a.max(b)));
    }
    out.sort_unstable();
    if out.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidParameter("duplicate edge".into()));
    }
    Ok(out)
}

fn adjacency(edges: &[(usize, usize)], n: usize) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    adj
}

pub fn is_connected(edges: &[(usize, usize)], n: usize) -> bool {
    if n == 0 {
        return true;
    }
    let adj = adjacency(edges, n);
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                queue.push_back(w);
            }
        }
    }
    count == n
}

/// Two-coloring by BFS over every component.
pub fn is_bipartite(edges: &[(usize, usize)], n: usize) -> bool {
    let adj = adjacency(edges, n);
    let mut color: Vec<Option<bool>> = vec![None; n];
    for start in 0..n {
        if color[start].is_some() {
            continue;
        }
        color[start] = Some(false);
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            let cv = color[v].unwrap();
            for &w in &adj[v] {
                match color[w] {
                    None => {
                        color[w] = Some(!cv);
                        queue.push_back(w);
                    }
                    Some(cw) if cw == cv => return false,
                    Some(_) => {}
                }
            }
        }
    }
    true
}

/// `W[k][j] = 1 / max(d_k, d_j)` on edges, zero off the graph, and the
/// diagonal completes each row to one.
pub fn local_degree_weights(edges: &[(usize, usize)], n: usize) -> DMatrix<f64> {
    let mut degree = vec![0usize; n];
    for &(i, j) in edges {
        degree[i] += 1;
        degree[j] += 1;
    }
    let mut w = DMatrix::zeros(n, n);
    for &(i, j) in edges {
        let v = 1.0 / degree[i].max(degree[j]) as f64;
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for k in 0..n {
        let off: f64 = (0..n).filter(|&j| j != k).map(|j| w[(k, j)]).sum();
        w[(k, k)] = 1.0 - off;
    }
    w
}

/// Second-largest eigenvalue modulus of a symmetric weight matrix: the
/// asymptotic per-iteration contraction of the consensus error.
pub fn spectral_convergence_factor(weights: &DMatrix<f64>) -> f64 {
    if weights.nrows() < 2 {
        return 0.0;
    }
    let mut moduli: Vec<f64> = weights
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .map(|v| v.abs())
        .collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    moduli[1].min(1.0)
}

/// Random geometric graph on `[0, side]^2` keeping exactly the
/// `target_edges` closest node pairs.
///
/// Distance ties are broken by lexicographic pair order. Layouts that are
/// disconnected or bipartite are redrawn with seeds derived from `seed`, up
/// to [`RETRY_CAP`] attempts.
pub fn generate_geometric_network(
    n: usize,
    target_edges: usize,
    side: f64,
    seed: u64,
) -> Result<SensorNetwork> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 nodes, got {n}"
        )));
    }
    let max_edges = n * (n - 1) / 2;
    if target_edges < n - 1 || target_edges > max_edges {
        return Err(Error::InvalidParameter(format!(
            "target_edges must lie in [{}, {max_edges}] for {n} nodes, got {target_edges}",
            n - 1
        )));
    }
    if !side.is_finite() || side <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "side must be positive, got {side}"
        )));
    }

    let mut last_reason = String::new();
    for attempt in 0..RETRY_CAP {
        let attempt_seed = if attempt == 0 {
            seed
        } else {
            derive_seed(seed, attempt as u64)
        };
        let mut rng = rng_from_seed(attempt_seed);
        let positions: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random_range(0.0..side), rng.random_range(0.0..side)])
            .collect();

        let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(max_edges);
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = positions[i][0] - positions[j][0];
                let dy = positions[i][1] - positions[j][1];
                pairs.push(((dx * dx + dy * dy).sqrt(), i, j));
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let edges: Vec<(usize, usize)> = pairs[..target_edges]
            .iter()
            .map(|&(_, i, j)| (i, j))
            .collect();

        if !is_connected(&edges, n) {
            last_reason = "graph not connected".into();
            continue;
        }
        if is_bipartite(&edges, n) {
            last_reason = "graph bipartite".into();
            continue;
        }
        return SensorNetwork::new(side, positions, &edges);
    }
    Err(Error::RetryCapExceeded {
        attempts: RETRY_CAP,
        reason: last_reason,
    })
}
