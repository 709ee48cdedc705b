//! Bus-level graph structure: topology, the symmetric-normalized
//! propagation matrix `D̃^(−1/2)(A + I)D̃^(−1/2)`, node relabeling and
//! global pooling.

mod config;
mod permutation;

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::TopologyConfig;
pub use permutation::Permutation;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Bus numbers (1-based) carrying voltage measurements in the default feeder.
pub const DEFAULT_MEASURED_BUSES: [usize; 6] = [1, 5, 8, 9, 10, 13];

/// Undirected graph over `n_nodes` buses. Indices are 0-based internally.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    measured: BTreeSet<usize>,
    names: Option<Vec<String>>,
}

impl Topology {
    /// Validates indices, self-loops and duplicate edges. Connectivity is
    /// checked separately by [`Topology::require_connected`].
    pub fn new(
        n_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        measured: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::Topology("graph needs at least one node".into()));
        }
        let mut seen = BTreeSet::new();
        let mut list = Vec::new();
        for (u, v) in edges {
            if u >= n_nodes || v >= n_nodes {
                return Err(Error::Topology(format!(
                    "edge ({u}, {v}) out of range for {n_nodes} nodes"
                )));
            }
            if u == v {
                return Err(Error::Topology(format!("self-loop at node {u}")));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::Topology(format!("duplicate edge ({u}, {v})")));
            }
            list.push((u, v));
        }
        let measured: BTreeSet<usize> = measured.into_iter().collect();
        if let Some(&bad) = measured.iter().find(|&&m| m >= n_nodes) {
            return Err(Error::Topology(format!("measured node {bad} out of range")));
        }
        Ok(Topology {
            n_nodes,
            edges: list,
            measured,
            names: None,
        })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_nodes {
            return Err(Error::Topology(format!(
                "{} names for {} nodes",
                names.len(),
                self.n_nodes
            )));
        }
        self.names = Some(names);
        Ok(self)
    }

    /// Cycle `0–1–…–(n−1)–0` with every node measured.
    pub fn ring(n: usize) -> Result<Self> {
        let edges: Vec<_> = match n {
            0 | 1 => Vec::new(),
            2 => vec![(0, 1)],
            _ => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        };
        Topology::new(n, edges, 0..n)
    }

    /// The default 13-bus feeder: buses 1–13 in a single loop, measured at
    /// buses 1, 5, 8, 9, 10 and 13.
    pub fn default_feeder() -> Self {
        let edges = (0..13).map(|i| (i, (i + 1) % 13));
        Topology::new(13, edges, DEFAULT_MEASURED_BUSES.iter().map(|b| b - 1))
            .expect("static topology")
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn measured(&self) -> &BTreeSet<usize> {
        &self.measured
    }

    pub fn is_measured(&self, node: usize) -> bool {
        self.measured.contains(&node)
    }

    /// Display label; defaults to the 1-based bus number.
    pub fn name(&self, node: usize) -> String {
        match &self.names {
            Some(names) => names[node].clone(),
            None => (node + 1).to_string(),
        }
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    /// Symmetric 0/1 adjacency matrix with zero diagonal.
    pub fn adjacency(&self) -> Tensor {
        let n = self.n_nodes;
        let mut a = Tensor::zeros(vec![n, n]);
        for &(u, v) in &self.edges {
            a.set(&[u, v], 1.0);
            a.set(&[v, u], 1.0);
        }
        a
    }

    pub fn propagation(&self) -> PropagationMatrix {
        normalize(&self.adjacency()).expect("adjacency of a valid topology")
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        adj
    }

    /// Breadth-first hop counts from `source` to every node.
    pub fn hop_distances(&self, source: usize) -> Result<Vec<usize>> {
        if source >= self.n_nodes {
            return Err(Error::Topology(format!(
                "source node {source} out of range"
            )));
        }
        let adj = self.neighbors();
        let mut dist = vec![usize::MAX; self.n_nodes];
        dist[source] = 0;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        if let Some(unreached) = dist.iter().position(|&d| d == usize::MAX) {
            return Err(Error::Topology(format!(
                "graph is disconnected: node {unreached} unreachable from node {source}"
            )));
        }
        Ok(dist)
    }

    pub fn is_connected(&self) -> bool {
        self.hop_distances(0).is_ok()
    }

    pub fn require_connected(&self) -> Result<()> {
        self.hop_distances(0).map(|_| ())
    }

    /// Stable hex digest of the node count, edge set and measured set.
    pub fn fingerprint(&self) -> String {
        let mut edges: Vec<_> = self
            .edges
            .iter()
            .map(|&(u, v)| (u.min(v), u.max(v)))
            .collect();
        edges.sort_unstable();
        let mut hasher = Sha256::new();
        hasher.update((self.n_nodes as u64).to_le_bytes());
        for (u, v) in edges {
            hasher.update((u as u64).to_le_bytes());
            hasher.update((v as u64).to_le_bytes());
        }
        hasher.update(b"measured");
        for &m in &self.measured {
            hasher.update((m as u64).to_le_bytes());
        }
        hex::encode(&hasher.finalize()[..16])
    }
}

/// `D̃^(−1/2)(A + I)D̃^(−1/2)` for a symmetric graph.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagationMatrix {
    values: Tensor,
}

impl PropagationMatrix {
    pub fn n_nodes(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.at(&[i, j])
    }
}

/// Adds self-loops and applies symmetric degree normalization.
///
/// Isolated nodes keep `D̃_ii = 1` from their self-loop.
pub fn normalize(adjacency: &Tensor) -> Result<PropagationMatrix> {
    let shape = adjacency.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::Validation(format!(
            "adjacency must be square, got {shape:?}"
        )));
    }
    let n = shape[0];
    let a = |i: usize, j: usize| adjacency.data()[i * n + j];
    for i in 0..n {
        if a(i, i) != 0.0 {
            return Err(Error::Validation(format!("nonzero diagonal at {i}")));
        }
        for j in 0..n {
            if a(i, j) < 0.0 || !a(i, j).is_finite() {
                return Err(Error::Validation(format!("invalid weight at ({i}, {j})")));
            }
            if a(i, j) != a(j, i) {
                return Err(Error::Validation(format!("asymmetric at ({i}, {j})")));
            }
        }
    }
    let degree: Vec<f64> = (0..n)
        .map(|i| 1.0 + (0..n).map(|j| a(i, j)).sum::<f64>())
        .collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let with_loop = a(i, j) + if i == j { 1.0 } else { 0.0 };
            if with_loop != 0.0 {
                out[i * n + j] = with_loop / (degree[i] * degree[j]).sqrt();
            }
        }
    }
    Ok(PropagationMatrix {
        values: Tensor::new(vec![n, n], out)?,
    })
}

/// `P · H` for `H: [N×F]` or batched `H: [B×N×F]`, differentiable in `H`.
pub fn propagate(tape: &mut Tape, p: &PropagationMatrix, h: Var) -> Result<Var> {
    let shape = tape.shape(h).to_vec();
    let node_axis = match shape.len() {
        2 => 0,
        3 => 1,
        _ => return Err(Error::dim("propagate", p.values.shape(), &shape)),
    };
    if shape[node_axis] != p.n_nodes() {
        return Err(Error::dim("propagate", p.values.shape(), &shape));
    }
    let pv = tape.constant(p.values.clone());
    if node_axis == 0 {
        tape.matmul(pv, h)
    } else {
        tape.left_matmul(pv, h)
    }
}

/// Per-feature mean over nodes: `[N×F] → [F]`, or `[B×N×F] → [B×F]`.
pub fn global_mean_pool(tape: &mut Tape, h: Var) -> Result<Var> {
    match tape.shape(h).len() {
        2 => tape.mean_axis(h, 0),
        3 => tape.mean_axis(h, 1),
        _ => Err(Error::Shape(format!(
            "global_mean_pool expects [N×F] or [B×N×F], got {:?}",
            tape.shape(h)
        ))),
    }
}

/// Relabels nodes so that old node `i` becomes `perm.get(i)`, moving the
/// rows of `h` (leading axis = nodes) accordingly.
pub fn permute(topology: &Topology, h: &Tensor, perm: &Permutation) -> Result<(Topology, Tensor)> {
    let n = topology.n_nodes();
    if perm.len() != n {
        return Err(Error::Validation(format!(
            "permutation of {} for {n} nodes",
            perm.len()
        )));
    }
    let edges = topology
        .edges
        .iter()
        .map(|&(u, v)| (perm.get(u), perm.get(v)));
    let measured = topology.measured.iter().map(|&m| perm.get(m));
    let mut relabeled = Topology::new(n, edges, measured)?;
    if let Some(names) = &topology.names {
        relabeled.names = Some(perm.apply_to_slice(names));
    }
    Ok((relabeled, perm.permute_axis(h, 0)?))
}
