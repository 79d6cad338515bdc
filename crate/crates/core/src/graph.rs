//! Undirected neighbor graphs, Metropolis fusion weights and graph metrics.
//!
//! Every node is implicitly its own neighbor. Node ids are 0-based here; the
//! config grammar in [`crate::config`] uses 1-based ids.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Above this size `rho2` switches from a dense eigen-solve to deflated power iteration.
const DENSE_EIGEN_LIMIT: usize = 64;
const RHO2_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    node_count: usize,
    edges: BTreeSet<(usize, usize)>,
    // sorted, includes the node itself
    neighborhoods: Vec<Vec<usize>>,
}

impl NeighborGraph {
    /// Builds a graph from unordered pairs. Pairs are normalized to `(min, max)`;
    /// duplicates collapse. Self-pairs and out-of-range ids are rejected.
    pub fn new(node_count: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::Graph("node count must be positive".into()));
        }
        let mut edges = BTreeSet::new();
        for (a, b) in pairs {
            if a == b {
                return Err(Error::Graph(format!("explicit self-pair ({a}, {a}); self-loops are implicit")));
            }
            if a >= node_count || b >= node_count {
                return Err(Error::Graph(format!(
                    "edge ({a}, {b}) out of range for {node_count} nodes"
                )));
            }
            edges.insert((a.min(b), a.max(b)));
        }
        let mut neighborhoods: Vec<Vec<usize>> = (0..node_count).map(|i| vec![i]).collect();
        for &(a, b) in &edges {
            neighborhoods[a].push(b);
            neighborhoods[b].push(a);
        }
        for nb in &mut neighborhoods {
            nb.sort_unstable();
        }
        Ok(Self { node_count, edges, neighborhoods })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Canonical `(i, j)` pairs with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    /// The neighbor set of `i`, including `i` itself, in ascending order.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighborhoods[i]
    }

    /// `|N_i|`, counting the node itself.
    pub fn neighborhood_size(&self, i: usize) -> usize {
        self.neighborhoods[i].len()
    }

    pub fn is_isolated(&self, i: usize) -> bool {
        self.neighborhoods[i].len() == 1
    }

    pub fn is_connected(&self) -> bool {
        self.connected_components().len() == 1
    }

    /// Subgraph induced by `nodes` (relabelled in the given order).
    pub fn induced(&self, nodes: &[usize]) -> Result<NeighborGraph> {
        let mut index = vec![usize::MAX; self.node_count];
        for (new, &old) in nodes.iter().enumerate() {
            index[old] = new;
        }
        let pairs = self
            .edges()
            .filter(|&(a, b)| index[a] != usize::MAX && index[b] != usize::MAX)
            .map(|(a, b)| (index[a], index[b]));
        NeighborGraph::new(nodes.len(), pairs)
    }

    /// Short stable digest of the node count and canonical edge list.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.node_count as u64).to_le_bytes());
        for &(a, b) in &self.edges {
            hasher.update((a as u64).to_le_bytes());
            hasher.update((b as u64).to_le_bytes());
        }
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn connected_components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.node_count];
        let mut out = Vec::new();
        for start in 0..self.node_count {
            if seen[start] {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(u) = queue.pop_front() {
                comp.push(u);
                for &v in self.neighbors(u) {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn shortest_distances(&self) -> DistanceTable {
        let n = self.node_count;
        let mut d = vec![vec![None; n]; n];
        for (src, row) in d.iter_mut().enumerate() {
            row[src] = Some(0);
            let mut queue = VecDeque::from([src]);
            while let Some(u) = queue.pop_front() {
                let du = row[u].expect("queued nodes have a distance");
                for &v in self.neighbors(u) {
                    if row[v].is_none() {
                        row[v] = Some(du + 1);
                        queue.push_back(v);
                    }
                }
            }
        }
        DistanceTable { d }
    }
}

impl fmt::Display for NeighborGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "graph(n={}, edges={})", self.node_count, self.edges.len())
    }
}

/// Hop distances; `None` marks node pairs in different components.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceTable {
    d: Vec<Vec<Option<usize>>>,
}

impl DistanceTable {
    pub fn get(&self, i: usize, j: usize) -> Option<usize> {
        self.d[i][j]
    }

    pub fn node_count(&self) -> usize {
        self.d.len()
    }
}

/// Metropolis fusion weights and the second-largest eigenvalue magnitude.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    entries: DMatrix<f64>,
    rho2: f64,
}

impl WeightMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn rho2(&self) -> f64 {
        self.rho2
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    /// `W^t` by repeated multiplication.
    pub fn power(&self, t: usize) -> DMatrix<f64> {
        let n = self.size();
        let mut acc = DMatrix::identity(n, n);
        for _ in 0..t {
            acc = &acc * &self.entries;
        }
        acc
    }

    /// Returns `max_t (max_ij |[W^t]_ij - 1/N| - rho2^t)` over `1..=t_max`.
    /// Non-positive (up to rounding) when the spectral decay bound holds.
    pub fn consensus_decay_excess(&self, t_max: usize) -> f64 {
        let n = self.size();
        let uniform = 1.0 / n as f64;
        let mut acc = DMatrix::identity(n, n);
        let mut worst = f64::NEG_INFINITY;
        for t in 1..=t_max {
            acc = &acc * &self.entries;
            let dev = acc.iter().map(|v| (v - uniform).abs()).fold(0.0, f64::max);
            worst = worst.max(dev - self.rho2.powi(t as i32));
        }
        worst
    }
}

pub fn metropolis_weights(g: &NeighborGraph) -> WeightMatrix {
    let n = g.node_count();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let ni = g.neighborhood_size(i);
        let mut off = 0.0;
        for &j in g.neighbors(i) {
            if j == i {
                continue;
            }
            let wij = 1.0 / ni.max(g.neighborhood_size(j)) as f64;
            w[(i, j)] = wij;
            off += wij;
        }
        w[(i, i)] = 1.0 - off;
    }
    let rho2 = second_eigen_magnitude(&w);
    WeightMatrix { entries: w, rho2 }
}

fn second_eigen_magnitude(w: &DMatrix<f64>) -> f64 {
    let n = w.nrows();
    if n == 1 {
        return 0.0;
    }
    if n <= DENSE_EIGEN_LIMIT {
        let eig = SymmetricEigen::new(w.clone());
        let mut mags: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
        mags.sort_by(|a, b| b.total_cmp(a));
        return mags[1].min(1.0);
    }
    deflated_power_iteration(w)
}

/// Largest eigenvalue magnitude of `W - (1/N) 11^T`, which for a symmetric
/// stochastic `W` equals the second-largest magnitude of `W`.
fn deflated_power_iteration(w: &DMatrix<f64>) -> f64 {
    let n = w.nrows();
    let shift = DMatrix::from_element(n, n, 1.0 / n as f64);
    let a = w - shift;
    let a2 = &a * &a;
    // deterministic, generic start vector
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_749_895).fract());
    let mean = v.mean();
    v.add_scalar_mut(-mean);
    let norm = v.norm();
    if norm == 0.0 {
        return 0.0;
    }
    v /= norm;
    let mut lambda = 0.0;
    for _ in 0..200_000 {
        let next = &a2 * &v;
        let est = v.dot(&next);
        let nn = next.norm();
        if nn == 0.0 {
            return 0.0;
        }
        v = next / nn;
        if (est - lambda).abs() <= RHO2_TOL {
            lambda = est;
            break;
        }
        lambda = est;
    }
    lambda.max(0.0).sqrt().min(1.0)
}

/// Samples G(n, p), visiting pairs in canonical `i < j` order. With
/// `require_connected`, whole graphs are redrawn from the same stream.
pub fn gen_erdos_renyi(
    n: usize,
    p: f64,
    seed: u64,
    require_connected: bool,
    max_attempts: u32,
) -> Result<NeighborGraph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("edge probability {p} outside [0, 1]")));
    }
    if n == 0 {
        return Err(Error::Graph("node count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attempts = if require_connected { max_attempts.max(1) } else { 1 };
    for _ in 0..attempts {
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < p {
                    pairs.push((i, j));
                }
            }
        }
        let g = NeighborGraph::new(n, pairs)?;
        if !require_connected || g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::Connectivity { attempts, n, p })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinGraph {
    Complete(usize),
    Cycle(usize),
    Path(usize),
    /// Twelve nodes: a complete graph on 0..6 and a ring on 6..12.
    CliqueAndRing,
}

pub fn builtin_graph(kind: BuiltinGraph) -> Result<NeighborGraph> {
    match kind {
        BuiltinGraph::Complete(n) => {
            NeighborGraph::new(n, (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))))
        }
        BuiltinGraph::Cycle(n) => NeighborGraph::new(n, ring_pairs(0, n)),
        BuiltinGraph::Path(n) => NeighborGraph::new(n, (1..n).map(|i| (i - 1, i))),
        BuiltinGraph::CliqueAndRing => {
            let complete = (0..6).flat_map(|i| ((i + 1)..6).map(move |j| (i, j)));
            NeighborGraph::new(12, complete.chain(ring_pairs(6, 6)))
        }
    }
}

fn ring_pairs(offset: usize, n: usize) -> Vec<(usize, usize)> {
    match n {
        0 | 1 => Vec::new(),
        2 => vec![(offset, offset + 1)],
        _ => (0..n).map(|i| (offset + i, offset + (i + 1) % n)).collect(),
    }
}
