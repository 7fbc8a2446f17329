//! Time-varying undirected topologies and the doubly stochastic weight
//! matrices derived from them.

mod analysis;
mod io;

pub use analysis::{
    mixing_analysis, mixing_constants, verify_assumption1, verify_assumption1_with, Assumption1Report, MixingMode,
    MixingReport,
};
pub use io::{read_binary, read_edge_csv, write_binary, write_edge_csv, TOPOLOGY_MAGIC, TOPOLOGY_VERSION};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::TopologyError;

/// Resample budget per connectivity window.
pub const MAX_WINDOW_RESAMPLES: usize = 10_000;

/// A dense adjacency matrix over `m` devices.
///
/// Generated graphs are symmetric with an empty diagonal; arbitrary matrices
/// can be built with [`Graph::from_dense`] so that checks have something to
/// reject.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    m: usize,
    adj: Vec<bool>,
}

impl Graph {
    pub fn empty(m: usize) -> Self {
        Self {
            m,
            adj: vec![false; m * m],
        }
    }

    pub fn complete(m: usize) -> Self {
        let mut g = Self::empty(m);
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    g.adj[i * m + j] = true;
                }
            }
        }
        g
    }

    /// Undirected graph from an edge list; self loops are ignored.
    pub fn from_edges(m: usize, edges: &[(usize, usize)]) -> Self {
        let mut g = Self::empty(m);
        for &(i, j) in edges {
            g.add_edge(i, j);
        }
        g
    }

    /// Row-major `m x m` matrix taken as is.
    pub fn from_dense(m: usize, adj: Vec<bool>) -> Result<Self, TopologyError> {
        if adj.len() != m * m {
            return Err(TopologyError::InvalidParameters(format!(
                "adjacency has {} entries, expected {}",
                adj.len(),
                m * m
            )));
        }
        Ok(Self { m, adj })
    }

    pub fn add_edge(&mut self, i: usize, j: usize) {
        if i != j {
            self.adj[i * self.m + j] = true;
            self.adj[j * self.m + i] = true;
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.m + j]
    }

    /// Number of out-neighbours of `i`, excluding `i` itself.
    pub fn degree(&self, i: usize) -> usize {
        (0..self.m).filter(|&j| j != i && self.has_edge(i, j)).count()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.m).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    /// Upper-triangle edges `(i, j)` with `i < j`, row-major.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.m {
            for j in i + 1..self.m {
                if self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        self.edges().len()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.m).all(|i| (0..self.m).all(|j| self.has_edge(i, j) == self.has_edge(j, i)))
    }

    pub fn has_empty_diagonal(&self) -> bool {
        (0..self.m).all(|i| !self.has_edge(i, i))
    }

    pub fn is_connected(&self) -> bool {
        graphs_connected(self.m, std::slice::from_ref(self))
    }
}

/// Whether the union of `graphs` connects all `m` nodes, treating every
/// entry as an undirected edge.
pub fn graphs_connected(m: usize, graphs: &[Graph]) -> bool {
    if m <= 1 {
        return true;
    }
    let mut uf = UnionFind::new(m);
    let mut components = m;
    for g in graphs {
        for i in 0..m {
            for j in 0..m {
                if i != j && g.has_edge(i, j) && uf.union(i, j) {
                    components -= 1;
                    if components == 1 {
                        return true;
                    }
                }
            }
        }
    }
    components == 1
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// An ordered list of per-iteration snapshots plus the parameters used to
/// generate them.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologySequence {
    m: usize,
    density: f64,
    window: usize,
    seed: u64,
    snapshots: Vec<Graph>,
}

impl TopologySequence {
    pub fn from_snapshots(
        snapshots: Vec<Graph>,
        density: f64,
        window: usize,
        seed: u64,
    ) -> Result<Self, TopologyError> {
        let m = snapshots.first().map(Graph::num_nodes).ok_or_else(|| {
            TopologyError::InvalidParameters("sequence needs at least one snapshot".into())
        })?;
        if snapshots.iter().any(|g| g.num_nodes() != m) {
            return Err(TopologyError::InvalidParameters(
                "snapshots have different node counts".into(),
            ));
        }
        if window == 0 {
            return Err(TopologyError::InvalidParameters("window must be >= 1".into()));
        }
        Ok(Self {
            m,
            density,
            window,
            seed,
            snapshots,
        })
    }

    /// `count` copies of the same graph.
    pub fn constant(graph: Graph, count: usize, window: usize) -> Result<Self, TopologyError> {
        let pairs = pair_count(graph.num_nodes()).max(1);
        let density = graph.num_edges() as f64 / pairs as f64;
        Self::from_snapshots(vec![graph; count], density, window, 0)
    }

    pub fn num_nodes(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn density(&self) -> f64 {
        self.density
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn snapshot(&self, t: usize) -> &Graph {
        &self.snapshots[t]
    }

    pub fn snapshots(&self) -> &[Graph] {
        &self.snapshots
    }

    /// Half-open index ranges of the connectivity windows; the last one may
    /// be shorter than `window`.
    pub fn windows(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        let t = self.len();
        (0..t.div_ceil(self.window)).map(move |k| k * self.window..((k + 1) * self.window).min(t))
    }

    pub fn weight_matrices(&self) -> Vec<WeightMatrix> {
        self.snapshots.iter().map(weights_from_graph).collect()
    }
}

pub fn pair_count(m: usize) -> usize {
    m * m.saturating_sub(1) / 2
}

/// Upper-triangle pair `(i, j)`, `i < j`, for a row-major pair index.
pub(crate) fn pair_from_index(m: usize, mut k: usize) -> (usize, usize) {
    let mut i = 0;
    loop {
        let row = m - 1 - i;
        if k < row {
            return (i, i + 1 + k);
        }
        k -= row;
        i += 1;
    }
}

/// Edges per snapshot for a given density.
pub fn edges_for_density(m: usize, density: f64) -> usize {
    let n = pair_count(m);
    // Guards against 0.29 * 100 = 28.999...
    (((density * n as f64) + 1e-9).floor() as usize).min(n)
}

/// Random time-varying topology whose every `window`-long union is connected.
///
/// Each snapshot holds `floor(density * m(m-1)/2)` edges drawn uniformly
/// without replacement; a window whose union is disconnected is redrawn as a
/// whole.
pub fn generate_sequence(
    m: usize,
    density: f64,
    iterations: usize,
    window: usize,
    seed: u64,
) -> Result<TopologySequence, TopologyError> {
    if m < 2 || m > usize::from(u16::MAX) {
        return Err(TopologyError::InvalidParameters(format!(
            "device count must be in 2..=65535, got {m}"
        )));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(TopologyError::InvalidParameters(format!(
            "density must be in (0, 1], got {density}"
        )));
    }
    if iterations == 0 || window == 0 {
        return Err(TopologyError::InvalidParameters(
            "iterations and window must be >= 1".into(),
        ));
    }
    let pairs = pair_count(m);
    let k = edges_for_density(m, density);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut snapshots = Vec::with_capacity(iterations);
    let num_windows = iterations.div_ceil(window);
    for w in 0..num_windows {
        let len = window.min(iterations - w * window);
        // A spanning tree needs m - 1 edges; fewer can never connect.
        if len * k < m - 1 {
            return Err(TopologyError::GenerationFailed {
                window: w,
                attempts: 0,
            });
        }
        let mut accepted = None;
        for _ in 0..MAX_WINDOW_RESAMPLES {
            let batch: Vec<Graph> = (0..len)
                .map(|_| {
                    let mut picks = index::sample(&mut rng, pairs, k).into_vec();
                    picks.sort_unstable();
                    let edges: Vec<_> = picks.into_iter().map(|p| pair_from_index(m, p)).collect();
                    Graph::from_edges(m, &edges)
                })
                .collect();
            if graphs_connected(m, &batch) {
                accepted = Some(batch);
                break;
            }
        }
        match accepted {
            Some(batch) => snapshots.extend(batch),
            None => {
                return Err(TopologyError::GenerationFailed {
                    window: w,
                    attempts: MAX_WINDOW_RESAMPLES,
                })
            }
        }
    }
    TopologySequence::from_snapshots(snapshots, density, window, seed)
}

/// Dense `m x m` aggregation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    m: usize,
    entries: Vec<f64>,
}

impl WeightMatrix {
    pub fn from_entries(m: usize, entries: Vec<f64>) -> Self {
        assert_eq!(entries.len(), m * m, "weight matrix must be m x m");
        Self { m, entries }
    }

    pub fn identity(m: usize) -> Self {
        let mut entries = vec![0.0; m * m];
        for i in 0..m {
            entries[i * m + i] = 1.0;
        }
        Self { m, entries }
    }

    pub fn uniform(m: usize) -> Self {
        Self {
            m,
            entries: vec![1.0 / m as f64; m * m],
        }
    }

    pub fn size(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.m..(i + 1) * self.m]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Smallest strictly positive entry (the realized `zeta`).
    pub fn min_positive(&self) -> f64 {
        self.entries
            .iter()
            .copied()
            .filter(|&v| v > 0.0)
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest deviation of any row or column sum from one.
    pub fn stochasticity_error(&self) -> f64 {
        let m = self.m;
        let mut err = 0.0_f64;
        for i in 0..m {
            let row: f64 = self.row(i).iter().sum();
            let col: f64 = (0..m).map(|r| self.get(r, i)).sum();
            err = err.max((row - 1.0).abs()).max((col - 1.0).abs());
        }
        err
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let m = self.m;
        (0..m).all(|i| (0..m).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &WeightMatrix) -> WeightMatrix {
        let m = self.m;
        assert_eq!(m, rhs.m);
        let mut out = vec![0.0; m * m];
        for i in 0..m {
            for k in 0..m {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let src = rhs.row(k);
                let dst = &mut out[i * m..(i + 1) * m];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        WeightMatrix { m, entries: out }
    }

    /// `max_ij |self_ij - 1/m|`.
    pub fn deviation_from_uniform(&self) -> f64 {
        let u = 1.0 / self.m as f64;
        self.entries
            .iter()
            .map(|v| (v - u).abs())
            .fold(0.0, f64::max)
    }
}

/// Aggregation weights from one snapshot.
///
/// Device `i` offers `1/(N_i + 1)` to each neighbour, an edge `{i, j}` gets
/// the smaller of the two offers, and each device keeps the remaining mass for
/// itself. For a symmetric input the result is symmetric and doubly
/// stochastic.
pub fn weights_from_graph(graph: &Graph) -> WeightMatrix {
    let m = graph.num_nodes();
    let offer: Vec<f64> = (0..m)
        .map(|i| 1.0 / (graph.degree(i) as f64 + 1.0))
        .collect();
    let mut entries = vec![0.0; m * m];
    for i in 0..m {
        let mut off_diag = 0.0;
        for j in 0..m {
            if i != j && graph.has_edge(i, j) {
                let a = offer[i].min(offer[j]);
                entries[i * m + j] = a;
                off_diag += a;
            }
        }
        entries[i * m + i] = 1.0 - off_diag;
    }
    WeightMatrix { m, entries }
}
