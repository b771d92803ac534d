//! Time-varying directed graphs with B-joint connectivity.
//!
//! Node ids are zero-based. Self-loops are never stored: every node is
//! implicitly its own in- and out-neighbor, and neighborhoods returned by
//! [`DigraphSnapshot::in_neighbors`] / [`DigraphSnapshot::out_neighbors`]
//! always include the node itself.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One directed graph instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DigraphSnapshot {
    n: usize,
    /// Sorted, duplicate-free, no self-loops.
    edges: Vec<(usize, usize)>,
}

impl DigraphSnapshot {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("a digraph needs at least one node"));
        }
        let mut edges: Vec<(usize, usize)> = edges.into_iter().collect();
        for &(from, to) in &edges {
            if from >= n || to >= n {
                return Err(Error::invalid(format!(
                    "edge ({from}, {to}) has an endpoint outside 0..{n}"
                )));
            }
            if from == to {
                return Err(Error::invalid(format!(
                    "explicit self-loop at node {from}; self-loops are implicit"
                )));
            }
        }
        edges.sort_unstable();
        let before = edges.len();
        edges.dedup();
        if edges.len() != before {
            return Err(Error::invalid("duplicate edge"));
        }
        Ok(DigraphSnapshot { n, edges })
    }

    /// Graph with self-loops only.
    pub fn empty(n: usize) -> Self {
        assert!(n > 0);
        DigraphSnapshot { n, edges: Vec::new() }
    }

    pub fn complete(n: usize) -> Self {
        assert!(n > 0);
        let edges = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        DigraphSnapshot { n, edges }
    }

    /// Directed cycle 0 -> 1 -> ... -> n-1 -> 0.
    pub fn cycle(n: usize) -> Self {
        assert!(n > 0);
        if n == 1 {
            return Self::empty(1);
        }
        let mut edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        edges.sort_unstable();
        edges.dedup();
        DigraphSnapshot { n, edges }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Directed edges, excluding the implicit self-loops.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        from == to || self.edges.binary_search(&(from, to)).is_ok()
    }

    /// Nodes that may send to `i`, including `i`, in ascending order.
    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .edges
            .iter()
            .filter(|&&(_, to)| to == i)
            .map(|&(from, _)| from)
            .chain(std::iter::once(i))
            .collect();
        v.sort_unstable();
        v
    }

    /// Nodes that may receive from `j`, including `j`, in ascending order.
    pub fn out_neighbors(&self, j: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .edges
            .iter()
            .filter(|&&(from, _)| from == j)
            .map(|&(_, to)| to)
            .chain(std::iter::once(j))
            .collect();
        v.sort_unstable();
        v
    }

    /// Out-degree not counting the self-loop.
    pub fn out_degree(&self, j: usize) -> usize {
        let lo = self.edges.partition_point(|&(from, _)| from < j);
        let hi = self.edges.partition_point(|&(from, _)| from <= j);
        hi - lo
    }

    /// Edge-set union of two snapshots over the same node set.
    pub fn union(&self, other: &DigraphSnapshot) -> Result<DigraphSnapshot> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: other.n,
            });
        }
        let mut edges = self.edges.clone();
        edges.extend_from_slice(&other.edges);
        edges.sort_unstable();
        edges.dedup();
        Ok(DigraphSnapshot { n: self.n, edges })
    }

    fn without_edge(&self, idx: usize) -> DigraphSnapshot {
        let mut edges = self.edges.clone();
        edges.remove(idx);
        DigraphSnapshot { n: self.n, edges }
    }
}

/// True iff every node reaches every other node along directed edges.
pub fn strongly_connected(g: &DigraphSnapshot) -> bool {
    let n = g.node_count();
    if n <= 1 {
        return true;
    }
    if n <= 64 {
        let mut fwd = vec![0u64; n];
        let mut rev = vec![0u64; n];
        for &(a, b) in g.edges() {
            fwd[a] |= 1 << b;
            rev[b] |= 1 << a;
        }
        return reaches_all_bits(&fwd) && reaches_all_bits(&rev);
    }
    let mut fwd = vec![Vec::new(); n];
    let mut rev = vec![Vec::new(); n];
    for &(a, b) in g.edges() {
        fwd[a].push(b);
        rev[b].push(a);
    }
    reaches_all(&fwd) && reaches_all(&rev)
}

fn reaches_all_bits(adj: &[u64]) -> bool {
    let all = if adj.len() == 64 { u64::MAX } else { (1u64 << adj.len()) - 1 };
    let mut seen = 1u64;
    let mut frontier = 1u64;
    while frontier != 0 {
        let mut next = 0u64;
        let mut f = frontier;
        while f != 0 {
            let u = f.trailing_zeros() as usize;
            f &= f - 1;
            next |= adj[u];
        }
        frontier = next & !seen;
        seen |= next;
    }
    seen & all == all
}

fn reaches_all(adj: &[Vec<usize>]) -> bool {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == adj.len()
}

/// Parameters of the Erdős–Rényi generator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErParams {
    pub n: usize,
    /// Independent inclusion probability of each ordered pair.
    pub p: f64,
    /// Directed edges removed after a strongly connected draw.
    pub drop_count: usize,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
}

fn default_retries() -> usize {
    1000
}

impl ErParams {
    pub fn new(n: usize, p: f64, drop_count: usize) -> Self {
        ErParams {
            n,
            p,
            drop_count,
            max_retries: default_retries(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid("generator needs n >= 2"));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::invalid(format!("edge probability {} outside [0, 1]", self.p)));
        }
        if self.drop_count >= self.n * (self.n - 1) {
            return Err(Error::invalid("drop_count must be below the number of possible edges"));
        }
        if self.max_retries == 0 {
            return Err(Error::invalid("max_retries must be positive"));
        }
        Ok(())
    }
}

/// Strongly connected Erdős–Rényi digraph with `drop_count` edges removed.
///
/// Draws are rejected until strongly connected. Edges are then removed one
/// at a time, each chosen uniformly among the edges whose removal keeps the
/// graph strongly connected. A draw from which no further edge can be
/// dropped is discarded and counts against the retry budget.
pub fn generate_er_directed<R: Rng + ?Sized>(params: &ErParams, rng: &mut R) -> Result<DigraphSnapshot> {
    params.validate()?;
    let n = params.n;
    'attempt: for _ in 0..params.max_retries {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.random_bool(params.p) {
                    edges.push((i, j));
                }
            }
        }
        let mut g = DigraphSnapshot { n, edges };
        if !strongly_connected(&g) {
            continue;
        }
        for _ in 0..params.drop_count {
            // candidates in uniformly random order, shuffled lazily
            let mut order: Vec<usize> = (0..g.edge_count()).collect();
            let mut kept = None;
            for k in 0..order.len() {
                let r = rng.random_range(k..order.len());
                order.swap(k, r);
                let next = g.without_edge(order[k]);
                if strongly_connected(&next) {
                    kept = Some(next);
                    break;
                }
            }
            match kept {
                Some(next) => g = next,
                None => continue 'attempt,
            }
        }
        return Ok(g);
    }
    Err(Error::RetryExhausted {
        attempts: params.max_retries,
    })
}

/// A materialized sequence of snapshots with its connectivity window.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeVaryingTopology {
    n: usize,
    window: usize,
    snapshots: Vec<DigraphSnapshot>,
}

impl TimeVaryingTopology {
    pub fn new(n: usize, window: usize, snapshots: Vec<DigraphSnapshot>) -> Result<Self> {
        if window == 0 {
            return Err(Error::invalid("window must be positive"));
        }
        if let Some(bad) = snapshots.iter().find(|s| s.node_count() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: bad.node_count(),
            });
        }
        Ok(TimeVaryingTopology { n, window, snapshots })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn horizon(&self) -> usize {
        self.snapshots.len()
    }

    pub fn snapshots(&self) -> &[DigraphSnapshot] {
        &self.snapshots
    }

    pub fn snapshot(&self, t: usize) -> Option<&DigraphSnapshot> {
        self.snapshots.get(t)
    }

    /// Union of the snapshots in aligned window `k`, if the window is complete.
    pub fn window_union(&self, k: usize) -> Option<DigraphSnapshot> {
        let start = k * self.window;
        let end = start + self.window;
        if end > self.snapshots.len() {
            return None;
        }
        let mut edges: Vec<(usize, usize)> = self.snapshots[start..end]
            .iter()
            .flat_map(|s| s.edges().iter().copied())
            .collect();
        edges.sort_unstable();
        edges.dedup();
        Some(DigraphSnapshot { n: self.n, edges })
    }

    pub fn replay(&self) -> TopologyReplay<'_> {
        TopologyReplay { topology: self, t: 0 }
    }

    pub fn to_json(&self) -> String {
        let doc = TopologyDoc {
            n: self.n,
            window: self.window,
            snapshots: self
                .snapshots
                .iter()
                .map(|s| s.edges().iter().map(|&(a, b)| [a, b]).collect())
                .collect(),
        };
        serde_json::to_string(&doc).expect("topology document serializes")
    }

    /// Parses `{"n": .., "B": .., "snapshots": [[[from, to], ..], ..]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TopologyDoc = serde_json::from_str(text)?;
        let snapshots = doc
            .snapshots
            .into_iter()
            .map(|edges| DigraphSnapshot::new(doc.n, edges.into_iter().map(|[a, b]| (a, b))))
            .collect::<Result<Vec<_>>>()?;
        TimeVaryingTopology::new(doc.n, doc.window, snapshots)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyDoc {
    n: usize,
    #[serde(rename = "B")]
    window: usize,
    snapshots: Vec<Vec<[usize; 2]>>,
}

/// True iff the union over every complete aligned window is strongly connected.
pub fn validate_b_joint(topology: &TimeVaryingTopology) -> bool {
    let windows = topology.horizon() / topology.window();
    (0..windows).all(|k| {
        topology
            .window_union(k)
            .is_some_and(|u| strongly_connected(&u))
    })
}

/// Sequential access to the snapshot used at each step of a run.
pub trait SnapshotSource {
    fn node_count(&self) -> usize;
    fn window(&self) -> usize;
    /// Snapshot for the next step; steps are consumed in order from t = 0.
    fn next_snapshot(&mut self) -> Result<DigraphSnapshot>;
}

/// Replays a materialized topology.
pub struct TopologyReplay<'a> {
    topology: &'a TimeVaryingTopology,
    t: usize,
}

impl SnapshotSource for TopologyReplay<'_> {
    fn node_count(&self) -> usize {
        self.topology.n
    }

    fn window(&self) -> usize {
        self.topology.window
    }

    fn next_snapshot(&mut self) -> Result<DigraphSnapshot> {
        let s = self
            .topology
            .snapshot(self.t)
            .cloned()
            .ok_or(Error::HorizonExhausted { step: self.t })?;
        self.t += 1;
        Ok(s)
    }
}

/// Generates a B-jointly connected topology window by window, on demand.
///
/// For `window == 1` every snapshot is an independent strongly connected
/// draw. For larger windows one strongly connected draw is made per window
/// and its edges are assigned uniformly at random to the window's
/// snapshots, so each aligned window union is strongly connected.
pub struct JointTopologyStream<R> {
    params: ErParams,
    window: usize,
    rng: R,
    pending: VecDeque<DigraphSnapshot>,
}

impl<R: Rng> JointTopologyStream<R> {
    pub fn new(params: ErParams, window: usize, rng: R) -> Result<Self> {
        params.validate()?;
        if window == 0 {
            return Err(Error::invalid("window must be positive"));
        }
        Ok(JointTopologyStream {
            params,
            window,
            rng,
            pending: VecDeque::new(),
        })
    }

    fn refill(&mut self) -> Result<()> {
        let g = generate_er_directed(&self.params, &mut self.rng)?;
        if self.window == 1 {
            self.pending.push_back(g);
            return Ok(());
        }
        let mut parts = vec![Vec::new(); self.window];
        for &e in g.edges() {
            parts[self.rng.random_range(0..self.window)].push(e);
        }
        for edges in parts {
            // edges arrive sorted and unique, so the invariant holds
            self.pending.push_back(DigraphSnapshot { n: g.n, edges });
        }
        Ok(())
    }
}

impl<R: Rng> SnapshotSource for JointTopologyStream<R> {
    fn node_count(&self) -> usize {
        self.params.n
    }

    fn window(&self) -> usize {
        self.window
    }

    fn next_snapshot(&mut self) -> Result<DigraphSnapshot> {
        if self.pending.is_empty() {
            self.refill()?;
        }
        Ok(self.pending.pop_front().expect("refill produced snapshots"))
    }
}

/// Materializes `horizon` steps of a [`JointTopologyStream`].
pub fn build_joint_topology<R: Rng>(
    params: &ErParams,
    window: usize,
    horizon: usize,
    rng: R,
) -> Result<TimeVaryingTopology> {
    if window == 0 || horizon % window != 0 {
        return Err(Error::invalid(format!(
            "horizon {horizon} is not a multiple of the window {window}"
        )));
    }
    let mut stream = JointTopologyStream::new(*params, window, rng)?;
    let snapshots = (0..horizon)
        .map(|_| stream.next_snapshot())
        .collect::<Result<Vec<_>>>()?;
    TimeVaryingTopology::new(params.n, window, snapshots)
}

/// Uniform in/out weights: `w_in` row-stochastic, `w_out` column-stochastic.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseWeights {
    pub w_in: DMatrix<f64>,
    pub w_out: DMatrix<f64>,
}

pub fn base_weights(g: &DigraphSnapshot) -> BaseWeights {
    let n = g.node_count();
    let mut w_in = DMatrix::zeros(n, n);
    let mut w_out = DMatrix::zeros(n, n);
    for i in 0..n {
        let ins = g.in_neighbors(i);
        let w = 1.0 / ins.len() as f64;
        for j in ins {
            w_in[(i, j)] = w;
        }
    }
    for j in 0..n {
        let outs = g.out_neighbors(j);
        let w = 1.0 / outs.len() as f64;
        for i in outs {
            w_out[(i, j)] = w;
        }
    }
    BaseWeights { w_in, w_out }
}
