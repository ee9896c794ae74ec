//! Random graph generation and the DAG type that the rest of the crate
//! compiles.
//!
//! The pipeline used everywhere is [`erdos_renyi`] →
//! [`largest_connected_component`] → [`orient_acyclic`], wrapped by
//! [`generate_dag`].

mod edgelist;

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::rng::{seeded, Stream};

pub use edgelist::{read_dag, read_undirected, write_dag, write_undirected, ParseError, ParseErrorKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("edge probability {0} is outside [0, 1]")]
    Probability(f64),
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    OutOfBounds(usize, usize, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    Duplicate(usize, usize),
    #[error("graph contains a cycle: {0:?}")]
    Cycle(Vec<usize>),
}

/// Simple undirected graph on nodes `0..node_count`. Edges are stored as
/// `(u, v)` with `u < v`, sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UndirectedGraph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
}

impl UndirectedGraph {
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, GraphError> {
        if node_count == 0 {
            return Err(GraphError::Empty);
        }
        let mut normalized = Vec::new();
        for (u, v) in edges {
            if u >= node_count || v >= node_count {
                return Err(GraphError::OutOfBounds(u, v, node_count));
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            normalized.push((u.min(v), u.max(v)));
        }
        normalized.sort_unstable();
        if let Some(w) = normalized.windows(2).find(|w| w[0] == w[1]) {
            return Err(GraphError::Duplicate(w[0].0, w[0].1));
        }
        Ok(Self { node_count, edges: normalized })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }
}

/// Directed acyclic graph on nodes `0..node_count`.
///
/// Construction rejects cycles, so every `Dag` value admits a topological
/// order. Predecessor and successor lists are kept in ascending id order.
#[derive(Debug, Clone)]
pub struct Dag {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    preds: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
    topo: Vec<usize>,
}

impl PartialEq for Dag {
    fn eq(&self, other: &Self) -> bool {
        self.node_count == other.node_count && self.edges == other.edges
    }
}

impl Eq for Dag {}

impl Dag {
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, GraphError> {
        if node_count == 0 {
            return Err(GraphError::Empty);
        }
        let mut edges: Vec<(usize, usize)> = edges.into_iter().collect();
        for &(u, v) in &edges {
            if u >= node_count || v >= node_count {
                return Err(GraphError::OutOfBounds(u, v, node_count));
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
        }
        edges.sort_unstable();
        if let Some(w) = edges.windows(2).find(|w| w[0] == w[1]) {
            return Err(GraphError::Duplicate(w[0].0, w[0].1));
        }
        let topo = validate_dag(node_count, &edges)?;
        let mut preds = vec![Vec::new(); node_count];
        let mut succs = vec![Vec::new(); node_count];
        // edges are sorted by (u, v): succs come out ascending, preds need a sort
        for &(u, v) in &edges {
            succs[u].push(v);
            preds[v].push(u);
        }
        for list in &mut preds {
            list.sort_unstable();
        }
        Ok(Self { node_count, edges, preds, succs, topo })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Edges sorted lexicographically.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.binary_search(&(u, v)).is_ok()
    }

    pub fn preds(&self, v: usize) -> &[usize] {
        &self.preds[v]
    }

    pub fn succs(&self, v: usize) -> &[usize] {
        &self.succs[v]
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.preds[v].len()
    }

    /// Topological order, smallest available id first.
    pub fn topological_order(&self) -> &[usize] {
        &self.topo
    }

    /// Input nodes, ascending.
    pub fn sources(&self) -> Vec<usize> {
        (0..self.node_count).filter(|&v| self.preds[v].is_empty()).collect()
    }

    /// Output nodes, ascending.
    pub fn sinks(&self) -> Vec<usize> {
        (0..self.node_count).filter(|&v| self.succs[v].is_empty()).collect()
    }

    pub fn isolated_nodes(&self) -> Vec<usize> {
        (0..self.node_count).filter(|&v| self.preds[v].is_empty() && self.succs[v].is_empty()).collect()
    }
}

/// Kahn's algorithm over an arbitrary directed edge list.
///
/// Returns a topological order (smallest ready id first) or
/// [`GraphError::Cycle`] carrying one cycle `c` with `c[i] → c[i+1]` and
/// `c[last] → c[0]`, rotated to start at its smallest id.
pub fn validate_dag(node_count: usize, edges: &[(usize, usize)]) -> Result<Vec<usize>, GraphError> {
    let mut indeg = vec![0usize; node_count];
    let mut succs = vec![Vec::new(); node_count];
    let mut preds = vec![Vec::new(); node_count];
    for &(u, v) in edges {
        if u >= node_count || v >= node_count {
            return Err(GraphError::OutOfBounds(u, v, node_count));
        }
        indeg[v] += 1;
        succs[u].push(v);
        preds[v].push(u);
    }
    let mut ready: BinaryHeap<Reverse<usize>> = (0..node_count).filter(|&v| indeg[v] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(node_count);
    while let Some(Reverse(u)) = ready.pop() {
        order.push(u);
        for &v in &succs[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                ready.push(Reverse(v));
            }
        }
    }
    if order.len() == node_count {
        return Ok(order);
    }

    // Every unprocessed node still has an unprocessed predecessor, so walking
    // predecessors inside that set must revisit a node.
    let start = (0..node_count).find(|&v| indeg[v] > 0).expect("unprocessed node");
    let mut position = vec![usize::MAX; node_count];
    let mut walk = Vec::new();
    let mut cur = start;
    while position[cur] == usize::MAX {
        position[cur] = walk.len();
        walk.push(cur);
        cur = *preds[cur].iter().find(|&&p| indeg[p] > 0).expect("unprocessed predecessor");
    }
    let mut cycle: Vec<usize> = walk[position[cur]..].to_vec();
    cycle.reverse();
    let min_at = cycle.iter().enumerate().min_by_key(|&(_, &v)| v).map(|(i, _)| i).unwrap_or(0);
    cycle.rotate_left(min_at);
    Err(GraphError::Cycle(cycle))
}

/// G(n, p): each pair `u < v` is visited in lexicographic order and kept
/// with probability `p`, one uniform draw per pair.
pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<UndirectedGraph, GraphError> {
    if n == 0 {
        return Err(GraphError::Empty);
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(GraphError::Probability(p));
    }
    let mut rng = seeded(seed, Stream::Edges);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Ok(UndirectedGraph { node_count: n, edges })
}

/// Induced subgraph on one connected component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub graph: UndirectedGraph,
    /// `original_ids[new_id]` is the node id in the input graph.
    pub original_ids: Vec<usize>,
}

/// Largest connected component, relabelled to `0..k` preserving the order
/// of original ids. Equal sizes are broken by the smallest member id.
pub fn largest_connected_component(g: &UndirectedGraph) -> Result<Component, GraphError> {
    if g.node_count == 0 {
        return Err(GraphError::Empty);
    }
    let adj = g.adjacency();
    let mut label = vec![usize::MAX; g.node_count];
    let mut best: Option<(usize, usize)> = None; // (size, label)
    let mut queue = VecDeque::new();
    let mut next_label = 0;
    for root in 0..g.node_count {
        if label[root] != usize::MAX {
            continue;
        }
        label[root] = next_label;
        queue.push_back(root);
        let mut size = 0;
        while let Some(u) = queue.pop_front() {
            size += 1;
            for &v in &adj[u] {
                if label[v] == usize::MAX {
                    label[v] = next_label;
                    queue.push_back(v);
                }
            }
        }
        // roots are visited in ascending order, so strict > keeps the
        // component with the smallest minimum id on ties
        if best.is_none_or(|(s, _)| size > s) {
            best = Some((size, next_label));
        }
        next_label += 1;
    }
    let (_, keep) = best.expect("at least one node");
    let original_ids: Vec<usize> = (0..g.node_count).filter(|&v| label[v] == keep).collect();
    let mut new_id = vec![usize::MAX; g.node_count];
    for (i, &v) in original_ids.iter().enumerate() {
        new_id[v] = i;
    }
    let edges = g.edges.iter().filter(|&&(u, _)| label[u] == keep).map(|&(u, v)| (new_id[u], new_id[v])).collect();
    Ok(Component { graph: UndirectedGraph { node_count: original_ids.len(), edges }, original_ids })
}

/// Orient every edge from the lower to the higher rank of a uniformly
/// random permutation of the nodes.
pub fn orient_acyclic(g: &UndirectedGraph, seed: u64) -> Dag {
    let mut order: Vec<usize> = (0..g.node_count).collect();
    order.shuffle(&mut seeded(seed, Stream::Orientation));
    let mut rank = vec![0; g.node_count];
    for (position, &node) in order.iter().enumerate() {
        rank[node] = position;
    }
    orient_by_rank(g, &rank)
}

/// Orient every edge from lower to higher `rank[node]`. Ranks must be
/// distinct.
pub fn orient_by_rank(g: &UndirectedGraph, rank: &[usize]) -> Dag {
    assert_eq!(rank.len(), g.node_count, "one rank per node");
    let edges = g.edges.iter().map(|&(u, v)| if rank[u] < rank[v] { (u, v) } else { (v, u) });
    Dag::new(g.node_count, edges).expect("rank orientation is acyclic")
}

/// A generated DAG together with the size of the component it came from.
#[derive(Debug, Clone)]
pub struct GeneratedDag {
    pub dag: Dag,
    pub lcc_size: usize,
}

/// ER sample → largest connected component → random orientation, all
/// derived from one seed.
pub fn generate_dag(n: usize, p: f64, seed: u64) -> Result<GeneratedDag, GraphError> {
    let g = erdos_renyi(n, p, seed)?;
    let lcc = largest_connected_component(&g)?;
    let dag = orient_acyclic(&lcc.graph, seed);
    Ok(GeneratedDag { lcc_size: lcc.graph.node_count(), dag })
}

/// Complete DAG on `n` nodes: `u → v` for every `u < v`.
pub fn complete_dag(n: usize) -> Dag {
    let edges = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v)));
    Dag::new(n, edges).expect("complete DAG")
}

/// Path `0 → 1 → … → n-1`.
pub fn chain_dag(n: usize) -> Dag {
    Dag::new(n, (1..n).map(|v| (v - 1, v))).expect("chain")
}
