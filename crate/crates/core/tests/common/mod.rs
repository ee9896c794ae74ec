//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};

use dagforge::graphgen::Dag;
use dagforge::Activation;

/// Union-find with path halving and union by size.
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
    }

    /// Size of the largest component.
    pub fn largest(&mut self) -> usize {
        let n = self.parent.len();
        let mut counts = vec![0; n];
        for v in 0..n {
            let r = self.find(v);
            counts[r] += 1;
        }
        counts.into_iter().max().unwrap_or(0)
    }
}

/// Kahn's algorithm on a raw edge list; true iff acyclic.
pub fn is_acyclic(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut indeg = vec![0; n];
    let mut succ = vec![Vec::new(); n];
    for &(u, v) in edges {
        indeg[v] += 1;
        succ[u].push(v);
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut seen = 0;
    while let Some(u) = queue.pop_front() {
        seen += 1;
        for &v in &succ[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                queue.push_back(v);
            }
        }
    }
    seen == n
}

/// Longest path in edges, by memoised depth-first search over successors.
pub fn longest_path(n: usize, edges: &[(usize, usize)]) -> usize {
    let mut succ = vec![Vec::new(); n];
    for &(u, v) in edges {
        succ[u].push(v);
    }
    fn down(v: usize, succ: &[Vec<usize>], memo: &mut [Option<usize>]) -> usize {
        if let Some(d) = memo[v] {
            return d;
        }
        let d = succ[v].iter().map(|&w| 1 + down(w, succ, memo)).max().unwrap_or(0);
        memo[v] = Some(d);
        d
    }
    let mut memo = vec![None; n];
    (0..n).map(|v| down(v, &succ, &mut memo)).max().unwrap_or(0)
}

/// Parameters of the scalar reference network.
#[derive(Clone, Debug)]
pub struct RefNet {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    pub weights: BTreeMap<(usize, usize), f64>,
    pub biases: BTreeMap<usize, f64>,
    pub activation: Activation,
    pub identity_output: bool,
}

pub fn sources(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut has_in = vec![false; n];
    for &(_, v) in edges {
        has_in[v] = true;
    }
    (0..n).filter(|&v| !has_in[v]).collect()
}

pub fn sinks(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut has_out = vec![false; n];
    for &(u, _) in edges {
        has_out[u] = true;
    }
    (0..n).filter(|&v| !has_out[v]).collect()
}

fn apply(act: Activation, z: f64) -> f64 {
    match act {
        Activation::Identity => z,
        Activation::Relu => z.max(0.0),
        Activation::Tanh => z.tanh(),
        Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
    }
}

impl RefNet {
    pub fn from_dag(
        d: &Dag,
        weights: BTreeMap<(usize, usize), f64>,
        biases: BTreeMap<usize, f64>,
        activation: Activation,
    ) -> Self {
        Self { n: d.node_count(), edges: d.edges().to_vec(), weights, biases, activation, identity_output: false }
    }

    /// One sample, node by node with plain scalar loops. Returns the sink
    /// outputs (ascending id) and every node's pre-activation (0 for
    /// sources).
    pub fn forward_sample(&self, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let srcs = sources(self.n, &self.edges);
        let snks = sinks(self.n, &self.edges);
        let mut preds = vec![Vec::new(); self.n];
        for &(u, v) in &self.edges {
            preds[v].push(u);
        }
        let mut value = vec![None; self.n];
        let mut pre = vec![0.0; self.n];
        for (i, &s) in srcs.iter().enumerate() {
            value[s] = Some(input[i]);
        }
        // repeated sweeps until every node is evaluated; no shared order code
        let mut remaining = self.n - srcs.len();
        while remaining > 0 {
            for v in 0..self.n {
                if value[v].is_some() || !preds[v].iter().all(|&u| value[u].is_some()) {
                    continue;
                }
                let z = self.biases.get(&v).copied().unwrap_or(0.0)
                    + preds[v].iter().map(|&u| self.weights[&(u, v)] * value[u].unwrap()).sum::<f64>();
                pre[v] = z;
                let act =
                    if self.identity_output && snks.contains(&v) { Activation::Identity } else { self.activation };
                value[v] = Some(apply(act, z));
                remaining -= 1;
            }
        }
        (snks.iter().map(|&v| value[v].unwrap()).collect(), pre)
    }

    /// `batch × sinks` outputs for a `batch × sources` row-major input.
    pub fn forward(&self, input: &[Vec<f64>]) -> Vec<Vec<f64>> {
        input.iter().map(|row| self.forward_sample(row).0).collect()
    }

    /// `Σ coeffs ⊙ outputs` and the pre-activation sign pattern.
    pub fn loss(&self, input: &[Vec<f64>], coeffs: &[Vec<f64>]) -> (f64, Vec<bool>) {
        let mut total = 0.0;
        let mut pattern = Vec::new();
        for (row, c) in input.iter().zip(coeffs) {
            let (out, pre) = self.forward_sample(row);
            total += out.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            pattern.extend(pre.iter().map(|&z| z > 0.0));
        }
        (total, pattern)
    }
}

/// Central difference of `f` at step `eps`; when `kinked`, the step is
/// halved until the sign pattern of both evaluations matches `base`.
/// `None` if no step up to 2^-20·eps is stable.
pub fn central_difference(
    mut f: impl FnMut(f64) -> (f64, Vec<bool>),
    eps: f64,
    base: &[bool],
    kinked: bool,
) -> Option<f64> {
    let mut h = eps;
    for _ in 0..=20 {
        let (plus, pp) = f(h);
        let (minus, pm) = f(-h);
        if !kinked || (pp == base && pm == base) {
            return Some((plus - minus) / (2.0 * h));
        }
        h *= 0.5;
    }
    None
}

/// Normwise relative difference of two equally shaped tables.
pub fn normwise(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let flat_a: Vec<f64> = a.iter().flatten().copied().collect();
    let flat_b: Vec<f64> = b.iter().flatten().copied().collect();
    assert_eq!(flat_a.len(), flat_b.len());
    let diff = flat_a.iter().zip(&flat_b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = flat_a.iter().chain(&flat_b).map(|x| x.abs()).fold(0.0, f64::max);
    if diff == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Matrix rows as nested vectors in f64.
pub fn rows<T: dagforge::Scalar>(m: &dagforge::Matrix<T>) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| (0..m.cols()).map(|c| m.get(r, c).as_f64()).collect()).collect()
}
