//! Layered masked network compiled from a DAG.
//!
//! For a layering `L_0 … L_{H-1}` (sources exactly in `L_0`), layer `l ≥ 1`
//! owns
//!
//! * `pred_ids` – every node with an edge into `L_l` (the gather set `P_l`),
//! * `mask` – `|L_l| × |P_l|` binary matrix, 1 exactly on edges,
//! * `raw` – fully trainable weights of the same shape,
//! * `bias` – one entry per node of `L_l`.
//!
//! The forward pass computes `σ((mask ⊙ raw) · x + bias)` once per layer.
//! Gradients of masked entries are exactly zero, so training can never
//! grow an edge that the DAG does not have.
//!
//! Activations live in one node-major buffer with layer-contiguous slots:
//! layer `l` occupies a single block of rows, so each product writes its
//! result in place.

mod activation;
mod checkpoint;
mod train;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphgen::{Dag, GraphError};
use crate::kernel;
use crate::layering::{longest_path_layering, push_sources, validate_layering, Layering, LayeringError};
use crate::rng::{seeded, Stream};
use crate::scalar::Scalar;

pub use crate::matrix::{Matrix, ShapeError};
pub use activation::Activation;
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use train::{sgd_step, Sgd};

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Layering(#[from] LayeringError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("the DAG has no edges")]
    NoEdges,
    #[error("node {0} has neither predecessors nor successors")]
    IsolatedNode(usize),
    #[error("input layer must hold exactly the sources; node {0} violates this")]
    InputLayer(usize),
    #[error("expected a {expected_rows}×{expected_cols} batch, got {rows}×{cols}")]
    BatchShape { expected_rows: usize, expected_cols: usize, rows: usize, cols: usize },
    #[error("workspace was not produced by a forward pass of this network state")]
    StaleWorkspace,
    #[error("gradient bundle does not match the network layout")]
    GradientShape,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("({0}, {1}) is not an edge of the DAG")]
    NotAnEdge(usize, usize),
    #[error("no weight given for edge ({0}, {1})")]
    MissingEdge(usize, usize),
    #[error("node {0} is a source and has no bias")]
    NotBiased(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Weight initialisation for the raw matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSpec {
    /// Row `r` uniform in `±gain·√(3 / fan_in_r)`, `fan_in_r` the node's
    /// in-degree (mask row sum).
    KaimingUniform,
    Uniform {
        low: f64,
        high: f64,
    },
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompileOptions {
    pub activation: Activation,
    /// Use the identity on the output layer instead of `activation`.
    pub identity_output: bool,
    /// When false, biases stay at zero and are never trained.
    pub use_bias: bool,
    pub init: InitSpec,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self { activation: Activation::Relu, identity_output: false, use_bias: true, init: InitSpec::KaimingUniform }
    }
}

impl CompileOptions {
    pub fn with_activation(activation: Activation) -> Self {
        Self { activation, ..Self::default() }
    }

    /// Activation applied to layer `l` of a network of height `height`.
    pub fn layer_activation(&self, l: usize, height: usize) -> Activation {
        if self.identity_output && l + 1 == height {
            Activation::Identity
        } else {
            self.activation
        }
    }
}

/// One masked product `σ((mask ⊙ raw) · x + bias)`.
#[derive(Debug, Clone)]
pub struct MaskedLayer<T> {
    index: usize,
    pred_ids: Vec<usize>,
    pred_slots: Vec<usize>,
    out_ids: Vec<usize>,
    out_offset: usize,
    mask: Vec<T>,
    raw: Vec<T>,
    bias: Vec<T>,
}

impl<T: Scalar> MaskedLayer<T> {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn pred_ids(&self) -> &[usize] {
        &self.pred_ids
    }

    pub fn out_ids(&self) -> &[usize] {
        &self.out_ids
    }

    pub fn rows(&self) -> usize {
        self.out_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.pred_ids.len()
    }

    pub fn mask(&self) -> Matrix<T> {
        Matrix::new(self.rows(), self.cols(), self.mask.clone()).expect("layer shape")
    }

    pub fn raw_weights(&self) -> Matrix<T> {
        Matrix::new(self.rows(), self.cols(), self.raw.clone()).expect("layer shape")
    }

    /// `mask ⊙ raw`.
    pub fn effective_weights(&self) -> Matrix<T> {
        let mut out = vec![T::zero(); self.mask.len()];
        kernel::mask_product(&self.mask, &self.raw, &mut out);
        Matrix::new(self.rows(), self.cols(), out).expect("layer shape")
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub(crate) fn raw_mut(&mut self) -> &mut [T] {
        &mut self.raw
    }

    pub(crate) fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct EdgeSlot {
    layer: usize,
    row: usize,
    col: usize,
}

/// Parameters keyed by graph elements, independent of any layering: one
/// weight per edge and one bias per non-source node.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<T> {
    pub weights: BTreeMap<(usize, usize), T>,
    pub biases: BTreeMap<usize, T>,
}

impl<T: Scalar> NetParams<T> {
    pub fn cast<U: Scalar>(&self) -> NetParams<U> {
        NetParams {
            weights: self.weights.iter().map(|(&k, &w)| (k, U::from_f64_lossy(w.as_f64()))).collect(),
            biases: self.biases.iter().map(|(&k, &b)| (k, U::from_f64_lossy(b.as_f64()))).collect(),
        }
    }

    /// Check the keys against `dag`: weights exactly on its edges, biases on
    /// a subset of its non-source nodes.
    pub fn check_against(&self, dag: &Dag) -> Result<(), NetError> {
        for &(u, v) in self.weights.keys() {
            if u >= dag.node_count() || v >= dag.node_count() || !dag.has_edge(u, v) {
                return Err(NetError::NotAnEdge(u, v));
            }
        }
        if let Some(&(u, v)) = dag.edges().iter().find(|e| !self.weights.contains_key(e)) {
            return Err(NetError::MissingEdge(u, v));
        }
        for &v in self.biases.keys() {
            if v >= dag.node_count() || dag.in_degree(v) == 0 {
                return Err(NetError::NotBiased(v));
            }
        }
        Ok(())
    }
}

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn next_net_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

/// Executable network compiled from a DAG and a layering.
#[derive(Debug)]
pub struct CompiledNet<T> {
    dag: Arc<Dag>,
    layering: Layering,
    options: CompileOptions,
    layers: Vec<MaskedLayer<T>>,
    node_slots: Vec<usize>,
    input_nodes: Vec<usize>,
    output_nodes: Vec<usize>,
    edge_slots: HashMap<(usize, usize), EdgeSlot>,
    id: u64,
    version: u64,
}

impl<T: Scalar> Clone for CompiledNet<T> {
    fn clone(&self) -> Self {
        Self {
            dag: Arc::clone(&self.dag),
            layering: self.layering.clone(),
            options: self.options,
            layers: self.layers.clone(),
            node_slots: self.node_slots.clone(),
            input_nodes: self.input_nodes.clone(),
            output_nodes: self.output_nodes.clone(),
            edge_slots: self.edge_slots.clone(),
            id: next_net_id(),
            version: 0,
        }
    }
}

/// Reject graphs the compiler cannot turn into a network.
pub fn check_compilable(d: &Dag) -> Result<(), NetError> {
    if d.edge_count() == 0 {
        return Err(NetError::NoEdges);
    }
    if let Some(&v) = d.isolated_nodes().first() {
        return Err(NetError::IsolatedNode(v));
    }
    Ok(())
}

/// Compile with the minimum-height layering `push_sources(longest_path(d))`.
pub fn compile<T: Scalar>(d: &Dag, options: CompileOptions, seed: u64) -> Result<CompiledNet<T>, NetError> {
    check_compilable(d)?;
    let layering = push_sources(d, &longest_path_layering(d));
    compile_with_layering(d, layering, options, seed)
}

/// Compile against an explicit layering. `L_0` must hold exactly the
/// sources of `d`.
pub fn compile_with_layering<T: Scalar>(
    d: &Dag,
    layering: Layering,
    options: CompileOptions,
    seed: u64,
) -> Result<CompiledNet<T>, NetError> {
    check_compilable(d)?;
    validate_layering(d, &layering)?;
    let sources = d.sources();
    if let Some(&v) = layering.layer(0).iter().find(|&&v| d.in_degree(v) > 0) {
        return Err(NetError::InputLayer(v));
    }
    if let Some(&v) = sources.iter().find(|&&v| layering.layer_of(v) != 0) {
        return Err(NetError::InputLayer(v));
    }

    let mut node_slots = vec![0; d.node_count()];
    let mut offsets = Vec::with_capacity(layering.height());
    let mut next = 0;
    for layer in layering.layers() {
        offsets.push(next);
        for &v in layer {
            node_slots[v] = next;
            next += 1;
        }
    }

    let mut rng = seeded(seed, Stream::Weights);
    let mut layers = Vec::with_capacity(layering.height().saturating_sub(1));
    let mut edge_slots = HashMap::with_capacity(d.edge_count());
    for (l, &out_offset) in offsets.iter().enumerate().skip(1) {
        let out_ids = layering.layer(l).to_vec();
        let mut pred_ids: Vec<usize> = out_ids.iter().flat_map(|&v| d.preds(v).iter().copied()).collect();
        pred_ids.sort_unstable();
        pred_ids.dedup();
        let col_of: HashMap<usize, usize> = pred_ids.iter().enumerate().map(|(c, &u)| (u, c)).collect();
        let (rows, cols) = (out_ids.len(), pred_ids.len());
        let mut mask = vec![T::zero(); rows * cols];
        for (row, &v) in out_ids.iter().enumerate() {
            for &u in d.preds(v) {
                let col = col_of[&u];
                mask[row * cols + col] = T::one();
                edge_slots.insert((u, v), EdgeSlot { layer: l - 1, row, col });
            }
        }
        let mut raw = vec![T::zero(); rows * cols];
        for (row, &v) in out_ids.iter().enumerate() {
            let fan_in = d.in_degree(v) as f64;
            let (low, high) = match options.init {
                InitSpec::KaimingUniform => {
                    let bound = options.activation.gain() * (3.0 / fan_in).sqrt();
                    (-bound, bound)
                }
                InitSpec::Uniform { low, high } => (low, high),
                InitSpec::Constant(c) => (c, c),
            };
            for w in &mut raw[row * cols..(row + 1) * cols] {
                let value = if high > low { rng.random_range(low..high) } else { low };
                *w = T::from_f64_lossy(value);
            }
        }
        layers.push(MaskedLayer {
            index: l,
            pred_slots: pred_ids.iter().map(|&u| node_slots[u]).collect(),
            pred_ids,
            out_ids,
            out_offset,
            mask,
            raw,
            bias: vec![T::zero(); rows],
        });
    }

    Ok(CompiledNet {
        dag: Arc::new(d.clone()),
        output_nodes: layering.layer(layering.height() - 1).to_vec(),
        input_nodes: sources,
        layering,
        options,
        layers,
        node_slots,
        edge_slots,
        id: next_net_id(),
        version: 0,
    })
}

/// Caller-owned scratch space for forward and backward passes.
#[derive(Debug, Clone)]
pub struct Workspace<T> {
    pub(crate) batch: usize,
    pub(crate) acts: Vec<T>,
    pub(crate) gather: Vec<T>,
    pub(crate) eff: Vec<T>,
    pub(crate) stamp: Option<(u64, u64)>,
    pub(crate) products: usize,
}

impl<T: Scalar> Default for Workspace<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Workspace<T> {
    pub fn new() -> Self {
        Self { batch: 0, acts: Vec::new(), gather: Vec::new(), eff: Vec::new(), stamp: None, products: 0 }
    }

    /// Work units of the last forward pass: masked matrix products for the
    /// layered schedules, node evaluations for the sequential one.
    pub fn products(&self) -> usize {
        self.products
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Gradients of a scalar loss with respect to every trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle<T> {
    /// Per layer, same shape as its raw weights (row-major).
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
    /// `batch × sources` gradient of the input batch.
    pub inputs: Option<Matrix<T>>,
}

impl<T: Scalar> GradientBundle<T> {
    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).flatten().all(|g| g.is_finite())
    }
}

impl<T: Scalar> CompiledNet<T> {
    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn layering(&self) -> &Layering {
        &self.layering
    }

    pub fn options(&self) -> &CompileOptions {
        &self.options
    }

    pub fn activation(&self) -> Activation {
        self.options.activation
    }

    pub fn height(&self) -> usize {
        self.layering.height()
    }

    /// Layers `1..H`, in order.
    pub fn layers(&self) -> &[MaskedLayer<T>] {
        &self.layers
    }

    pub fn input_nodes(&self) -> &[usize] {
        &self.input_nodes
    }

    pub fn output_nodes(&self) -> &[usize] {
        &self.output_nodes
    }

    /// Row of node `v` in the activation buffer.
    pub fn node_slot(&self, v: usize) -> usize {
        self.node_slots[v]
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [MaskedLayer<T>] {
        self.version += 1;
        &mut self.layers
    }

    /// `(layer position, row, column)` holding the weight of edge `(u, v)`;
    /// layer position `i` is layer `i + 1` of the layering.
    pub fn edge_location(&self, u: usize, v: usize) -> Option<(usize, usize, usize)> {
        self.edge_slots.get(&(u, v)).map(|s| (s.layer, s.row, s.col))
    }

    fn check_input(&self, input: &Matrix<T>) -> Result<(), NetError> {
        if input.cols() != self.input_nodes.len() || input.rows() == 0 {
            return Err(NetError::BatchShape {
                expected_rows: input.rows().max(1),
                expected_cols: self.input_nodes.len(),
                rows: input.rows(),
                cols: input.cols(),
            });
        }
        Ok(())
    }

    /// Batched forward pass. `input` is `batch × sources` (ascending source
    /// id), the result `batch × sinks` (ascending sink id). The workspace
    /// keeps every activation for a later [`CompiledNet::backward`].
    pub fn forward(&self, input: &Matrix<T>, ws: &mut Workspace<T>) -> Result<Matrix<T>, NetError> {
        self.check_input(input)?;
        let batch = input.rows();
        let n = self.node_slots.len();
        ws.batch = batch;
        ws.acts.resize(n * batch, T::zero());
        for (i, &v) in self.input_nodes.iter().enumerate() {
            let row = &mut ws.acts[self.node_slots[v] * batch..(self.node_slots[v] + 1) * batch];
            for (b, slot) in row.iter_mut().enumerate() {
                *slot = input.get(b, i);
            }
        }
        let height = self.height();
        ws.products = 0;
        for layer in &self.layers {
            let (rows, cols) = (layer.rows(), layer.cols());
            ws.gather.resize(cols * batch, T::zero());
            ws.eff.resize(rows * cols, T::zero());
            kernel::gather_rows(&ws.acts, batch, &layer.pred_slots, &mut ws.gather);
            kernel::mask_product(&layer.mask, &layer.raw, &mut ws.eff);
            let out = &mut ws.acts[layer.out_offset * batch..(layer.out_offset + rows) * batch];
            kernel::broadcast_rows(&layer.bias, batch, out);
            kernel::matmul_acc(&ws.eff, rows, cols, &ws.gather, batch, out);
            let act = self.options.layer_activation(layer.index, height);
            if act != Activation::Identity {
                kernel::map_in_place(out, |z| act.apply(z));
            }
            ws.products += 1;
        }
        ws.stamp = Some((self.id, self.version));

        let offset = self.node_slots[self.output_nodes[0]];
        debug_assert!(self.output_nodes.iter().enumerate().all(|(k, &v)| self.node_slots[v] == offset + k));
        let sinks = self.output_nodes.len();
        Ok(Matrix::from_fn(batch, sinks, |b, k| ws.acts[(offset + k) * batch + b]))
    }

    /// Reverse-mode pass for the loss whose gradient with respect to the
    /// outputs is `grad_out` (`batch × sinks`).
    pub fn backward(&self, ws: &Workspace<T>, grad_out: &Matrix<T>) -> Result<GradientBundle<T>, NetError> {
        if ws.stamp != Some((self.id, self.version)) {
            return Err(NetError::StaleWorkspace);
        }
        let batch = ws.batch;
        if grad_out.shape() != (batch, self.output_nodes.len()) {
            return Err(NetError::BatchShape {
                expected_rows: batch,
                expected_cols: self.output_nodes.len(),
                rows: grad_out.rows(),
                cols: grad_out.cols(),
            });
        }
        let n = self.node_slots.len();
        let mut grad = vec![T::zero(); n * batch];
        for (k, &v) in self.output_nodes.iter().enumerate() {
            let slot = self.node_slots[v];
            for b in 0..batch {
                grad[slot * batch + b] = grad_out.get(b, k);
            }
        }

        let height = self.height();
        let mut weight_grads = vec![Vec::new(); self.layers.len()];
        let mut bias_grads = vec![Vec::new(); self.layers.len()];
        let mut x = Vec::new();
        let mut eff = Vec::new();
        let mut grad_x = Vec::new();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let (rows, cols) = (layer.rows(), layer.cols());
            let block = layer.out_offset * batch..(layer.out_offset + rows) * batch;
            let act = self.options.layer_activation(layer.index, height);
            let delta: Vec<T> = grad[block.clone()]
                .iter()
                .zip(&ws.acts[block])
                .map(|(&g, &a)| g * act.derivative_from_output(a))
                .collect();

            x.resize(cols * batch, T::zero());
            kernel::gather_rows(&ws.acts, batch, &layer.pred_slots, &mut x);
            let mut gw = vec![T::zero(); rows * cols];
            kernel::masked_outer(&layer.mask, &delta, rows, &x, cols, batch, &mut gw);
            weight_grads[li] = gw;
            bias_grads[li] = kernel::row_sums(&delta, batch);

            eff.resize(rows * cols, T::zero());
            kernel::mask_product(&layer.mask, &layer.raw, &mut eff);
            grad_x.clear();
            grad_x.resize(cols * batch, T::zero());
            kernel::matmul_tn_acc(&eff, rows, cols, &delta, batch, &mut grad_x);
            for (c, &slot) in layer.pred_slots.iter().enumerate() {
                let dst = &mut grad[slot * batch..(slot + 1) * batch];
                for (d, &g) in dst.iter_mut().zip(&grad_x[c * batch..(c + 1) * batch]) {
                    *d = *d + g;
                }
            }
        }

        let inputs = Matrix::from_fn(batch, self.input_nodes.len(), |b, i| {
            grad[self.node_slots[self.input_nodes[i]] * batch + b]
        });
        Ok(GradientBundle { weights: weight_grads, biases: bias_grads, inputs: Some(inputs) })
    }

    /// Effective weight of every edge.
    pub fn edge_weights(&self) -> BTreeMap<(usize, usize), T> {
        self.dag
            .edges()
            .iter()
            .map(|&(u, v)| {
                let s = self.edge_slots[&(u, v)];
                let layer = &self.layers[s.layer];
                let i = s.row * layer.cols() + s.col;
                ((u, v), layer.mask[i] * layer.raw[i])
            })
            .collect()
    }

    /// Overwrite the weights of the given edges. Non-edges are rejected
    /// before anything is written.
    pub fn set_edge_weights(&mut self, weights: &BTreeMap<(usize, usize), T>) -> Result<(), NetError> {
        let mut located = Vec::with_capacity(weights.len());
        for (&(u, v), &w) in weights {
            let s = *self.edge_slots.get(&(u, v)).ok_or(NetError::NotAnEdge(u, v))?;
            located.push((s, w));
        }
        let layers = self.layers_mut();
        for (s, w) in located {
            let cols = layers[s.layer].cols();
            layers[s.layer].raw[s.row * cols + s.col] = w;
        }
        Ok(())
    }

    /// Bias of every non-source node.
    pub fn node_biases(&self) -> BTreeMap<usize, T> {
        self.layers.iter().flat_map(|layer| layer.out_ids.iter().copied().zip(layer.bias.iter().copied())).collect()
    }

    pub fn set_node_biases(&mut self, biases: &BTreeMap<usize, T>) -> Result<(), NetError> {
        let mut located = Vec::with_capacity(biases.len());
        for (&v, &b) in biases {
            if v >= self.node_slots.len() || self.layering.layer_of(v) == 0 {
                return Err(NetError::NotBiased(v));
            }
            let l = self.layering.layer_of(v) - 1;
            let row = self.node_slots[v] - self.layers[l].out_offset;
            located.push((l, row, b));
        }
        let layers = self.layers_mut();
        for (l, row, b) in located {
            layers[l].bias[row] = b;
        }
        Ok(())
    }

    pub fn params(&self) -> NetParams<T> {
        NetParams { weights: self.edge_weights(), biases: self.node_biases() }
    }

    /// Load weights and biases. Every edge must be present.
    pub fn load_params(&mut self, params: &NetParams<T>) -> Result<(), NetError> {
        params.check_against(&self.dag)?;
        self.set_edge_weights(&params.weights)?;
        self.set_node_biases(&params.biases)
    }
}
