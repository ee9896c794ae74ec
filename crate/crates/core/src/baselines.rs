//! Reference forward schedules computing the same function as
//! [`CompiledNet`], used as equivalence oracles and timing baselines.
//!
//! * [`SequentialNet`] evaluates one node at a time in topological order
//!   (one gather plus one vector-matrix product per node, batched).
//! * [`DeepstructNet`] uses the same layering as the compiled net but sums
//!   one masked product per pair of layers `(j → l)`, skipping pairs whose
//!   mask is empty.
//!
//! Both share the dense kernels and the [`Workspace`] type with the
//! compiled network so that timing differences come from the schedule.

use std::collections::HashMap;

use crate::graphgen::Dag;
use crate::kernel;
use crate::layering::Layering;
use crate::network::{
    check_compilable, Activation, CompileOptions, CompiledNet, Matrix, NetError, NetParams, Workspace,
};
use crate::scalar::Scalar;

fn check_batch<T: Scalar>(input: &Matrix<T>, sources: usize) -> Result<(), NetError> {
    if input.cols() != sources || input.rows() == 0 {
        return Err(NetError::BatchShape {
            expected_rows: input.rows().max(1),
            expected_cols: sources,
            rows: input.rows(),
            cols: input.cols(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct NodeUnit<T> {
    id: usize,
    pred_ids: Vec<usize>,
    weights: Vec<T>,
    bias: T,
    activation: Activation,
}

/// Node-at-a-time network. Activation rows are indexed by node id.
#[derive(Debug, Clone)]
pub struct SequentialNet<T> {
    node_count: usize,
    units: Vec<NodeUnit<T>>,
    input_nodes: Vec<usize>,
    output_nodes: Vec<usize>,
}

impl<T: Scalar> SequentialNet<T> {
    /// Build from per-edge weights and per-node biases (missing biases are
    /// zero). `params.weights` must be keyed by exactly the edges of `dag`.
    pub fn from_params(dag: &Dag, params: &NetParams<T>, options: CompileOptions) -> Result<Self, NetError> {
        check_compilable(dag)?;
        params.check_against(dag)?;
        let sinks = dag.sinks();
        let units = dag
            .topological_order()
            .iter()
            .filter(|&&v| dag.in_degree(v) > 0)
            .map(|&v| NodeUnit {
                id: v,
                pred_ids: dag.preds(v).to_vec(),
                weights: dag.preds(v).iter().map(|&u| params.weights[&(u, v)]).collect(),
                bias: params.biases.get(&v).copied().unwrap_or_else(T::zero),
                activation: if options.identity_output && sinks.binary_search(&v).is_ok() {
                    Activation::Identity
                } else {
                    options.activation
                },
            })
            .collect();
        Ok(Self { node_count: dag.node_count(), units, input_nodes: dag.sources(), output_nodes: sinks })
    }

    pub fn from_compiled(net: &CompiledNet<T>) -> Self {
        Self::from_params(net.dag(), &net.params(), *net.options()).expect("compiled net parameters are complete")
    }

    /// Weight vector of node `v` over its predecessors (ascending id).
    pub fn node_weights(&self, v: usize) -> Option<&[T]> {
        self.units.iter().find(|u| u.id == v).map(|u| u.weights.as_slice())
    }

    /// Number of node evaluations per pass: `|N| − |sources|`.
    pub fn node_evaluations(&self) -> usize {
        self.units.len()
    }

    pub fn forward(&self, input: &Matrix<T>, ws: &mut Workspace<T>) -> Result<Matrix<T>, NetError> {
        check_batch(input, self.input_nodes.len())?;
        let batch = input.rows();
        ws.stamp = None;
        ws.batch = batch;
        ws.acts.resize(self.node_count * batch, T::zero());
        for (i, &v) in self.input_nodes.iter().enumerate() {
            for b in 0..batch {
                ws.acts[v * batch + b] = input.get(b, i);
            }
        }
        ws.products = 0;
        for unit in &self.units {
            let k = unit.pred_ids.len();
            ws.gather.resize(k * batch, T::zero());
            kernel::gather_rows(&ws.acts, batch, &unit.pred_ids, &mut ws.gather);
            let out = &mut ws.acts[unit.id * batch..(unit.id + 1) * batch];
            out.fill(unit.bias);
            kernel::matmul_acc(&unit.weights, 1, k, &ws.gather, batch, out);
            if unit.activation != Activation::Identity {
                let act = unit.activation;
                kernel::map_in_place(out, |z| act.apply(z));
            }
            ws.products += 1;
        }
        Ok(Matrix::from_fn(batch, self.output_nodes.len(), |b, k| ws.acts[self.output_nodes[k] * batch + b]))
    }
}

#[derive(Debug, Clone)]
struct PairBlock<T> {
    src_layer: usize,
    src_offset: usize,
    cols: usize,
    mask: Vec<T>,
    raw: Vec<T>,
}

#[derive(Debug, Clone)]
struct DsLayer<T> {
    out_offset: usize,
    rows: usize,
    bias: Vec<T>,
    activation: Activation,
    pairs: Vec<PairBlock<T>>,
}

/// Layer-pair decomposition: `a^l = σ(Σ_{j<l} (M^{j→l} ⊙ W̃^{j→l}) a^j + b^l)`.
#[derive(Debug, Clone)]
pub struct DeepstructNet<T> {
    layering: Layering,
    layers: Vec<DsLayer<T>>,
    input_nodes: Vec<usize>,
    output_nodes: Vec<usize>,
    node_count: usize,
    skipped: usize,
}

impl<T: Scalar> DeepstructNet<T> {
    /// Build over `layering`, which must hold exactly the sources in `L_0`
    /// (the layering a [`CompiledNet`] uses).
    pub fn from_params(
        dag: &Dag,
        layering: &Layering,
        params: &NetParams<T>,
        options: CompileOptions,
    ) -> Result<Self, NetError> {
        check_compilable(dag)?;
        params.check_against(dag)?;
        crate::layering::validate_layering(dag, layering)?;
        if let Some(&v) = layering.layer(0).iter().find(|&&v| dag.in_degree(v) > 0) {
            return Err(NetError::InputLayer(v));
        }
        let height = layering.height();
        let mut offsets = Vec::with_capacity(height);
        let mut slot_in_layer = vec![0; dag.node_count()];
        let mut next = 0;
        for layer in layering.layers() {
            offsets.push(next);
            for (i, &v) in layer.iter().enumerate() {
                slot_in_layer[v] = i;
            }
            next += layer.len();
        }

        let mut skipped = 0;
        let mut layers = Vec::with_capacity(height.saturating_sub(1));
        for l in 1..height {
            let outs = layering.layer(l);
            let rows = outs.len();
            let mut blocks: HashMap<usize, PairBlock<T>> = HashMap::new();
            for (r, &v) in outs.iter().enumerate() {
                for &u in dag.preds(v) {
                    let j = layering.layer_of(u);
                    let cols = layering.layer(j).len();
                    let block = blocks.entry(j).or_insert_with(|| PairBlock {
                        src_layer: j,
                        src_offset: offsets[j],
                        cols,
                        mask: vec![T::zero(); rows * cols],
                        raw: vec![T::zero(); rows * cols],
                    });
                    let c = slot_in_layer[u];
                    block.mask[r * cols + c] = T::one();
                    block.raw[r * cols + c] = params.weights[&(u, v)];
                }
            }
            skipped += l - blocks.len();
            let mut pairs: Vec<PairBlock<T>> = blocks.into_values().collect();
            pairs.sort_by_key(|p| p.src_layer);
            layers.push(DsLayer {
                out_offset: offsets[l],
                rows,
                bias: outs.iter().map(|v| params.biases.get(v).copied().unwrap_or_else(T::zero)).collect(),
                activation: options.layer_activation(l, height),
                pairs,
            });
        }
        Ok(Self {
            layering: layering.clone(),
            layers,
            input_nodes: dag.sources(),
            output_nodes: layering.layer(height - 1).to_vec(),
            node_count: dag.node_count(),
            skipped,
        })
    }

    pub fn from_compiled(net: &CompiledNet<T>) -> Self {
        Self::from_params(net.dag(), net.layering(), &net.params(), *net.options())
            .expect("compiled net parameters are complete")
    }

    pub fn layering(&self) -> &Layering {
        &self.layering
    }

    /// Layer pairs `(j, l)` with a non-empty mask, i.e. products per pass.
    pub fn executed_pairs(&self) -> usize {
        self.layers.iter().map(|l| l.pairs.len()).sum()
    }

    /// Pairs skipped because their mask is all zero.
    pub fn skipped_pairs(&self) -> usize {
        self.skipped
    }

    /// `(H − 1)·H / 2`, the number of pairs before skipping.
    pub fn total_pairs(&self) -> usize {
        let h = self.layering.height();
        h * (h - 1) / 2
    }

    /// `M^{j→l}` as a dense `|L_l| × |L_j|` matrix (all zero when skipped).
    pub fn pair_mask(&self, j: usize, l: usize) -> Matrix<T> {
        let rows = self.layering.layer(l).len();
        let cols = self.layering.layer(j).len();
        match self.layers[l - 1].pairs.iter().find(|p| p.src_layer == j) {
            Some(p) => Matrix::new(rows, cols, p.mask.clone()).expect("pair shape"),
            None => Matrix::zeros(rows, cols),
        }
    }

    pub fn forward(&self, input: &Matrix<T>, ws: &mut Workspace<T>) -> Result<Matrix<T>, NetError> {
        check_batch(input, self.input_nodes.len())?;
        let batch = input.rows();
        ws.stamp = None;
        ws.batch = batch;
        ws.acts.resize(self.node_count * batch, T::zero());
        // sources fill L_0 in ascending order, i.e. slots 0..|sources|
        for i in 0..self.input_nodes.len() {
            for b in 0..batch {
                ws.acts[i * batch + b] = input.get(b, i);
            }
        }
        ws.products = 0;
        for layer in &self.layers {
            let (done, rest) = ws.acts.split_at_mut(layer.out_offset * batch);
            let out = &mut rest[..layer.rows * batch];
            kernel::broadcast_rows(&layer.bias, batch, out);
            for pair in &layer.pairs {
                ws.eff.resize(pair.mask.len(), T::zero());
                kernel::mask_product(&pair.mask, &pair.raw, &mut ws.eff);
                let src = &done[pair.src_offset * batch..(pair.src_offset + pair.cols) * batch];
                kernel::matmul_acc(&ws.eff, layer.rows, pair.cols, src, batch, out);
                ws.products += 1;
            }
            if layer.activation != Activation::Identity {
                let act = layer.activation;
                kernel::map_in_place(out, |z| act.apply(z));
            }
        }
        let offset = self.node_count - self.output_nodes.len();
        Ok(Matrix::from_fn(batch, self.output_nodes.len(), |b, k| ws.acts[(offset + k) * batch + b]))
    }
}
