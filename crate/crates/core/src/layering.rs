//! Layer assignment for DAGs.
//!
//! A layering is an ordered partition `L_0, …, L_{H-1}` of the nodes such
//! that every edge points from a lower to a strictly higher layer. Its
//! height `H` is the number of matrix products a layered forward pass has
//! to perform (minus one), so the compiler wants it minimal.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphgen::Dag;
use crate::rng::{seeded, Stream};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LayeringError {
    #[error("node {0} is not assigned to any layer")]
    Missing(usize),
    #[error("node {0} appears more than once")]
    Duplicated(usize),
    #[error("node {0} does not exist in the graph")]
    UnknownNode(usize),
    #[error("edge ({u}, {v}) does not point upward: layer {lu} -> layer {lv}")]
    Edge { u: usize, v: usize, lu: usize, lv: usize },
    #[error("layer {0} is empty")]
    EmptyLayer(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layering {
    layers: Vec<Vec<usize>>,
    node_to_layer: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct LayeringRepr {
    height: usize,
    layers: Vec<Vec<usize>>,
}

impl Serialize for Layering {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        LayeringRepr { height: self.height(), layers: self.layers.clone() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Layering {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = LayeringRepr::deserialize(d)?;
        if repr.height != repr.layers.len() {
            return Err(serde::de::Error::custom(format!(
                "height {} disagrees with {} layers",
                repr.height,
                repr.layers.len()
            )));
        }
        let node_count = repr.layers.iter().map(Vec::len).sum();
        Layering::from_layers(node_count, repr.layers).map_err(serde::de::Error::custom)
    }
}

impl Layering {
    /// Build from explicit layers over nodes `0..node_count`. Checks the
    /// partition property only; edge direction is checked by
    /// [`validate_layering`].
    pub fn from_layers(node_count: usize, layers: Vec<Vec<usize>>) -> Result<Self, LayeringError> {
        let mut node_to_layer = vec![usize::MAX; node_count];
        let mut layers = layers;
        for (l, layer) in layers.iter_mut().enumerate() {
            if layer.is_empty() {
                return Err(LayeringError::EmptyLayer(l));
            }
            layer.sort_unstable();
            for &v in layer.iter() {
                if v >= node_count {
                    return Err(LayeringError::UnknownNode(v));
                }
                if node_to_layer[v] != usize::MAX {
                    return Err(LayeringError::Duplicated(v));
                }
                node_to_layer[v] = l;
            }
        }
        if let Some(v) = node_to_layer.iter().position(|&l| l == usize::MAX) {
            return Err(LayeringError::Missing(v));
        }
        Ok(Self { layers, node_to_layer })
    }

    fn from_assignment(node_to_layer: Vec<usize>) -> Self {
        let height = node_to_layer.iter().max().map_or(0, |&h| h + 1);
        let mut layers = vec![Vec::new(); height];
        for (v, &l) in node_to_layer.iter().enumerate() {
            layers[l].push(v);
        }
        Self { layers, node_to_layer }
    }

    pub fn height(&self) -> usize {
        self.layers.len()
    }

    /// Layers in order, each sorted by node id.
    pub fn layers(&self) -> &[Vec<usize>] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &[usize] {
        &self.layers[l]
    }

    pub fn layer_of(&self, v: usize) -> usize {
        self.node_to_layer[v]
    }

    pub fn node_to_layer(&self) -> &[usize] {
        &self.node_to_layer
    }

    pub fn node_count(&self) -> usize {
        self.node_to_layer.len()
    }
}

/// Minimum-height layering that places every node as close to the sinks as
/// possible.
///
/// Layers are built top-down. `assigned` (U) holds every placed node and
/// `below` (Z) the nodes of the finished layers; a node joins the current
/// layer once all its successors are in `below`. When no node qualifies the
/// current layer is closed and `below` catches up with `assigned`. The
/// layers are finally reversed so sources end up at the bottom.
///
/// Instead of rescanning for eligible nodes, each node counts its
/// successors not yet in `below`; the frontier of a layer is exactly the set
/// whose count dropped to zero when the previous layer closed.
pub fn longest_path_layering(d: &Dag) -> Layering {
    let n = d.node_count();
    let mut pending: Vec<usize> = (0..n).map(|v| d.succs(v).len()).collect();
    let mut frontier: Vec<usize> = (0..n).filter(|&v| pending[v] == 0).collect();
    let mut top_down: Vec<Vec<usize>> = Vec::new();
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &v in &frontier {
            for &u in d.preds(v) {
                pending[u] -= 1;
                if pending[u] == 0 {
                    next.push(u);
                }
            }
        }
        next.sort_unstable();
        top_down.push(std::mem::replace(&mut frontier, next));
    }
    let height = top_down.len();
    let mut node_to_layer = vec![0; n];
    for (k, layer) in top_down.iter().enumerate() {
        for &v in layer {
            node_to_layer[v] = height - 1 - k;
        }
    }
    top_down.reverse();
    Layering { layers: top_down, node_to_layer }
}

/// Move every source into `L_0`, then drop layers left empty and renumber.
pub fn push_sources(d: &Dag, l: &Layering) -> Layering {
    let mut assignment = l.node_to_layer.clone();
    for v in d.sources() {
        assignment[v] = 0;
    }
    compact(assignment)
}

fn compact(mut assignment: Vec<usize>) -> Layering {
    let height = assignment.iter().max().map_or(0, |&h| h + 1);
    let mut occupied = vec![false; height];
    for &l in &assignment {
        occupied[l] = true;
    }
    let mut renumber = vec![0; height];
    let mut next = 0;
    for l in 0..height {
        renumber[l] = next;
        if occupied[l] {
            next += 1;
        }
    }
    for l in &mut assignment {
        *l = renumber[*l];
    }
    Layering::from_assignment(assignment)
}

/// Randomly lower nodes of the interior layers `L_2..=L_{H-2}` without
/// changing the height.
///
/// Layers are visited in increasing order over a snapshot of their members
/// (ascending id). Each node draws its new layer uniformly from
/// `max(layer of predecessors) + 1 ..= current layer`. Expects the
/// `push_sources(longest_path_layering(d))` layering, where every hidden
/// node sits as high as it can.
pub fn reassign_nodes(d: &Dag, l: &Layering, seed: u64) -> Layering {
    let height = l.height();
    if height < 4 {
        return l.clone();
    }
    let mut rng = seeded(seed, Stream::Reassign);
    let mut assignment = l.node_to_layer.clone();
    for layer in 2..=height - 2 {
        let snapshot = l.layers[layer].clone();
        for u in snapshot {
            let lower = d.preds(u).iter().map(|&p| assignment[p]).max().map_or(0, |m| m + 1);
            let upper = assignment[u];
            debug_assert!(lower <= upper);
            assignment[u] = rng.random_range(lower..=upper);
        }
    }
    Layering::from_assignment(assignment)
}

/// Nodes whose layer differs between two layerings of the same graph.
pub fn moved_nodes(before: &Layering, after: &Layering) -> Vec<usize> {
    before
        .node_to_layer
        .iter()
        .zip(&after.node_to_layer)
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(v, _)| v)
        .collect()
}

pub fn height(l: &Layering) -> usize {
    l.height()
}

/// `|N| / H`: how many nodes one layer holds on average.
pub fn height_attenuation(d: &Dag, l: &Layering) -> f64 {
    d.node_count() as f64 / l.height() as f64
}

/// Check that `l` partitions the nodes of `d` and that every edge points
/// strictly upward. Reports the first violation in node or edge order.
pub fn validate_layering(d: &Dag, l: &Layering) -> Result<(), LayeringError> {
    let n = d.node_count();
    let mut seen = vec![false; n];
    for layer in &l.layers {
        for &v in layer {
            if v >= n {
                return Err(LayeringError::UnknownNode(v));
            }
            if std::mem::replace(&mut seen[v], true) {
                return Err(LayeringError::Duplicated(v));
            }
        }
    }
    if let Some(v) = seen.iter().position(|s| !s) {
        return Err(LayeringError::Missing(v));
    }
    if l.node_to_layer.len() != n {
        return Err(LayeringError::UnknownNode(l.node_to_layer.len().min(n)));
    }
    for &(u, v) in d.edges() {
        let (lu, lv) = (l.node_to_layer[u], l.node_to_layer[v]);
        if lu >= lv {
            return Err(LayeringError::Edge { u, v, lu, lv });
        }
    }
    Ok(())
}
