//! JSON checkpoint: graph, layering, options and one weight per edge.
//! Raw entries at masked positions are never written.

use serde::{Deserialize, Serialize};

use crate::graphgen::Dag;
use crate::layering::Layering;
use crate::scalar::Scalar;

use super::{compile_with_layering, CompileOptions, CompiledNet, InitSpec, NetError, NetParams};

pub const CHECKPOINT_FORMAT: &str = "dagforge-net/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub node_count: usize,
    pub edges: Vec<(usize, usize)>,
    pub layering: Layering,
    pub options: CompileOptions,
    /// `(u, v, weight)` for every edge.
    pub weights: Vec<(usize, usize, f64)>,
    /// `(node, bias)` for every non-source node.
    pub biases: Vec<(usize, f64)>,
}

impl Checkpoint {
    pub fn from_net<T: Scalar>(net: &CompiledNet<T>) -> Self {
        let params = net.params();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            node_count: net.dag().node_count(),
            edges: net.dag().edges().to_vec(),
            layering: net.layering().clone(),
            options: *net.options(),
            weights: params.weights.iter().map(|(&(u, v), &w)| (u, v, w.as_f64())).collect(),
            biases: params.biases.iter().map(|(&v, &b)| (v, b.as_f64())).collect(),
        }
    }

    /// Rebuild the network. Fails on a weight for a non-edge, a missing
    /// edge weight, or an invalid layering.
    pub fn into_net<T: Scalar>(&self) -> Result<CompiledNet<T>, NetError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(NetError::Checkpoint(format!("unsupported format {:?}", self.format)));
        }
        let dag = Dag::new(self.node_count, self.edges.iter().copied())?;
        let params = NetParams {
            weights: self.weights.iter().map(|&(u, v, w)| ((u, v), T::from_f64_lossy(w))).collect(),
            biases: self.biases.iter().map(|&(v, b)| (v, T::from_f64_lossy(b))).collect(),
        };
        if params.weights.len() != self.weights.len() {
            return Err(NetError::Checkpoint("duplicate edge weight".into()));
        }
        params.check_against(&dag)?;
        let options = CompileOptions { init: InitSpec::Constant(0.0), ..self.options };
        let mut net = compile_with_layering(&dag, self.layering.clone(), options, 0)?;
        net.load_params(&params)?;
        net.options.init = self.options.init;
        Ok(net)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NetError> {
        serde_json::from_str(text).map_err(|e| NetError::Checkpoint(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphgen::generate_dag;
    use crate::network::{compile, Matrix, Workspace};

    #[test]
    fn round_trip_preserves_outputs() {
        let g = generate_dag(24, 0.3, 4).unwrap();
        let net = compile::<f64>(&g.dag, Default::default(), 9).unwrap();
        let text = Checkpoint::from_net(&net).to_json();
        let back: CompiledNet<f64> = Checkpoint::from_json(&text).unwrap().into_net().unwrap();
        assert_eq!(back.params(), net.params());
        let x = Matrix::from_fn(3, net.input_nodes().len(), |b, i| (b + i) as f64 * 0.1);
        let a = net.forward(&x, &mut Workspace::new()).unwrap();
        let b = back.forward(&x, &mut Workspace::new()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weight_on_non_edge_is_rejected() {
        let d = Dag::new(3, [(0, 1), (1, 2)]).unwrap();
        let net = compile::<f64>(&d, Default::default(), 0).unwrap();
        let mut ck = Checkpoint::from_net(&net);
        ck.weights.push((0, 2, 0.5));
        assert!(matches!(ck.into_net::<f64>(), Err(NetError::NotAnEdge(0, 2))));
        let mut ck = Checkpoint::from_net(&net);
        ck.weights.pop();
        assert!(matches!(ck.into_net::<f64>(), Err(NetError::MissingEdge(1, 2))));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let d = Dag::new(2, [(0, 1)]).unwrap();
        let net = compile::<f64>(&d, Default::default(), 0).unwrap();
        let mut value: serde_json::Value = serde_json::to_value(Checkpoint::from_net(&net)).unwrap();
        value["mask"] = serde_json::json!([[1]]);
        assert!(Checkpoint::from_json(&value.to_string()).is_err());
    }
}
