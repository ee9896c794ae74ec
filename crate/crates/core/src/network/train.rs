use crate::scalar::Scalar;

use super::{CompiledNet, GradientBundle, NetError};

/// Stochastic gradient descent with classical momentum:
/// `v ← μ·v + g`, `W̃ ← W̃ − lr·v`.
///
/// Masked raw entries receive exactly zero gradient, so their velocity stays
/// zero and the effective weight `mask ⊙ raw` of a non-edge never moves.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    velocity_w: Vec<Vec<T>>,
    velocity_b: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: T, momentum: T) -> Self {
        Self { lr, momentum, velocity_w: Vec::new(), velocity_b: Vec::new() }
    }

    pub fn step(&mut self, net: &mut CompiledNet<T>, grads: &GradientBundle<T>) -> Result<(), NetError> {
        let shapes_match = grads.weights.len() == net.layers().len()
            && grads.biases.len() == net.layers().len()
            && net
                .layers()
                .iter()
                .zip(&grads.weights)
                .zip(&grads.biases)
                .all(|((layer, gw), gb)| gw.len() == layer.rows() * layer.cols() && gb.len() == layer.rows());
        if !shapes_match {
            return Err(NetError::GradientShape);
        }
        if !grads.is_finite() {
            return Err(NetError::NonFinite("gradients"));
        }
        if self.velocity_w.len() != grads.weights.len() {
            self.velocity_w = grads.weights.iter().map(|g| vec![T::zero(); g.len()]).collect();
            self.velocity_b = grads.biases.iter().map(|g| vec![T::zero(); g.len()]).collect();
        }
        let (lr, momentum) = (self.lr, self.momentum);
        let use_bias = net.options().use_bias;
        for (i, layer) in net.layers_mut().iter_mut().enumerate() {
            update(layer.raw_mut(), &mut self.velocity_w[i], &grads.weights[i], lr, momentum);
            if use_bias {
                update(layer.bias_mut(), &mut self.velocity_b[i], &grads.biases[i], lr, momentum);
            }
        }
        Ok(())
    }
}

fn update<T: Scalar>(params: &mut [T], velocity: &mut [T], grads: &[T], lr: T, momentum: T) {
    for ((p, v), &g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        *v = momentum * *v + g;
        *p = *p - lr * *v;
    }
}

/// One momentum-free step.
pub fn sgd_step<T: Scalar>(net: &mut CompiledNet<T>, grads: &GradientBundle<T>, lr: T) -> Result<(), NetError> {
    Sgd::new(lr, T::zero()).step(net, grads)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::graphgen::Dag;
    use crate::network::{compile, Activation, CompileOptions, InitSpec, Matrix, Workspace};

    fn single_edge() -> CompiledNet<f64> {
        let d = Dag::new(2, [(0, 1)]).unwrap();
        let opts =
            CompileOptions { activation: Activation::Identity, init: InitSpec::Constant(0.3), ..Default::default() };
        compile(&d, opts, 0).unwrap()
    }

    fn mse_step(net: &CompiledNet<f64>, x: f64, y: f64) -> (f64, GradientBundle<f64>) {
        let mut ws = Workspace::new();
        let out = net.forward(&Matrix::filled(1, 1, x), &mut ws).unwrap().get(0, 0);
        let g = net.backward(&ws, &Matrix::filled(1, 1, 2.0 * (out - y))).unwrap();
        ((out - y).powi(2), g)
    }

    #[test]
    fn zero_learning_rate_is_noop() {
        let mut net = single_edge();
        let before = net.params();
        let (_, g) = mse_step(&net, 1.0, 3.0);
        sgd_step(&mut net, &g, 0.0).unwrap();
        assert_eq!(net.params(), before);
    }

    #[test]
    fn small_step_lowers_loss() {
        let mut net = single_edge();
        let (loss, g) = mse_step(&net, 1.0, 3.0);
        sgd_step(&mut net, &g, 0.05).unwrap();
        let (after, _) = mse_step(&net, 1.0, 3.0);
        assert!(after < loss, "{after} !< {loss}");
    }

    #[test]
    fn momentum_converges_on_single_edge() {
        let mut net = single_edge();
        let mut opt = Sgd::new(0.05, 0.9);
        for _ in 0..300 {
            let (_, g) = mse_step(&net, 1.0, 3.0);
            opt.step(&mut net, &g).unwrap();
        }
        let (loss, _) = mse_step(&net, 1.0, 3.0);
        assert!(loss < 1e-6);
    }

    #[test]
    fn rejects_non_finite_and_mismatched_gradients() {
        let mut net = single_edge();
        let (_, mut g) = mse_step(&net, 1.0, 3.0);
        g.weights[0][0] = f64::NAN;
        assert!(matches!(sgd_step(&mut net, &g, 0.1), Err(NetError::NonFinite(_))));
        g.weights.clear();
        assert!(matches!(sgd_step(&mut net, &g, 0.1), Err(NetError::GradientShape)));
    }

    #[test]
    fn bias_frozen_without_bias_option() {
        let d = Dag::new(2, [(0, 1)]).unwrap();
        let opts = CompileOptions { activation: Activation::Identity, use_bias: false, ..Default::default() };
        let mut net = compile::<f64>(&d, opts, 0).unwrap();
        let (_, g) = mse_step(&net, 1.0, 3.0);
        sgd_step(&mut net, &g, 0.1).unwrap();
        assert_eq!(net.node_biases(), BTreeMap::from([(1, 0.0)]));
    }
}
