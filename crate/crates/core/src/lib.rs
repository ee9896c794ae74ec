//! Compile arbitrary directed acyclic graphs into layered neural networks.
//!
//! A DAG is partitioned into a minimum-height layering (longest-path
//! algorithm). Each layer `l` then becomes one masked matrix product
//! `a^l = σ((M^l ⊙ W̃^l) x^l + b^l)`, where `x^l` gathers the activations of
//! every predecessor of the layer and the binary mask `M^l` keeps non-edges
//! at exactly zero, in the forward pass and under gradient descent alike.
//!
//! Two reference schedules computing the same function live in
//! [`baselines`]: a node-at-a-time sequential pass and a layer-pair
//! decomposition. [`bench`] times all three on Erdős-Rényi graphs.
//!
//! The `parallel` feature (on by default) lets the dense kernels and the
//! batch verification helpers run on rayon. Without it every code path is
//! sequential. Kernel parallelism is capped by `DAGFORGE_THREADS`
//! (default 1) so timings stay comparable across methods.

pub mod baselines;
pub mod bench;
pub mod graphgen;
pub mod kernel;
pub mod layering;
pub mod matrix;
pub mod network;
pub mod par;
pub mod rng;
pub mod scalar;
pub mod verify;

pub use baselines::{DeepstructNet, SequentialNet};
pub use graphgen::{Dag, UndirectedGraph};
pub use layering::Layering;
pub use network::{
    Activation, CompileOptions, CompiledNet, GradientBundle, InitSpec, Matrix, NetParams, Sgd, Workspace,
};
pub use scalar::Scalar;
