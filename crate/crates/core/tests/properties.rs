mod common;

use std::collections::BTreeMap;

use dagforge::graphgen::{
    erdos_renyi, generate_dag, largest_connected_component, orient_acyclic, read_dag, write_dag, Dag,
};
use dagforge::layering::{longest_path_layering, moved_nodes, push_sources, reassign_nodes, validate_layering};
use dagforge::network::{compile, compile_with_layering, Checkpoint};
use dagforge::{Activation, CompileOptions, DeepstructNet, Matrix, SequentialNet, Workspace};
use proptest::prelude::*;

use common::*;

/// A DAG on `n` nodes from a random relabelling and edge subset of the
/// complete DAG, so node order and topological order differ.
fn arbitrary_dag() -> impl Strategy<Value = Dag> {
    (2usize..24)
        .prop_flat_map(|n| {
            let perm = Just((0..n).collect::<Vec<_>>()).prop_shuffle();
            let picks = proptest::collection::vec(proptest::bool::weighted(0.35), n * (n - 1) / 2);
            (Just(n), perm, picks)
        })
        .prop_map(|(n, perm, picks)| {
            let mut edges = Vec::new();
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    if picks[k] {
                        edges.push((perm[i], perm[j]));
                    }
                    k += 1;
                }
            }
            Dag::new(n, edges).expect("relabelled complete-DAG subsets are acyclic")
        })
}

/// Compilable DAGs: at least one edge and no isolated node.
fn compilable_dag() -> impl Strategy<Value = Dag> {
    arbitrary_dag()
        .prop_filter("needs edges and no isolated nodes", |d| d.edge_count() > 0 && d.isolated_nodes().is_empty())
}

fn er_params() -> impl Strategy<Value = (usize, f64, u64)> {
    (2usize..48, 0.02f64..=1.0, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn edge_list_round_trip(d in arbitrary_dag()) {
        let mut buf = Vec::new();
        write_dag(&d, &mut buf).unwrap();
        prop_assert_eq!(read_dag(buf.as_slice()).unwrap(), d);
    }

    #[test]
    fn pipeline_output_is_connected_and_acyclic((n, p, seed) in er_params()) {
        let g = erdos_renyi(n, p, seed).unwrap();
        let mut uf = UnionFind::new(n);
        for &(u, v) in g.edges() {
            uf.union(u, v);
        }
        let lcc = largest_connected_component(&g).unwrap();
        prop_assert_eq!(lcc.graph.node_count(), uf.largest());
        prop_assert!(lcc.original_ids.windows(2).all(|w| w[0] < w[1]));
        let d = orient_acyclic(&lcc.graph, seed);
        prop_assert!(is_acyclic(d.node_count(), d.edges()));
        prop_assert_eq!(d.edge_count(), lcc.graph.edge_count());
        let generated = generate_dag(n, p, seed).unwrap();
        prop_assert_eq!(generated.dag, d);
    }

    #[test]
    fn longest_path_layering_is_minimal(d in arbitrary_dag()) {
        let l = longest_path_layering(&d);
        prop_assert!(validate_layering(&d, &l).is_ok());
        prop_assert_eq!(l.height(), 1 + longest_path(d.node_count(), d.edges()));
        // every sink of a non-trivial component sits in the top layer
        for v in d.sinks() {
            if !d.preds(v).is_empty() {
                prop_assert_eq!(l.layer_of(v), l.height() - 1);
            }
        }
    }

    #[test]
    fn push_sources_is_idempotent(d in compilable_dag()) {
        let l = longest_path_layering(&d);
        let pushed = push_sources(&d, &l);
        prop_assert!(validate_layering(&d, &pushed).is_ok());
        prop_assert_eq!(pushed.height(), l.height());
        let mut srcs = d.sources();
        srcs.sort();
        let mut l0 = pushed.layer(0).to_vec();
        l0.sort();
        prop_assert_eq!(l0, srcs);
        prop_assert_eq!(push_sources(&d, &pushed), pushed);
    }

    #[test]
    fn reassignment_keeps_height_and_function(d in compilable_dag(), seed in any::<u64>()) {
        let base = push_sources(&d, &longest_path_layering(&d));
        let r = reassign_nodes(&d, &base, seed);
        prop_assert!(validate_layering(&d, &r).is_ok());
        prop_assert_eq!(r.height(), base.height());
        for v in moved_nodes(&base, &r) {
            prop_assert!(r.layer_of(v) < base.layer_of(v));
            prop_assert!(base.layer_of(v) >= 2 && base.layer_of(v) + 2 <= base.height());
        }
        prop_assert_eq!(reassign_nodes(&d, &base, seed), r.clone());

        let opts = CompileOptions::with_activation(Activation::Tanh);
        let net = compile::<f64>(&d, opts, seed).unwrap();
        let mut other = compile_with_layering::<f64>(&d, r, opts, seed).unwrap();
        other.load_params(&net.params()).unwrap();
        let x = Matrix::from_fn(3, net.input_nodes().len(), |b, i| (b as f64 - 1.0) * 0.5 + i as f64 * 0.1);
        let mut ws = Workspace::new();
        let a = net.forward(&x, &mut ws).unwrap();
        let b = other.forward(&x, &mut ws).unwrap();
        prop_assert!(normwise(&rows(&a), &rows(&b)) <= 1e-12);
    }

    #[test]
    fn edge_weights_cover_exactly_the_edges(d in compilable_dag(), seed in any::<u64>()) {
        let mut net = compile::<f64>(&d, CompileOptions::default(), seed).unwrap();
        let w = net.edge_weights();
        prop_assert_eq!(w.len(), d.edge_count());
        prop_assert!(w.keys().copied().eq(d.edges().iter().copied()));
        let doubled: BTreeMap<_, _> = w.iter().map(|(&k, &v)| (k, 2.0 * v)).collect();
        net.set_edge_weights(&doubled).unwrap();
        prop_assert_eq!(net.edge_weights(), doubled);
        let mask_ones: f64 = net.layers().iter().map(|l| l.mask().as_slice().iter().sum::<f64>()).sum();
        prop_assert_eq!(mask_ones as usize, d.edge_count());
    }

    #[test]
    fn schedules_match_scalar_oracle(d in compilable_dag(), seed in any::<u64>()) {
        let net = compile::<f64>(&d, CompileOptions::with_activation(Activation::Tanh), seed).unwrap();
        let oracle = RefNet::from_dag(&d, net.edge_weights(), net.node_biases(), Activation::Tanh);
        let x = Matrix::from_fn(4, net.input_nodes().len(), |b, i| ((b * 7 + i * 3) % 5) as f64 * 0.4 - 0.8);
        let expected = oracle.forward(&rows(&x));
        let mut ws = Workspace::new();
        let fw4 = net.forward(&x, &mut ws).unwrap();
        prop_assert_eq!(ws.products(), net.height() - 1);
        let sq = SequentialNet::from_compiled(&net).forward(&x, &mut ws).unwrap();
        let ds = DeepstructNet::from_compiled(&net).forward(&x, &mut ws).unwrap();
        for got in [&fw4, &sq, &ds] {
            prop_assert!(normwise(&rows(got), &expected) <= 1e-12);
        }
    }

    #[test]
    fn masked_gradients_are_exact_zeros(d in compilable_dag(), seed in any::<u64>()) {
        let net = compile::<f64>(&d, CompileOptions::default(), seed).unwrap();
        let x = Matrix::filled(5, net.input_nodes().len(), 0.7);
        let mut ws = Workspace::new();
        let out = net.forward(&x, &mut ws).unwrap();
        let g = net.backward(&ws, &Matrix::ones(out.rows(), out.cols())).unwrap();
        for (layer, gw) in net.layers().iter().zip(&g.weights) {
            for (&m, &v) in layer.mask().as_slice().iter().zip(gw) {
                if m == 0.0 {
                    prop_assert_eq!(v.to_bits(), 0);
                }
            }
        }
    }

    #[test]
    fn checkpoint_round_trip(d in compilable_dag(), seed in any::<u64>()) {
        let net = compile::<f64>(&d, CompileOptions::default(), seed).unwrap();
        let back = Checkpoint::from_json(&Checkpoint::from_net(&net).to_json()).unwrap().into_net::<f64>().unwrap();
        prop_assert_eq!(back.params(), net.params());
        prop_assert_eq!(back.layering(), net.layering());
    }
}

#[test]
fn complete_and_chain_heights() {
    for n in 2..20 {
        let complete: Vec<_> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        let chain: Vec<_> = (0..n - 1).map(|u| (u, u + 1)).collect();
        for edges in [complete, chain] {
            let d = Dag::new(n, edges).unwrap();
            assert_eq!(longest_path_layering(&d).height(), n);
        }
    }
}
