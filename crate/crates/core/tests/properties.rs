mod common;

use common::{instance, model_config, perturbed, random_graph, random_path, VARIANTS};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simgraph::evalkit::{precision_at_k, Denominator};
use simgraph::fusion::{
    attention_weights, forward_cached, fuse, Activation, Aggregator, MetaFeatures, ModelConfig,
    ModelParams, SubgraphStack, Variant,
};
use simgraph::hetgraph::FeatureMatrix;
use simgraph::metapath::{build_subgraph, self_counts, Normalization};
use simgraph::sparse::Csr;
use simgraph::training::{train, Objective, TrainConfig};
use simgraph::Exec;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 48,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn sps_is_symmetric_bounded_and_typed(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng);
        let p = random_path(&mut rng, &g, 4);
        for norm in [Normalization::Sps, Normalization::RawPathcount] {
            let s = build_subgraph(&g, &p, norm, Exec::Sequential).unwrap();
            let a = s.adjacency();
            prop_assert_eq!(a.max_abs_asymmetry(), 0.0);
            let (ts, te) = (p.start(), p.end());
            for (i, j, v) in a.iter() {
                prop_assert!((0.0..=1.0).contains(&v), "{} value {}", p, v);
                let (ti, tj) = (g.node_type(i), g.node_type(j));
                prop_assert!((ti == ts && tj == te) || (ti == te && tj == ts));
            }
        }
        if p.is_palindromic() {
            let s = build_subgraph(&g, &p, Normalization::Sps, Exec::Sequential).unwrap();
            let sc = self_counts(&g, &p, Exec::Sequential).unwrap();
            for gi in g.type_range(p.start()) {
                let want = if sc[gi] > 0 { Some(1.0) } else { None };
                prop_assert_eq!(s.values.get(gi, gi), want);
            }
        }
    }

    #[test]
    fn attention_weights_lie_on_the_simplex(seed in any::<u64>(), k in 1usize..5) {
        let inst = instance(seed, 15, k, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let omega = Array2::from_shape_simple_fn((k, 8), || rng.random_range(-3.0..3.0));
        for act in [Activation::LeakyRelu, Activation::Tanh, Activation::Relu] {
            let w = attention_weights(
                &MetaFeatures::Input(&inst.features),
                &omega,
                inst.stack.pattern(),
                act,
                0.2,
                Exec::Sequential,
            )
            .unwrap();
            for pair in w.chunks(k) {
                let s: f64 = pair.iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-6);
                prop_assert!(pair.iter().all(|&x| (0.0..=1.0).contains(&x)));
            }
        }
    }

    #[test]
    fn sum_fusion_is_shift_invariant_and_symmetric(seed in any::<u64>(), c in -50.0f64..50.0) {
        let inst = instance(seed, 16, 3, 4, 3);
        let cfg = ModelConfig { label_dim: 3, ..model_config(Variant::Sum, Aggregator::Mean, seed) };
        let p = perturbed(&ModelParams::init(&cfg, 3, 4).unwrap(), seed);
        let mut q = p.clone();
        q.w.mapv_inplace(|x| x + c);
        let (fa, _) = fuse(&inst.stack, &p, &cfg, &inst.features, Exec::Sequential).unwrap();
        let (fb, _) = fuse(&inst.stack, &q, &cfg, &inst.features, Exec::Sequential).unwrap();
        for (x, y) in fa.values().iter().zip(fb.values()) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
        let la = forward_cached(&inst.stack, &inst.features, &p, &cfg, Exec::Sequential).unwrap();
        let lb = forward_cached(&inst.stack, &inst.features, &q, &cfg, Exec::Sequential).unwrap();
        let err = (la.logits() - lb.logits()).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        prop_assert!(err <= 1e-10);
        let Objective::MultilabelBce { labels, mask } = &inst.objective else { unreachable!() };
        let l1 = simgraph::training::loss(la.logits(), labels, mask).unwrap();
        let l2 = simgraph::training::loss(lb.logits(), labels, mask).unwrap();
        prop_assert!((l1 - l2).abs() <= 1e-10);
        for (i, j) in fa.support() {
            prop_assert_eq!(fa.get(i, j).to_bits(), fa.get(j, i).to_bits());
        }
    }

    #[test]
    fn single_subgraph_collapses_every_variant(seed in any::<u64>()) {
        let inst = instance(seed, 14, 1, 4, 3);
        for (variant, agg) in VARIANTS {
            let cfg = ModelConfig { label_dim: 3, ..model_config(variant, agg, seed) };
            let p = perturbed(&ModelParams::init(&cfg, 1, 4).unwrap(), seed);
            let (fused, _) = fuse(&inst.stack, &p, &cfg, &inst.features, Exec::Sequential).unwrap();
            prop_assert_eq!(fused.to_csr(), inst.mats[0].clone());
        }
    }

    #[test]
    fn node_permutation_permutes_logits(seed in any::<u64>()) {
        let n = 16;
        let inst = instance(seed, n, 2, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        // Node i of the original graph becomes node perm[i].
        let mats: Vec<Csr<f64>> = inst
            .mats
            .iter()
            .map(|m| Csr::from_triplets(n, n, m.iter().map(|(i, j, v)| (perm[i], perm[j], v)).collect(), |a, _| a))
            .collect();
        let stack = SubgraphStack::from_adjacencies(&mats).unwrap();
        let f = inst.features.to_dense();
        let mut fp = Array2::zeros(f.raw_dim());
        for (i, &pi) in perm.iter().enumerate() {
            fp.row_mut(pi).assign(&f.row(i));
        }
        let features = FeatureMatrix::from_dense(&fp).unwrap();
        for (variant, agg) in VARIANTS {
            let cfg = ModelConfig { label_dim: 3, ..model_config(variant, agg, seed) };
            let p = perturbed(&ModelParams::init(&cfg, 2, 4).unwrap(), seed);
            let a = forward_cached(&inst.stack, &inst.features, &p, &cfg, Exec::Sequential).unwrap();
            let b = forward_cached(&stack, &features, &p, &cfg, Exec::Sequential).unwrap();
            for (i, &pi) in perm.iter().enumerate() {
                for c in 0..3 {
                    prop_assert!((a.logits()[[i, c]] - b.logits()[[pi, c]]).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn corrupting_a_hit_never_raises_precision(seed in any::<u64>(), k in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = 25;
        let mut ranked: Vec<usize> = (0..l).collect();
        for i in (1..l).rev() {
            ranked.swap(i, rng.random_range(0..=i));
        }
        let truth: Vec<usize> = (0..l).filter(|_| rng.random_bool(0.3)).collect();
        prop_assume!(!truth.is_empty());
        let base = precision_at_k(std::slice::from_ref(&ranked), std::slice::from_ref(&truth), k, Denominator::Capped);
        if let Some(pos) = ranked[..k].iter().position(|x| truth.contains(x)) {
            if let Some(miss) = ranked[k..].iter().position(|x| !truth.contains(x)) {
                ranked.swap(pos, k + miss);
                let worse = precision_at_k(&[ranked], &[truth], k, Denominator::Capped);
                prop_assert!(worse <= base);
            }
        }
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let inst = instance(3, 15, 2, 4, 3);
    let cfg = ModelConfig {
        label_dim: 3,
        ..model_config(Variant::AggAttention, Aggregator::Mean, 1)
    };
    let init = ModelParams::init(&cfg, 2, 4).unwrap();
    let tc = TrainConfig {
        epochs: 5,
        learning_rate: 0.0,
        ..TrainConfig::default()
    };
    let out = train(
        &inst.stack,
        &inst.features,
        init.clone(),
        &cfg,
        &tc,
        &inst.objective,
        None,
        Exec::Sequential,
    )
    .unwrap();
    assert_eq!(out.params, init);
    let first = out.log[0].loss;
    assert!(out.log.iter().all(|e| e.loss == first));
}

/// Bipartite A-B graph with random edges plus `hub`, a B node linked to
/// every A node.
fn with_hub(n_a: usize, seed: u64) -> (simgraph::hetgraph::HeteroGraph, usize) {
    use simgraph::hetgraph::{GraphBuilder, Schema};
    let schema = Schema::new(&["A", "B"], &[("A", "B")], &["A"]).unwrap();
    let mut b = GraphBuilder::new(schema);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n_a {
        b.add_node(0, &format!("a{i}"), &[]).unwrap();
    }
    for j in 0..6 {
        b.add_node(1, &format!("b{j}"), &[]).unwrap();
    }
    let hub = b.add_node(1, "hub", &[]).unwrap();
    for i in 0..n_a {
        for j in 0..6 {
            if rng.random_bool(0.3) {
                b.add_edge(0, i, 1, j).unwrap();
            }
        }
        b.add_edge(0, i, 1, hub).unwrap();
    }
    let g = b.build();
    let gid = g.offset(1) + hub;
    (g, gid)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn hub_row_grows_linearly_only_without_normalization(seed in any::<u64>(), n_a in 1usize..20) {
        for n in [n_a, 2 * n_a] {
            let (g, hub) = with_hub(n, seed);
            for text in ["A-B", "B-A-B"] {
                let p = simgraph::metapath::MetaPath::parse(text, g.schema()).unwrap();
                let counts = simgraph::metapath::path_count(&g, &p, Exec::Sequential).unwrap().counts.to_dense();
                if text == "A-B" {
                    let col: u64 = counts.column(hub - g.offset(1)).sum();
                    prop_assert_eq!(col, n as u64);
                }
                let s = build_subgraph(&g, &p, Normalization::Sps, Exec::Sequential).unwrap();
                let a = s.adjacency();
                let row: Vec<f64> = a.iter().filter(|&(i, _, _)| i == hub).map(|(_, _, v)| v).collect();
                prop_assert!(row.iter().sum::<f64>() <= row.len() as f64 + 1e-12);
            }
        }
    }
}

#[test]
fn raw_counts_give_the_top_degree_node_a_larger_share() {
    use simgraph::synthgen::{generate, GenConfig};
    let cfg = GenConfig {
        patients: 60,
        visits: 90,
        hub_attribute: true,
        seed: 11,
        ..GenConfig::default()
    };
    let (g, _, _) = generate(&cfg).unwrap();
    for text in ["V-C-G", "V-L"] {
        let p = simgraph::metapath::MetaPath::parse(text, g.schema()).unwrap();
        let raw = build_subgraph(&g, &p, Normalization::RawPathcount, Exec::Sequential).unwrap();
        let sps = build_subgraph(&g, &p, Normalization::Sps, Exec::Sequential).unwrap();
        let ra = raw.adjacency();
        let sa = sps.adjacency();
        let mut degree = vec![0usize; g.n_nodes()];
        for (i, _, _) in ra.iter() {
            degree[i] += 1;
        }
        let top = (0..g.n_nodes())
            .max_by_key(|&i| (degree[i], std::cmp::Reverse(i)))
            .unwrap();
        let share = |m: &Csr<f64>| {
            let total: f64 = m.iter().map(|e| e.2).sum();
            m.iter().filter(|e| e.0 == top).map(|e| e.2).sum::<f64>() / total
        };
        let (r, s) = (share(&ra), share(&sa));
        assert!(
            r > s,
            "{text}: top node {} raw share {r} vs sps {s}",
            g.key(top)
        );
    }
}
