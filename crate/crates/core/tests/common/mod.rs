#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simgraph::fusion::{Aggregator, ModelConfig, ModelParams, SubgraphStack, Variant};
use simgraph::hetgraph::{FeatureMatrix, GraphBuilder, HeteroGraph, Schema};
use simgraph::metapath::MetaPath;
use simgraph::sparse::Csr;
use simgraph::training::Objective;

/// Two visits sharing the diagnosis `headache`; `v1` and `v2` both take
/// `benzodiazepines`, `v2` also `m2`.
pub fn figure_graph() -> HeteroGraph {
    let schema = Schema::new(&["V", "D", "M"], &[("V", "D"), ("V", "M")], &["V"]).unwrap();
    let mut b = GraphBuilder::new(schema);
    for k in ["v1", "v2"] {
        b.add_node(0, k, &[]).unwrap();
    }
    for k in ["d1", "headache", "d3"] {
        b.add_node(1, k, &[]).unwrap();
    }
    for k in ["benzodiazepines", "m2"] {
        b.add_node(2, k, &[]).unwrap();
    }
    for (v, d) in [(0, 0), (0, 1), (1, 1), (1, 2)] {
        b.add_edge(0, v, 1, d).unwrap();
    }
    for (v, m) in [(0, 0), (1, 0), (1, 1)] {
        b.add_edge(0, v, 2, m).unwrap();
    }
    b.build()
}

/// Three node types `A` (human), `B`, `C` with edge types A-B, A-C, B-C and
/// B-B; at most 50 nodes.
pub fn random_graph(rng: &mut ChaCha8Rng) -> HeteroGraph {
    let schema = Schema::new(
        &["A", "B", "C"],
        &[("A", "B"), ("A", "C"), ("B", "C"), ("B", "B")],
        &["A"],
    )
    .unwrap();
    let mut b = GraphBuilder::new(schema.clone());
    let counts: Vec<usize> = (0..3).map(|_| rng.random_range(1..=16)).collect();
    for (t, &c) in counts.iter().enumerate() {
        for i in 0..c {
            b.add_node(t, &format!("{}{i}", schema.type_name(t)), &[])
                .unwrap();
        }
    }
    let p = rng.random_range(0.05..0.5);
    for &(ta, tb) in schema.edge_types() {
        for i in 0..counts[ta] {
            for j in 0..counts[tb] {
                if (ta == tb && i >= j) || !rng.random_bool(p) {
                    continue;
                }
                b.add_edge(ta, i, tb, j).unwrap();
            }
        }
    }
    b.build()
}

/// Random walk over the schema's type graph with 1 to `max_hops` hops.
pub fn random_path(rng: &mut ChaCha8Rng, graph: &HeteroGraph, max_hops: usize) -> MetaPath {
    let schema = graph.schema();
    let n = schema.n_types();
    let hops = rng.random_range(1..=max_hops);
    let mut types = vec![rng.random_range(0..n)];
    while types.len() <= hops {
        let last = *types.last().unwrap();
        let next: Vec<usize> = (0..n).filter(|&t| schema.allows(last, t)).collect();
        types.push(next[rng.random_range(0..next.len())]);
    }
    let text: Vec<&str> = types.iter().map(|&t| schema.type_name(t)).collect();
    MetaPath::parse(&text.join("-"), schema).unwrap()
}

/// Path instances by depth-first enumeration, dense over local ids of the
/// start (rows) and end (columns) types.
pub fn dfs_path_count(graph: &HeteroGraph, path: &MetaPath) -> Array2<u64> {
    let types = path.types();
    let (s, e) = (types[0], *types.last().unwrap());
    let mut out = Array2::zeros((graph.n_of_type(s), graph.n_of_type(e)));
    fn walk(
        graph: &HeteroGraph,
        types: &[usize],
        pos: usize,
        node: usize,
        start: usize,
        out: &mut Array2<u64>,
    ) {
        if pos + 1 == types.len() {
            let e = types[pos];
            out[[start, node - graph.offset(e)]] += 1;
            return;
        }
        for nb in graph.neighbors(node, types[pos + 1]) {
            walk(graph, types, pos + 1, nb, start, out);
        }
    }
    for g in graph.type_range(s) {
        walk(graph, types, 0, g, g - graph.offset(s), &mut out);
    }
    out
}

/// Dense N × N symmetric PathSim straight from instance counts.
pub fn direct_sps(graph: &HeteroGraph, path: &MetaPath, pc: &Array2<u64>) -> Array2<f64> {
    let types = path.types();
    let (s, e) = (types[0], *types.last().unwrap());
    let n = graph.n_nodes();
    let mut selfc = vec![0u64; n];
    if path.is_palindromic() {
        for i in 0..pc.nrows() {
            selfc[graph.offset(s) + i] = pc[[i, i]];
        }
    } else {
        for i in 0..pc.nrows() {
            selfc[graph.offset(s) + i] += pc.row(i).iter().map(|v| v * v).sum::<u64>();
        }
        for j in 0..pc.ncols() {
            selfc[graph.offset(e) + j] += pc.column(j).iter().map(|v| v * v).sum::<u64>();
        }
    }
    let mut num = Array2::<u64>::zeros((n, n));
    for i in 0..pc.nrows() {
        for j in 0..pc.ncols() {
            let (a, b) = (graph.offset(s) + i, graph.offset(e) + j);
            num[[a, b]] += pc[[i, j]];
            num[[b, a]] += pc[[i, j]];
        }
    }
    Array2::from_shape_fn((n, n), |(a, b)| {
        let den = selfc[a] + selfc[b];
        if num[[a, b]] == 0 || den == 0 {
            0.0
        } else {
            (num[[a, b]] as f64 / den as f64).min(1.0)
        }
    })
}

pub fn random_subgraph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Csr<f64> {
    let mut trip = Vec::new();
    for i in 0..n {
        for j in i..n {
            if rng.random_bool(p) {
                let v = rng.random_range(0.05..1.0);
                trip.push((i, j, v));
                if i != j {
                    trip.push((j, i, v));
                }
            }
        }
    }
    Csr::from_triplets(n, n, trip, |a, _| a)
}

pub struct Instance {
    pub mats: Vec<Csr<f64>>,
    pub stack: SubgraphStack,
    pub features: FeatureMatrix,
    pub objective: Objective,
}

/// Random symmetric subgraphs, dense features and a BCE objective over two
/// thirds of the nodes.
pub fn instance(seed: u64, n: usize, k: usize, d: usize, l: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mats: Vec<Csr<f64>> = (0..k).map(|_| random_subgraph(&mut rng, n, 0.2)).collect();
    let stack = SubgraphStack::from_adjacencies(&mats).unwrap();
    let f = Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0..1.0));
    let labels =
        Array2::from_shape_simple_fn((n, l), || if rng.random_bool(0.3) { 1.0 } else { 0.0 });
    let mask: Vec<usize> = (0..n).filter(|i| i % 3 != 0).collect();
    Instance {
        mats,
        stack,
        features: FeatureMatrix::from_dense(&f).unwrap(),
        objective: Objective::MultilabelBce { labels, mask },
    }
}

pub fn model_config(variant: Variant, aggregator: Aggregator, seed: u64) -> ModelConfig {
    ModelConfig {
        variant,
        aggregator,
        hidden_dim: 5,
        label_dim: 4,
        seed,
        ..ModelConfig::default()
    }
}

/// Nonzero fusion logits and bias so no block sits at a symmetric point.
pub fn perturbed(params: &ModelParams, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut p = params.clone();
    p.w.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    p.head_bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    p
}

pub const VARIANTS: [(Variant, Aggregator); 6] = [
    (Variant::Sum, Aggregator::Mean),
    (Variant::Sum, Aggregator::Concat),
    (Variant::Attention, Aggregator::Mean),
    (Variant::Attention, Aggregator::Concat),
    (Variant::AggAttention, Aggregator::Mean),
    (Variant::AggAttention, Aggregator::Concat),
];
