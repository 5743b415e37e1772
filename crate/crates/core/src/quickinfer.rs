//! Predictions for unseen visits or patients without retraining.
//!
//! The test graph is the training graph with the new human nodes appended.
//! Its fused adjacency reuses the trained weights between existing nodes,
//! recomputes human-code similarities for the new nodes from their own
//! edges, and has no human-human entries at all.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fusion::{
    forward, fuse, predict_topk, FusedGraph, ModelConfig, ModelParams, SubgraphStack,
};
use crate::hetgraph::{EdgeFile, FeatureMatrix, FeatureMode, GraphBuilder, HeteroGraph};
use crate::metapath::{
    path_count, self_counts_from, sps, symmetric_numerators, Normalization, SimilaritySubgraph,
};
use crate::sparse::Csr;

/// Support pairs of a fused graph grouped by how many endpoints are human.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgePartition {
    pub code_code: Vec<(usize, usize)>,
    pub human_code: Vec<(usize, usize)>,
    pub human_human: Vec<(usize, usize)>,
}

impl EdgePartition {
    pub fn len(&self) -> usize {
        self.code_code.len() + self.human_code.len() + self.human_human.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Groups the support of `fused`; `is_human(g)` classifies node `g`.
pub fn partition(fused: &FusedGraph, is_human: impl Fn(usize) -> bool) -> EdgePartition {
    let mut out = EdgePartition::default();
    for (i, j) in fused.support() {
        match (is_human(i), is_human(j)) {
            (false, false) => out.code_code.push((i, j)),
            (true, true) => out.human_human.push((i, j)),
            _ => out.human_code.push((i, j)),
        }
    }
    out
}

/// New human nodes and their medical-code edges.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TestBatch {
    /// `(type, key)` in arrival order.
    nodes: Vec<(usize, String)>,
    index: HashMap<(usize, String), usize>,
    /// `(new node index, global id of the code in the training graph)`.
    edges: Vec<(usize, usize)>,
}

impl TestBatch {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds the edge between new human node `key` of type `human_type` and
    /// existing code `code` (a global id of the training graph).
    pub fn add_edge(
        &mut self,
        graph: &HeteroGraph,
        human_type: usize,
        key: &str,
        code: usize,
    ) -> Result<()> {
        let schema = graph.schema();
        if !schema.is_human(human_type) {
            return Err(Error::Batch(format!(
                "`{key}` has non-human type {}",
                schema.type_name(human_type)
            )));
        }
        let ct = graph.node_type(code);
        if schema.is_human(ct) {
            return Err(Error::Batch(format!(
                "`{key}` links to human node `{}`; batches carry medical-code edges only",
                graph.key(code)
            )));
        }
        if !schema.allows(human_type, ct) {
            return Err(Error::UndeclaredEdgeType(
                schema.type_name(human_type).to_string(),
                schema.type_name(ct).to_string(),
            ));
        }
        if graph.node_id(human_type, key).is_some() {
            return Err(Error::Batch(format!(
                "`{key}` already exists in the training graph"
            )));
        }
        let id = (human_type, key.to_string());
        let next = self.nodes.len();
        let idx = *self.index.entry(id.clone()).or_insert(next);
        if idx == next {
            self.nodes.push(id);
        }
        if !self.edges.contains(&(idx, code)) {
            self.edges.push((idx, code));
        }
        Ok(())
    }

    /// Batch from edge CSVs in the graph edge format; one endpoint of each
    /// file is a human type (new keys), the other a code type (known keys).
    pub fn from_edge_files(graph: &HeteroGraph, files: &[EdgeFile]) -> Result<Self> {
        let schema = graph.schema();
        let mut batch = TestBatch::new();
        for f in files {
            let a = schema.require_type(&f.src_type)?;
            let b = schema.require_type(&f.dst_type)?;
            let flip = match (schema.is_human(a), schema.is_human(b)) {
                (true, false) => false,
                (false, true) => true,
                _ => {
                    return Err(Error::Batch(format!(
                        "{}: edge type {}-{} must join a human type and a code type",
                        f.path.display(),
                        f.src_type,
                        f.dst_type
                    )))
                }
            };
            let (ht, ct) = if flip { (b, a) } else { (a, b) };
            for (s, d, line) in &f.rows {
                let (hk, ck) = if flip { (d, s) } else { (s, d) };
                let code = graph.node_id(ct, ck).ok_or_else(|| Error::UnknownNode {
                    path: f.path.clone(),
                    line: *line,
                    key: ck.clone(),
                })?;
                batch.add_edge(graph, ht, hk, code)?;
            }
        }
        Ok(batch)
    }

    pub fn from_edge_paths(graph: &HeteroGraph, paths: &[impl AsRef<Path>]) -> Result<Self> {
        let files = paths
            .iter()
            .map(|p| EdgeFile::read(p.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Self::from_edge_files(graph, &files)
    }

    /// Batch holding the code edges of existing human nodes of `source`,
    /// e.g. held-out visits lifted out of a transductive graph. `graph` is
    /// the training graph, which must not contain them.
    pub fn from_nodes(source: &HeteroGraph, nodes: &[usize], graph: &HeteroGraph) -> Result<Self> {
        let schema = source.schema();
        let mut batch = TestBatch::new();
        for &h in nodes {
            let ht = source.node_type(h);
            let before = batch.edges.len();
            for t in 0..schema.n_types() {
                if schema.is_human(t) {
                    continue;
                }
                for c in source.neighbors(h, t) {
                    let code = graph.node_id(t, source.key(c)).ok_or_else(|| {
                        Error::Batch(format!(
                            "code `{}` is missing from the training graph",
                            source.key(c)
                        ))
                    })?;
                    batch.add_edge(graph, ht, source.key(h), code)?;
                }
            }
            if batch.edges.len() == before {
                return Err(Error::Batch(format!(
                    "`{}` has no medical-code edges",
                    source.key(h)
                )));
            }
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[(usize, String)] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }
}

/// What quick inference needs from a training run.
#[derive(Debug, Clone, Copy)]
pub struct TrainedModel<'a> {
    /// Training graph (after the split removed held-out label edges).
    pub graph: &'a HeteroGraph,
    pub subgraphs: &'a [SimilaritySubgraph],
    pub stack: &'a SubgraphStack,
    pub features: &'a FeatureMatrix,
    pub feature_mode: FeatureMode,
    pub params: &'a ModelParams,
    pub config: &'a ModelConfig,
}

#[derive(Debug, Clone)]
pub struct QuickInference {
    /// Nodes of the training graph; new node `b` is test node `n_train + b`.
    pub n_train: usize,
    pub nodes: Vec<(usize, String)>,
    /// One row per new node.
    pub logits: Array2<f64>,
    /// Test-time fused adjacency over the training nodes plus the batch.
    pub fused: FusedGraph,
}

impl QuickInference {
    /// CSV `node_key,rank,label,logit` with the top `k` labels per node;
    /// `label_type` names the label keys.
    pub fn predictions_csv(&self, graph: &HeteroGraph, label_type: usize, k: usize) -> String {
        let mut out = String::from("node_key,rank,label,logit\n");
        let rows: Vec<usize> = (0..self.nodes.len()).collect();
        let top = predict_topk(&self.logits, k, &rows);
        let off = graph.offset(label_type);
        for (b, ranked) in top.iter().enumerate() {
            for (r, &l) in ranked.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{:.10e}",
                    self.nodes[b].1,
                    r + 1,
                    graph.key(off + l),
                    self.logits[[b, l]]
                );
            }
        }
        out
    }
}

/// Batch-only graph: every code node of `graph` (same local ids), the new
/// human nodes, and the batch edges. Returns it with the map from its
/// global ids to test-graph ids.
fn batch_graph(graph: &HeteroGraph, batch: &TestBatch) -> Result<(HeteroGraph, Vec<usize>)> {
    let schema = graph.schema();
    let n = graph.n_nodes();
    let mut b = GraphBuilder::new(schema.clone());
    let mut local = vec![0usize; batch.len()];
    for t in 0..schema.n_types() {
        if schema.is_human(t) {
            for (idx, (nt, key)) in batch.nodes.iter().enumerate() {
                if *nt == t {
                    local[idx] = b.add_node(t, key, &[])?;
                }
            }
        } else {
            for key in graph.keys_of_type(t) {
                b.add_node(t, key, &[])?;
            }
        }
    }
    for &(idx, code) in &batch.edges {
        let ht = batch.nodes[idx].0;
        let ct = graph.node_type(code);
        b.add_edge(ht, local[idx], ct, code - graph.offset(ct))?;
    }
    let bg = b.build();
    let mut to_test = vec![usize::MAX; bg.n_nodes()];
    for t in 0..schema.n_types() {
        if !schema.is_human(t) {
            for l in 0..graph.n_of_type(t) {
                to_test[bg.offset(t) + l] = graph.offset(t) + l;
            }
        }
    }
    for (idx, (t, _)) in batch.nodes.iter().enumerate() {
        to_test[bg.offset(*t) + local[idx]] = n + idx;
    }
    Ok((bg, to_test))
}

/// Test-time `A_k'` for one meta-path over `n + batch` nodes.
fn test_subgraph(
    model: &TrainedModel<'_>,
    sub: &SimilaritySubgraph,
    bg: &HeteroGraph,
    to_test: &[usize],
    m: usize,
    exec: Exec,
) -> Result<Csr<f64>> {
    let graph = model.graph;
    let schema = graph.schema();
    let human = |g: usize| schema.is_human(graph.node_type(g));
    let mut trip: Vec<(usize, usize, f64)> = sub
        .adjacency()
        .iter()
        .filter(|&(i, j, _)| !(human(i) && human(j)))
        .collect();
    let path = &sub.path;
    let (s, e) = (path.start(), path.end());
    if schema.is_human(s) != schema.is_human(e) {
        let pc = path_count(bg, path, exec)?;
        let upper: Vec<(usize, usize, f64)> = match sub.normalization {
            Normalization::Sps => {
                // Codes keep their training visibility plus the batch's.
                let trained = self_counts_from(graph, &path_count(graph, path, exec)?)?;
                let mut sc = self_counts_from(bg, &pc)?;
                for (g, c) in sc.iter_mut().enumerate() {
                    let tg = to_test[g];
                    if tg < graph.n_nodes() {
                        *c += trained[tg];
                    }
                }
                sps(bg, &pc, &sc)
                    .values
                    .iter()
                    .filter(|&(i, j, _)| i <= j)
                    .collect()
            }
            Normalization::RawPathcount => symmetric_numerators(bg, &pc)
                .into_iter()
                .map(|(i, j, v)| (i, j, v as f64 / sub.divisor))
                .collect(),
        };
        for (i, j, v) in upper {
            let (a, b) = (to_test[i], to_test[j]);
            trip.push((a, b, v));
            if a != b {
                trip.push((b, a, v));
            }
        }
    }
    Ok(Csr::from_triplets(m, m, trip, |a, _| a))
}

/// Feature rows for the new nodes: the type indicator under `onehot-type`,
/// zero otherwise (new nodes have no identity column or provided row).
fn new_feature_rows(mode: FeatureMode, batch: &TestBatch) -> Vec<Vec<(usize, f64)>> {
    batch
        .nodes
        .iter()
        .map(|(t, _)| match mode {
            FeatureMode::OnehotType => vec![(*t, 1.0)],
            _ => Vec::new(),
        })
        .collect()
}

/// Logits for every node of `batch` with the trained parameters, without
/// touching them.
pub fn quick_infer(
    model: &TrainedModel<'_>,
    batch: &TestBatch,
    exec: Exec,
) -> Result<QuickInference> {
    let graph = model.graph;
    let n = graph.n_nodes();
    let m = n + batch.len();
    let (trained, _) = fuse(
        model.stack,
        model.params,
        model.config,
        model.features,
        exec,
    )?;
    let l = model.params.label_dim();
    if batch.is_empty() {
        return Ok(QuickInference {
            n_train: n,
            nodes: Vec::new(),
            logits: Array2::zeros((0, l)),
            fused: trained,
        });
    }
    let (bg, to_test) = batch_graph(graph, batch)?;
    let mats = exec
        .map(model.subgraphs.len(), |k| {
            test_subgraph(model, &model.subgraphs[k], &bg, &to_test, m, exec)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let stack = SubgraphStack::from_adjacencies(&mats)?;
    let features = model
        .features
        .with_rows(new_feature_rows(model.feature_mode, batch))?;
    let (mut fused, f_meta) = fuse(&stack, model.params, model.config, &features, exec)?;
    // Entries among training nodes keep their trained weights exactly.
    let pattern = stack.pattern();
    let values = fused.values_mut();
    for i in 0..n {
        for e in pattern.row_range(i) {
            let j = pattern.col(e);
            if j < n {
                values[e] = trained.get(i, j);
            }
        }
    }
    let all = forward(&fused, &f_meta, model.params, exec)?;
    let logits = all.slice(ndarray::s![n.., ..]).to_owned();
    Ok(QuickInference {
        n_train: n,
        nodes: batch.nodes.clone(),
        logits,
        fused,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::Schema;

    fn toy() -> HeteroGraph {
        let schema = Schema::new(&["V", "D", "L"], &[("V", "D"), ("V", "L")], &["V"]).unwrap();
        let mut b = GraphBuilder::new(schema);
        for k in ["v0", "v1"] {
            b.add_node(0, k, &[]).unwrap();
        }
        for k in ["d0", "d1"] {
            b.add_node(1, k, &[]).unwrap();
        }
        for k in ["l0", "l1"] {
            b.add_node(2, k, &[]).unwrap();
        }
        b.add_edge(0, 0, 1, 0).unwrap();
        b.add_edge(0, 0, 2, 0).unwrap();
        b.add_edge(0, 1, 2, 1).unwrap();
        b.build()
    }

    #[test]
    fn batch_validation() {
        let g = toy();
        let mut batch = TestBatch::new();
        let l0 = g.node_id(2, "l0").unwrap();
        batch.add_edge(&g, 0, "n0", l0).unwrap();
        batch.add_edge(&g, 0, "n0", l0).unwrap();
        assert_eq!((batch.len(), batch.edges().len()), (1, 1));
        assert!(batch.add_edge(&g, 0, "v0", l0).is_err());
        assert!(batch
            .add_edge(&g, 0, "n1", g.node_id(0, "v1").unwrap())
            .is_err());
        assert!(batch.add_edge(&g, 2, "l9", l0).is_err());
    }

    #[test]
    fn batch_graph_maps_ids() {
        let g = toy();
        let mut batch = TestBatch::new();
        batch
            .add_edge(&g, 0, "n0", g.node_id(2, "l1").unwrap())
            .unwrap();
        let (bg, to_test) = batch_graph(&g, &batch).unwrap();
        assert_eq!(bg.n_nodes(), 5);
        assert_eq!(to_test, vec![6, 2, 3, 4, 5]);
        assert_eq!(bg.n_edges(), 1);
    }
}
