//! Typed heterogeneous graph: node sets per type, sparse 0/1 bipartite
//! adjacencies per edge type, optional node feature columns.
//!
//! Global node ids are contiguous per type, in schema order, so node `g`
//! has type `t` iff `offset(t) <= g < offset(t + 1)`.

mod features;
mod io;
mod schema;

use std::collections::{BTreeMap, HashMap};

pub use features::{default_features, FeatureMatrix, FeatureMode};
pub use io::{
    load_dataset_dir, load_graph, write_dataset_dir, write_edge_csv, write_node_csv, EdgeFile,
};
pub use schema::{NodeTypeId, Schema};

use crate::error::{Error, Result};
use crate::sparse::Csr;

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    schema: Schema,
    offsets: Vec<usize>,
    keys: Vec<Vec<String>>,
    key_maps: Vec<HashMap<String, usize>>,
    /// Both orientations of every declared edge type; `(a, b)` rows index type `a`.
    adjacency: BTreeMap<(usize, usize), Csr<u64>>,
    /// Provided feature columns, per type: `(width, row-major values)`.
    provided: Vec<(usize, Vec<f64>)>,
}

impl HeteroGraph {
    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n_nodes(&self) -> usize {
        *self
            .offsets
            .last()
            .expect("offsets has n_types + 1 entries")
    }

    pub fn n_of_type(&self, t: usize) -> usize {
        self.offsets[t + 1] - self.offsets[t]
    }

    pub fn offset(&self, t: usize) -> usize {
        self.offsets[t]
    }

    pub fn type_range(&self, t: usize) -> std::ops::Range<usize> {
        self.offsets[t]..self.offsets[t + 1]
    }

    /// Type of global node `g` (the `φ` lookup).
    pub fn node_type(&self, g: usize) -> usize {
        assert!(g < self.n_nodes(), "node {g} out of range");
        self.offsets.partition_point(|&o| o <= g) - 1
    }

    pub fn key(&self, g: usize) -> &str {
        let t = self.node_type(g);
        &self.keys[t][g - self.offsets[t]]
    }

    pub fn keys_of_type(&self, t: usize) -> &[String] {
        &self.keys[t]
    }

    pub fn node_id(&self, t: usize, key: &str) -> Option<usize> {
        self.key_maps[t].get(key).map(|&l| self.offsets[t] + l)
    }

    /// Bipartite 0/1 adjacency between types `a` (rows) and `b` (columns),
    /// indexed by local ids. Panics if the pair is not declared.
    pub fn adjacency(&self, a: usize, b: usize) -> &Csr<u64> {
        self.adjacency
            .get(&(a, b))
            .unwrap_or_else(|| panic!("edge type {a}-{b} is not declared"))
    }

    /// Undirected edges of a declared type as global id pairs, each listed
    /// once with the lower type index first (row-major for equal types).
    pub fn edges(&self, a: usize, b: usize) -> Vec<(usize, usize)> {
        let (a, b) = (a.min(b), a.max(b));
        self.adjacency(a, b)
            .iter()
            .filter(|&(i, j, _)| a != b || i < j)
            .map(|(i, j, _)| (self.offsets[a] + i, self.offsets[b] + j))
            .collect()
    }

    pub fn n_edges(&self) -> usize {
        self.schema
            .edge_types()
            .iter()
            .map(|&(a, b)| self.edges(a, b).len())
            .sum()
    }

    /// Neighbors of global node `g` inside type `t`, as global ids.
    pub fn neighbors(&self, g: usize, t: usize) -> Vec<usize> {
        let s = self.node_type(g);
        if !self.schema.allows(s, t) {
            return Vec::new();
        }
        let (idx, _) = self.adjacency(s, t).row(g - self.offsets[s]);
        idx.iter().map(|&j| self.offsets[t] + j).collect()
    }

    pub fn provided_width(&self, t: usize) -> usize {
        self.provided[t].0
    }

    pub fn provided_row(&self, g: usize) -> &[f64] {
        let t = self.node_type(g);
        let (w, vals) = &self.provided[t];
        let l = g - self.offsets[t];
        &vals[l * w..(l + 1) * w]
    }

    /// Copy of this graph keeping only the edges for which `keep(u, v)`
    /// holds (global ids, orientation as returned by [`Self::edges`]).
    pub fn filter_edges(&self, mut keep: impl FnMut(usize, usize) -> bool) -> HeteroGraph {
        let mut b = GraphBuilder::new(self.schema.clone());
        for t in 0..self.schema.n_types() {
            let (w, vals) = &self.provided[t];
            b.keys[t] = self.keys[t].clone();
            b.key_maps[t] = self.key_maps[t].clone();
            b.provided[t] = (*w, vals.clone());
        }
        for &(ta, tb) in self.schema.edge_types() {
            for (u, v) in self.edges(ta, tb) {
                if keep(u, v) {
                    b.push_edge(ta, u - self.offsets[ta], tb, v - self.offsets[tb]);
                }
            }
        }
        b.build()
    }

    /// Copy of this graph restricted to nodes for which `keep(g)` holds.
    /// Surviving nodes keep their relative order, keys and features.
    pub fn induced(&self, mut keep: impl FnMut(usize) -> bool) -> HeteroGraph {
        let mut b = GraphBuilder::new(self.schema.clone());
        let mut new_local = vec![usize::MAX; self.n_nodes()];
        for t in 0..self.schema.n_types() {
            b.provided[t].0 = self.provided[t].0;
            for g in self.type_range(t) {
                if keep(g) {
                    let l = b.keys[t].len();
                    let key = self.key(g).to_string();
                    b.provided[t].1.extend_from_slice(self.provided_row(g));
                    b.key_maps[t].insert(key.clone(), l);
                    b.keys[t].push(key);
                    new_local[g] = l;
                }
            }
        }
        for &(ta, tb) in self.schema.edge_types() {
            for (u, v) in self.edges(ta, tb) {
                if new_local[u] != usize::MAX && new_local[v] != usize::MAX {
                    b.push_edge(ta, new_local[u], tb, new_local[v]);
                }
            }
        }
        b.build()
    }
}

/// Incremental constructor used by file ingestion and the generator.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    schema: Schema,
    keys: Vec<Vec<String>>,
    key_maps: Vec<HashMap<String, usize>>,
    provided: Vec<(usize, Vec<f64>)>,
    edges: BTreeMap<(usize, usize), Vec<(usize, usize)>>,
}

impl GraphBuilder {
    pub fn new(schema: Schema) -> Self {
        let n = schema.n_types();
        GraphBuilder {
            keys: vec![Vec::new(); n],
            key_maps: vec![HashMap::new(); n],
            provided: vec![(0, Vec::new()); n],
            edges: schema
                .edge_types()
                .iter()
                .map(|&p| (p, Vec::new()))
                .collect(),
            schema,
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    /// Declares the feature width for a type; must precede its nodes.
    pub fn set_feature_width(&mut self, t: usize, width: usize) {
        assert!(
            self.keys[t].is_empty(),
            "feature width set after nodes were added"
        );
        self.provided[t].0 = width;
    }

    /// Adds a node and returns its local index within type `t`.
    pub fn add_node(&mut self, t: usize, key: &str, features: &[f64]) -> Result<usize> {
        if key.is_empty() {
            return Err(Error::Schema(format!(
                "empty node key for type {}",
                self.schema.type_name(t)
            )));
        }
        if self.key_maps[t].contains_key(key) {
            return Err(Error::Schema(format!(
                "duplicate key `{key}` in type {}",
                self.schema.type_name(t)
            )));
        }
        let (w, vals) = &mut self.provided[t];
        if features.len() != *w {
            return Err(Error::Dimension(format!(
                "node `{key}` has {} feature values, type {} expects {w}",
                features.len(),
                self.schema.type_name(t)
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("features of node `{key}`")));
        }
        vals.extend_from_slice(features);
        let local = self.keys[t].len();
        self.keys[t].push(key.to_string());
        self.key_maps[t].insert(key.to_string(), local);
        Ok(local)
    }

    pub fn local_id(&self, t: usize, key: &str) -> Option<usize> {
        self.key_maps[t].get(key).copied()
    }

    pub fn n_of_type(&self, t: usize) -> usize {
        self.keys[t].len()
    }

    /// Adds an undirected edge between local ids. Duplicates collapse at build.
    pub fn add_edge(&mut self, ta: usize, ia: usize, tb: usize, ib: usize) -> Result<()> {
        if !self.schema.allows(ta, tb) {
            return Err(Error::UndeclaredEdgeType(
                self.schema.type_name(ta).to_string(),
                self.schema.type_name(tb).to_string(),
            ));
        }
        if ta == tb && ia == ib {
            return Err(Error::Schema(format!(
                "self-edge on `{}`",
                self.keys[ta][ia]
            )));
        }
        assert!(ia < self.keys[ta].len() && ib < self.keys[tb].len());
        self.push_edge(ta, ia, tb, ib);
        Ok(())
    }

    fn push_edge(&mut self, ta: usize, ia: usize, tb: usize, ib: usize) {
        let (key, pair) = if ta < tb || (ta == tb && ia < ib) {
            ((ta, tb), (ia, ib))
        } else {
            ((tb, ta), (ib, ia))
        };
        self.edges
            .get_mut(&key)
            .expect("edge type checked against schema")
            .push(pair);
    }

    pub fn build(self) -> HeteroGraph {
        let n = self.schema.n_types();
        let mut offsets = vec![0usize; n + 1];
        for t in 0..n {
            offsets[t + 1] = offsets[t] + self.keys[t].len();
        }
        let mut adjacency = BTreeMap::new();
        for ((a, b), list) in self.edges {
            let (na, nb) = (self.keys[a].len(), self.keys[b].len());
            let mut triplets: Vec<(usize, usize, u64)> =
                list.iter().map(|&(i, j)| (i, j, 1u64)).collect();
            if a == b {
                triplets.extend(list.iter().map(|&(i, j)| (j, i, 1u64)));
            }
            let m = Csr::from_triplets(na, nb, triplets, |x, _| x);
            if a != b {
                adjacency.insert((b, a), m.transpose());
            }
            adjacency.insert((a, b), m);
        }
        HeteroGraph {
            schema: self.schema,
            offsets,
            keys: self.keys,
            key_maps: self.key_maps,
            adjacency,
            provided: self.provided,
        }
    }
}
