//! Meta-path similarity subgraphs.
//!
//! `PathCount` matrices are exact integer chain products of the bipartite
//! adjacencies along a meta-path; they are turned into symmetric N × N
//! similarity subgraphs with the symmetric PathSim
//!
//! ```text
//! SPS(i, j) = (PC(i, j) + PC(j, i)) / (self(i) + self(j))
//! ```
//!
//! where `self` is the diagonal of `PC` for palindromic paths and the
//! round-trip count `PC · PCᵀ` (resp. `PCᵀ · PC`) otherwise.

mod path;
mod triplets;

pub use path::MetaPath;
pub use triplets::{read_triplets, write_triplets};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hetgraph::HeteroGraph;
use crate::sparse::{chain_product, Csr};

/// Exact meta-path instance counts; rows index type `t_1`, columns `t_n`
/// (local ids).
#[derive(Debug, Clone, PartialEq)]
pub struct PathCountMatrix {
    pub path: MetaPath,
    pub counts: Csr<u64>,
}

pub fn path_count(graph: &HeteroGraph, path: &MetaPath, exec: Exec) -> Result<PathCountMatrix> {
    let factors: Vec<&Csr<u64>> = path
        .types()
        .windows(2)
        .map(|w| graph.adjacency(w[0], w[1]))
        .collect();
    Ok(PathCountMatrix {
        path: path.clone(),
        counts: chain_product(&factors, path.label(), exec)?,
    })
}

fn squared_sums<'a>(
    entries: impl Iterator<Item = (usize, u64)> + 'a,
    len: usize,
    label: &str,
) -> Result<Vec<u64>> {
    let mut out = vec![0u64; len];
    for (i, v) in entries {
        out[i] = v
            .checked_mul(v)
            .and_then(|sq| out[i].checked_add(sq))
            .ok_or_else(|| Error::Overflow(label.to_string()))?;
    }
    Ok(out)
}

/// Per-node self counts over global ids (zero for types that are not path
/// endpoints), computed from an existing `PathCount` matrix.
pub fn self_counts_from(graph: &HeteroGraph, pc: &PathCountMatrix) -> Result<Vec<u64>> {
    let path = &pc.path;
    let (s, e) = (path.start(), path.end());
    let mut out = vec![0u64; graph.n_nodes()];
    if path.is_palindromic() {
        for (i, j, v) in pc.counts.iter() {
            if i == j {
                out[graph.offset(s) + i] = v;
            }
        }
        return Ok(out);
    }
    let label = path.label();
    let rows = squared_sums(
        pc.counts.iter().map(|(i, _, v)| (i, v)),
        pc.counts.rows(),
        label,
    )?;
    let cols = squared_sums(
        pc.counts.iter().map(|(_, j, v)| (j, v)),
        pc.counts.cols(),
        label,
    )?;
    for (l, v) in rows.into_iter().enumerate() {
        out[graph.offset(s) + l] = v;
    }
    for (l, v) in cols.into_iter().enumerate() {
        let slot = &mut out[graph.offset(e) + l];
        *slot = slot
            .checked_add(v)
            .ok_or_else(|| Error::Overflow(label.to_string()))?;
    }
    Ok(out)
}

pub fn self_counts(graph: &HeteroGraph, path: &MetaPath, exec: Exec) -> Result<Vec<u64>> {
    self_counts_from(graph, &path_count(graph, path, exec)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Sps,
    /// Symmetrized raw counts `PC + PCᵀ`, divided by their maximum.
    RawPathcount,
}

impl Normalization {
    pub fn as_str(self) -> &'static str {
        match self {
            Normalization::Sps => "sps",
            Normalization::RawPathcount => "raw_pathcount",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sps" => Some(Normalization::Sps),
            "raw_pathcount" => Some(Normalization::RawPathcount),
            _ => None,
        }
    }
}

/// One symmetric N × N similarity subgraph `A_k`.
///
/// `values` holds what is written to disk (SPS values, or integer counts in
/// raw mode); the model sees `values / divisor`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilaritySubgraph {
    pub path: MetaPath,
    pub normalization: Normalization,
    pub values: Csr<f64>,
    pub divisor: f64,
}

impl SimilaritySubgraph {
    pub fn n(&self) -> usize {
        self.values.rows()
    }

    /// Model-facing weighted adjacency.
    pub fn adjacency(&self) -> Csr<f64> {
        if self.divisor == 1.0 {
            self.values.clone()
        } else {
            let d = self.divisor;
            self.values.map(|v| v / d)
        }
    }
}

/// Symmetric numerators `PC(i,j) + PC(j,i)` over global ids, upper triangle
/// (`gi <= gj`) only.
pub(crate) fn symmetric_numerators(
    graph: &HeteroGraph,
    pc: &PathCountMatrix,
) -> Vec<(usize, usize, u64)> {
    let (s, e) = (pc.path.start(), pc.path.end());
    let (os, oe) = (graph.offset(s), graph.offset(e));
    let mut out = Vec::with_capacity(pc.counts.nnz());
    if s != e {
        for (i, j, v) in pc.counts.iter() {
            let (a, b) = (os + i, oe + j);
            out.push((a.min(b), a.max(b), v));
        }
        return out;
    }
    // Same endpoint type: merge M and Mᵀ on the upper triangle.
    let merged = Csr::from_triplets(
        pc.counts.rows(),
        pc.counts.cols(),
        pc.counts
            .iter()
            .map(|(i, j, v)| (i.min(j), i.max(j), v))
            .collect(),
        |a, b| a.saturating_add(b),
    );
    for (i, j, v) in merged.iter() {
        // Diagonal entries are PC(i,i) + PC(i,i).
        let v = if i == j { v.saturating_mul(2) } else { v };
        out.push((os + i, os + j, v));
    }
    out
}

fn mirror(n: usize, upper: Vec<(usize, usize, f64)>) -> Csr<f64> {
    let mut triplets = Vec::with_capacity(upper.len() * 2);
    for (i, j, v) in upper {
        triplets.push((i, j, v));
        if i != j {
            triplets.push((j, i, v));
        }
    }
    Csr::from_triplets(n, n, triplets, |a, _| a)
}

/// Symmetric PathSim subgraph from a `PathCount` matrix and its self counts.
/// Pairs with zero denominator get 0; values above 1 are clamped with a warning.
pub fn sps(graph: &HeteroGraph, pc: &PathCountMatrix, self_counts: &[u64]) -> SimilaritySubgraph {
    let mut clamped = 0usize;
    let upper: Vec<(usize, usize, f64)> = symmetric_numerators(graph, pc)
        .into_iter()
        .filter_map(|(i, j, num)| {
            let den = self_counts[i] as f64 + self_counts[j] as f64;
            if num == 0 || den == 0.0 {
                return None;
            }
            let mut v = num as f64 / den;
            if v > 1.0 {
                clamped += 1;
                v = 1.0;
            }
            Some((i, j, v))
        })
        .collect();
    if clamped > 0 {
        log::warn!("{}: clamped {clamped} SPS values above 1", pc.path);
    }
    SimilaritySubgraph {
        path: pc.path.clone(),
        normalization: Normalization::Sps,
        values: mirror(graph.n_nodes(), upper),
        divisor: 1.0,
    }
}

fn raw_subgraph(graph: &HeteroGraph, pc: &PathCountMatrix) -> SimilaritySubgraph {
    let upper: Vec<(usize, usize, f64)> = symmetric_numerators(graph, pc)
        .into_iter()
        .map(|(i, j, v)| {
            // Off-diagonal pairs of distinct endpoint types only get PC(i,j).
            (i, j, v as f64)
        })
        .collect();
    let max = upper.iter().map(|t| t.2).fold(0.0f64, f64::max);
    SimilaritySubgraph {
        path: pc.path.clone(),
        normalization: Normalization::RawPathcount,
        values: mirror(graph.n_nodes(), upper),
        divisor: if max > 0.0 { max } else { 1.0 },
    }
}

pub fn build_subgraph(
    graph: &HeteroGraph,
    path: &MetaPath,
    normalization: Normalization,
    exec: Exec,
) -> Result<SimilaritySubgraph> {
    let pc = path_count(graph, path, exec)?;
    Ok(match normalization {
        Normalization::Sps => {
            let sc = self_counts_from(graph, &pc)?;
            sps(graph, &pc, &sc)
        }
        Normalization::RawPathcount => raw_subgraph(graph, &pc),
    })
}

/// One subgraph per meta-path, in path order.
pub fn build_subgraphs(
    graph: &HeteroGraph,
    paths: &[MetaPath],
    normalization: Normalization,
    exec: Exec,
) -> Result<Vec<SimilaritySubgraph>> {
    if paths.is_empty() {
        return Err(Error::config(
            "preprocess.paths",
            "at least one meta-path is required",
        ));
    }
    exec.map(paths.len(), |k| {
        build_subgraph(graph, &paths[k], normalization, exec)
    })
    .into_iter()
    .collect()
}
