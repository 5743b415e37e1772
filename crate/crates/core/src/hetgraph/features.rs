use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::HeteroGraph;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::sparse::Csr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// One column per node type.
    OnehotType,
    /// Identity: one column per node.
    OnehotNode,
    /// Identity over non-human nodes; human nodes get zero rows and are
    /// described only through their edges.
    OnehotCode,
    /// Feature columns read from the node files.
    Provided,
}

impl FeatureMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::OnehotType => "onehot-type",
            FeatureMode::OnehotNode => "onehot-node",
            FeatureMode::OnehotCode => "onehot-code",
            FeatureMode::Provided => "provided",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            FeatureMode::OnehotType,
            FeatureMode::OnehotNode,
            FeatureMode::OnehotCode,
            FeatureMode::Provided,
        ]
        .into_iter()
        .find(|m| m.as_str() == s)
    }
}

/// Node feature matrix `F` (N × d), stored sparse since the one-hot modes
/// dominate. Row `i` belongs to global node `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    m: Csr<f64>,
    t: Csr<f64>,
}

impl FeatureMatrix {
    pub fn from_csr(m: Csr<f64>) -> Result<Self> {
        if m.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        let t = m.transpose();
        Ok(FeatureMatrix { m, t })
    }

    pub fn from_dense(dense: &Array2<f64>) -> Result<Self> {
        FeatureMatrix::from_csr(Csr::from_dense(dense))
    }

    /// Builds from dense rows, checking the row count against `n_nodes`.
    pub fn from_rows(rows: &[Vec<f64>], n_nodes: usize) -> Result<Self> {
        if rows.len() != n_nodes {
            return Err(Error::Dimension(format!(
                "feature rows: got {}, graph has {n_nodes} nodes",
                rows.len()
            )));
        }
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension("ragged feature rows".into()));
        }
        let row_data = rows
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(j, &v)| (j, v))
                    .collect()
            })
            .collect();
        FeatureMatrix::from_csr(Csr::from_sorted_rows(n_nodes, d, row_data))
    }

    /// Reads one comma-separated row per node in global order; a first line
    /// that does not parse as numbers is taken as a header.
    pub fn read_rows(path: &Path, n_nodes: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|f| f.trim().parse::<f64>()).collect();
            match parsed {
                Ok(r) => rows.push(r),
                Err(_) if i == 0 => continue,
                Err(e) => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: i + 1,
                        msg: e.to_string(),
                    })
                }
            }
        }
        FeatureMatrix::from_rows(&rows, n_nodes)
    }

    pub fn rows(&self) -> usize {
        self.m.rows()
    }

    pub fn cols(&self) -> usize {
        self.m.cols()
    }

    pub fn csr(&self) -> &Csr<f64> {
        &self.m
    }

    pub fn to_dense(&self) -> Array2<f64> {
        self.m.to_dense()
    }

    /// `F · W`
    pub fn project(&self, w: &Array2<f64>, exec: Exec) -> Array2<f64> {
        self.m.spmm(w, exec)
    }

    /// `Fᵀ · G`
    pub fn project_transpose(&self, g: &Array2<f64>, exec: Exec) -> Array2<f64> {
        self.t.spmm(g, exec)
    }

    /// `f_i · v`
    pub fn row_dot(&self, i: usize, v: &[f64]) -> f64 {
        let (idx, vals) = self.m.row(i);
        idx.iter().zip(vals).map(|(&j, &x)| x * v[j]).sum()
    }

    /// New matrix with `extra` sparse rows appended (same width).
    pub fn with_rows(&self, extra: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let mut row_data: Vec<Vec<(usize, f64)>> = (0..self.rows())
            .map(|i| {
                let (idx, vals) = self.m.row(i);
                idx.iter().copied().zip(vals.iter().copied()).collect()
            })
            .collect();
        let n = row_data.len() + extra.len();
        row_data.extend(extra);
        FeatureMatrix::from_csr(Csr::from_sorted_rows(n, self.cols(), row_data))
    }
}

pub fn default_features(graph: &HeteroGraph, mode: FeatureMode) -> Result<FeatureMatrix> {
    let n = graph.n_nodes();
    let n_types = graph.schema().n_types();
    match mode {
        FeatureMode::OnehotType => {
            let rows = (0..n).map(|g| vec![(graph.node_type(g), 1.0)]).collect();
            FeatureMatrix::from_csr(Csr::from_sorted_rows(n, n_types, rows))
        }
        FeatureMode::OnehotNode => {
            let rows = (0..n).map(|g| vec![(g, 1.0)]).collect();
            FeatureMatrix::from_csr(Csr::from_sorted_rows(n, n, rows))
        }
        FeatureMode::OnehotCode => {
            let mut col = 0;
            let rows = (0..n)
                .map(|g| {
                    if graph.schema().is_human(graph.node_type(g)) {
                        Vec::new()
                    } else {
                        col += 1;
                        vec![(col - 1, 1.0)]
                    }
                })
                .collect();
            FeatureMatrix::from_csr(Csr::from_sorted_rows(n, col, rows))
        }
        FeatureMode::Provided => {
            let d = (0..n_types)
                .map(|t| graph.provided_width(t))
                .max()
                .unwrap_or(0);
            if d == 0 {
                return Err(Error::config(
                    "preprocess.features",
                    "`provided` needs feature columns in the node files",
                ));
            }
            for t in 0..n_types {
                let w = graph.provided_width(t);
                if w != 0 && w != d {
                    return Err(Error::Dimension(format!(
                        "type {} has {w} feature columns, others have {d}",
                        graph.schema().type_name(t)
                    )));
                }
            }
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|g| {
                    let r = graph.provided_row(g);
                    if r.is_empty() {
                        vec![0.0; d]
                    } else {
                        r.to_vec()
                    }
                })
                .collect();
            FeatureMatrix::from_rows(&rows, n)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::tests::two_visit_graph;

    #[test]
    fn onehot_code_zeroes_human_rows() {
        let f = default_features(&two_visit_graph(), FeatureMode::OnehotCode).unwrap();
        let d = f.to_dense();
        assert_eq!(d.dim(), (5, 3));
        assert_eq!(d.row(0).sum(), 0.0);
        assert_eq!(d.row(1).sum(), 0.0);
        assert_eq!(d[[2, 0]], 1.0);
        assert_eq!(d[[4, 2]], 1.0);
    }

    #[test]
    fn onehot_type_rows_are_basis_vectors() {
        let f = default_features(&two_visit_graph(), FeatureMode::OnehotType).unwrap();
        let d = f.to_dense();
        assert_eq!(d.dim(), (5, 2));
        for (i, row) in d.rows().into_iter().enumerate() {
            assert_eq!(row.sum(), 1.0);
            assert_eq!(row[if i < 2 { 0 } else { 1 }], 1.0);
        }
    }

    #[test]
    fn onehot_node_is_identity() {
        let schema = crate::hetgraph::Schema::new(&["V"], &[] as &[(&str, &str)], &["V"]).unwrap();
        let mut b = crate::hetgraph::GraphBuilder::new(schema);
        for k in ["a", "b", "c"] {
            b.add_node(0, k, &[]).unwrap();
        }
        let f = default_features(&b.build(), FeatureMode::OnehotNode).unwrap();
        assert_eq!(f.to_dense(), Array2::eye(3));
    }

    #[test]
    fn wrong_row_count_rejected() {
        let rows = vec![vec![1.0, 0.0]; 4];
        assert!(matches!(
            FeatureMatrix::from_rows(&rows, 5),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn provided_without_columns_is_config_error() {
        assert!(default_features(&two_visit_graph(), FeatureMode::Provided).is_err());
    }
}
