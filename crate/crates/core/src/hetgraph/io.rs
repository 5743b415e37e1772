//! Plain-file ingestion.
//!
//! Node files: a header line `key[,feature...]` and one node per line.
//! Edge files: a `# A,B` line naming the two endpoint types, an optional
//! `src_key,dst_key` column line, then one `src,dst` pair per line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{GraphBuilder, HeteroGraph, Schema};
use crate::error::{Error, Result};

const EDGE_COLUMNS: &str = "src_key,dst_key";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Parsed edge file, keys unresolved.
#[derive(Debug, Clone)]
pub struct EdgeFile {
    pub path: PathBuf,
    pub src_type: String,
    pub dst_type: String,
    /// `(src_key, dst_key, line number)`
    pub rows: Vec<(String, String, usize)>,
}

impl EdgeFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = read(path)?;
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(path, 1, "missing `# A,B` type header"))?;
        let types = header
            .strip_prefix('#')
            .ok_or_else(|| parse_err(path, 1, "expected `# A,B` type header"))?;
        let (a, b) = types
            .split_once(',')
            .ok_or_else(|| parse_err(path, 1, "type header must name two types"))?;
        let mut rows = Vec::new();
        for (no, line) in lines {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || (no == 2 && line.trim() == EDGE_COLUMNS) {
                continue;
            }
            let (s, d) = line
                .split_once(',')
                .ok_or_else(|| parse_err(path, no, "expected `src_key,dst_key`"))?;
            if d.contains(',') {
                return Err(parse_err(path, no, "too many columns"));
            }
            rows.push((s.trim().to_string(), d.trim().to_string(), no));
        }
        Ok(EdgeFile {
            path: path.to_path_buf(),
            src_type: a.trim().to_string(),
            dst_type: b.trim().to_string(),
            rows,
        })
    }
}

fn read_nodes(b: &mut GraphBuilder, t: usize, path: &Path) -> Result<()> {
    let text = read(path)?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "missing header line"))?;
    let cols: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
    if cols[0].trim() != "key" {
        return Err(parse_err(path, 1, "first column must be `key`"));
    }
    b.set_feature_width(t, cols.len() - 1);
    let mut feats = Vec::with_capacity(cols.len() - 1);
    for (no, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let key = fields.next().unwrap_or_default().trim();
        feats.clear();
        for f in fields {
            feats.push(
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(path, no, format!("bad feature value `{f}`: {e}")))?,
            );
        }
        if feats.len() != cols.len() - 1 {
            return Err(parse_err(
                path,
                no,
                format!("expected {} columns, found {}", cols.len(), feats.len() + 1),
            ));
        }
        b.add_node(t, key, &feats)
            .map_err(|e| parse_err(path, no, e.to_string()))?;
    }
    Ok(())
}

fn add_edges(b: &mut GraphBuilder, file: &EdgeFile) -> Result<()> {
    let schema = b.schema().clone();
    let lookup = |name: &str| {
        schema
            .type_index(name)
            .ok_or_else(|| parse_err(&file.path, 1, format!("unknown node type `{name}`")))
    };
    let (ta, tb) = (lookup(&file.src_type)?, lookup(&file.dst_type)?);
    if !schema.allows(ta, tb) {
        return Err(Error::UndeclaredEdgeType(
            file.src_type.clone(),
            file.dst_type.clone(),
        ));
    }
    for (s, d, no) in &file.rows {
        let unknown = |key: &str| Error::UnknownNode {
            path: file.path.clone(),
            line: *no,
            key: key.to_string(),
        };
        let ia = b.local_id(ta, s).ok_or_else(|| unknown(s))?;
        let ib = b.local_id(tb, d).ok_or_else(|| unknown(d))?;
        if ta == tb && ia == ib {
            return Err(Error::SelfEdge {
                path: file.path.clone(),
                line: *no,
                key: s.clone(),
            });
        }
        b.add_edge(ta, ia, tb, ib)?;
    }
    Ok(())
}

/// Loads a graph from one node file per type and any number of edge files.
/// Node ids are assigned type-contiguously in schema order, then file order.
pub fn load_graph(
    node_files: &[(String, PathBuf)],
    edge_files: &[PathBuf],
    schema: &Schema,
) -> Result<HeteroGraph> {
    let mut b = GraphBuilder::new(schema.clone());
    for t in 0..schema.n_types() {
        let name = schema.type_name(t);
        let matching: Vec<_> = node_files.iter().filter(|(n, _)| n == name).collect();
        match matching.as_slice() {
            [] => {}
            [(_, path)] => read_nodes(&mut b, t, path)?,
            _ => {
                return Err(Error::Schema(format!(
                    "several node files for type `{name}`"
                )))
            }
        }
    }
    for (n, _) in node_files {
        schema.require_type(n)?;
    }
    for path in edge_files {
        add_edges(&mut b, &EdgeFile::read(path)?)?;
    }
    Ok(b.build())
}

pub fn write_node_csv(graph: &HeteroGraph, t: usize, path: &Path) -> Result<()> {
    let w = graph.provided_width(t);
    let mut out = String::from("key");
    for c in 0..w {
        let _ = write!(out, ",f{c}");
    }
    out.push('\n');
    for g in graph.type_range(t) {
        out.push_str(graph.key(g));
        for v in graph.provided_row(g) {
            let _ = write!(out, ",{v:.16e}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_edge_csv(graph: &HeteroGraph, a: usize, b: usize, path: &Path) -> Result<()> {
    let s = graph.schema();
    let (a, b) = (a.min(b), a.max(b));
    let mut out = format!("# {},{}\n{EDGE_COLUMNS}\n", s.type_name(a), s.type_name(b));
    for (u, v) in graph.edges(a, b) {
        let _ = writeln!(out, "{},{}", graph.key(u), graph.key(v));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn node_file(dir: &Path, t: &str) -> PathBuf {
    dir.join(format!("nodes_{t}.csv"))
}

fn edge_file(dir: &Path, a: &str, b: &str) -> PathBuf {
    dir.join(format!("edges_{a}_{b}.csv"))
}

/// Writes `schema.toml`, `nodes_<T>.csv` and `edges_<A>_<B>.csv`.
pub fn write_dataset_dir(graph: &HeteroGraph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let s = graph.schema();
    let schema_path = dir.join("schema.toml");
    fs::write(&schema_path, s.to_toml_string()).map_err(|e| Error::io(&schema_path, e))?;
    for t in 0..s.n_types() {
        write_node_csv(graph, t, &node_file(dir, s.type_name(t)))?;
    }
    for &(a, b) in s.edge_types() {
        write_edge_csv(graph, a, b, &edge_file(dir, s.type_name(a), s.type_name(b)))?;
    }
    Ok(())
}

/// Reads a directory laid out by [`write_dataset_dir`]. Missing edge files
/// are treated as empty.
pub fn load_dataset_dir(dir: &Path) -> Result<HeteroGraph> {
    let schema = Schema::load(&dir.join("schema.toml"))?;
    let nodes: Vec<(String, PathBuf)> = schema
        .node_types()
        .iter()
        .map(|t| (t.to_string(), node_file(dir, t.as_str())))
        .filter(|(_, p)| p.exists())
        .collect();
    let edges: Vec<PathBuf> = schema
        .edge_types()
        .iter()
        .map(|&(a, b)| edge_file(dir, schema.type_name(a), schema.type_name(b)))
        .filter(|p| p.exists())
        .collect();
    load_graph(&nodes, &edges, &schema)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn fixture(dir: &Path, edges: &str) -> Result<HeteroGraph> {
        let schema = Schema::new(&["V", "D"], &[("V", "D")], &["V"]).unwrap();
        let v = write(dir, "v.csv", "key\nv1\nv2\n");
        let d = write(dir, "d.csv", "key\nd1\nd2\nd3\n");
        let e = write(dir, "e.csv", edges);
        load_graph(&[("V".into(), v), ("D".into(), d)], &[e], &schema)
    }

    #[test]
    fn loads_and_dedups() {
        let tmp = tempfile::tempdir().unwrap();
        let g = fixture(
            tmp.path(),
            "# V,D\nsrc_key,dst_key\nv1,d1\nv1,d2\nv2,d2\nv2,d3\nv2,d3\n",
        )
        .unwrap();
        assert_eq!(g.n_nodes(), 5);
        assert_eq!(g.adjacency(0, 1).nnz(), 4);
    }

    #[test]
    fn reversed_header_orientation() {
        let tmp = tempfile::tempdir().unwrap();
        let g = fixture(tmp.path(), "# D,V\nd1,v1\n").unwrap();
        assert_eq!(g.adjacency(0, 1).get(0, 0), Some(1));
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let tmp = tempfile::tempdir().unwrap();
        let err = fixture(tmp.path(), "# V,D\nsrc_key,dst_key\nv1,d1\nv1,p9\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("p9") && msg.contains(":4:"), "{msg}");
    }

    #[test]
    fn undeclared_pair_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let err = fixture(tmp.path(), "# V,V\nv1,v2\n").unwrap_err();
        assert!(matches!(err, Error::UndeclaredEdgeType(..)));
    }

    #[test]
    fn dataset_dir_round_trip_is_deterministic() {
        let tmp = tempfile::tempdir().unwrap();
        let g = fixture(tmp.path(), "# V,D\nv2,d3\nv1,d1\n").unwrap();
        let out = tmp.path().join("ds");
        write_dataset_dir(&g, &out).unwrap();
        let a = load_dataset_dir(&out).unwrap();
        let b = load_dataset_dir(&out).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, g);
    }
}
