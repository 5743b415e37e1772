use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Short label of a node type, e.g. `V` for visit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeTypeId(String);

impl NodeTypeId {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() || name.contains([',', '-', ' ']) {
            return Err(Error::Schema(format!("invalid node type name `{name}`")));
        }
        Ok(NodeTypeId(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeTypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    node_types: Vec<NodeTypeId>,
    /// Unordered pairs stored as `(min, max)` type indices, sorted.
    edge_types: Vec<(usize, usize)>,
    human_types: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    node_types: Vec<String>,
    edge_types: Vec<[String; 2]>,
    #[serde(default)]
    human_types: Vec<String>,
}

impl Schema {
    pub fn new<S: AsRef<str>>(
        node_types: &[S],
        edge_types: &[(S, S)],
        human_types: &[S],
    ) -> Result<Self> {
        let node_types = node_types
            .iter()
            .map(|s| NodeTypeId::new(s.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        for (i, t) in node_types.iter().enumerate() {
            if node_types[..i].contains(t) {
                return Err(Error::Schema(format!("duplicate node type `{t}`")));
            }
        }
        let lookup = |s: &str| {
            node_types
                .iter()
                .position(|t| t.as_str() == s)
                .ok_or_else(|| Error::Schema(format!("undeclared node type `{s}`")))
        };
        let mut edges = Vec::new();
        for (a, b) in edge_types {
            let (a, b) = (lookup(a.as_ref())?, lookup(b.as_ref())?);
            edges.push((a.min(b), a.max(b)));
        }
        edges.sort_unstable();
        edges.dedup();
        let mut humans = human_types
            .iter()
            .map(|s| lookup(s.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        humans.sort_unstable();
        humans.dedup();
        Ok(Schema {
            node_types,
            edge_types: edges,
            human_types: humans,
        })
    }

    pub fn node_types(&self) -> &[NodeTypeId] {
        &self.node_types
    }

    pub fn n_types(&self) -> usize {
        self.node_types.len()
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.node_types.iter().position(|t| t.as_str() == name)
    }

    pub fn require_type(&self, name: &str) -> Result<usize> {
        self.type_index(name)
            .ok_or_else(|| Error::Schema(format!("unknown node type `{name}`")))
    }

    pub fn type_name(&self, t: usize) -> &str {
        self.node_types[t].as_str()
    }

    pub fn edge_types(&self) -> &[(usize, usize)] {
        &self.edge_types
    }

    pub fn allows(&self, a: usize, b: usize) -> bool {
        self.edge_types.binary_search(&(a.min(b), a.max(b))).is_ok()
    }

    pub fn human_types(&self) -> &[usize] {
        &self.human_types
    }

    pub fn is_human(&self, t: usize) -> bool {
        self.human_types.contains(&t)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SchemaFile = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        let edges: Vec<(String, String)> =
            file.edge_types.into_iter().map(|[a, b]| (a, b)).collect();
        Schema::new(&file.node_types, &edges, &file.human_types)
    }

    pub fn to_toml_string(&self) -> String {
        let file = SchemaFile {
            node_types: self.node_types.iter().map(|t| t.0.clone()).collect(),
            edge_types: self
                .edge_types
                .iter()
                .map(|&(a, b)| [self.node_types[a].0.clone(), self.node_types[b].0.clone()])
                .collect(),
            human_types: self
                .human_types
                .iter()
                .map(|&t| self.node_types[t].0.clone())
                .collect(),
        };
        toml::to_string(&file).expect("schema serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Schema::from_toml_str(&text)
    }
}
