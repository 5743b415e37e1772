use std::fmt;

use crate::error::{Error, Result};
use crate::hetgraph::Schema;

/// A sequence of node types `t_1 … t_n` (n ≥ 2) in which every consecutive
/// pair is a declared edge type.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MetaPath {
    types: Vec<usize>,
    label: String,
}

impl MetaPath {
    /// Parses `"V-D-V"`. Errors report the 1-based character position of the
    /// offending type name.
    pub fn parse(text: &str, schema: &Schema) -> Result<Self> {
        let err = |pos: usize, msg: String| Error::MetaPath {
            path: text.to_string(),
            pos,
            msg,
        };
        let mut types = Vec::new();
        let mut pos = 1;
        for token in text.split('-') {
            let name = token.trim();
            let t = schema
                .type_index(name)
                .ok_or_else(|| err(pos, format!("unknown node type `{name}`")))?;
            if let Some(&prev) = types.last() {
                if !schema.allows(prev, t) {
                    return Err(err(
                        pos,
                        format!("no edge type {}-{} in schema", schema.type_name(prev), name),
                    ));
                }
            }
            types.push(t);
            pos += token.chars().count() + 1;
        }
        if types.len() < 2 {
            return Err(err(1, "a meta-path needs at least two node types".into()));
        }
        Ok(MetaPath::from_types(types, schema))
    }

    pub(crate) fn from_types(types: Vec<usize>, schema: &Schema) -> Self {
        let label = types
            .iter()
            .map(|&t| schema.type_name(t))
            .collect::<Vec<_>>()
            .join("-");
        MetaPath { types, label }
    }

    pub fn types(&self) -> &[usize] {
        &self.types
    }

    pub fn start(&self) -> usize {
        self.types[0]
    }

    pub fn end(&self) -> usize {
        *self.types.last().expect("meta-path is nonempty")
    }

    pub fn is_palindromic(&self) -> bool {
        self.types.iter().eq(self.types.iter().rev())
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl fmt::Display for MetaPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}
