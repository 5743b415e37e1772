//! Meta-path similarity subgraphs over typed EHR graphs, fused into one
//! learned graph for multi-label diagnosis prediction.

pub mod cli;
pub mod error;
pub mod evalkit;
pub mod exec;
pub mod fusion;
pub mod hetgraph;
pub mod metapath;
pub mod quickinfer;
pub mod sparse;
pub mod synthgen;
pub mod training;

pub use error::{Error, ErrorKind, Result};
pub use exec::Exec;
