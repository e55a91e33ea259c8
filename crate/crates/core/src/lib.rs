//! Core data structures for tree-structured code summarization: ASTs, the
//! MiniLang front end, linearizations, relation matrices and metrics.

pub mod ast;
pub mod linearize;
pub mod metrics;
pub mod minilang;
pub mod relations;

pub use ast::{AstError, AstNode, AstTree, NodeId, RawNode};
pub use linearize::{linearize, LinearSeq, Method, PdOptions};
pub use relations::{ClipRadius, RelationSet, SparseRel};
