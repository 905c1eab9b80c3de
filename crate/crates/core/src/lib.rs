//! Feature-node graph transformation for heterophilic node classification.
//!
//! The crate turns a graph with binary node features into a heterogeneous
//! graph where every feature becomes a node linked to the nodes that carry it,
//! measures how this changes homophily, and trains a self-gated message
//! passing network on the result.

pub mod fixtures;
pub mod graph;
pub mod homophily;
pub mod io;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod transform;
pub mod verify;

pub use graph::{FeatureMatrix, Graph, GraphError, Labels};
pub use tensor::{Matrix, Tape, Var};
pub use transform::{graphite_transform, nhb_transform, TransformOptions, TransformedGraph};
