//! Multiview anchor-graph hashing.
//!
//! Learns per-view orthonormal projections and a shared binary code matrix
//! by alternating between a Stiefel-manifold solve for each view, a
//! closed-form view-weight update and a closed-form sign update. Trained
//! models encode unseen samples, and the [`retrieval`] module ranks codes by
//! Hamming distance and scores the rankings.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anchor_graph;
pub mod cli;
pub mod codes;
pub mod dataset;
pub mod error;
pub mod model;
pub mod retrieval;
pub mod stiefel;
pub mod trainer;

pub use codes::CodeMatrix;
pub use dataset::{FeatureMatrix, MultiviewDataset};
pub use error::{Error, Result};
pub use model::HashModel;
pub use trainer::{train, TrainConfig, TrainReport};
