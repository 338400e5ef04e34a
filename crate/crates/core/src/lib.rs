//! Adaptive correlated variational auto-encoders.
//!
//! Gaussian embeddings for graph-correlated data, learned under a
//! tree-structured prior whose mixture over maximal acyclic subgraphs is
//! adjusted by alternating saddle-point updates, then refined along the learned
//! forest by exact Gaussian belief propagation.

pub mod bp_refine;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod graph;
pub mod neural;
pub mod objective;
pub mod oracle;
pub mod trainer;

pub use error::{Error, Result};
