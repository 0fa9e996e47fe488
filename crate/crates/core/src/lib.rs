//! Domain-adaptive graph classification with a two-branch tensor graph
//! encoder (message passing plus persistent homology) trained with a
//! pseudo-label driven label-propagation objective.

pub mod autodiff;
pub mod encoders;
pub mod error;
pub mod graph_io;
pub mod run;
pub mod tensor;
pub mod topology;
pub mod train;

pub use error::{Error, Result};
