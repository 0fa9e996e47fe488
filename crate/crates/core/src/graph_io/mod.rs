//! Dataset ingestion, domain splits and mini-batch sampling.

mod batch;
mod graph;
mod split;
mod tudataset;

pub use batch::{BatchSampler, DomainBatch, IndexBatch};
pub use graph::{align_node_features, AttributedGraph, DomainDataset, DomainRole, UnlabeledGraphs};
pub use split::{split_by_edge_density, split_subpopulation_shift, ShiftAllocation, SubpopulationSplit};
pub use tudataset::{parse_tudataset, write_tudataset};
