//! Dense tensors, CP/Tucker/TT weight factorizations and the tensor
//! transformation layer.

mod algebra;
mod dense;
mod lowrank;
mod ttl;

pub use algebra::{Eager, TensorAlgebra};
pub use dense::DenseTensor;
pub(crate) use dense::{khatri_rao_shape, TensordotPlan};
pub use lowrank::{LowRankSpec, LowRankWeight, Structure};
pub use ttl::{ttl_forward, Activation, TtlConfig, TtlLayer};
