use super::dense::DenseTensor;
use crate::error::Result;

/// The handful of tensor primitives the low-rank contractions are written
/// against. Implemented eagerly for [`DenseTensor`] and lazily by the
/// autodiff tape, so one contraction routine serves inference and training.
pub trait TensorAlgebra {
    type T: Clone;

    fn shape_of(&self, t: &Self::T) -> Vec<usize>;
    fn reshape(&mut self, t: &Self::T, shape: &[usize]) -> Result<Self::T>;
    fn tensordot(&mut self, a: &Self::T, b: &Self::T, a_axes: &[usize], b_axes: &[usize]) -> Result<Self::T>;
    /// `a @ b^T` for matrices.
    fn matmul_nt(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    fn khatri_rao(&mut self, mats: &[Self::T]) -> Result<Self::T>;
    fn scale_last_axis(&mut self, a: &Self::T, v: &Self::T) -> Result<Self::T>;
}

/// Direct evaluation on dense tensors.
#[derive(Debug, Clone, Copy, Default)]
pub struct Eager;

impl TensorAlgebra for Eager {
    type T = DenseTensor;

    fn shape_of(&self, t: &DenseTensor) -> Vec<usize> {
        t.shape().to_vec()
    }

    fn reshape(&mut self, t: &DenseTensor, shape: &[usize]) -> Result<DenseTensor> {
        t.reshape(shape)
    }

    fn tensordot(&mut self, a: &DenseTensor, b: &DenseTensor, a_axes: &[usize], b_axes: &[usize]) -> Result<DenseTensor> {
        a.tensordot(b, a_axes, b_axes)
    }

    fn matmul_nt(&mut self, a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
        a.matmul_nt(b)
    }

    fn khatri_rao(&mut self, mats: &[DenseTensor]) -> Result<DenseTensor> {
        DenseTensor::khatri_rao(&mats.iter().collect::<Vec<_>>())
    }

    fn scale_last_axis(&mut self, a: &DenseTensor, v: &DenseTensor) -> Result<DenseTensor> {
        a.scale_last_axis(v)
    }
}
