use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major multi-mode array of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Square identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Same elements, new shape; element order is unchanged.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape.to_vec(), self.data.clone())
    }

    pub fn into_reshaped(self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape.to_vec(), self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "elementwise shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|x| x * c)
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Reorders modes so that output mode `i` is input mode `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let nd = self.ndim();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..nd).collect::<Vec<_>>() {
            return Err(Error::shape(format!("{perm:?} is not a permutation of {nd} modes")));
        }
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(self.clone());
        }
        let in_strides = strides(&self.shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; nd];
        let mut offset = 0usize;
        for _ in 0..self.data.len() {
            data.push(self.data[offset]);
            for ax in (0..nd).rev() {
                idx[ax] += 1;
                offset += src_strides[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                offset -= src_strides[ax] * out_shape[ax];
                idx[ax] = 0;
            }
        }
        Ok(Self {
            shape: out_shape,
            data,
        })
    }

    fn dims2(&self, what: &str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(format!("{what} expects a matrix, got shape {:?}", self.shape))),
        }
    }

    /// `self @ other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (n, k) = self.dims2("matmul")?;
        let (k2, m) = other.dims2("matmul")?;
        if k != k2 {
            return Err(Error::shape(format!("matmul inner dims differ: {n}x{k} @ {k2}x{m}")));
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &mut out[i * m..(i + 1) * m];
            for (p, &a) in self.data[i * k..(i + 1) * k].iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in row.iter_mut().zip(&other.data[p * m..(p + 1) * m]) {
                    *o += a * b;
                }
            }
        }
        Self::from_vec(vec![n, m], out)
    }

    /// `self^T @ other`.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        let (k, n) = self.dims2("matmul_tn")?;
        let (k2, m) = other.dims2("matmul_tn")?;
        if k != k2 {
            return Err(Error::shape(format!("matmul_tn row counts differ: {k} vs {k2}")));
        }
        let mut out = vec![0.0; n * m];
        for p in 0..k {
            let brow = &other.data[p * m..(p + 1) * m];
            for (i, &a) in self.data[p * n..(p + 1) * n].iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out[i * m..(i + 1) * m].iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Self::from_vec(vec![n, m], out)
    }

    /// `self @ other^T`.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        let (n, k) = self.dims2("matmul_nt")?;
        let (m, k2) = other.dims2("matmul_nt")?;
        if k != k2 {
            return Err(Error::shape(format!("matmul_nt column counts differ: {k} vs {k2}")));
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let arow = &self.data[i * k..(i + 1) * k];
            for j in 0..m {
                let brow = &other.data[j * k..(j + 1) * k];
                out[i * m + j] = arow.iter().zip(brow).map(|(a, b)| a * b).sum();
            }
        }
        Self::from_vec(vec![n, m], out)
    }

    /// Contracts `a_axes` of `self` with `b_axes` of `other`. The result has
    /// the free modes of `self` followed by the free modes of `other`.
    pub fn tensordot(&self, other: &Self, a_axes: &[usize], b_axes: &[usize]) -> Result<Self> {
        let plan = TensordotPlan::new(&self.shape, &other.shape, a_axes, b_axes)?;
        let a = self.permute(&plan.a_perm)?.into_reshaped(&[plan.a_free, plan.contracted])?;
        let b = other.permute(&plan.b_perm)?.into_reshaped(&[plan.contracted, plan.b_free])?;
        a.matmul(&b)?.into_reshaped(&plan.out_shape)
    }

    /// Column-wise Kronecker product of matrices sharing a column count `R`.
    /// Row `(i_1, ..., i_M)` (first index slowest) holds `prod_m U_m[i_m, r]`.
    pub fn khatri_rao(mats: &[&Self]) -> Result<Self> {
        let (rows, r) = khatri_rao_shape(mats.iter().map(|m| m.shape()))?;
        let mut out = vec![1.0; rows * r];
        let mut stride = rows;
        for m in mats {
            let d = m.shape[0];
            stride /= d;
            for row in 0..rows {
                let i = (row / stride) % d;
                let src = &m.data[i * r..(i + 1) * r];
                for (o, s) in out[row * r..(row + 1) * r].iter_mut().zip(src) {
                    *o *= s;
                }
            }
        }
        Self::from_vec(vec![rows, r], out)
    }

    /// Multiplies along the last mode by `v` (length = last dim).
    pub fn scale_last_axis(&self, v: &Self) -> Result<Self> {
        let last = *self.shape.last().ok_or_else(|| Error::shape("scale_last_axis on a scalar"))?;
        if v.len() != last {
            return Err(Error::shape(format!("scale vector has {} entries, last dim is {last}", v.len())));
        }
        let mut out = self.clone();
        for chunk in out.data.chunks_mut(last) {
            for (x, s) in chunk.iter_mut().zip(&v.data) {
                *x *= s;
            }
        }
        Ok(out)
    }

    /// Adds `bias` broadcast over the leading modes; `bias` must match the
    /// trailing modes of `self`.
    pub fn add_trailing(&self, bias: &Self) -> Result<Self> {
        let n = bias.len();
        if n == 0 || !self.len().is_multiple_of(n) || !self.shape.ends_with(&bias.shape) {
            return Err(Error::shape(format!(
                "bias {:?} does not match trailing modes of {:?}",
                bias.shape, self.shape
            )));
        }
        let mut out = self.clone();
        for chunk in out.data.chunks_mut(n) {
            for (x, b) in chunk.iter_mut().zip(&bias.data) {
                *x += b;
            }
        }
        Ok(out)
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub(crate) fn khatri_rao_shape<'a>(shapes: impl Iterator<Item = &'a [usize]>) -> Result<(usize, usize)> {
    let mut rows = 1;
    let mut rank = None;
    for s in shapes {
        let [d, r] = s[..] else {
            return Err(Error::shape(format!("khatri-rao factor must be a matrix, got {s:?}")));
        };
        if *rank.get_or_insert(r) != r {
            return Err(Error::shape("khatri-rao factors disagree on column count"));
        }
        rows *= d;
    }
    let r = rank.ok_or_else(|| Error::shape("khatri-rao of zero factors"))?;
    Ok((rows, r))
}

/// Permutations and flattened sizes that reduce a tensordot to a matmul.
pub(crate) struct TensordotPlan {
    pub a_perm: Vec<usize>,
    pub b_perm: Vec<usize>,
    pub a_free: usize,
    pub b_free: usize,
    pub contracted: usize,
    pub out_shape: Vec<usize>,
}

impl TensordotPlan {
    pub fn new(a: &[usize], b: &[usize], a_axes: &[usize], b_axes: &[usize]) -> Result<Self> {
        if a_axes.len() != b_axes.len() {
            return Err(Error::shape("tensordot axis lists differ in length"));
        }
        for (&i, &j) in a_axes.iter().zip(b_axes) {
            if i >= a.len() || j >= b.len() || a[i] != b[j] {
                return Err(Error::shape(format!(
                    "cannot contract mode {i} of {a:?} with mode {j} of {b:?}"
                )));
            }
        }
        let free = |shape: &[usize], axes: &[usize]| -> Vec<usize> {
            (0..shape.len()).filter(|i| !axes.contains(i)).collect()
        };
        let fa = free(a, a_axes);
        let fb = free(b, b_axes);
        let a_perm: Vec<usize> = fa.iter().chain(a_axes).copied().collect();
        let b_perm: Vec<usize> = b_axes.iter().chain(&fb).copied().collect();
        let out_shape: Vec<usize> = fa.iter().map(|&i| a[i]).chain(fb.iter().map(|&j| b[j])).collect();
        Ok(Self {
            a_free: fa.iter().map(|&i| a[i]).product(),
            b_free: fb.iter().map(|&j| b[j]).product(),
            contracted: a_axes.iter().map(|&i| a[i]).product(),
            a_perm,
            b_perm,
            out_shape,
        })
    }
}
