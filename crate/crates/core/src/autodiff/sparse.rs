use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Compressed sparse row matrix used as a constant operand (normalized
/// adjacencies, pooling and averaging operators).
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= rows || c >= cols) {
            return Err(Error::shape(format!("entry ({r}, {c}) outside a {rows}x{cols} matrix")));
        }
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    fn dims(&self, x: &DenseTensor, inner: usize) -> Result<usize> {
        match x.shape() {
            [r, f] if *r == inner => Ok(*f),
            s => Err(Error::shape(format!(
                "sparse {}x{} operator applied to shape {s:?}",
                self.rows, self.cols
            ))),
        }
    }

    /// `self @ x` for a dense matrix `x`.
    pub fn mul(&self, x: &DenseTensor) -> Result<DenseTensor> {
        let f = self.dims(x, self.cols)?;
        let mut out = vec![0.0; self.rows * f];
        for r in 0..self.rows {
            let dst = &mut out[r * f..(r + 1) * f];
            for (c, v) in self.row(r) {
                for (o, &s) in dst.iter_mut().zip(&x.data()[c * f..(c + 1) * f]) {
                    *o += v * s;
                }
            }
        }
        DenseTensor::from_vec(vec![self.rows, f], out)
    }

    /// `self^T @ x` for a dense matrix `x`.
    pub fn mul_transposed(&self, x: &DenseTensor) -> Result<DenseTensor> {
        let f = self.dims(x, self.rows)?;
        let mut out = vec![0.0; self.cols * f];
        for r in 0..self.rows {
            let src = &x.data()[r * f..(r + 1) * f];
            for (c, v) in self.row(r) {
                for (o, &s) in out[c * f..(c + 1) * f].iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        DenseTensor::from_vec(vec![self.cols, f], out)
    }

    pub fn to_dense(&self) -> DenseTensor {
        let mut t = DenseTensor::zeros(&[self.rows, self.cols]);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                t.data_mut()[r * self.cols + c] = v;
            }
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_sum_and_products_match_dense() {
        let a = CsrMatrix::from_triplets(2, 3, vec![(1, 2, 1.0), (0, 0, 2.0), (1, 2, 0.5), (0, 1, -1.0)]).unwrap();
        let d = a.to_dense();
        assert_eq!(d.data(), &[2.0, -1.0, 0.0, 0.0, 0.0, 1.5]);
        let x = DenseTensor::from_vec(vec![3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(a.mul(&x).unwrap(), d.matmul(&x).unwrap());
        let y = DenseTensor::from_vec(vec![2, 1], vec![1., 2.]).unwrap();
        assert_eq!(a.mul_transposed(&y).unwrap(), d.matmul_tn(&y).unwrap());
    }

    #[test]
    fn out_of_range_entry_rejected() {
        assert!(CsrMatrix::from_triplets(1, 1, vec![(0, 1, 1.0)]).is_err());
    }
}
