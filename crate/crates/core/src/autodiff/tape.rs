use std::collections::HashMap;
use std::sync::Arc;

use super::params::{ParamId, ParamStore};
use super::sparse::CsrMatrix;
use crate::error::{Error, Result};
use crate::tensor::{khatri_rao_shape, DenseTensor, TensorAlgebra, TensordotPlan};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    AddTrailing(Var, Var),
    Scale(Var, f64),
    MulConst(Var, DenseTensor),
    ScaleLastAxis(Var, Var),
    ScaleByScalar(Var, Var),
    Tensordot {
        a: Var,
        b: Var,
        a_perm: Vec<usize>,
        b_perm: Vec<usize>,
        a_free: usize,
        b_free: usize,
        contracted: usize,
    },
    MatMulNt(Var, Var),
    SpMM(Arc<CsrMatrix>, Var),
    Relu(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    KhatriRao(Vec<Var>),
    ConcatCols(Vec<Var>),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        padding: usize,
    },
    /// `out[k] = x[index[k]]`; max-pooling of either kind.
    Select(Var, Vec<usize>),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: DenseTensor,
        inv_std: Vec<f64>,
    },
    SoftmaxXent {
        logits: Var,
        probs: DenseTensor,
        labels: Vec<usize>,
        weights: Vec<f64>,
        divisor: f64,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: DenseTensor,
    op: Op,
    needs_grad: bool,
}

/// Statistics of one training-mode batch normalization.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Records a forward computation so gradients can be replayed in reverse.
///
/// Parameters enter through [`Tape::param`]; everything built from them
/// is differentiable. Constants never receive gradients.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    frozen: bool,
}

fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

fn conv_out(h: usize, k: usize, padding: usize) -> Result<usize> {
    (h + 2 * padding)
        .checked_sub(k)
        .map(|v| v + 1)
        .ok_or_else(|| Error::shape(format!("kernel {k} larger than padded input {h}")))
}

/// Patch matrix of one image: row `oy * wo + ox`, column `(c, ky, kx)`.
#[allow(clippy::too_many_arguments)]
fn im2col(img: &[f64], c: usize, h: usize, w: usize, k: usize, padding: usize, ho: usize, wo: usize) -> Vec<f64> {
    let ck = c * k * k;
    let mut cols = vec![0.0; ho * wo * ck];
    for oy in 0..ho {
        for ox in 0..wo {
            let row = &mut cols[(oy * wo + ox) * ck..(oy * wo + ox + 1) * ck];
            for ci in 0..c {
                for ky in 0..k {
                    let iy = (oy + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox + kx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        row[(ci * k + ky) * k + kx] = img[(ci * h + iy as usize) * w + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f64], img: &mut [f64], c: usize, h: usize, w: usize, k: usize, padding: usize, ho: usize, wo: usize) {
    let ck = c * k * k;
    for oy in 0..ho {
        for ox in 0..wo {
            let row = &cols[(oy * wo + ox) * ck..(oy * wo + ox + 1) * ck];
            for ci in 0..c {
                for ky in 0..k {
                    let iy = (oy + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox + kx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        img[(ci * h + iy as usize) * w + ix as usize] += row[(ci * k + ky) * k + kx];
                    }
                }
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape on which parameters are plain constants; for inference.
    pub fn frozen() -> Self {
        Self {
            frozen: true,
            ..Self::default()
        }
    }

    fn push(&mut self, value: DenseTensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Leaf => false,
            Op::Param(_) => !self.frozen,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseTensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, value: DenseTensor) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// The same value cut off from the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id), &[]);
        self.params.insert(id, v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Adds `bias` broadcast over the leading modes of `a`.
    pub fn add_trailing(&mut self, a: Var, bias: Var) -> Result<Var> {
        let value = self.value(a).add_trailing(self.value(bias))?;
        Ok(self.push(value, Op::AddTrailing(a, bias), &[a, bias]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        self.push(value, Op::Scale(a, c), &[a])
    }

    /// Elementwise product with a constant mask.
    pub fn mul_const(&mut self, a: Var, mask: DenseTensor) -> Result<Var> {
        let value = self.value(a).zip_map(&mask, |x, m| x * m)?;
        Ok(self.push(value, Op::MulConst(a, mask), &[a]))
    }

    pub fn scale_last_axis(&mut self, a: Var, v: Var) -> Result<Var> {
        let value = self.value(a).scale_last_axis(self.value(v))?;
        Ok(self.push(value, Op::ScaleLastAxis(a, v), &[a, v]))
    }

    /// `s * a` for a single-element `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.len() != 1 {
            return Err(Error::shape(format!("scale_by expects a scalar, got shape {:?}", sv.shape())));
        }
        let value = self.value(a).scale(sv.data()[0]);
        Ok(self.push(value, Op::ScaleByScalar(a, s), &[a, s]))
    }

    pub fn tensordot(&mut self, a: Var, b: Var, a_axes: &[usize], b_axes: &[usize]) -> Result<Var> {
        let plan = TensordotPlan::new(self.shape(a), self.shape(b), a_axes, b_axes)?;
        let value = self.value(a).tensordot(self.value(b), a_axes, b_axes)?;
        let op = Op::Tensordot {
            a,
            b,
            a_perm: plan.a_perm,
            b_perm: plan.b_perm,
            a_free: plan.a_free,
            b_free: plan.b_free,
            contracted: plan.contracted,
        };
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a).len() != 2 || self.shape(b).len() != 2 {
            return Err(Error::shape("matmul expects matrices"));
        }
        self.tensordot(a, b, &[1], &[0])
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(value, Op::MatMulNt(a, b), &[a, b]))
    }

    /// Constant sparse matrix times `x`.
    pub fn spmm(&mut self, m: Arc<CsrMatrix>, x: Var) -> Result<Var> {
        let value = m.mul(self.value(x))?;
        Ok(self.push(value, Op::SpMM(m, x), &[x]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let value = self.value(a).permute(perm)?;
        Ok(self.push(value, Op::Permute(a, perm.to_vec()), &[a]))
    }

    pub fn khatri_rao(&mut self, mats: &[Var]) -> Result<Var> {
        let values: Vec<&DenseTensor> = mats.iter().map(|&m| self.value(m)).collect();
        let value = DenseTensor::khatri_rao(&values)?;
        Ok(self.push(value, Op::KhatriRao(mats.to_vec()), mats))
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first().map(|&p| self.shape(p)) {
            Some([r, _]) => *r,
            _ => return Err(Error::shape("concat_cols expects at least one matrix")),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            match self.shape(p) {
                [r, c] if *r == rows => widths.push(*c),
                s => return Err(Error::shape(format!("cannot concatenate shape {s:?} to {rows} rows"))),
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &c) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * c..(r + 1) * c]);
            }
        }
        let value = DenseTensor::from_vec(vec![rows, total], data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Stride-1 square-kernel convolution of `x: (B, C, H, W)` with
    /// `w: (O, C, k, k)` and per-channel bias `b: (O)`, zero padded.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, padding: usize) -> Result<Var> {
        let (&[bs, c, h, wd], &[o, c2, k, k2], &[o2]) = (self.shape(x), self.shape(w), self.shape(b)) else {
            return Err(Error::shape(format!(
                "conv2d shapes {:?}, {:?}, {:?}",
                self.shape(x),
                self.shape(w),
                self.shape(b)
            )));
        };
        if c != c2 || k != k2 || o != o2 {
            return Err(Error::shape(format!("conv2d: input has {c} channels, kernel ({o}, {c2}, {k}, {k2}), bias {o2}")));
        }
        let (ho, wo) = (conv_out(h, k, padding)?, conv_out(wd, k, padding)?);
        let wmat = self.value(w).reshape(&[o, c * k * k])?;
        let bias = self.value(b).data().to_vec();
        let img = c * h * wd;
        let mut out = Vec::with_capacity(bs * o * ho * wo);
        for bi in 0..bs {
            let cols = im2col(&self.value(x).data()[bi * img..(bi + 1) * img], c, h, wd, k, padding, ho, wo);
            let cols = DenseTensor::from_vec(vec![ho * wo, c * k * k], cols)?;
            let y = wmat.matmul_nt(&cols)?;
            for (oc, chunk) in y.data().chunks(ho * wo).enumerate() {
                out.extend(chunk.iter().map(|v| v + bias[oc]));
            }
        }
        let value = DenseTensor::from_vec(vec![bs, o, ho, wo], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, padding }, &[x, w, b]))
    }

    /// Non-overlapping `k x k` max pooling over the last two modes of a
    /// 4-mode tensor; trailing rows and columns that do not fill a window
    /// are dropped. Ties go to the first element in row-major order.
    pub fn max_pool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let &[bs, c, h, w] = self.shape(x) else {
            return Err(Error::shape(format!("max_pool2d expects 4 modes, got {:?}", self.shape(x))));
        };
        let (ho, wo) = (h / k, w / k);
        if k == 0 || ho == 0 || wo == 0 {
            return Err(Error::shape(format!("pool window {k} does not fit {h}x{w}")));
        }
        let src = self.value(x).data();
        let mut index = Vec::with_capacity(bs * c * ho * wo);
        for plane in 0..bs * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * k * w + ox * k;
                    for dy in 0..k {
                        for dx in 0..k {
                            let i = base + (oy * k + dy) * w + ox * k + dx;
                            if src[i] > src[best] {
                                best = i;
                            }
                        }
                    }
                    index.push(best);
                }
            }
        }
        let value = DenseTensor::from_vec(vec![bs, c, ho, wo], index.iter().map(|&i| src[i]).collect())?;
        Ok(self.push(value, Op::Select(x, index), &[x]))
    }

    /// Maximum over one mode, which is removed. Ties go to the lower index.
    pub fn max_over_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(format!("axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut index = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * n * inner + i;
                for a in 1..n {
                    let j = (o * n + a) * inner + i;
                    if src[j] > src[best] {
                        best = j;
                    }
                }
                index.push(best);
            }
        }
        let out_shape: Vec<usize> = shape.iter().enumerate().filter(|&(d, _)| d != axis).map(|(_, &s)| s).collect();
        let value = DenseTensor::from_vec(out_shape, index.iter().map(|&i| src[i]).collect())?;
        Ok(self.push(value, Op::Select(x, index), &[x]))
    }

    /// Training-mode batch normalization of `x: (B, F)` with biased batch
    /// variance. Returns the normalized output and the batch statistics.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let &[b, f] = self.shape(x) else {
            return Err(Error::shape(format!("batch_norm expects a matrix, got {:?}", self.shape(x))));
        };
        if self.shape(gamma) != [f] || self.shape(beta) != [f] {
            return Err(Error::shape("batch_norm scale and shift must match the feature count"));
        }
        let xv = self.value(x).data();
        let mut mean = vec![0.0; f];
        let mut var = vec![0.0; f];
        for row in xv.chunks(f) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= b as f64);
        for row in xv.chunks(f) {
            for j in 0..f {
                var[j] += (row[j] - mean[j]).powi(2);
            }
        }
        var.iter_mut().for_each(|v| *v /= b as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = xv.to_vec();
        for row in xhat.chunks_mut(f) {
            for j in 0..f {
                row[j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        let xhat = DenseTensor::from_vec(vec![b, f], xhat)?;
        let value = xhat
            .scale_last_axis(self.value(gamma))?
            .add_trailing(self.value(beta))?;
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        };
        Ok((self.push(value, op, &[x, gamma, beta]), BatchStats { mean, var }))
    }

    /// `sum_i weights[i] * CE(labels[i], softmax(logits[i])) / divisor`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize], weights: &[f64], divisor: f64) -> Result<Var> {
        let &[b, c] = self.shape(logits) else {
            return Err(Error::shape(format!("logits must be a matrix, got {:?}", self.shape(logits))));
        };
        if labels.len() != b || weights.len() != b {
            return Err(Error::shape(format!(
                "{b} logit rows but {} labels and {} weights",
                labels.len(),
                weights.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::contract(format!("label {bad} outside 0..{c}")));
        }
        if !(divisor > 0.0) {
            return Err(Error::contract("cross-entropy divisor must be positive"));
        }
        let mut probs = self.value(logits).clone();
        let mut loss = 0.0;
        for (i, row) in probs.data_mut().chunks_mut(c).enumerate() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
            if weights[i] != 0.0 {
                let logit = self.nodes[logits.0].value.data()[i * c + labels[i]];
                loss += weights[i] * (max + z.ln() - logit);
            }
        }
        let op = Op::SoftmaxXent {
            logits,
            probs,
            labels: labels.to_vec(),
            weights: weights.to_vec(),
            divisor,
        };
        Ok(self.push(DenseTensor::scalar(loss / divisor), op, &[logits]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = DenseTensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    /// Reverse-mode sweep from a single-element `loss`; parameter gradients
    /// are added to the store's gradient slots.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<DenseTensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(DenseTensor::filled(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, g, &mut grads, store)?;
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<DenseTensor>], v: Var, g: DenseTensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(
        &self,
        op: &Op,
        out: &DenseTensor,
        g: DenseTensor,
        grads: &mut [Option<DenseTensor>],
        store: &mut ParamStore,
    ) -> Result<()> {
        let val = |v: &Var| &self.nodes[v.0].value;
        let wants = |v: &Var| self.nodes[v.0].needs_grad;
        match op {
            Op::Leaf => {}
            Op::Param(id) => store.accumulate_grad(*id, &g),
            Op::Add(a, b) => {
                self.accumulate(grads, *b, g.clone());
                self.accumulate(grads, *a, g);
            }
            Op::AddTrailing(a, bias) => {
                if wants(bias) {
                    let n = val(bias).len();
                    let mut gb = DenseTensor::zeros(val(bias).shape());
                    for chunk in g.data().chunks(n) {
                        for (o, x) in gb.data_mut().iter_mut().zip(chunk) {
                            *o += x;
                        }
                    }
                    self.accumulate(grads, *bias, gb);
                }
                self.accumulate(grads, *a, g);
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.scale(*c)),
            Op::MulConst(a, mask) => self.accumulate(grads, *a, g.zip_map(mask, |x, m| x * m)?),
            Op::ScaleLastAxis(a, v) => {
                if wants(v) {
                    let n = val(v).len();
                    let mut gv = DenseTensor::zeros(val(v).shape());
                    for (gc, ac) in g.data().chunks(n).zip(val(a).data().chunks(n)) {
                        for ((o, x), y) in gv.data_mut().iter_mut().zip(gc).zip(ac) {
                            *o += x * y;
                        }
                    }
                    self.accumulate(grads, *v, gv);
                }
                if wants(a) {
                    self.accumulate(grads, *a, g.scale_last_axis(val(v))?);
                }
            }
            Op::ScaleByScalar(a, s) => {
                if wants(s) {
                    let d: f64 = g.data().iter().zip(val(a).data()).map(|(x, y)| x * y).sum();
                    self.accumulate(grads, *s, DenseTensor::filled(val(s).shape(), d));
                }
                self.accumulate(grads, *a, g.scale(val(s).data()[0]));
            }
            Op::Tensordot {
                a,
                b,
                a_perm,
                b_perm,
                a_free,
                b_free,
                contracted,
            } => {
                let gm = g.into_reshaped(&[*a_free, *b_free])?;
                let permuted_shape =
                    |t: &DenseTensor, perm: &[usize]| perm.iter().map(|&p| t.shape()[p]).collect::<Vec<_>>();
                if wants(a) {
                    let bm = val(b).permute(b_perm)?.into_reshaped(&[*contracted, *b_free])?;
                    let ga = gm
                        .matmul_nt(&bm)?
                        .into_reshaped(&permuted_shape(val(a), a_perm))?
                        .permute(&inverse_perm(a_perm))?;
                    self.accumulate(grads, *a, ga);
                }
                if wants(b) {
                    let am = val(a).permute(a_perm)?.into_reshaped(&[*a_free, *contracted])?;
                    let gb = am
                        .matmul_tn(&gm)?
                        .into_reshaped(&permuted_shape(val(b), b_perm))?
                        .permute(&inverse_perm(b_perm))?;
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::MatMulNt(a, b) => {
                if wants(a) {
                    self.accumulate(grads, *a, g.matmul(val(b))?);
                }
                if wants(b) {
                    self.accumulate(grads, *b, g.matmul_tn(val(a))?);
                }
            }
            Op::SpMM(m, x) => self.accumulate(grads, *x, m.mul_transposed(&g)?),
            Op::Relu(a) => {
                let ga = g.zip_map(val(a), |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                self.accumulate(grads, *a, ga);
            }
            Op::Reshape(a) => self.accumulate(grads, *a, g.into_reshaped(val(a).shape())?),
            Op::Permute(a, perm) => self.accumulate(grads, *a, g.permute(&inverse_perm(perm))?),
            Op::KhatriRao(mats) => {
                let (rows, r) = khatri_rao_shape(mats.iter().map(|m| val(m).shape()))?;
                let dims: Vec<usize> = mats.iter().map(|m| val(m).shape()[0]).collect();
                let mut idx = vec![0usize; mats.len()];
                let mut gm: Vec<DenseTensor> = mats.iter().map(|m| DenseTensor::zeros(val(m).shape())).collect();
                for row in 0..rows {
                    let mut rem = row;
                    for m in (0..mats.len()).rev() {
                        idx[m] = rem % dims[m];
                        rem /= dims[m];
                    }
                    for col in 0..r {
                        let gv = g.data()[row * r + col];
                        if gv == 0.0 {
                            continue;
                        }
                        for m in 0..mats.len() {
                            let others: f64 = (0..mats.len())
                                .filter(|&q| q != m)
                                .map(|q| val(&mats[q]).data()[idx[q] * r + col])
                                .product();
                            gm[m].data_mut()[idx[m] * r + col] += gv * others;
                        }
                    }
                }
                for (m, gmat) in mats.iter().zip(gm) {
                    self.accumulate(grads, *m, gmat);
                }
            }
            Op::ConcatCols(parts) => {
                let rows = out.shape()[0];
                let total = out.shape()[1];
                let mut offset = 0;
                for p in parts {
                    let c = val(p).shape()[1];
                    if wants(p) {
                        let mut gp = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            gp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                        }
                        self.accumulate(grads, *p, DenseTensor::from_vec(vec![rows, c], gp)?);
                    }
                    offset += c;
                }
            }
            Op::Conv2d { x, w, b, padding } => {
                let &[bs, c, h, wd] = val(x).shape() else { unreachable!("checked in forward") };
                let &[o, _, k, _] = val(w).shape() else { unreachable!("checked in forward") };
                let (ho, wo) = (out.shape()[2], out.shape()[3]);
                let plane = ho * wo;
                if wants(b) {
                    let mut gb = vec![0.0; o];
                    for (i, chunk) in g.data().chunks(plane).enumerate() {
                        gb[i % o] += chunk.iter().sum::<f64>();
                    }
                    self.accumulate(grads, *b, DenseTensor::from_vec(vec![o], gb)?);
                }
                let wmat = val(w).reshape(&[o, c * k * k])?;
                let mut gw = DenseTensor::zeros(&[o, c * k * k]);
                let mut gx = vec![0.0; bs * c * h * wd];
                let img = c * h * wd;
                for bi in 0..bs {
                    let gy = DenseTensor::from_vec(vec![o, plane], g.data()[bi * o * plane..(bi + 1) * o * plane].to_vec())?;
                    if wants(w) {
                        let cols = im2col(&val(x).data()[bi * img..(bi + 1) * img], c, h, wd, k, *padding, ho, wo);
                        let cols = DenseTensor::from_vec(vec![plane, c * k * k], cols)?;
                        gw.add_assign(&gy.matmul(&cols)?);
                    }
                    if wants(x) {
                        let gcols = gy.matmul_tn(&wmat)?;
                        col2im(gcols.data(), &mut gx[bi * img..(bi + 1) * img], c, h, wd, k, *padding, ho, wo);
                    }
                }
                if wants(w) {
                    self.accumulate(grads, *w, gw.into_reshaped(val(w).shape())?);
                }
                if wants(x) {
                    self.accumulate(grads, *x, DenseTensor::from_vec(val(x).shape().to_vec(), gx)?);
                }
            }
            Op::Select(x, index) => {
                let mut gx = DenseTensor::zeros(val(x).shape());
                for (&i, &gv) in index.iter().zip(g.data()) {
                    gx.data_mut()[i] += gv;
                }
                self.accumulate(grads, *x, gx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let &[b, f] = xhat.shape() else { unreachable!("checked in forward") };
                let mut gbeta = vec![0.0; f];
                let mut ggamma = vec![0.0; f];
                for (gr, xr) in g.data().chunks(f).zip(xhat.data().chunks(f)) {
                    for j in 0..f {
                        gbeta[j] += gr[j];
                        ggamma[j] += gr[j] * xr[j];
                    }
                }
                if wants(x) {
                    let gam = val(gamma).data();
                    let bf = b as f64;
                    let mut gx = vec![0.0; b * f];
                    for (i, (gr, xr)) in g.data().chunks(f).zip(xhat.data().chunks(f)).enumerate() {
                        for j in 0..f {
                            // d xhat = g * gamma; sums of it are gamma * gbeta and gamma * ggamma.
                            gx[i * f + j] = gam[j] * inv_std[j] / bf * (bf * gr[j] - gbeta[j] - xr[j] * ggamma[j]);
                        }
                    }
                    self.accumulate(grads, *x, DenseTensor::from_vec(vec![b, f], gx)?);
                }
                self.accumulate(grads, *gamma, DenseTensor::from_vec(vec![f], ggamma)?);
                self.accumulate(grads, *beta, DenseTensor::from_vec(vec![f], gbeta)?);
            }
            Op::SoftmaxXent {
                logits,
                probs,
                labels,
                weights,
                divisor,
            } => {
                let c = probs.shape()[1];
                let scale = g.data()[0] / divisor;
                let mut gl = probs.clone();
                for (i, row) in gl.data_mut().chunks_mut(c).enumerate() {
                    row[labels[i]] -= 1.0;
                    let w = weights[i] * scale;
                    row.iter_mut().for_each(|v| *v *= w);
                }
                self.accumulate(grads, *logits, gl);
            }
            Op::Sum(a) => self.accumulate(grads, *a, DenseTensor::filled(val(a).shape(), g.data()[0])),
        }
        Ok(())
    }
}

impl TensorAlgebra for Tape {
    type T = Var;

    fn shape_of(&self, t: &Var) -> Vec<usize> {
        self.shape(*t).to_vec()
    }

    fn reshape(&mut self, t: &Var, shape: &[usize]) -> Result<Var> {
        Tape::reshape(self, *t, shape)
    }

    fn tensordot(&mut self, a: &Var, b: &Var, a_axes: &[usize], b_axes: &[usize]) -> Result<Var> {
        Tape::tensordot(self, *a, *b, a_axes, b_axes)
    }

    fn matmul_nt(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::matmul_nt(self, *a, *b)
    }

    fn khatri_rao(&mut self, mats: &[Var]) -> Result<Var> {
        Tape::khatri_rao(self, mats)
    }

    fn scale_last_axis(&mut self, a: &Var, v: &Var) -> Result<Var> {
        Tape::scale_last_axis(self, *a, *v)
    }
}
