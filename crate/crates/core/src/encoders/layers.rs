use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal};

use crate::autodiff::{BatchStats, CsrMatrix, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, LowRankSpec, TtlConfig};

pub(crate) fn gaussian<R: Rng + ?Sized>(shape: &[usize], var: f64, rng: &mut R) -> DenseTensor {
    let normal = Normal::new(0.0, var.sqrt()).expect("positive variance");
    let n = shape.iter().product();
    DenseTensor::from_vec(shape.to_vec(), (0..n).map(|_| normal.sample(rng)).collect()).expect("consistent shape")
}

/// One graph-convolution step: `relu(A^power h theta)`.
pub fn gcn_layer(tape: &mut Tape, adjacency: &Arc<CsrMatrix>, h: Var, theta: Var, power: usize) -> Result<Var> {
    let mut z = h;
    for _ in 0..power {
        z = tape.spmm(adjacency.clone(), z)?;
    }
    let z = tape.matmul(z, theta)?;
    Ok(tape.relu(z))
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let var = 2.0 / (fan_in + fan_out) as f64;
        Ok(Self {
            w: store.add(format!("{name}.w"), gaussian(&[fan_in, fan_out], var, rng))?,
            b: store.add(format!("{name}.b"), DenseTensor::zeros(&[fan_out]))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(store, self.w), tape.param(store, self.b));
        let y = tape.matmul(x, w)?;
        tape.add_trailing(y, b)
    }
}

/// Parameters of a transformation-layer stack.
#[derive(Debug, Clone)]
pub(crate) struct TtlParams {
    specs: Vec<LowRankSpec>,
    factors: Vec<Vec<ParamId>>,
    biases: Vec<ParamId>,
}

impl TtlParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        config: &TtlConfig,
        input_shape: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let specs = config.specs(input_shape)?;
        let mut factors = Vec::with_capacity(specs.len());
        let mut biases = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let ids = spec
                .factor_names()
                .into_iter()
                .zip(spec.init_factors(rng))
                .map(|(f, value)| store.add(format!("{name}.{i}.{f}"), value))
                .collect::<Result<Vec<_>>>()?;
            factors.push(ids);
            biases.push(store.add(format!("{name}.{i}.bias"), DenseTensor::zeros(&spec.output_shape))?);
        }
        Ok(Self { specs, factors, biases })
    }

    pub fn output_size(&self) -> usize {
        self.specs.last().map_or(0, |s| s.output_shape.iter().product())
    }

    /// Activated layers, then a final linear layer.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.specs.len() - 1;
        for (i, spec) in self.specs.iter().enumerate() {
            let f: Vec<Var> = self.factors[i].iter().map(|&id| tape.param(store, id)).collect();
            h = spec
                .contract(tape, &f, &h)
                .map_err(|e| Error::shape(format!("transformation layer {i}: {e}")))?;
            let b = tape.param(store, self.biases[i]);
            h = tape.add_trailing(h, b)?;
            if i < last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

/// How the classifier head treats batch norm and dropout.
pub enum MlpMode<'a> {
    Train { dropout: f64, rng: &'a mut ChaCha8Rng },
    Eval,
}

/// `dense -> batch norm -> relu -> dropout -> dense`.
#[derive(Debug, Clone)]
pub(crate) struct Mlp {
    fc1: Linear,
    gamma: ParamId,
    beta: ParamId,
    fc2: Linear,
    pub eps: f64,
}

pub(crate) const RUNNING_MEAN: &str = "mlp.bn.running_mean";
pub(crate) const RUNNING_VAR: &str = "mlp.bn.running_var";

impl Mlp {
    pub fn new(store: &mut ParamStore, d: usize, classes: usize, eps: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let fc1 = Linear::new(store, "mlp.fc1", d, d, rng)?;
        let gamma = store.add("mlp.bn.gamma", DenseTensor::filled(&[d], 1.0))?;
        let beta = store.add("mlp.bn.beta", DenseTensor::zeros(&[d]))?;
        let fc2 = Linear::new(store, "mlp.fc2", d, classes, rng)?;
        store.set_buffer(RUNNING_MEAN, DenseTensor::zeros(&[d]));
        store.set_buffer(RUNNING_VAR, DenseTensor::filled(&[d], 1.0));
        Ok(Self {
            fc1,
            gamma,
            beta,
            fc2,
            eps,
        })
    }

    /// Logits, plus the batch statistics when running in training mode.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        mode: MlpMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let h = self.fc1.forward(tape, store, x)?;
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        let (h, stats, dropout) = match mode {
            MlpMode::Train { dropout, rng } => {
                let (h, stats) = tape.batch_norm(h, gamma, beta, self.eps)?;
                (h, Some(stats), Some((dropout, rng)))
            }
            MlpMode::Eval => {
                let missing = || Error::contract("batch-norm running statistics missing");
                let mean = store.buffer(RUNNING_MEAN).ok_or_else(missing)?;
                let var = store.buffer(RUNNING_VAR).ok_or_else(missing)?;
                let shift = tape.constant(mean.scale(-1.0));
                let inv = tape.constant(var.map(|v| 1.0 / (v + self.eps).sqrt()));
                let h = tape.add_trailing(h, shift)?;
                let h = tape.scale_last_axis(h, inv)?;
                let h = tape.scale_last_axis(h, gamma)?;
                (tape.add_trailing(h, beta)?, None, None)
            }
        };
        let mut h = tape.relu(h);
        if let Some((p, rng)) = dropout {
            if p > 0.0 {
                let keep = Bernoulli::new(1.0 - p).map_err(|e| Error::Config(format!("dropout rate {p}: {e}")))?;
                let scale = 1.0 / (1.0 - p);
                let shape = tape.shape(h).to_vec();
                let n = shape.iter().product();
                let mask = (0..n).map(|_| if keep.sample(rng) { scale } else { 0.0 }).collect();
                h = tape.mul_const(h, DenseTensor::from_vec(shape, mask)?)?;
            }
        }
        Ok((self.fc2.forward(tape, store, h)?, stats))
    }

    /// Folds batch statistics into the running averages:
    /// `running = momentum * running + (1 - momentum) * batch`, with the
    /// batch variance made unbiased.
    pub fn update_running(store: &mut ParamStore, stats: &BatchStats, rows: usize, momentum: f64) {
        let correction = if rows > 1 { rows as f64 / (rows - 1) as f64 } else { 1.0 };
        for (name, batch, corr) in [(RUNNING_MEAN, &stats.mean, 1.0), (RUNNING_VAR, &stats.var, correction)] {
            if let Some(running) = store.buffer(name) {
                let mut next = running.clone();
                for (r, b) in next.data_mut().iter_mut().zip(batch) {
                    *r = momentum * *r + (1.0 - momentum) * b * corr;
                }
                store.set_buffer(name, next);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::batch::normalized_adjacency;
    use crate::graph_io::AttributedGraph;
    use rand::SeedableRng;

    fn layer(g: &AttributedGraph, x: DenseTensor, theta: DenseTensor, power: usize) -> DenseTensor {
        let mut t = Tape::new();
        let adj = Arc::new(normalized_adjacency(g));
        let (x, th) = (t.constant(x), t.constant(theta));
        let y = gcn_layer(&mut t, &adj, x, th, power).unwrap();
        t.value(y).clone()
    }

    #[test]
    fn two_node_layer_averages() {
        let g = AttributedGraph::with_constant_features(2, [(0, 1)], None).unwrap();
        let y = layer(&g, DenseTensor::eye(2), DenseTensor::eye(2), 1);
        assert_eq!(y.data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn edgeless_layer_is_relu_of_linear_map() {
        let g = AttributedGraph::with_constant_features(2, [], None).unwrap();
        let x = DenseTensor::from_vec(vec![2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let th = DenseTensor::from_vec(vec![2, 1], vec![1.0, 1.0]).unwrap();
        assert_eq!(layer(&g, x, th, 1).data(), &[0.0, 3.5]);
    }

    #[test]
    fn power_two_applies_adjacency_twice() {
        let g = AttributedGraph::with_constant_features(3, [(0, 1), (1, 2)], None).unwrap();
        let x = DenseTensor::from_vec(vec![3, 1], vec![1.0, 0.0, 2.0]).unwrap();
        let a = normalized_adjacency(&g);
        let expected = a.mul(&a.mul(&x).unwrap()).unwrap();
        assert_eq!(layer(&g, x, DenseTensor::eye(1), 2), expected);
    }

    #[test]
    fn zero_weight_mlp_gives_uniform_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, 4, 2, 1e-5, &mut rng).unwrap();
        for id in store.clone().ids() {
            if store.name(id).ends_with(".w") {
                store.value_mut(id).data_mut().fill(0.0);
            }
        }
        let mut t = Tape::frozen();
        let x = t.constant(DenseTensor::filled(&[3, 4], 0.7));
        let (logits, _) = mlp.forward(&mut t, &store, x, MlpMode::Eval).unwrap();
        assert!(t.value(logits).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn running_statistics_follow_momentum() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Mlp::new(&mut store, 1, 2, 1e-5, &mut rng).unwrap();
        let stats = BatchStats {
            mean: vec![2.0],
            var: vec![1.0],
        };
        Mlp::update_running(&mut store, &stats, 2, 0.9);
        assert!((store.buffer(RUNNING_MEAN).unwrap().data()[0] - 0.2).abs() < 1e-15);
        assert!((store.buffer(RUNNING_VAR).unwrap().data()[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-15);
    }
}
