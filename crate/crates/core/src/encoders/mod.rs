//! Graph encoders: the graph-convolution and topological branches, the GIN
//! alternative, and the shared classifier head.

mod batch;
mod layers;

pub use batch::{normalized_adjacency, GraphBatch};
pub use layers::{gcn_layer, MlpMode};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchStats, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::graph_io::AttributedGraph;
use crate::tensor::{DenseTensor, TtlConfig, TtlLayer};
use crate::topology::TopologyConfig;
use layers::{gaussian, Linear, Mlp, TtlParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    #[default]
    Tgnn,
    Gin,
}

/// Node-to-graph pooling of the graph-convolution branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    Mean,
    #[default]
    Sum,
}

/// One representation pathway. TGNN uses `Conv` and/or `Topo`; GIN uses `Gin`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Conv,
    Topo,
    Gin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcnConfig {
    pub layers: usize,
    /// Layer width is `base * base`, so layer outputs stack into
    /// `N x layers x base x base`.
    pub base: usize,
    pub adj_power: usize,
    pub readout: Readout,
    pub ttl: TtlConfig,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            base: 6,
            adj_power: 1,
            readout: Readout::Sum,
            ttl: TtlConfig {
                layers: vec![TtlLayer::tucker(&[3, 6, 6]), TtlLayer::tucker(&[2, 4, 4])],
                activation: Default::default(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopoConfig {
    pub topology: TopologyConfig,
    pub channels: usize,
    pub kernel: usize,
    pub pool: usize,
    pub ttl: TtlConfig,
}

impl Default for TopoConfig {
    fn default() -> Self {
        Self {
            topology: TopologyConfig::default(),
            channels: 8,
            kernel: 3,
            pool: 2,
            ttl: TtlConfig {
                layers: vec![TtlLayer::tucker(&[4, 5, 5]), TtlLayer::tucker(&[2, 4, 4])],
                activation: Default::default(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GinConfig {
    pub layers: usize,
    pub width: usize,
}

impl Default for GinConfig {
    fn default() -> Self {
        Self { layers: 3, width: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Graph representation size.
    pub hidden: usize,
    pub dropout: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub gcn: GcnConfig,
    pub topo: TopoConfig,
    pub gin: GinConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            dropout: 0.5,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
            gcn: GcnConfig::default(),
            topo: TopoConfig::default(),
            gin: GinConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hidden == 0 {
            return bad("hidden size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || !(self.bn_eps > 0.0) {
            return bad("batch-norm momentum must lie in [0, 1] and epsilon be positive".into());
        }
        if self.gcn.layers == 0 || self.gcn.base == 0 || self.gcn.adj_power == 0 {
            return bad("graph-convolution layers, base and adjacency power must be positive".into());
        }
        if self.topo.channels == 0 || self.topo.kernel.is_multiple_of(2) || self.topo.pool == 0 {
            return bad("convolution needs positive channels, an odd kernel and a positive pool".into());
        }
        if self.topo.topology.resolution / self.topo.pool == 0 {
            return bad("pooling window exceeds the image resolution".into());
        }
        if self.gin.layers == 0 || self.gin.width == 0 {
            return bad("GIN layers and width must be positive".into());
        }
        self.topo.topology.validate()
    }
}

#[derive(Debug, Clone)]
struct ConvBranch {
    thetas: Vec<ParamId>,
    ttl: TtlParams,
    out: Linear,
}

#[derive(Debug, Clone)]
struct TopoBranch {
    kernel: ParamId,
    bias: ParamId,
    ttl: TtlParams,
    out: Linear,
}

#[derive(Debug, Clone)]
struct GinLayer {
    eps: ParamId,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Debug, Clone)]
struct GinEncoder {
    layers: Vec<GinLayer>,
    out: Linear,
}

/// Parameter layout of a full model. Values live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    feature_dim: usize,
    classes: usize,
    branches: Vec<Branch>,
    conv: Option<ConvBranch>,
    topo: Option<TopoBranch>,
    gin: Option<GinEncoder>,
    mlp: Mlp,
}

impl Model {
    /// Registers the parameters of the given branches, initialized from `seed`.
    pub fn new(
        config: &ModelConfig,
        branches: &[Branch],
        feature_dim: usize,
        classes: usize,
        seed: u64,
    ) -> Result<(Self, ParamStore)> {
        config.validate()?;
        if branches.is_empty() {
            return Err(Error::Config("at least one encoder branch must be enabled".into()));
        }
        if branches.contains(&Branch::Gin) && branches.len() > 1 {
            return Err(Error::Config("the GIN encoder replaces both TGNN branches".into()));
        }
        if classes < 2 {
            return Err(Error::Config(format!("need at least two classes, got {classes}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.hidden;
        let mut conv = None;
        let mut topo = None;
        let mut gin = None;
        for &branch in branches {
            match branch {
                Branch::Conv => {
                    let g = &config.gcn;
                    let width = g.base * g.base;
                    let mut thetas = Vec::with_capacity(g.layers);
                    for l in 0..g.layers {
                        let fan_in = if l == 0 { feature_dim } else { width };
                        let var = 2.0 / (fan_in + width) as f64;
                        thetas.push(store.add(format!("gcn.theta{l}"), gaussian(&[fan_in, width], var, &mut rng))?);
                    }
                    let ttl = TtlParams::new(&mut store, "gcn.ttl", &g.ttl, &[g.layers, g.base, g.base], &mut rng)?;
                    let out = Linear::new(&mut store, "gcn.out", ttl.output_size(), d, &mut rng)?;
                    conv = Some(ConvBranch { thetas, ttl, out });
                }
                Branch::Topo => {
                    let t = &config.topo;
                    let [k, _, p, _] = t.topology.tensor_shape();
                    let fan_in = k * t.kernel * t.kernel;
                    let kernel = store.add(
                        "topo.conv.w",
                        gaussian(&[t.channels, k, t.kernel, t.kernel], 2.0 / fan_in as f64, &mut rng),
                    )?;
                    let bias = store.add("topo.conv.b", DenseTensor::zeros(&[t.channels]))?;
                    let side = p / t.pool;
                    let ttl = TtlParams::new(&mut store, "topo.ttl", &t.ttl, &[t.channels, side, side], &mut rng)?;
                    let out = Linear::new(&mut store, "topo.out", ttl.output_size(), d, &mut rng)?;
                    topo = Some(TopoBranch { kernel, bias, ttl, out });
                }
                Branch::Gin => {
                    let w = config.gin.width;
                    let mut layers = Vec::with_capacity(config.gin.layers);
                    for l in 0..config.gin.layers {
                        let fan_in = if l == 0 { feature_dim } else { w };
                        layers.push(GinLayer {
                            eps: store.add(format!("gin.layer{l}.eps"), DenseTensor::zeros(&[1]))?,
                            fc1: Linear::new(&mut store, &format!("gin.layer{l}.fc1"), fan_in, w, &mut rng)?,
                            fc2: Linear::new(&mut store, &format!("gin.layer{l}.fc2"), w, w, &mut rng)?,
                        });
                    }
                    let out = Linear::new(&mut store, "gin.out", w, d, &mut rng)?;
                    gin = Some(GinEncoder { layers, out });
                }
            }
        }
        let mlp = Mlp::new(&mut store, d, classes, config.bn_eps, &mut rng)?;
        let model = Self {
            config: config.clone(),
            feature_dim,
            classes,
            branches: branches.to_vec(),
            conv,
            topo,
            gin,
            mlp,
        };
        Ok((model, store))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Whether batches must carry persistence-image tensors.
    pub fn needs_images(&self) -> bool {
        self.topo.is_some()
    }

    /// Representations `(B, hidden)` of one branch.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, batch: &GraphBatch, branch: Branch) -> Result<Var> {
        let missing = || Error::Config(format!("branch {branch:?} is not part of this model"));
        match branch {
            Branch::Conv => self.conv_forward(tape, store, batch, self.conv.as_ref().ok_or_else(missing)?),
            Branch::Topo => self.topo_forward(tape, store, batch, self.topo.as_ref().ok_or_else(missing)?),
            Branch::Gin => self.gin_forward(tape, store, batch, self.gin.as_ref().ok_or_else(missing)?),
        }
    }

    fn conv_forward(&self, tape: &mut Tape, store: &ParamStore, batch: &GraphBatch, p: &ConvBranch) -> Result<Var> {
        let g = &self.config.gcn;
        let mut h = tape.constant(batch.features.clone());
        let mut outs = Vec::with_capacity(p.thetas.len());
        for &theta in &p.thetas {
            let th = tape.param(store, theta);
            h = gcn_layer(tape, &batch.norm_adj, h, th, g.adj_power)?;
            outs.push(h);
        }
        let n = batch.node_count();
        let stacked = tape.concat_cols(&outs)?;
        let stacked = tape.reshape(stacked, &[n, g.layers, g.base, g.base])?;
        let z = p.ttl.forward(tape, store, stacked)?;
        let z = tape.reshape(z, &[n, p.ttl.output_size()])?;
        let pool = match g.readout {
            Readout::Mean => &batch.mean_pool,
            Readout::Sum => &batch.sum_pool,
        };
        let pooled = tape.spmm(pool.clone(), z)?;
        p.out.forward(tape, store, pooled)
    }

    fn topo_forward(&self, tape: &mut Tape, store: &ParamStore, batch: &GraphBatch, p: &TopoBranch) -> Result<Var> {
        let t = &self.config.topo;
        let pi = batch
            .pi
            .as_ref()
            .ok_or_else(|| Error::contract("topological branch needs persistence-image tensors"))?;
        let expected = t.topology.tensor_shape();
        if pi.shape()[1..] != expected {
            return Err(Error::shape(format!(
                "image tensors have shape {:?}, expected {expected:?}",
                &pi.shape()[1..]
            )));
        }
        let [k, q, res, _] = expected;
        let b = batch.len();
        // Images are fixed inputs; gradients stop here.
        let x = tape.constant(pi.clone());
        let x = if q == 1 {
            tape.reshape(x, &[b, k, res, res])?
        } else {
            let x = tape.permute(x, &[0, 2, 1, 3, 4])?;
            tape.reshape(x, &[b * q, k, res, res])?
        };
        let (w, bias) = (tape.param(store, p.kernel), tape.param(store, p.bias));
        let y = tape.conv2d(x, w, bias, t.kernel / 2)?;
        let y = tape.relu(y);
        let y = tape.max_pool2d(y, t.pool)?;
        let side = res / t.pool;
        let y = if q == 1 {
            y
        } else {
            let y = tape.reshape(y, &[b, q, t.channels * side * side])?;
            let y = tape.max_over_axis(y, 1)?;
            tape.reshape(y, &[b, t.channels, side, side])?
        };
        let z = p.ttl.forward(tape, store, y)?;
        let z = tape.reshape(z, &[b, p.ttl.output_size()])?;
        p.out.forward(tape, store, z)
    }

    fn gin_forward(&self, tape: &mut Tape, store: &ParamStore, batch: &GraphBatch, p: &GinEncoder) -> Result<Var> {
        let mut h = tape.constant(batch.features.clone());
        for layer in &p.layers {
            let eps = tape.param(store, layer.eps);
            let neighbours = tape.spmm(batch.adj.clone(), h)?;
            let scaled = tape.scale_by(h, eps)?;
            let own = tape.add(h, scaled)?;
            let z = tape.add(own, neighbours)?;
            let z = layer.fc1.forward(tape, store, z)?;
            let z = tape.relu(z);
            let z = layer.fc2.forward(tape, store, z)?;
            h = tape.relu(z);
        }
        let pooled = tape.spmm(batch.sum_pool.clone(), h)?;
        p.out.forward(tape, store, pooled)
    }

    /// Representations of every enabled branch, in branch order.
    pub fn encode_all(&self, tape: &mut Tape, store: &ParamStore, batch: &GraphBatch) -> Result<Vec<Var>> {
        self.branches.iter().map(|&b| self.encode(tape, store, batch, b)).collect()
    }

    /// Elementwise mean of branch representations.
    pub fn combine(&self, tape: &mut Tape, reps: &[Var]) -> Result<Var> {
        combine_representations(tape, reps)
    }

    pub fn classify(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        reps: Var,
        mode: MlpMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        self.mlp.forward(tape, store, reps, mode)
    }

    pub fn update_running_stats(&self, store: &mut ParamStore, stats: &BatchStats, rows: usize) {
        Mlp::update_running(store, stats, rows, self.config.bn_momentum);
    }

    /// Eval-mode logits `(B, C)` from the combined representation.
    pub fn logits(&self, store: &ParamStore, batch: &GraphBatch) -> Result<DenseTensor> {
        let mut tape = Tape::frozen();
        let reps = self.encode_all(&mut tape, store, batch)?;
        let z = self.combine(&mut tape, &reps)?;
        let (logits, _) = self.classify(&mut tape, store, z, MlpMode::Eval)?;
        Ok(tape.value(logits).clone())
    }

    /// Eval-mode class predictions; lowest class wins ties. `images` is
    /// required when the model has a topological branch.
    pub fn predict(
        &self,
        store: &ParamStore,
        graphs: &[AttributedGraph],
        images: Option<&[DenseTensor]>,
    ) -> Result<Vec<usize>> {
        const CHUNK: usize = 64;
        if self.needs_images() && images.is_none_or(|im| im.len() != graphs.len()) {
            return Err(Error::contract("one persistence-image tensor per graph is required"));
        }
        let chunks: Vec<Vec<usize>> = (0..graphs.len())
            .step_by(CHUNK)
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&start| {
                let end = (start + CHUNK).min(graphs.len());
                let gs: Vec<&AttributedGraph> = graphs[start..end].iter().collect();
                let ims: Option<Vec<&DenseTensor>> =
                    images.filter(|_| self.needs_images()).map(|im| im[start..end].iter().collect());
                let batch = GraphBatch::new(&gs, ims.as_deref(), self.feature_dim)?;
                Ok(argmax_rows(&self.logits(store, &batch)?))
            })
            .collect::<Result<_>>()?;
        Ok(chunks.concat())
    }
}

/// Elementwise mean of equally shaped representation matrices.
pub fn combine_representations(tape: &mut Tape, reps: &[Var]) -> Result<Var> {
    let (&first, rest) = reps
        .split_first()
        .ok_or_else(|| Error::contract("nothing to combine"))?;
    let mut acc = first;
    for &r in rest {
        if tape.shape(r) != tape.shape(first) {
            return Err(Error::contract(format!(
                "branch shapes differ: {:?} vs {:?}",
                tape.shape(first),
                tape.shape(r)
            )));
        }
        acc = tape.add(acc, r)?;
    }
    Ok(if rest.is_empty() { acc } else { tape.scale(acc, 1.0 / reps.len() as f64) })
}

/// Row-wise argmax; the lowest index wins ties.
pub fn argmax_rows(m: &DenseTensor) -> Vec<usize> {
    let c = m.shape()[1];
    m.data()
        .chunks(c)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
        })
        .collect()
}
