use rand::SeedableRng;
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::{consistency_reg, pseudo_label, supervised_loss, total_loss, NeighborSet};
use crate::autodiff::{AdamConfig, BatchStats, ParamStore, Tape, Var};
use crate::encoders::{Branch, EncoderKind, GraphBatch, MlpMode, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::graph_io::{AttributedGraph, BatchSampler, DomainDataset, UnlabeledGraphs};
use crate::tensor::DenseTensor;
use crate::topology::{build_pi_tensors, fit_windows, Window, WindowScope};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub confidence_threshold: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a new best target accuracy before stopping.
    pub patience: usize,
    pub seed: u64,
    pub encoder: EncoderKind,
    pub disable_topo: bool,
    pub disable_conv: bool,
    pub disable_sup: bool,
    pub disable_lp: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.8,
            learning_rate: 0.01,
            batch_size: 32,
            max_epochs: 200,
            patience: 20,
            seed: 0,
            encoder: EncoderKind::Tgnn,
            disable_topo: false,
            disable_conv: false,
            disable_sup: false,
            disable_lp: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold <= 1.0) {
            return bad(format!("confidence threshold must lie in (0, 1], got {}", self.confidence_threshold));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size < 2 {
            return bad(format!("batch size must be at least 2, got {}", self.batch_size));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive".into());
        }
        if self.disable_sup && self.disable_lp {
            return bad("disabling both the supervised and propagation terms leaves no objective".into());
        }
        self.branches().map(|_| ())
    }

    /// Encoder branches implied by the encoder choice and ablation flags.
    pub fn branches(&self) -> Result<Vec<Branch>> {
        match self.encoder {
            EncoderKind::Gin if self.disable_conv || self.disable_topo => Err(Error::Config(
                "branch ablations apply to the TGNN encoder only".into(),
            )),
            EncoderKind::Gin => Ok(vec![Branch::Gin]),
            EncoderKind::Tgnn => {
                let b: Vec<Branch> = [(Branch::Conv, self.disable_conv), (Branch::Topo, self.disable_topo)]
                    .into_iter()
                    .filter(|&(_, off)| !off)
                    .map(|(b, _)| b)
                    .collect();
                if b.is_empty() {
                    return Err(Error::Config("cannot disable both TGNN branches".into()));
                }
                Ok(b)
            }
        }
    }
}

/// One line of the per-epoch metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_sup: f64,
    pub loss_reg_conv: f64,
    pub loss_reg_topo: f64,
    /// Share of target samples whose first-branch confidence cleared the
    /// threshold.
    pub filtered_fraction: f64,
    /// Accuracy of the first branch's filtered pseudo-labels against
    /// held-out target labels.
    pub pseudo_acc: Option<f64>,
    pub target_acc: Option<f64>,
}

/// Values of one step's objective, for logging and diagnostics.
#[derive(Debug, Clone, Default)]
pub struct StepReport {
    pub loss_sup: f64,
    /// Per-branch consistency terms, in branch order.
    pub loss_reg: Vec<f64>,
    pub total: f64,
    /// Pseudo-labelling results per branch, in branch order.
    pub neighbor_sets: Vec<Vec<NeighborSet>>,
    /// Number of confident targets per branch.
    pub confident: Vec<usize>,
}

/// A recorded step objective ready for back-propagation.
pub struct StepObjective {
    pub tape: Tape,
    pub loss: Var,
    pub report: StepReport,
    pub source_stats: Option<BatchStats>,
}

/// Builds the full objective for one paired batch: supervised loss on the
/// combined source representation plus one consistency term per branch.
#[allow(clippy::too_many_arguments)]
pub fn step_objective(
    model: &Model,
    store: &ParamStore,
    config: &TrainConfig,
    source: &GraphBatch,
    labels: &[usize],
    target: Option<&GraphBatch>,
    rng: &mut ChaCha8Rng,
) -> Result<StepObjective> {
    let dropout = model.config().dropout;
    let mut tape = Tape::new();
    let src_reps = model.encode_all(&mut tape, store, source)?;
    let combined = model.combine(&mut tape, &src_reps)?;
    let (logits, source_stats) = model.classify(&mut tape, store, combined, MlpMode::Train { dropout, rng })?;
    let sup = supervised_loss(&mut tape, logits, labels)?;
    let mut report = StepReport {
        loss_sup: tape.value(sup).data()[0],
        ..Default::default()
    };
    let mut regs = Vec::new();
    if let (Some(target), false) = (target, config.disable_lp) {
        let tgt_reps = model.encode_all(&mut tape, store, target)?;
        for (&src, &tgt) in src_reps.iter().zip(&tgt_reps) {
            let (tl, _) = model.classify(&mut tape, store, tgt, MlpMode::Train { dropout: 0.0, rng })?;
            let sets = pseudo_label(tape.value(tl), labels);
            let reg = consistency_reg(
                &mut tape,
                model,
                store,
                &sets,
                src,
                config.confidence_threshold,
                target.len(),
                MlpMode::Train { dropout, rng },
            )?;
            report.loss_reg.push(tape.value(reg.loss).data()[0]);
            report.confident.push(sets.iter().filter(|s| s.confidence > config.confidence_threshold).count());
            report.neighbor_sets.push(sets);
            regs.push(reg.loss);
        }
    }
    let loss = total_loss(&mut tape, (!config.disable_sup).then_some(sup), &regs)?;
    report.total = tape.value(loss).data()[0];
    Ok(StepObjective {
        tape,
        loss,
        report,
        source_stats,
    })
}

/// Trained parameters and the training log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub params: ParamStore,
    pub metrics: Vec<EpochMetrics>,
    /// Epoch (1-based) whose parameters were kept when stopping early.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// Buffer holding the fitted image windows, one `[x0, x1, y0, y1]` row per
/// filtration.
pub const WINDOW_BUFFER: &str = "topo.windows";

/// Image windows stored in `params`, if any.
pub fn stored_windows(params: &ParamStore) -> Option<Vec<Window>> {
    params.buffer(WINDOW_BUFFER).map(|t| {
        t.data()
            .chunks(4)
            .map(|w| Window {
                x: (w[0], w[1]),
                y: (w[2], w[3]),
            })
            .collect()
    })
}

/// Fits dataset-wide image windows over `graphs` and stores them in
/// `params`; does nothing without a topological branch or with per-graph
/// windows.
pub fn fit_image_windows<'a>(
    model: &Model,
    params: &mut ParamStore,
    graphs: impl IntoParallelIterator<Item = &'a AttributedGraph>,
) -> Result<()> {
    let cfg = &model.config().topo.topology;
    if !model.needs_images() || cfg.window == WindowScope::Graph {
        return Ok(());
    }
    let windows = fit_windows(graphs, cfg);
    let data = windows.iter().flat_map(|w| [w.x.0, w.x.1, w.y.0, w.y.1]).collect();
    params.set_buffer(WINDOW_BUFFER, DenseTensor::from_vec(vec![windows.len(), 4], data)?);
    Ok(())
}

/// Persistence-image tensors for every graph over the stored windows (the
/// graphs' own ranges when none are stored), or `None` when the model has
/// no topological branch.
pub fn images_for(model: &Model, params: &ParamStore, graphs: &[AttributedGraph]) -> Result<Option<Vec<DenseTensor>>> {
    if !model.needs_images() {
        return Ok(None);
    }
    let windows = stored_windows(params);
    build_pi_tensors(graphs, &model.config().topo.topology, windows.as_deref()).map(Some)
}

/// Fraction of `labels` matched by the model's eval-mode predictions.
pub fn accuracy(
    model: &Model,
    params: &ParamStore,
    graphs: &[AttributedGraph],
    images: Option<&[DenseTensor]>,
    labels: &[usize],
) -> Result<f64> {
    if graphs.is_empty() || graphs.len() != labels.len() {
        return Err(Error::Size(format!("{} graphs with {} labels", graphs.len(), labels.len())));
    }
    let predicted = model.predict(params, graphs, images)?;
    let hits = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Eval-mode accuracy on a labeled dataset.
pub fn evaluate(model: &Model, params: &ParamStore, dataset: &DomainDataset) -> Result<f64> {
    let images = images_for(model, params, &dataset.graphs)?;
    accuracy(model, params, &dataset.graphs, images.as_deref(), &dataset.labels()?)
}

fn finite(value: f64, what: impl FnOnce() -> String) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what()))
    }
}

/// Trains on labeled `source` and unlabeled `target` graphs.
///
/// `target_labels` are never used for learning; they only feed the logged
/// pseudo-label and target accuracies and the patience rule.
pub fn train(
    model_config: &ModelConfig,
    config: &TrainConfig,
    source: &DomainDataset,
    target: &UnlabeledGraphs,
    target_labels: Option<&[usize]>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if let Some(l) = target_labels {
        if l.len() != target.len() {
            return Err(Error::Size(format!("{} target graphs but {} held-out labels", target.len(), l.len())));
        }
    }
    let labels = source.labels()?;
    let (model, mut params) = Model::new(
        model_config,
        &config.branches()?,
        source.feature_dim(),
        source.class_count,
        config.seed,
    )?;
    // Without propagation the target domain is never read for learning, so
    // neither the image windows nor the epoch length may depend on it.
    let window_graphs: &[AttributedGraph] = if config.disable_lp { &[] } else { target.graphs() };
    fit_image_windows(&model, &mut params, source.graphs.par_iter().chain(window_graphs.par_iter()))?;
    let src_images = images_for(&model, &params, &source.graphs)?;
    let tgt_images = images_for(&model, &params, target.graphs())?;
    let sampled_target_len = if config.disable_lp { source.len() } else { target.len() };
    let mut sampler = BatchSampler::new(source.len(), sampled_target_len, config.batch_size, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(3);
    let adam = AdamConfig::default();

    let pick = |images: &Option<Vec<DenseTensor>>, idx: &[usize]| -> Option<Vec<DenseTensor>> {
        images.as_ref().map(|im| idx.iter().map(|&i| im[i].clone()).collect())
    };
    let mut metrics = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut stopped_early = false;
    for epoch in 1..=config.max_epochs {
        let (mut sup_sum, mut reg_sum) = (0.0, [0.0; 2]);
        let (mut seen, mut confident, mut correct) = (0usize, 0usize, 0usize);
        let batches = sampler.next_epoch();
        for (step, idx) in batches.iter().enumerate() {
            let src_graphs: Vec<&AttributedGraph> = idx.source.iter().map(|&i| &source.graphs[i]).collect();
            let src_labels: Vec<usize> = idx.source.iter().map(|&i| labels[i]).collect();
            let src_im = pick(&src_images, &idx.source);
            let src_refs: Option<Vec<&DenseTensor>> = src_im.as_ref().map(|v| v.iter().collect());
            let src_batch = GraphBatch::new(&src_graphs, src_refs.as_deref(), model.feature_dim())?;
            let tgt_batch = if config.disable_lp {
                None
            } else {
                let tg: Vec<&AttributedGraph> = idx.target.iter().map(|&j| &target.graphs()[j]).collect();
                let tgt_im = pick(&tgt_images, &idx.target);
                let refs: Option<Vec<&DenseTensor>> = tgt_im.as_ref().map(|v| v.iter().collect());
                Some(GraphBatch::new(&tg, refs.as_deref(), model.feature_dim())?)
            };
            let obj = step_objective(&model, &params, config, &src_batch, &src_labels, tgt_batch.as_ref(), &mut rng)?;
            finite(obj.report.total, || {
                format!(
                    "loss at epoch {epoch}, step {step}: supervised {}, consistency {:?}",
                    obj.report.loss_sup, obj.report.loss_reg
                )
            })?;
            obj.tape.backward(obj.loss, &mut params)?;
            params.adam_step(config.learning_rate, adam)?;
            if let Some(stats) = &obj.source_stats {
                model.update_running_stats(&mut params, stats, src_labels.len());
            }

            sup_sum += obj.report.loss_sup;
            for (slot, &branch) in model.branches().iter().enumerate() {
                if let Some(&r) = obj.report.loss_reg.get(slot) {
                    reg_sum[usize::from(branch == Branch::Topo)] += r;
                }
            }
            // Filtering statistics follow the first branch only.
            for sets in obj.report.neighbor_sets.iter().take(1) {
                seen += sets.len();
                for s in sets.iter().filter(|s| s.confidence > config.confidence_threshold) {
                    confident += 1;
                    if target_labels.is_some_and(|l| l[idx.target[s.target_index]] == s.pseudo_label) {
                        correct += 1;
                    }
                }
            }
        }
        let n = batches.len().max(1) as f64;
        let target_acc = match target_labels {
            Some(l) => Some(accuracy(&model, &params, target.graphs(), tgt_images.as_deref(), l)?),
            None => None,
        };
        metrics.push(EpochMetrics {
            epoch,
            loss_sup: sup_sum / n,
            loss_reg_conv: reg_sum[0] / n,
            loss_reg_topo: reg_sum[1] / n,
            filtered_fraction: if seen == 0 { 0.0 } else { confident as f64 / seen as f64 },
            pseudo_acc: (target_labels.is_some() && confident > 0).then(|| correct as f64 / confident as f64),
            target_acc,
        });
        if let Some(acc) = target_acc {
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, epoch, params.clone()));
            } else if epoch - best.as_ref().map_or(0, |b| b.1) >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let best_epoch = if stopped_early {
        let (_, epoch, snapshot) = best.expect("stopping requires a best epoch");
        params = snapshot;
        Some(epoch)
    } else {
        None
    };
    Ok(TrainOutcome {
        model,
        params,
        metrics,
        best_epoch,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_io::DomainRole;
    use crate::tensor::TtlLayer;

    /// Two classes: triangles-with-tails (label 1) versus paths (label 0).
    fn toy(n: usize, offset: usize, role: DomainRole) -> DomainDataset {
        let graphs = (0..n)
            .map(|i| {
                let len = 4 + (i + offset) % 3;
                let mut edges: Vec<(usize, usize)> = (0..len - 1).map(|v| (v, v + 1)).collect();
                let label = i % 2;
                if label == 1 {
                    edges.push((0, 2));
                }
                AttributedGraph::with_constant_features(len, edges, Some(label)).unwrap()
            })
            .collect();
        DomainDataset {
            name: "toy".into(),
            role,
            class_count: 2,
            graphs,
            label_values: vec![0, 1],
            node_label_values: None,
        }
    }

    fn small_model() -> ModelConfig {
        let mut c = ModelConfig::default();
        c.hidden = 8;
        c.topo.topology.resolution = 8;
        c.topo.ttl.layers = vec![TtlLayer::tucker(&[2, 2, 2]), TtlLayer::tucker(&[2, 2])];
        c
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            max_epochs: 3,
            ..Default::default()
        }
    }

    #[test]
    fn identical_seeds_give_identical_logs() {
        let (s, t) = (toy(10, 0, DomainRole::Source), toy(6, 1, DomainRole::Target));
        let tl = t.labels().unwrap();
        let run = || train(&small_model(), &cfg(), &s, &t.strip_labels(), Some(&tl)).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(serde_json::to_string(&a.metrics).unwrap(), serde_json::to_string(&b.metrics).unwrap());
        assert_eq!(a.metrics.len(), 3);
    }

    #[test]
    fn disabled_propagation_ignores_target_set() {
        let s = toy(10, 0, DomainRole::Source);
        let config = TrainConfig {
            disable_lp: true,
            ..cfg()
        };
        let a = train(&small_model(), &config, &s, &toy(6, 1, DomainRole::Target).strip_labels(), None).unwrap();
        let b = train(&small_model(), &config, &s, &toy(9, 2, DomainRole::Target).strip_labels(), None).unwrap();
        for id in a.params.ids() {
            assert_eq!(a.params.value(id), b.params.value(id), "{}", a.params.name(id));
        }
    }

    #[test]
    fn ablations_choose_branches() {
        let mut c = TrainConfig::default();
        assert_eq!(c.branches().unwrap(), vec![Branch::Conv, Branch::Topo]);
        c.disable_topo = true;
        assert_eq!(c.branches().unwrap(), vec![Branch::Conv]);
        c.disable_conv = true;
        assert!(c.validate().is_err());
        let gin = TrainConfig {
            encoder: EncoderKind::Gin,
            ..Default::default()
        };
        assert_eq!(gin.branches().unwrap(), vec![Branch::Gin]);
    }

    #[test]
    fn threshold_above_one_rejected_by_config() {
        let c = TrainConfig {
            confidence_threshold: 1.5,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn constant_classifier_scores_majority_fraction() {
        let (model, mut params) = Model::new(&small_model(), &[Branch::Conv], 1, 2, 0).unwrap();
        // Zero the head and favour class 0 through its bias.
        for id in params.clone().ids() {
            if params.name(id).starts_with("mlp.fc2") {
                params.value_mut(id).data_mut().fill(0.0);
            }
        }
        let b = params.id("mlp.fc2.b").unwrap();
        params.value_mut(b).data_mut()[0] = 1.0;
        let mut d = toy(9, 0, DomainRole::Target);
        for (i, g) in d.graphs.iter_mut().enumerate() {
            g.set_label(Some(usize::from(i % 3 == 2)));
        }
        let acc = evaluate(&model, &params, &d).unwrap();
        assert!((acc - 6.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn gin_training_runs() {
        let (s, t) = (toy(8, 0, DomainRole::Source), toy(8, 1, DomainRole::Target));
        let config = TrainConfig {
            encoder: EncoderKind::Gin,
            ..cfg()
        };
        let out = train(&small_model(), &config, &s, &t.strip_labels(), None).unwrap();
        assert!(out.metrics.iter().all(|m| m.loss_reg_topo == 0.0 && m.target_acc.is_none()));
    }
}
