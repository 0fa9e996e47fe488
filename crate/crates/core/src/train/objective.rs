use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{CsrMatrix, ParamStore, Tape, Var};
use crate::encoders::{argmax_rows, MlpMode, Model};
use crate::error::Result;
use crate::tensor::DenseTensor;

/// Source positions in the batch that share a target sample's pseudo-label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborSet {
    pub target_index: usize,
    pub source_indices: Vec<usize>,
    pub pseudo_label: usize,
    pub confidence: f64,
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &DenseTensor) -> DenseTensor {
    let c = logits.shape()[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    out
}

/// Pseudo-labels each target row (argmax, lowest class on ties) and
/// collects the batch's source positions carrying that label.
pub fn pseudo_label(target_logits: &DenseTensor, source_labels: &[usize]) -> Vec<NeighborSet> {
    let probs = softmax_rows(target_logits);
    let c = probs.shape()[1];
    argmax_rows(&probs)
        .into_iter()
        .enumerate()
        .map(|(j, y)| NeighborSet {
            target_index: j,
            source_indices: (0..source_labels.len()).filter(|&i| source_labels[i] == y).collect(),
            pseudo_label: y,
            confidence: probs.data()[j * c + y],
        })
        .collect()
}

/// Consistency term for one branch and how many targets contributed.
#[derive(Debug, Clone, Copy)]
pub struct RegTerm {
    pub loss: Var,
    pub used: usize,
}

/// Cross-entropy between each confident pseudo-label and the classifier's
/// prediction on the mean of its neighbours' source representations,
/// summed and divided by the full target batch size.
///
/// Targets at or below `threshold`, or with no neighbours, contribute
/// nothing. The averaged rows pass through the head together with the
/// plain source rows so batch normalization sees a proper batch; the
/// source rows carry zero loss weight.
#[allow(clippy::too_many_arguments)]
pub fn consistency_reg(
    tape: &mut Tape,
    model: &Model,
    store: &ParamStore,
    sets: &[NeighborSet],
    source_reps: Var,
    threshold: f64,
    target_batch_size: usize,
    mode: MlpMode<'_>,
) -> Result<RegTerm> {
    let chosen: Vec<&NeighborSet> = sets
        .iter()
        .filter(|s| s.confidence > threshold && !s.source_indices.is_empty())
        .collect();
    if chosen.is_empty() {
        return Ok(RegTerm {
            loss: tape.constant(DenseTensor::scalar(0.0)),
            used: 0,
        });
    }
    let bs = tape.shape(source_reps)[0];
    let mut triplets: Vec<(usize, usize, f64)> = (0..bs).map(|i| (i, i, 1.0)).collect();
    for (e, s) in chosen.iter().enumerate() {
        let w = 1.0 / s.source_indices.len() as f64;
        triplets.extend(s.source_indices.iter().map(|&i| (bs + e, i, w)));
    }
    let averaging = Arc::new(CsrMatrix::from_triplets(bs + chosen.len(), bs, triplets)?);
    let rows = tape.spmm(averaging, source_reps)?;
    let (logits, _) = model.classify(tape, store, rows, mode)?;
    let mut labels = vec![0; bs];
    labels.extend(chosen.iter().map(|s| s.pseudo_label));
    let mut weights = vec![0.0; bs];
    weights.extend(std::iter::repeat_n(1.0, chosen.len()));
    let loss = tape.softmax_cross_entropy(logits, &labels, &weights, target_batch_size as f64)?;
    Ok(RegTerm {
        loss,
        used: chosen.len(),
    })
}

/// Mean softmax cross-entropy over the source batch.
pub fn supervised_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    tape.softmax_cross_entropy(logits, labels, &vec![1.0; labels.len()], labels.len() as f64)
}

/// Unweighted sum of the enabled loss terms.
pub fn total_loss(tape: &mut Tape, sup: Option<Var>, regs: &[Var]) -> Result<Var> {
    let mut terms = sup.into_iter().chain(regs.iter().copied());
    let Some(first) = terms.next() else {
        return Ok(tape.constant(DenseTensor::scalar(0.0)));
    };
    terms.try_fold(first, |acc, t| tape.add(acc, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{Branch, ModelConfig};

    #[test]
    fn neighbours_share_the_pseudo_label() {
        let logits = DenseTensor::from_vec(vec![2, 2], vec![0.0, 3.0, 1.0, 1.0]).unwrap();
        let sets = pseudo_label(&logits, &[0, 1, 1]);
        assert_eq!(sets[0].pseudo_label, 1);
        assert_eq!(sets[0].source_indices, vec![1, 2]);
        // Tie: lower class wins, with confidence one half.
        assert_eq!(sets[1].pseudo_label, 0);
        assert_eq!(sets[1].source_indices, vec![0]);
        assert_eq!(sets[1].confidence, 0.5);
    }

    #[test]
    fn missing_class_gives_empty_neighbour_set() {
        let logits = DenseTensor::from_vec(vec![1, 2], vec![2.0, 0.0]).unwrap();
        assert!(pseudo_label(&logits, &[1, 1])[0].source_indices.is_empty());
    }

    fn head_only_model() -> (Model, ParamStore) {
        let cfg = ModelConfig {
            hidden: 2,
            dropout: 0.0,
            ..Default::default()
        };
        Model::new(&cfg, &[Branch::Conv], 1, 2, 0).unwrap()
    }

    fn set(label: usize, conf: f64, sources: Vec<usize>) -> NeighborSet {
        NeighborSet {
            target_index: 0,
            source_indices: sources,
            pseudo_label: label,
            confidence: conf,
        }
    }

    #[test]
    fn unconfident_targets_contribute_nothing() {
        let (model, store) = head_only_model();
        let mut t = Tape::new();
        let reps = t.constant(DenseTensor::filled(&[2, 2], 1.0));
        let sets = [set(0, 0.8, vec![0]), set(1, 0.6, vec![1])];
        let reg = consistency_reg(&mut t, &model, &store, &sets, reps, 0.8, 2, MlpMode::Eval).unwrap();
        assert_eq!(t.value(reg.loss).data(), &[0.0]);
        assert_eq!(reg.used, 0);
    }

    #[test]
    fn uniform_prediction_costs_ln_two_over_batch() {
        let (model, mut store) = head_only_model();
        for id in store.clone().ids() {
            if store.name(id).starts_with("mlp.fc2") {
                store.value_mut(id).data_mut().fill(0.0);
            }
        }
        let mut t = Tape::new();
        let reps = t.constant(DenseTensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let sets = [set(1, 0.9, vec![1]), set(0, 0.3, vec![0]), set(0, 0.95, vec![])];
        let reg = consistency_reg(&mut t, &model, &store, &sets, reps, 0.8, 4, MlpMode::Eval).unwrap();
        assert_eq!(reg.used, 1);
        assert!((t.value(reg.loss).data()[0] - std::f64::consts::LN_2 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn total_is_plain_sum() {
        let mut t = Tape::new();
        let a = t.constant(DenseTensor::scalar(0.5));
        let b = t.constant(DenseTensor::scalar(0.25));
        let c = t.constant(DenseTensor::scalar(2.0));
        let all = total_loss(&mut t, Some(a), &[b, c]).unwrap();
        assert_eq!(t.value(all).data(), &[2.75]);
        let no_sup = total_loss(&mut t, None, &[b, c]).unwrap();
        assert_eq!(t.value(no_sup).data(), &[2.25]);
        let zero_regs = t.constant(DenseTensor::scalar(0.0));
        let only_sup = total_loss(&mut t, Some(a), &[zero_regs]).unwrap();
        assert_eq!(t.value(only_sup).data(), &[0.5]);
    }

    #[test]
    fn supervised_loss_of_single_sample() {
        let mut t = Tape::new();
        let z = t.constant(DenseTensor::from_vec(vec![1, 2], vec![2.0, 0.0]).unwrap());
        let l = supervised_loss(&mut t, z, &[1]).unwrap();
        let expected = (1.0 + 2f64.exp()).ln();
        assert!((t.value(l).data()[0] - expected).abs() < 1e-14);
        assert!(supervised_loss(&mut t, z, &[2]).is_err());
    }
}
