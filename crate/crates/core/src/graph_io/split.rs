use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{DomainDataset, DomainRole};
use crate::error::{Error, Result};

/// Splits a dataset into four contiguous edge-density quartiles `M0..M3`,
/// lowest density first. Sizes differ by at most one (the first blocks take
/// the remainder); ties keep the original dataset order.
pub fn split_by_edge_density(dataset: &DomainDataset) -> Result<[DomainDataset; 4]> {
    let n = dataset.len();
    if n < 4 {
        return Err(Error::Size(format!(
            "edge-density quartiles need at least 4 graphs, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    // `sort_by` is stable, so equal densities stay in index order.
    order.sort_by(|&a, &b| {
        dataset.graphs[a]
            .edge_density()
            .total_cmp(&dataset.graphs[b].edge_density())
    });
    let sizes = quartile_sizes(n);
    let mut start = 0;
    let parts = std::array::from_fn(|q| {
        let block = &order[start..start + sizes[q]];
        start += sizes[q];
        dataset.subset(format!("{}_M{q}", dataset.name), dataset.role, block)
    });
    Ok(parts)
}

pub(crate) fn quartile_sizes(n: usize) -> [usize; 4] {
    std::array::from_fn(|q| n / 4 + usize::from(q < n % 4))
}

/// Class counts realized by a subpopulation-shift split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftAllocation {
    /// `[negative, positive]` counts in the source domain.
    pub source: [usize; 2],
    /// `[negative, positive]` counts in the target domain.
    pub target: [usize; 2],
    /// `[negative, positive]` graphs left out of both domains.
    pub unused: [usize; 2],
}

impl ShiftAllocation {
    /// Largest `k` with source `(k, 2k)` and target `(2k, k)` fitting in the
    /// available class counts.
    pub fn for_counts(negatives: usize, positives: usize) -> Self {
        let k = negatives.min(positives) / 3;
        Self {
            source: [k, 2 * k],
            target: [2 * k, k],
            unused: [negatives - 3 * k, positives - 3 * k],
        }
    }
}

#[derive(Debug, Clone)]
pub struct SubpopulationSplit {
    pub source: DomainDataset,
    pub target: DomainDataset,
    pub allocation: ShiftAllocation,
}

/// Binary subpopulation-shift split: negative:positive is 1:2 in the source
/// and 2:1 in the target. Which graphs of each class go where is a
/// deterministic function of `seed`.
pub fn split_subpopulation_shift(dataset: &DomainDataset, seed: u64) -> Result<SubpopulationSplit> {
    if dataset.class_count != 2 {
        return Err(Error::Unsupported(format!(
            "subpopulation shift needs a binary dataset, {} has {} classes",
            dataset.name, dataset.class_count
        )));
    }
    let labels = dataset.labels()?;
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let allocation = ShiftAllocation::for_counts(by_class[0].len(), by_class[1].len());
    if allocation.source[0] == 0 {
        return Err(Error::Size(format!(
            "{} has too few graphs of one class for a 1:2 / 2:1 split",
            dataset.name
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut source_idx = Vec::new();
    let mut target_idx = Vec::new();
    for (class, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        let s = allocation.source[class];
        let t = allocation.target[class];
        source_idx.extend_from_slice(&members[..s]);
        target_idx.extend_from_slice(&members[s..s + t]);
    }
    source_idx.sort_unstable();
    target_idx.sort_unstable();
    Ok(SubpopulationSplit {
        source: dataset.subset(format!("{}_shift_source", dataset.name), DomainRole::Source, &source_idx),
        target: dataset.subset(format!("{}_shift_target", dataset.name), DomainRole::Target, &target_idx),
        allocation,
    })
}
