use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{AttributedGraph, DomainDataset, UnlabeledGraphs};
use crate::error::{Error, Result};

/// Positions of one paired mini-batch inside the source and target domains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexBatch {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// A paired mini-batch: labeled source graphs and unlabeled target graphs.
#[derive(Debug, Clone)]
pub struct DomainBatch<'a> {
    pub source: Vec<(&'a AttributedGraph, usize)>,
    pub target: Vec<&'a AttributedGraph>,
}

impl<'a> DomainBatch<'a> {
    pub fn gather(
        source: &'a DomainDataset,
        source_labels: &[usize],
        target: &'a UnlabeledGraphs,
        idx: &IndexBatch,
    ) -> Self {
        Self {
            source: idx
                .source
                .iter()
                .map(|&i| (&source.graphs[i], source_labels[i]))
                .collect(),
            target: idx.target.iter().map(|&j| &target.graphs()[j]).collect(),
        }
    }
}

/// Endless shuffled index stream over one domain.
#[derive(Debug, Clone)]
struct Cycler {
    len: usize,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Cycler {
    fn new(len: usize, rng: ChaCha8Rng) -> Self {
        Self {
            len,
            order: Vec::new(),
            pos: 0,
            rng,
        }
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.len).collect();
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    fn take(&mut self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.order.len() {
                self.reshuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Produces seeded, paired mini-batches epoch by epoch.
///
/// Each domain has its own random stream, so the source order does not
/// depend on the target domain at all. An epoch ends when the larger domain
/// has been traversed once; the smaller domain cycles, reshuffling whenever
/// it runs out. A trailing batch with fewer than two graphs is dropped.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    batch_size: usize,
    source_len: usize,
    target_len: usize,
    source: Cycler,
    target: Cycler,
}

impl BatchSampler {
    pub fn new(source_len: usize, target_len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size < 2 {
            return Err(Error::Size(format!("batch size must be at least 2, got {batch_size}")));
        }
        if source_len == 0 || target_len == 0 {
            return Err(Error::Size("both domains must be non-empty".into()));
        }
        let stream = |id: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            rng
        };
        Ok(Self {
            batch_size,
            source_len,
            target_len,
            source: Cycler::new(source_len, stream(1)),
            target: Cycler::new(target_len, stream(2)),
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Number of batches every epoch yields.
    pub fn batches_per_epoch(&self) -> usize {
        let longest = self.source_len.max(self.target_len);
        let full = longest / self.batch_size;
        full + usize::from(longest % self.batch_size >= 2)
    }

    pub fn next_epoch(&mut self) -> Vec<IndexBatch> {
        let longest = self.source_len.max(self.target_len);
        let source_leads = self.source_len >= self.target_len;
        // The leading domain starts a fresh permutation every epoch.
        if source_leads {
            self.source.reshuffle();
        } else {
            self.target.reshuffle();
        }
        let mut batches = Vec::with_capacity(self.batches_per_epoch());
        let mut consumed = 0;
        while consumed < longest {
            let size = self.batch_size.min(longest - consumed);
            if size < 2 {
                break;
            }
            consumed += size;
            let s = self.source.take(size.min(self.source_len));
            let t = self.target.take(size.min(self.target_len));
            batches.push(IndexBatch { source: s, target: t });
        }
        batches
    }
}
