use std::sync::Arc;

use crate::autodiff::CsrMatrix;
use crate::error::{Error, Result};
use crate::graph_io::AttributedGraph;
use crate::tensor::DenseTensor;

/// Symmetrically normalized adjacency with self-loops,
/// `D^-1/2 (A + I) D^-1/2`, as `(row, col, value)` triplets.
fn normalized_triplets(graph: &AttributedGraph, offset: usize) -> Vec<(usize, usize, f64)> {
    let deg: Vec<f64> = graph.degrees().iter().map(|&d| (d + 1) as f64).collect();
    let mut t: Vec<_> = (0..graph.node_count())
        .map(|v| (offset + v, offset + v, 1.0 / deg[v]))
        .collect();
    for &(u, v) in graph.edges() {
        let w = 1.0 / (deg[u] * deg[v]).sqrt();
        t.push((offset + u, offset + v, w));
        t.push((offset + v, offset + u, w));
    }
    t
}

pub fn normalized_adjacency(graph: &AttributedGraph) -> CsrMatrix {
    let n = graph.node_count();
    CsrMatrix::from_triplets(n, n, normalized_triplets(graph, 0)).expect("indices within the graph")
}

/// Several graphs packed block-diagonally so one pass encodes them all.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    size: usize,
    pub(crate) features: DenseTensor,
    pub(crate) norm_adj: Arc<CsrMatrix>,
    pub(crate) adj: Arc<CsrMatrix>,
    pub(crate) mean_pool: Arc<CsrMatrix>,
    pub(crate) sum_pool: Arc<CsrMatrix>,
    /// `(B, K, Q, P, P)` persistence-image tensors when the batch feeds a
    /// topological branch.
    pub(crate) pi: Option<DenseTensor>,
}

impl GraphBatch {
    /// Packs `graphs`, checking that every graph has `feature_dim` features.
    /// `pis` must be given (one tensor per graph) for the topological branch.
    pub fn new(graphs: &[&AttributedGraph], pis: Option<&[&DenseTensor]>, feature_dim: usize) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::Size("cannot batch zero graphs".into()));
        }
        let total: usize = graphs.iter().map(|g| g.node_count()).sum();
        let mut features = Vec::with_capacity(total * feature_dim);
        let mut norm = Vec::new();
        let mut raw = Vec::new();
        let mut mean = Vec::with_capacity(total);
        let mut sum = Vec::with_capacity(total);
        let mut offset = 0;
        for (b, g) in graphs.iter().enumerate() {
            if g.feature_dim() != feature_dim {
                return Err(Error::shape(format!(
                    "graph has {} node features, model expects {feature_dim}",
                    g.feature_dim()
                )));
            }
            features.extend_from_slice(g.features());
            norm.extend(normalized_triplets(g, offset));
            for &(u, v) in g.edges() {
                raw.push((offset + u, offset + v, 1.0));
                raw.push((offset + v, offset + u, 1.0));
            }
            let n = g.node_count();
            for v in 0..n {
                mean.push((b, offset + v, 1.0 / n as f64));
                sum.push((b, offset + v, 1.0));
            }
            offset += n;
        }
        let pi = match pis {
            None => None,
            Some(p) => {
                if p.len() != graphs.len() {
                    return Err(Error::shape(format!("{} graphs but {} image tensors", graphs.len(), p.len())));
                }
                let shape = p[0].shape().to_vec();
                if let Some(bad) = p.iter().find(|t| t.shape() != shape) {
                    return Err(Error::shape(format!("image tensors differ in shape: {shape:?} vs {:?}", bad.shape())));
                }
                let data = p.iter().flat_map(|t| t.data().iter().copied()).collect();
                Some(DenseTensor::from_vec([&[p.len()][..], &shape].concat(), data)?)
            }
        };
        let b = graphs.len();
        Ok(Self {
            size: b,
            features: DenseTensor::from_vec(vec![total, feature_dim], features)?,
            norm_adj: Arc::new(CsrMatrix::from_triplets(total, total, norm)?),
            adj: Arc::new(CsrMatrix::from_triplets(total, total, raw)?),
            mean_pool: Arc::new(CsrMatrix::from_triplets(b, total, mean)?),
            sum_pool: Arc::new(CsrMatrix::from_triplets(b, total, sum)?),
            pi,
        })
    }

    /// Number of graphs.
    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn node_count(&self) -> usize {
        self.features.shape()[0]
    }
}
