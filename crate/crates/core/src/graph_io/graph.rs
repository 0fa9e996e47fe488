use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An undirected graph with a dense node-feature matrix and an optional
/// graph-level class label.
///
/// Edges are stored once, as `(u, v)` with `u < v`, sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributedGraph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    feature_dim: usize,
    features: Vec<f64>,
    label: Option<usize>,
}

impl AttributedGraph {
    /// Builds a graph, normalizing edge orientation and rejecting self-loops,
    /// duplicates and out-of-range endpoints.
    pub fn new(
        node_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        feature_dim: usize,
        features: Vec<f64>,
        label: Option<usize>,
    ) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::contract("graph must have at least one node"));
        }
        if features.len() != node_count * feature_dim {
            return Err(Error::shape(format!(
                "feature matrix has {} values, expected {node_count}x{feature_dim}",
                features.len()
            )));
        }
        let mut normalized = Vec::new();
        for (u, v) in edges {
            if u >= node_count || v >= node_count {
                return Err(Error::contract(format!(
                    "edge ({u}, {v}) out of range for {node_count} nodes"
                )));
            }
            if u == v {
                return Err(Error::contract(format!("self-loop on node {u}")));
            }
            normalized.push((u.min(v), u.max(v)));
        }
        normalized.sort_unstable();
        let before = normalized.len();
        normalized.dedup();
        if normalized.len() != before {
            return Err(Error::contract("duplicate edge"));
        }
        Ok(Self {
            node_count,
            edges: normalized,
            feature_dim,
            features,
            label,
        })
    }

    /// Graph with a single constant-1 feature column.
    pub fn with_constant_features(
        node_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        label: Option<usize>,
    ) -> Result<Self> {
        Self::new(node_count, edges, 1, vec![1.0; node_count], label)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Row-major `N x F` feature matrix.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn without_label(&self) -> Self {
        Self {
            label: None,
            ..self.clone()
        }
    }

    #[cfg(test)]
    pub(crate) fn set_label(&mut self, label: Option<usize>) {
        self.label = label;
    }

    pub(crate) fn replace_features(&mut self, feature_dim: usize, features: Vec<f64>) {
        debug_assert_eq!(features.len(), self.node_count * feature_dim);
        self.feature_dim = feature_dim;
        self.features = features;
    }

    /// Neighbor lists, each sorted ascending.
    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.node_count];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Undirected edge density `|E| / (N (N - 1) / 2)`; zero for a single node.
    pub fn edge_density(&self) -> f64 {
        let n = self.node_count as f64;
        if self.node_count < 2 {
            return 0.0;
        }
        self.edges.len() as f64 / (n * (n - 1.0) / 2.0)
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permute_nodes(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.node_count {
            return Err(Error::shape("permutation length must equal node count"));
        }
        let f = self.feature_dim;
        let mut features = vec![0.0; self.features.len()];
        for (old, &new) in perm.iter().enumerate() {
            features[new * f..(new + 1) * f]
                .copy_from_slice(&self.features[old * f..(old + 1) * f]);
        }
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v]));
        Self::new(self.node_count, edges, f, features, self.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainRole {
    Source,
    Target,
}

/// A collection of graphs sharing one feature space and one label space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainDataset {
    pub name: String,
    pub role: DomainRole,
    pub class_count: usize,
    pub graphs: Vec<AttributedGraph>,
    /// Raw graph label for each class index, ascending.
    pub label_values: Vec<i64>,
    /// Raw node label for each one-hot feature column, when features are
    /// node-label one-hots.
    pub node_label_values: Option<Vec<i64>>,
}

impl DomainDataset {
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs.first().map_or(0, AttributedGraph::feature_dim)
    }

    /// Labels of every graph; fails if any graph is unlabeled.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.graphs
            .iter()
            .enumerate()
            .map(|(i, g)| {
                g.label()
                    .ok_or_else(|| Error::contract(format!("graph {i} of {} has no label", self.name)))
            })
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for g in &self.graphs {
            if let Some(y) = g.label() {
                counts[y] += 1;
            }
        }
        counts
    }

    /// Sub-dataset made of the graphs at `indices`, in that order.
    pub fn subset(&self, name: impl Into<String>, role: DomainRole, indices: &[usize]) -> Self {
        Self {
            name: name.into(),
            role,
            class_count: self.class_count,
            graphs: indices.iter().map(|&i| self.graphs[i].clone()).collect(),
            label_values: self.label_values.clone(),
            node_label_values: self.node_label_values.clone(),
        }
    }

    pub fn with_role(mut self, role: DomainRole) -> Self {
        self.role = role;
        self
    }

    /// The unlabeled view handed to training for a target domain.
    pub fn strip_labels(&self) -> UnlabeledGraphs {
        UnlabeledGraphs {
            name: self.name.clone(),
            graphs: self.graphs.iter().map(AttributedGraph::without_label).collect(),
        }
    }

    pub(crate) fn check_invariants(&self) -> Result<()> {
        let f = self.feature_dim();
        for (i, g) in self.graphs.iter().enumerate() {
            if g.feature_dim() != f {
                return Err(Error::shape(format!(
                    "graph {i} has feature width {}, collection uses {f}",
                    g.feature_dim()
                )));
            }
            if let Some(y) = g.label() {
                if y >= self.class_count {
                    return Err(Error::contract(format!(
                        "graph {i} label {y} outside 0..{}",
                        self.class_count
                    )));
                }
            } else if self.role == DomainRole::Source {
                return Err(Error::contract(format!("source graph {i} has no label")));
            }
        }
        Ok(())
    }
}

/// Target-domain graphs with their labels removed. Training only ever sees
/// this type, so quarantined labels cannot reach the optimization path.
#[derive(Debug, Clone)]
pub struct UnlabeledGraphs {
    pub name: String,
    graphs: Vec<AttributedGraph>,
}

impl UnlabeledGraphs {
    pub fn graphs(&self) -> &[AttributedGraph] {
        &self.graphs
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }
}

/// One-hot re-encoding of two datasets over the union of their node-label
/// vocabularies, so source and target share a feature width.
pub fn align_node_features(a: &mut DomainDataset, b: &mut DomainDataset) -> Result<()> {
    let (Some(va), Some(vb)) = (a.node_label_values.clone(), b.node_label_values.clone()) else {
        if a.feature_dim() == b.feature_dim() {
            return Ok(());
        }
        return Err(Error::shape(format!(
            "cannot align feature widths {} and {} without node labels",
            a.feature_dim(),
            b.feature_dim()
        )));
    };
    let mut union: Vec<i64> = va.iter().chain(vb.iter()).copied().collect();
    union.sort_unstable();
    union.dedup();
    for (ds, vocab) in [(a, va), (b, vb)] {
        let remap: Vec<usize> = vocab
            .iter()
            .map(|v| union.binary_search(v).expect("vocab is a subset of the union"))
            .collect();
        let width = union.len();
        for g in &mut ds.graphs {
            let old_f = g.feature_dim();
            let mut feats = vec![0.0; g.node_count() * width];
            for node in 0..g.node_count() {
                let row = &g.features()[node * old_f..(node + 1) * old_f];
                for (col, &x) in row.iter().enumerate() {
                    feats[node * width + remap[col]] = x;
                }
            }
            g.replace_features(width, feats);
        }
        ds.node_label_values = Some(union.clone());
    }
    Ok(())
}
