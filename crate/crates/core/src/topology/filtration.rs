use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_io::AttributedGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FiltrationKind {
    Degree,
    Betweenness,
    Eigenvector,
    Closeness,
}

impl FiltrationKind {
    /// The four centralities in their canonical channel order.
    pub const ALL: [FiltrationKind; 4] = [
        FiltrationKind::Degree,
        FiltrationKind::Betweenness,
        FiltrationKind::Eigenvector,
        FiltrationKind::Closeness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FiltrationKind::Degree => "degree",
            FiltrationKind::Betweenness => "betweenness",
            FiltrationKind::Eigenvector => "eigenvector",
            FiltrationKind::Closeness => "closeness",
        }
    }
}

impl fmt::Display for FiltrationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FiltrationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FiltrationKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown filtration {s:?}")))
    }
}

/// Per-node filtration values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filtration {
    pub kind: FiltrationKind,
    pub values: Vec<f64>,
}

impl Filtration {
    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn compute_filtration(graph: &AttributedGraph, kind: FiltrationKind) -> Filtration {
    let values = match kind {
        FiltrationKind::Degree => graph.degrees().into_iter().map(|d| d as f64).collect(),
        FiltrationKind::Betweenness => betweenness(graph),
        FiltrationKind::Eigenvector => eigenvector(graph),
        FiltrationKind::Closeness => closeness(graph),
    };
    Filtration { kind, values }
}

/// Brandes' algorithm, unnormalized; each unordered pair counted once.
fn betweenness(graph: &AttributedGraph) -> Vec<f64> {
    let n = graph.node_count();
    let adj = graph.adjacency_lists();
    let mut centrality = vec![0.0; n];
    let mut sigma = vec![0.0f64; n];
    let mut dist = vec![-1i64; n];
    let mut delta = vec![0.0; n];
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut stack = Vec::with_capacity(n);
    let mut queue = VecDeque::with_capacity(n);
    for s in 0..n {
        for v in 0..n {
            preds[v].clear();
            sigma[v] = 0.0;
            dist[v] = -1;
            delta[v] = 0.0;
        }
        sigma[s] = 1.0;
        dist[s] = 0;
        queue.push_back(s);
        while let Some(v) = queue.pop_front() {
            stack.push(v);
            for &w in &adj[v] {
                if dist[w] < 0 {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        while let Some(w) = stack.pop() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                centrality[w] += delta[w];
            }
        }
    }
    centrality.iter_mut().for_each(|c| *c /= 2.0);
    centrality
}

/// `(n_c - 1) / sum of distances`, where `n_c` is the size of the node's
/// connected component; zero for isolated nodes.
fn closeness(graph: &AttributedGraph) -> Vec<f64> {
    let n = graph.node_count();
    let adj = graph.adjacency_lists();
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    (0..n)
        .map(|s| {
            dist.iter_mut().for_each(|d| *d = usize::MAX);
            dist[s] = 0;
            queue.push_back(s);
            let (mut reached, mut total) = (0usize, 0usize);
            while let Some(v) = queue.pop_front() {
                reached += 1;
                total += dist[v];
                for &w in &adj[v] {
                    if dist[w] == usize::MAX {
                        dist[w] = dist[v] + 1;
                        queue.push_back(w);
                    }
                }
            }
            if total == 0 {
                0.0
            } else {
                (reached - 1) as f64 / total as f64
            }
        })
        .collect()
}

/// Principal eigenvector of `A + I` by power iteration from the all-ones
/// vector, L2-normalized. The shift keeps the iteration from oscillating on
/// bipartite graphs.
fn eigenvector(graph: &AttributedGraph) -> Vec<f64> {
    const MAX_ITER: usize = 10_000;
    const TOL: f64 = 1e-13;
    let n = graph.node_count();
    let adj = graph.adjacency_lists();
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut next = vec![0.0; n];
    for _ in 0..MAX_ITER {
        for v in 0..n {
            next[v] = x[v] + adj[v].iter().map(|&w| x[w]).sum::<f64>();
        }
        let norm = next.iter().map(|a| a * a).sum::<f64>().sqrt();
        next.iter_mut().for_each(|a| *a /= norm);
        let change: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut next);
        if change < TOL {
            break;
        }
    }
    x
}
