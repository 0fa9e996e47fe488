use serde::{Deserialize, Serialize};

use super::filtration::Filtration;
use crate::error::{Error, Result};
use crate::graph_io::AttributedGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceDiagram {
    pub dimension: u8,
    /// `(birth, death)` pairs sorted ascending; `death >= birth`.
    pub points: Vec<(f64, f64)>,
}

impl PersistenceDiagram {
    pub fn empty(dimension: u8) -> Self {
        Self {
            dimension,
            points: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn sorted(dimension: u8, mut points: Vec<(f64, f64)>) -> Self {
        points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        Self { dimension, points }
    }
}

struct Components {
    parent: Vec<usize>,
    /// Oldest vertex of the component rooted here.
    elder: Vec<usize>,
}

impl Components {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            elder: (0..n).collect(),
        }
    }

    fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] != v {
            self.parent[v] = self.parent[self.parent[v]];
            v = self.parent[v];
        }
        v
    }
}

/// Sublevel-set persistence of the graph viewed as a 1-dimensional complex.
///
/// Vertex `v` enters at `f(v)`, edge `(u, v)` at `max(f(u), f(v))`. Merges
/// follow the elder rule: the component whose oldest vertex has the smaller
/// value survives, equal values resolved by the smaller vertex index.
/// Essential classes (surviving components and every cycle, since there are
/// no 2-cells) die at the maximum filtration value.
pub fn sublevel_persistence(
    graph: &AttributedGraph,
    filtration: &Filtration,
) -> Result<(PersistenceDiagram, PersistenceDiagram)> {
    let f = &filtration.values;
    let n = graph.node_count();
    if f.len() != n {
        return Err(Error::contract(format!(
            "filtration has {} values for {n} nodes",
            f.len()
        )));
    }
    if let Some(bad) = f.iter().position(|v| !v.is_finite()) {
        return Err(Error::contract(format!("filtration value at node {bad} is not finite")));
    }
    let cap = filtration.max();
    let mut edges: Vec<(f64, usize, usize)> = graph
        .edges()
        .iter()
        .map(|&(u, v)| (f[u].max(f[v]), u, v))
        .collect();
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let older = |a: usize, b: usize| f[a] < f[b] || (f[a] == f[b] && a < b);
    let mut uf = Components::new(n);
    let mut h0 = Vec::with_capacity(n);
    let mut h1 = Vec::new();
    for (value, u, v) in edges {
        let (ru, rv) = (uf.find(u), uf.find(v));
        if ru == rv {
            h1.push((value, cap));
            continue;
        }
        let (survivor, victim) = if older(uf.elder[ru], uf.elder[rv]) {
            (ru, rv)
        } else {
            (rv, ru)
        };
        h0.push((f[uf.elder[victim]], value));
        uf.parent[victim] = survivor;
    }
    for v in 0..n {
        if uf.find(v) == v {
            h0.push((f[uf.elder[v]], cap));
        }
    }
    Ok((
        PersistenceDiagram::sorted(0, h0),
        PersistenceDiagram::sorted(1, h1),
    ))
}

pub fn sublevel_persistence_h0(graph: &AttributedGraph, filtration: &Filtration) -> Result<PersistenceDiagram> {
    sublevel_persistence(graph, filtration).map(|(h0, _)| h0)
}

pub fn sublevel_persistence_h1(graph: &AttributedGraph, filtration: &Filtration) -> Result<PersistenceDiagram> {
    sublevel_persistence(graph, filtration).map(|(_, h1)| h1)
}
