//! Vertex filtrations, sublevel-set persistence and persistence images.
//!
//! [`build_pi_tensor`] turns a graph into the `K x Q x P x P` stack of
//! persistence images consumed by the topological encoder branch. The tensor
//! depends only on graph structure, never on node features or parameters.

mod filtration;
mod image;
mod persistence;

pub use filtration::{compute_filtration, Filtration, FiltrationKind};
pub use image::{persistence_image, ImageParams, PersistenceImage, WeightKind, Window};
pub use persistence::{
    sublevel_persistence, sublevel_persistence_h0, sublevel_persistence_h1, PersistenceDiagram,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_io::AttributedGraph;
use crate::tensor::DenseTensor;

/// Range each persistence image covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowScope {
    /// Each graph's own filtration range.
    Graph,
    /// One range per filtration over every graph of the run, so a pixel
    /// means the same values in every image.
    #[default]
    Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub filtrations: Vec<FiltrationKind>,
    /// Diagram channels per filtration: 1 = H0 only, 2 = H0 and H1.
    pub diagrams: usize,
    pub resolution: usize,
    pub weight: WeightKind,
    pub window: WindowScope,
    /// Explicit `(birth, persistence)` bandwidths; pixel-sized when absent.
    pub bandwidth: Option<(f64, f64)>,
    /// Divide every image by its largest pixel so channels from centralities
    /// of very different scale reach the CNN at comparable magnitude.
    pub normalize: bool,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            filtrations: FiltrationKind::ALL.to_vec(),
            diagrams: 1,
            resolution: 50,
            weight: WeightKind::Linear,
            window: WindowScope::Dataset,
            bandwidth: None,
            normalize: true,
        }
    }
}

impl TopologyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.filtrations.is_empty() {
            return Err(Error::Config("at least one filtration is required".into()));
        }
        if !(1..=2).contains(&self.diagrams) {
            return Err(Error::Config(format!(
                "diagram channels must be 1 (H0) or 2 (H0, H1), got {}",
                self.diagrams
            )));
        }
        if self.resolution < 2 {
            return Err(Error::Config("persistence image resolution must be at least 2".into()));
        }
        if let Some((x, y)) = self.bandwidth {
            if !(x > 0.0 && y > 0.0) {
                return Err(Error::Config("bandwidths must be positive".into()));
            }
        }
        Ok(())
    }

    /// Shape `[K, Q, P, P]` of the tensor produced by [`build_pi_tensor`].
    pub fn tensor_shape(&self) -> [usize; 4] {
        [self.filtrations.len(), self.diagrams, self.resolution, self.resolution]
    }
}

/// Window over the (birth, persistence) plane for filtration values in
/// `[lo, hi]`: births span `[lo, hi]`, persistences `[0, hi - lo]`. A
/// degenerate range gets a unit-sized window.
pub fn range_window(lo: f64, hi: f64) -> Window {
    if hi > lo {
        Window {
            x: (lo, hi),
            y: (0.0, hi - lo),
        }
    } else {
        Window {
            x: (lo - 0.5, lo + 0.5),
            y: (0.0, 1.0),
        }
    }
}

/// Window covering one graph's filtration values.
pub fn filtration_window(filtration: &Filtration) -> Window {
    range_window(filtration.min(), filtration.max())
}

/// One window per configured filtration, covering the values of every
/// graph in `graphs`.
pub fn fit_windows<'a>(graphs: impl IntoParallelIterator<Item = &'a AttributedGraph>, config: &TopologyConfig) -> Vec<Window> {
    let k = config.filtrations.len();
    let ranges = graphs
        .into_par_iter()
        .map(|g| {
            config
                .filtrations
                .iter()
                .map(|&kind| {
                    let f = compute_filtration(g, kind);
                    (f.min(), f.max())
                })
                .collect::<Vec<_>>()
        })
        .reduce(
            || vec![(f64::INFINITY, f64::NEG_INFINITY); k],
            |a, b| a.iter().zip(&b).map(|(x, y)| (x.0.min(y.0), x.1.max(y.1))).collect(),
        );
    ranges
        .into_iter()
        .map(|(lo, hi)| if lo <= hi { range_window(lo, hi) } else { range_window(0.0, 0.0) })
        .collect()
}

/// Everything computed for one filtration of one graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FiltrationReport {
    pub filtration: Filtration,
    pub diagrams: Vec<PersistenceDiagram>,
    pub images: Vec<PersistenceImage>,
}

/// Diagrams and raw images of one filtration, rasterized over `window` or,
/// when absent, over the graph's own value range.
pub fn analyze_filtration(
    graph: &AttributedGraph,
    kind: FiltrationKind,
    config: &TopologyConfig,
    window: Option<Window>,
) -> Result<FiltrationReport> {
    let filtration = compute_filtration(graph, kind);
    let (h0, h1) = sublevel_persistence(graph, &filtration)?;
    let diagrams: Vec<_> = [h0, h1].into_iter().take(config.diagrams).collect();
    let window = window.unwrap_or_else(|| filtration_window(&filtration));
    let mut params = ImageParams::pixel_bandwidth(config.resolution, config.weight, window);
    if let Some(bw) = config.bandwidth {
        params.bandwidth = bw;
    }
    let images = diagrams
        .iter()
        .map(|dg| persistence_image(dg, &params))
        .collect::<Result<Vec<_>>>()?;
    Ok(FiltrationReport {
        filtration,
        diagrams,
        images,
    })
}

/// Stacks the persistence images of every configured filtration and diagram
/// channel into a `K x Q x P x P` tensor. `windows` holds one window per
/// filtration; without it each image spans the graph's own value range.
pub fn build_pi_tensor_in(
    graph: &AttributedGraph,
    config: &TopologyConfig,
    windows: Option<&[Window]>,
) -> Result<DenseTensor> {
    config.validate()?;
    if let Some(w) = windows {
        if w.len() != config.filtrations.len() {
            return Err(Error::shape(format!(
                "{} windows for {} filtrations",
                w.len(),
                config.filtrations.len()
            )));
        }
    }
    let shape = config.tensor_shape();
    let mut data = Vec::with_capacity(shape.iter().product());
    for (i, &kind) in config.filtrations.iter().enumerate() {
        for mut image in analyze_filtration(graph, kind, config, windows.map(|w| w[i]))?.images {
            if config.normalize {
                let peak = image.pixels.iter().copied().fold(0.0, f64::max);
                if peak > 0.0 {
                    image.pixels.iter_mut().for_each(|p| *p /= peak);
                }
            }
            data.extend_from_slice(&image.pixels);
        }
    }
    DenseTensor::from_vec(shape.to_vec(), data)
}

/// [`build_pi_tensor_in`] with the graph's own windows.
pub fn build_pi_tensor(graph: &AttributedGraph, config: &TopologyConfig) -> Result<DenseTensor> {
    build_pi_tensor_in(graph, config, None)
}

/// PI tensors for many graphs over shared windows, computed in parallel;
/// output order follows the input order.
pub fn build_pi_tensors(graphs: &[AttributedGraph], config: &TopologyConfig, windows: Option<&[Window]>) -> Result<Vec<DenseTensor>> {
    graphs.par_iter().map(|g| build_pi_tensor_in(g, config, windows)).collect()
}
