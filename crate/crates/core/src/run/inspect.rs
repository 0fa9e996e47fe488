use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_io::DomainDataset;
use crate::topology::{analyze_filtration, fit_windows, TopologyConfig, Window, WindowScope};

/// A diagram point as `[birth, death, dimension]`.
pub type DiagramPoint = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub dimension: u8,
    pub resolution: usize,
    /// Birth range (`x`) and persistence range (`y`) covered by the grid.
    pub window: Window,
    pub bandwidth: (f64, f64),
    pub normalized: bool,
    /// Row-major pixels; row `i` holds persistence bin `i`, columns are
    /// birth bins.
    pub pixels: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyBlock {
    pub filtration: String,
    pub values: Vec<f64>,
    pub diagram: Vec<DiagramPoint>,
    pub images: Vec<ImageReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphTopologyReport {
    pub dataset: String,
    pub index: usize,
    pub nodes: usize,
    pub edges: usize,
    pub blocks: Vec<TopologyBlock>,
}

/// Filtrations, diagrams and images of one graph, one block per configured
/// filtration in channel order. Dataset-scoped windows are fitted over the
/// whole of `dataset`.
pub fn inspect_topology(dataset: &DomainDataset, index: usize, config: &TopologyConfig) -> Result<GraphTopologyReport> {
    config.validate()?;
    let graph = dataset.graphs.get(index).ok_or_else(|| {
        Error::Size(format!("graph index {index} out of range for {} graphs in {}", dataset.len(), dataset.name))
    })?;
    let windows = (config.window == WindowScope::Dataset).then(|| fit_windows(&dataset.graphs, config));
    let blocks = config
        .filtrations
        .iter()
        .enumerate()
        .map(|(i, &kind)| {
            let report = analyze_filtration(graph, kind, config, windows.as_ref().map(|w| w[i]))?;
            let diagram = report
                .diagrams
                .iter()
                .flat_map(|d| d.points.iter().map(move |&(b, e)| [b, e, f64::from(d.dimension)]))
                .collect();
            let images = report
                .images
                .into_iter()
                .zip(&report.diagrams)
                .map(|(img, dg)| {
                    let peak = img.pixels.iter().copied().fold(0.0, f64::max);
                    let divisor = if config.normalize && peak > 0.0 { peak } else { 1.0 };
                    let p = img.resolution();
                    ImageReport {
                        dimension: dg.dimension,
                        resolution: p,
                        window: img.params.window,
                        bandwidth: img.params.bandwidth,
                        normalized: config.normalize,
                        pixels: img.pixels.chunks(p).map(|r| r.iter().map(|v| v / divisor).collect()).collect(),
                    }
                })
                .collect();
            Ok(TopologyBlock {
                filtration: kind.name().to_string(),
                values: report.filtration.values,
                diagram,
                images,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GraphTopologyReport {
        dataset: dataset.name.clone(),
        index,
        nodes: graph.node_count(),
        edges: graph.edge_count(),
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_io::{AttributedGraph, DomainRole};
    use crate::topology::{build_pi_tensor, FiltrationKind};

    fn one_graph() -> DomainDataset {
        let g = AttributedGraph::with_constant_features(5, [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4)], Some(0)).unwrap();
        DomainDataset {
            name: "g".into(),
            role: DomainRole::Source,
            class_count: 1,
            graphs: vec![g],
            label_values: vec![0],
            node_label_values: None,
        }
    }

    #[test]
    fn degree_block_has_one_h0_point_per_node() {
        let cfg = TopologyConfig {
            filtrations: vec![FiltrationKind::Degree],
            ..Default::default()
        };
        let r = inspect_topology(&one_graph(), 0, &cfg).unwrap();
        assert_eq!(r.blocks.len(), 1);
        assert_eq!(r.blocks[0].diagram.len(), 5);
        assert_eq!(r.blocks[0].images[0].pixels.len(), 50);
        assert!(r.blocks[0].images[0].pixels.iter().all(|row| row.len() == 50));
    }

    #[test]
    fn images_match_the_tensor_channels() {
        let cfg = TopologyConfig {
            diagrams: 2,
            resolution: 7,
            window: WindowScope::Graph,
            ..Default::default()
        };
        let ds = one_graph();
        let r = inspect_topology(&ds, 0, &cfg).unwrap();
        let names: Vec<&str> = r.blocks.iter().map(|b| b.filtration.as_str()).collect();
        assert_eq!(names, ["degree", "betweenness", "eigenvector", "closeness"]);
        let flat: Vec<f64> = r
            .blocks
            .iter()
            .flat_map(|b| b.images.iter().flat_map(|i| i.pixels.iter().flatten().copied()))
            .collect();
        assert_eq!(flat, build_pi_tensor(&ds.graphs[0], &cfg).unwrap().data());
    }

    #[test]
    fn bad_index_is_size_error() {
        assert!(matches!(
            inspect_topology(&one_graph(), 1, &TopologyConfig::default()),
            Err(Error::Size(_))
        ));
    }
}
