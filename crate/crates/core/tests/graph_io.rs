use std::fmt::Write as _;
use std::path::Path;

use lptgnn::graph_io::{parse_tudataset, split_by_edge_density, write_tudataset, BatchSampler, DomainDataset};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct RawGraph {
    nodes: usize,
    edges: Vec<(usize, usize)>,
    node_labels: Vec<i64>,
    label: i64,
}

fn raw_graph() -> impl Strategy<Value = RawGraph> {
    (1usize..7).prop_flat_map(|n| {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        let m = pairs.len();
        (
            proptest::collection::vec(any::<bool>(), m),
            proptest::collection::vec(prop_oneof![Just(-1i64), Just(0), Just(3), Just(7)], n),
            prop_oneof![Just(-1i64), Just(1), Just(2)],
        )
            .prop_map(move |(keep, node_labels, label)| RawGraph {
                nodes: n,
                edges: pairs.iter().zip(&keep).filter(|(_, &k)| k).map(|(&e, _)| e).collect(),
                node_labels,
                label,
            })
    })
}

/// Writes the raw TUDataset files directly, one direction per edge.
fn write_raw(dir: &Path, name: &str, graphs: &[RawGraph], with_node_labels: bool) {
    let (mut a, mut ind, mut labels, mut nl) = (String::new(), String::new(), String::new(), String::new());
    let mut offset = 0;
    for (gi, g) in graphs.iter().enumerate() {
        for &(u, v) in &g.edges {
            writeln!(a, "{}, {}", offset + u + 1, offset + v + 1).unwrap();
        }
        for l in &g.node_labels {
            writeln!(ind, "{}", gi + 1).unwrap();
            writeln!(nl, "{l}").unwrap();
        }
        writeln!(labels, "{}", g.label).unwrap();
        offset += g.nodes;
    }
    std::fs::write(dir.join(format!("{name}_A.txt")), a).unwrap();
    std::fs::write(dir.join(format!("{name}_graph_indicator.txt")), ind).unwrap();
    std::fs::write(dir.join(format!("{name}_graph_labels.txt")), labels).unwrap();
    if with_node_labels {
        std::fs::write(dir.join(format!("{name}_node_labels.txt")), nl).unwrap();
    }
}

fn graph_keys(ds: &DomainDataset) -> Vec<String> {
    let mut keys: Vec<String> = ds.graphs.iter().map(|g| format!("{g:?}")).collect();
    keys.sort();
    keys
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parse_write_parse_round_trips(
        graphs in proptest::collection::vec(raw_graph(), 1..12),
        with_node_labels in any::<bool>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("first");
        std::fs::create_dir(&first).unwrap();
        write_raw(&first, "DS", &graphs, with_node_labels);
        let parsed = parse_tudataset(&first, "DS").unwrap();
        prop_assert_eq!(parsed.len(), graphs.len());
        for (g, raw) in parsed.graphs.iter().zip(&graphs) {
            prop_assert_eq!(g.node_count(), raw.nodes);
            prop_assert_eq!(g.edges(), raw.edges.as_slice());
        }

        let second = dir.path().join("second");
        write_tudataset(&parsed, &second, "DS").unwrap();
        let reparsed = parse_tudataset(&second, "DS").unwrap();
        prop_assert_eq!(&parsed, &reparsed);
    }

    #[test]
    fn quartiles_partition_the_dataset(graphs in proptest::collection::vec(raw_graph(), 4..40)) {
        let dir = tempfile::tempdir().unwrap();
        write_raw(dir.path(), "DS", &graphs, false);
        let ds = parse_tudataset(dir.path(), "DS").unwrap();
        let parts = split_by_edge_density(&ds).unwrap();
        let sizes: Vec<usize> = parts.iter().map(DomainDataset::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut union: Vec<String> = parts.iter().flat_map(graph_keys).collect();
        union.sort();
        prop_assert_eq!(union, graph_keys(&ds));
        for pair in parts.windows(2) {
            let hi = pair[0].graphs.iter().map(|g| g.edge_density()).fold(f64::NEG_INFINITY, f64::max);
            let lo = pair[1].graphs.iter().map(|g| g.edge_density()).fold(f64::INFINITY, f64::min);
            prop_assert!(hi <= lo);
        }
    }

    #[test]
    fn batch_streams_repeat_for_a_seed(
        source in 1usize..60,
        target in 1usize..60,
        batch in 2usize..17,
        seed in any::<u64>(),
    ) {
        let mut a = BatchSampler::new(source, target, batch, seed).unwrap();
        let mut b = BatchSampler::new(source, target, batch, seed).unwrap();
        for _ in 0..3 {
            let (ea, eb) = (a.next_epoch(), b.next_epoch());
            prop_assert_eq!(&ea, &eb);
            prop_assert_eq!(ea.len(), a.batches_per_epoch());
            for step in &ea {
                prop_assert!(!step.source.is_empty() && !step.target.is_empty());
                prop_assert!(step.source.len() <= batch && step.target.len() <= batch);
                prop_assert!(step.source.iter().all(|&i| i < source));
                prop_assert!(step.target.iter().all(|&j| j < target));
            }
        }
    }
}

#[test]
fn bundled_mutag_has_188_graphs_in_two_classes() {
    let ds = parse_tudataset(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/MUTAG"), "MUTAG").unwrap();
    assert_eq!(ds.len(), 188);
    assert_eq!(ds.class_count, 2);
    assert_eq!(ds.class_counts(), vec![63, 125]);
    assert_eq!(ds.feature_dim(), 7);
    let nodes: usize = ds.graphs.iter().map(|g| g.node_count()).sum();
    assert_eq!(nodes, 3371);
}
