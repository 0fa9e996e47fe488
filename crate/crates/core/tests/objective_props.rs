use std::path::Path;
use std::sync::OnceLock;

use lptgnn::autodiff::Tape;
use lptgnn::encoders::{Branch, GraphBatch, MlpMode, Model, ModelConfig};
use lptgnn::graph_io::{parse_tudataset, AttributedGraph, DomainDataset};
use lptgnn::tensor::TtlLayer;
use lptgnn::train::{consistency_reg, fit_image_windows, images_for, pseudo_label};
use proptest::prelude::*;
use rayon::prelude::*;

fn mutag() -> &'static DomainDataset {
    static DS: OnceLock<DomainDataset> = OnceLock::new();
    DS.get_or_init(|| parse_tudataset(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/MUTAG"), "MUTAG").unwrap())
}

fn small_config() -> ModelConfig {
    let mut c = ModelConfig::default();
    c.hidden = 8;
    c.topo.topology.resolution = 10;
    c.topo.ttl.layers = vec![TtlLayer::tucker(&[2, 3, 3]), TtlLayer::tucker(&[2, 2])];
    c
}

/// Propagation losses of one branch at each threshold, for a frozen model
/// and batch, with batch norm on running statistics so rows stay independent.
fn losses_at(seed: u64, start: usize, thresholds: &[f64]) -> Vec<(f64, usize)> {
    let ds = mutag();
    let src: Vec<&AttributedGraph> = ds.graphs[start..start + 8].iter().collect();
    let labels: Vec<usize> = src.iter().map(|g| g.label().unwrap()).collect();
    let tgt: Vec<AttributedGraph> = ds.graphs[start + 8..start + 16].iter().map(|g| g.without_label()).collect();
    let (model, mut params) = Model::new(&small_config(), &[Branch::Conv, Branch::Topo], ds.feature_dim(), 2, seed).unwrap();
    fit_image_windows(&model, &mut params, ds.graphs.par_iter()).unwrap();
    let batch = |graphs: &[&AttributedGraph]| {
        let owned: Vec<AttributedGraph> = graphs.iter().map(|g| (*g).clone()).collect();
        let images = images_for(&model, &params, &owned).unwrap().unwrap();
        let refs: Vec<_> = images.iter().collect();
        GraphBatch::new(graphs, Some(&refs), model.feature_dim()).unwrap()
    };
    let source = batch(&src);
    let target = batch(&tgt.iter().collect::<Vec<_>>());
    let mut tape = Tape::new();
    let reps = model.encode_all(&mut tape, &params, &source).unwrap();
    let treps = model.encode_all(&mut tape, &params, &target).unwrap();
    let (logits, _) = model.classify(&mut tape, &params, treps[1], MlpMode::Eval).unwrap();
    let sets = pseudo_label(tape.value(logits), &labels);
    thresholds
        .iter()
        .map(|&t| {
            let reg = consistency_reg(&mut tape, &model, &params, &sets, reps[1], t, tgt.len(), MlpMode::Eval).unwrap();
            (tape.value(reg.loss).data()[0], reg.used)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn propagation_loss_never_grows_with_threshold(
        seed in 0u64..1000,
        start in 0usize..170,
        mut thresholds in proptest::collection::vec(0.0..1.0f64, 2..6),
    ) {
        thresholds.sort_by(f64::total_cmp);
        let values = losses_at(seed, start, &thresholds);
        for pair in values.windows(2) {
            prop_assert!(pair[1].0 <= pair[0].0, "{values:?} at {thresholds:?}");
            prop_assert!(pair[1].1 <= pair[0].1);
        }
    }
}
