use lptgnn::graph_io::AttributedGraph;
use lptgnn::topology::{
    build_pi_tensor, persistence_image, sublevel_persistence, Filtration, FiltrationKind, ImageParams,
    PersistenceDiagram, TopologyConfig, WeightKind, Window, WindowScope,
};
use proptest::prelude::*;

fn graph() -> impl Strategy<Value = AttributedGraph> {
    (1usize..9).prop_flat_map(|n| {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        proptest::collection::vec(any::<bool>(), pairs.len()).prop_map(move |keep| {
            let edges = pairs.iter().zip(&keep).filter(|(_, &k)| k).map(|(&e, _)| e);
            AttributedGraph::with_constant_features(n, edges, None).unwrap()
        })
    })
}

fn graph_with_values() -> impl Strategy<Value = (AttributedGraph, Vec<f64>)> {
    graph().prop_flat_map(|g| {
        let n = g.node_count();
        (Just(g), proptest::collection::vec(prop_oneof![(0u8..4).prop_map(f64::from), -5.0..5.0f64], n))
    })
}

fn components(g: &AttributedGraph) -> usize {
    let adj = g.adjacency_lists();
    let mut seen = vec![false; g.node_count()];
    let mut count = 0;
    for s in 0..g.node_count() {
        if seen[s] {
            continue;
        }
        count += 1;
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(u) = stack.pop() {
            for &w in &adj[u] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
    }
    count
}

fn diagram() -> impl Strategy<Value = PersistenceDiagram> {
    proptest::collection::vec((0.0..3.0f64, 0.0..2.0f64), 0..6).prop_map(|pts| PersistenceDiagram {
        dimension: 0,
        points: pts.into_iter().map(|(b, p)| (b, b + p)).collect(),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn diagram_sizes_follow_graph_counts((g, values) in graph_with_values()) {
        let f = Filtration { kind: FiltrationKind::Degree, values };
        let (h0, h1) = sublevel_persistence(&g, &f).unwrap();
        prop_assert_eq!(h0.len(), g.node_count());
        prop_assert_eq!(h1.len(), g.edge_count() + components(&g) - g.node_count());
        for &(b, d) in h0.points.iter().chain(&h1.points) {
            prop_assert!(b.is_finite() && d.is_finite() && d >= b);
        }
    }

    #[test]
    fn shifting_values_shifts_every_point((g, values) in graph_with_values(), c in -4i32..4) {
        let c = f64::from(c);
        let f = Filtration { kind: FiltrationKind::Degree, values: values.clone() };
        let shifted = Filtration { kind: FiltrationKind::Degree, values: values.iter().map(|v| v + c).collect() };
        let (a0, a1) = sublevel_persistence(&g, &f).unwrap();
        let (b0, b1) = sublevel_persistence(&g, &shifted).unwrap();
        let moved = |d: &PersistenceDiagram| -> Vec<(f64, f64)> { d.points.iter().map(|&(b, e)| (b + c, e + c)).collect() };
        prop_assert_eq!(moved(&a0), b0.points);
        prop_assert_eq!(moved(&a1), b1.points);
    }

    #[test]
    fn images_are_additive_and_non_negative(a in diagram(), b in diagram(), p in 2usize..10, constant in any::<bool>()) {
        let window = Window { x: (0.0, 3.0), y: (0.0, 2.0) };
        let weight = if constant { WeightKind::Constant } else { WeightKind::Linear };
        let params = ImageParams::pixel_bandwidth(p, weight, window);
        let union = PersistenceDiagram { dimension: 0, points: [a.points.clone(), b.points.clone()].concat() };
        let (ia, ib, iu) = (
            persistence_image(&a, &params).unwrap(),
            persistence_image(&b, &params).unwrap(),
            persistence_image(&union, &params).unwrap(),
        );
        for k in 0..p * p {
            prop_assert!(ia.pixels[k] >= 0.0);
            prop_assert!((ia.pixels[k] + ib.pixels[k] - iu.pixels[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn pi_tensor_is_deterministic_and_finite(g in graph(), res in 2usize..12, h1 in any::<bool>()) {
        let cfg = TopologyConfig {
            resolution: res,
            diagrams: if h1 { 2 } else { 1 },
            window: WindowScope::Graph,
            ..Default::default()
        };
        let t = build_pi_tensor(&g, &cfg).unwrap();
        prop_assert_eq!(t.shape(), &cfg.tensor_shape()[..]);
        prop_assert!(t.data().iter().all(|v| v.is_finite() && *v >= 0.0));
        prop_assert_eq!(t, build_pi_tensor(&g, &cfg).unwrap());
    }
}
