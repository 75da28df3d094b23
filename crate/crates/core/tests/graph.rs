mod common;

use guided::adaptive::{activation_probability, compute_activation_targets};
use guided::cascade::solve;
use guided::graph::{graph_activation_probabilities, solve_graph, DetectionGraph, NodeDecision};
use guided::model::BeliefGrid;
use guided::sim::{simulate_graph, StreamConfig};
use proptest::prelude::*;

fn grid(m: usize) -> BeliefGrid {
    BeliefGrid::new(m).unwrap()
}

fn diamond(seed: u64, q: usize) -> DetectionGraph {
    let mut r = common::rng(seed);
    let stages = common::random_stages(&mut r, 4, q);
    DetectionGraph::new(stages, vec![(0, 1), (0, 2), (1, 3), (2, 3)]).unwrap()
}

fn diamond_idle(g: &DetectionGraph) -> [f64; 4] {
    let n = &g.nodes;
    [
        n[1].off_cost + n[2].off_cost + n[3].off_cost,
        n[3].off_cost,
        n[3].off_cost,
        0.0,
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn a_path_graph_is_a_cascade(seed in any::<u64>(), k in 2usize..=4, q in 2usize..=10) {
        let spec = common::random_spec(seed, k, q);
        let g = grid(301);
        let p = solve(&spec, g).unwrap();
        let gp = solve_graph(&DetectionGraph::path(spec.stages.clone()), spec.miss_cost, spec.fa_cost, spec.lambda, spec.prior, g).unwrap();
        prop_assert!((gp.root_value - p.root_value).abs() <= 1e-12);
        for (s, node) in gp.nodes.iter().enumerate() {
            for (a, b) in node.value.values().iter().zip(p.value_tables[s].values()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn diamond_matches_exhaustive_routing_on_a_fine_grid() {
    for seed in 0..6 {
        let g = diamond(8000 + seed, 4);
        let exact = common::graph_expectimax(&g, &diamond_idle(&g), 3.0, 1.0, 0.02, 0.25);
        let dp = solve_graph(&g, 3.0, 1.0, 0.02, 0.25, grid(2001)).unwrap();
        assert!(dp.root_value <= exact + 1e-9);
        assert!(
            dp.root_value >= exact - 8.0 / 2000.0,
            "seed {seed}: {} vs {exact}",
            dp.root_value
        );
    }
}

#[test]
fn path_activation_matches_cascade_targets() {
    let spec = common::random_spec(8100, 3, 7);
    let g = grid(501);
    let p = solve(&spec, g).unwrap();
    let targets = compute_activation_targets(&spec, &p, g).unwrap();
    let path = DetectionGraph::path(spec.stages.clone());
    let gp = solve_graph(&path, spec.miss_cost, spec.fa_cost, spec.lambda, spec.prior, g).unwrap();
    for act in graph_activation_probabilities(&path, &gp).unwrap() {
        let v = act.node;
        let go = act
            .options
            .iter()
            .position(|o| matches!(o, NodeDecision::Route(_) | NodeDecision::Positive))
            .unwrap();
        for (b, probs) in act.beliefs.iter().zip(&act.probabilities) {
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let want = activation_probability(&spec.stages[v].model, p.decision_thresholds[v], *b);
            assert!((probs[go] - want).abs() < 1e-12, "node {v} at {b}");
            if g.point(g.nearest(*b)) == *b {
                assert!((targets.tables[v].interpolate(*b) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn simulated_diamond_agrees_with_its_value() {
    let g = diamond(8200, 5);
    let gp = solve_graph(&g, 3.0, 1.0, 0.02, 0.25, grid(1001)).unwrap();
    let exact = common::graph_expectimax(&g, &diamond_idle(&g), 3.0, 1.0, 0.02, 0.25);
    let sim = simulate_graph(&g, &gp, &StreamConfig::new(400_000, 12)).unwrap();
    // The grid policy is near-optimal, so its realized risk sits just above the optimum.
    assert!(sim.risk >= exact - 4.0 * sim.risk_se, "{} vs {exact}", sim.risk);
    assert!(
        sim.risk <= exact + 8.0 / 1000.0 + 4.0 * sim.risk_se,
        "{} vs {exact}",
        sim.risk
    );
}
