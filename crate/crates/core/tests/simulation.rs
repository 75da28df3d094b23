mod common;

use guided::cascade::{evaluate_exact, solve, StageSpec, SystemSpec};
use guided::fixture;
use guided::model::BeliefGrid;
use guided::sim::{simulate, StreamConfig};

fn grid() -> BeliefGrid {
    BeliefGrid::new(1001).unwrap()
}

fn assert_agrees(spec: &SystemSpec, cfg: &StreamConfig) {
    let p = solve(spec, grid()).unwrap();
    let exact = evaluate_exact(spec, &p).unwrap();
    let sim = simulate(spec, &p, cfg).unwrap();
    let checks = [
        (
            "miss",
            sim.miss_rate,
            (exact.inter_miss + exact.final_miss) / spec.miss_cost,
            sim.miss_rate_se,
        ),
        ("fa", sim.fa_rate, exact.final_fa / spec.fa_cost, sim.fa_rate_se),
        ("energy", sim.energy, exact.energy, sim.energy_se),
        ("risk", sim.risk, exact.total, sim.risk_se),
    ];
    for (name, got, want, se) in checks {
        assert!(
            (got - want).abs() <= 4.0 * se + 1e-12,
            "{name}: {got} vs {want} (se {se})"
        );
    }
}

#[test]
fn random_cascades_match_their_exact_risk() {
    for seed in 0..4 {
        let spec = common::random_spec(9500 + seed, 2 + (seed % 3) as usize, 7);
        assert_agrees(&spec, &StreamConfig::new(300_000, seed));
    }
}

#[test]
fn truncated_fixture_matches_its_exact_risk() {
    let spec = fixture::warbler_like().unwrap().drop_stage(1).unwrap();
    assert_agrees(&spec, &StreamConfig::new(300_000, 5));
}

#[test]
fn adaptive_thresholds_track_their_targets() {
    let mut r = common::rng(9600);
    let stages = vec![
        StageSpec::new(common::monotone_model(&mut r, 5), 1.0, 0.0),
        StageSpec::new(common::monotone_model(&mut r, 5), 8.0, 0.5),
    ];
    let spec = SystemSpec::new(stages, 3.0, 1.0, 0.25, 0.03).unwrap();
    assert_agrees(&spec, &StreamConfig::adaptive(500_000, 4, 1e-3, 100_000));
    let p = solve(&spec, grid()).unwrap();
    let sim = simulate(&spec, &p, &StreamConfig::adaptive(200_000, 4, 1e-3, 100_000)).unwrap();
    let a = sim.adaptive.unwrap();
    assert!(a.tracking_error.iter().all(|&e| e <= 0.01), "{:?}", a.tracking_error);
}

#[test]
fn non_monotone_stages_keep_the_belief_rule() {
    let spec = common::random_spec(9700, 2, 9);
    let p = solve(&spec, grid()).unwrap();
    let sim = simulate(&spec, &p, &StreamConfig::adaptive(50_000, 1, 1e-3, 1_000)).unwrap();
    let flags = &sim.adaptive.as_ref().unwrap().adaptive_stages;
    for (st, &f) in spec.stages.iter().zip(flags) {
        assert_eq!(f, st.model.has_monotone_ratio());
    }
    assert_agrees(&spec, &StreamConfig::adaptive(300_000, 2, 1e-3, 1_000));
}
