//! Test-only generators and brute-force references. The references recompute
//! posteriors from joint probabilities instead of calling library code.
#![allow(dead_code)]

use guided::cascade::{StageSpec, SystemSpec};
use guided::graph::DetectionGraph;
use guided::model::FeatureModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_model(rng: &mut ChaCha8Rng, q: usize) -> FeatureModel {
    let w0: Vec<f64> = (0..q).map(|_| rng.gen_range(0.05..1.0)).collect();
    let w1: Vec<f64> = (0..q).map(|_| rng.gen_range(0.05..1.0)).collect();
    FeatureModel::from_weights(&w0, &w1).unwrap()
}

/// Model whose likelihood ratio increases with the symbol index.
pub fn monotone_model(rng: &mut ChaCha8Rng, q: usize) -> FeatureModel {
    let w0: Vec<f64> = (0..q).map(|_| rng.gen_range(0.2..1.0)).collect();
    let mut r: Vec<f64> = (0..q).map(|_| rng.gen_range(0.1..4.0)).collect();
    r.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let w1: Vec<f64> = w0.iter().zip(&r).map(|(a, b)| a * b).collect();
    FeatureModel::from_weights(&w0, &w1).unwrap()
}

pub fn random_stages(rng: &mut ChaCha8Rng, k: usize, q: usize) -> Vec<StageSpec> {
    (0..k)
        .map(|i| {
            let on = if i == 0 {
                rng.gen_range(0.5..2.0)
            } else {
                rng.gen_range(1.0..20.0)
            };
            let off = if i == 0 { 0.0 } else { rng.gen_range(0.0..0.5 * on) };
            StageSpec::new(random_model(rng, q), on, off)
        })
        .collect()
}

pub fn random_spec(seed: u64, k: usize, q: usize) -> SystemSpec {
    let mut r = rng(seed);
    let stages = random_stages(&mut r, k, q);
    let prior = r.gen_range(0.05..0.5);
    let lambda = r.gen_range(0.0..0.05);
    SystemSpec::new(stages, 3.0, 1.0, prior, lambda).unwrap()
}

fn post(pi: f64, m: &FeatureModel, y: usize) -> f64 {
    let a = pi * m.p1()[y];
    let b = (1.0 - pi) * m.p0()[y];
    if a + b == 0.0 {
        pi
    } else {
        a / (a + b)
    }
}

fn ev(pi: f64, m: &FeatureModel, y: usize) -> f64 {
    pi * m.p1()[y] + (1.0 - pi) * m.p0()[y]
}

/// Exact risk of the two-stage threshold policy `(t1, t2)` by summing over all
/// feature pairs.
pub fn two_stage_risk(spec: &SystemSpec, t1: f64, t2: f64) -> f64 {
    let (a, b) = (&spec.stages[0], &spec.stages[1]);
    let (cm, ca, lam, p) = (spec.miss_cost, spec.fa_cost, spec.lambda, spec.prior);
    let mut risk = lam * a.on_cost;
    for y1 in 0..a.model.alphabet_size() {
        let j1 = (p * a.model.p1()[y1], (1.0 - p) * a.model.p0()[y1]);
        let pi1 = j1.0 / (j1.0 + j1.1);
        if pi1 < t1 {
            risk += cm * j1.0 + lam * (j1.0 + j1.1) * b.off_cost;
            continue;
        }
        risk += lam * (j1.0 + j1.1) * b.on_cost;
        for y2 in 0..b.model.alphabet_size() {
            let j2 = (j1.0 * b.model.p1()[y2], j1.1 * b.model.p0()[y2]);
            let pi2 = j2.0 / (j2.0 + j2.1);
            if pi2 < t2 {
                risk += cm * j2.0;
            } else {
                risk += ca * j2.1;
            }
        }
    }
    risk
}

/// Minimum of [`two_stage_risk`] over every pair of grid thresholds (plus
/// "never continue" for the first stage).
pub fn best_threshold_pair(spec: &SystemSpec, m: usize) -> f64 {
    let pts: Vec<f64> = (0..m).map(|j| j as f64 / (m - 1) as f64).collect();
    let mut best = f64::INFINITY;
    for &t1 in pts.iter().chain([f64::INFINITY].iter()) {
        for &t2 in &pts {
            best = best.min(two_stage_risk(spec, t1, t2));
        }
    }
    best
}

/// Optimal risk of a detection graph over all history-dependent stop/route
/// choices, by exact recursion over posteriors.
pub fn graph_expectimax(g: &DetectionGraph, idle: &[f64], cm: f64, ca: f64, lambda: f64, prior: f64) -> f64 {
    let nbrs: Vec<Vec<usize>> = (0..g.len())
        .map(|v| {
            let mut n: Vec<usize> = g.edges.iter().filter(|e| e.0 == v).map(|e| e.1).collect();
            n.sort_unstable();
            n
        })
        .collect();
    fn value(g: &DetectionGraph, nbrs: &[Vec<usize>], idle: &[f64], c: (f64, f64, f64), v: usize, pi: f64) -> f64 {
        let (cm, ca, lambda) = c;
        if nbrs[v].is_empty() {
            return (cm * pi).min(ca * (1.0 - pi));
        }
        let mut best = cm * pi + lambda * idle[v];
        for &m in &nbrs[v] {
            let model = &g.nodes[m].model;
            let mut go = lambda * g.nodes[m].on_cost;
            for y in 0..model.alphabet_size() {
                let e = ev(pi, model, y);
                if e > 0.0 {
                    go += e * value(g, nbrs, idle, c, m, post(pi, model, y));
                }
            }
            best = best.min(go);
        }
        best
    }
    let root = &g.nodes[0].model;
    let mut total = lambda * g.nodes[0].on_cost;
    for y in 0..root.alphabet_size() {
        total += ev(prior, root, y) * value(g, &nbrs, idle, (cm, ca, lambda), 0, post(prior, root, y));
    }
    total
}
