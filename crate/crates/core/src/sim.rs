//! Monte-Carlo frame streams.
//!
//! Frames are split into fixed-size chunks; chunk `c` draws from
//! `ChaCha8Rng::seed_from_u64(seed)` on stream `c`, and chunk tallies are merged
//! in chunk order. Results depend only on the configuration, not on the number
//! of worker threads. Adaptive runs are a single sequential stream.

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{activation_probability, AdaptiveState};
use crate::cascade::{AccumulatedOffCost, Policy, SystemSpec};
use crate::duty_cycle::DutyCycleSpec;
use crate::error::{Error, Result};
use crate::graph::{DetectionGraph, GraphPolicy, NodeDecision, Topology};
use crate::model::FeatureModel;

pub const CHUNK: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    Belief,
    Adaptive { mu: f64, burn_in: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub n_frames: u64,
    pub seed: u64,
    pub mode: Mode,
}

impl StreamConfig {
    pub fn new(n_frames: u64, seed: u64) -> Self {
        Self {
            n_frames,
            seed,
            mode: Mode::Belief,
        }
    }

    pub fn adaptive(n_frames: u64, seed: u64, mu: f64, burn_in: u64) -> Self {
        Self {
            n_frames,
            seed,
            mode: Mode::Adaptive { mu, burn_in },
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_frames == 0 {
            return Err(Error::Input("n_frames must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveSummary {
    /// Threshold at the most visited belief cell of each stage.
    pub final_eta: Vec<f64>,
    /// `|realized activations − summed targets| / visits` per stage.
    pub tracking_error: Vec<f64>,
    pub adaptive_stages: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub n_frames: u64,
    pub targets: u64,
    pub misses: u64,
    /// Misses caused by an early stop.
    pub early_misses: u64,
    pub false_alarms: u64,
    /// Fraction of all frames that are misses.
    pub miss_rate: f64,
    /// Fraction of all frames that are false alarms.
    pub fa_rate: f64,
    pub energy: f64,
    pub risk: f64,
    pub lambda: f64,
    pub miss_rate_se: f64,
    pub fa_rate_se: f64,
    pub energy_se: f64,
    pub risk_se: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adaptive: Option<AdaptiveSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Outcome {
    target: bool,
    declared: bool,
    early_stop: bool,
    energy: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    n: u64,
    targets: u64,
    misses: u64,
    early_misses: u64,
    false_alarms: u64,
    energy: f64,
    energy_sq: f64,
    risk: f64,
    risk_sq: f64,
}

impl Tally {
    fn add(&mut self, o: Outcome, lambda: f64, miss_cost: f64, fa_cost: f64) {
        self.n += 1;
        let miss = o.target && !o.declared;
        let fa = !o.target && o.declared;
        self.targets += o.target as u64;
        self.misses += miss as u64;
        self.early_misses += (miss && o.early_stop) as u64;
        self.false_alarms += fa as u64;
        self.energy += o.energy;
        self.energy_sq += o.energy * o.energy;
        let r = lambda * o.energy + if miss { miss_cost } else { 0.0 } + if fa { fa_cost } else { 0.0 };
        self.risk += r;
        self.risk_sq += r * r;
    }

    fn merge(mut self, o: &Tally) -> Tally {
        self.n += o.n;
        self.targets += o.targets;
        self.misses += o.misses;
        self.early_misses += o.early_misses;
        self.false_alarms += o.false_alarms;
        self.energy += o.energy;
        self.energy_sq += o.energy_sq;
        self.risk += o.risk;
        self.risk_sq += o.risk_sq;
        self
    }

    fn report(&self, lambda: f64) -> SimReport {
        let n = self.n as f64;
        let rate_se = |p: f64| (p * (1.0 - p) / n).sqrt();
        let mean_se = |s: f64, sq: f64| {
            let m = s / n;
            ((sq / n - m * m).max(0.0) / n).sqrt()
        };
        let miss_rate = self.misses as f64 / n;
        let fa_rate = self.false_alarms as f64 / n;
        SimReport {
            n_frames: self.n,
            targets: self.targets,
            misses: self.misses,
            early_misses: self.early_misses,
            false_alarms: self.false_alarms,
            miss_rate,
            fa_rate,
            energy: self.energy / n,
            risk: self.risk / n,
            lambda,
            miss_rate_se: rate_se(miss_rate),
            fa_rate_se: rate_se(fa_rate),
            energy_se: mean_se(self.energy, self.energy_sq),
            risk_se: mean_se(self.risk, self.risk_sq),
            adaptive: None,
        }
    }
}

/// Per-class feature samplers of one model.
#[derive(Debug, Clone)]
struct Sampler {
    given0: WeightedIndex<f64>,
    given1: WeightedIndex<f64>,
}

impl Sampler {
    fn new(m: &FeatureModel) -> Result<Self> {
        let mk = |p: &[f64]| WeightedIndex::new(p).map_err(|e| Error::Numerical(format!("feature sampler: {e}")));
        Ok(Self {
            given0: mk(m.p0())?,
            given1: mk(m.p1())?,
        })
    }

    #[inline]
    fn draw(&self, target: bool, rng: &mut ChaCha8Rng) -> usize {
        if target {
            self.given1.sample(rng)
        } else {
            self.given0.sample(rng)
        }
    }
}

fn run_chunked<F>(cfg: &StreamConfig, lambda: f64, miss_cost: f64, fa_cost: f64, frame: F) -> SimReport
where
    F: Fn(&mut ChaCha8Rng) -> Outcome + Sync,
{
    let chunks = cfg.n_frames.div_ceil(CHUNK);
    let tallies: Vec<Tally> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(c);
            let len = CHUNK.min(cfg.n_frames - c * CHUNK);
            let mut t = Tally::default();
            for _ in 0..len {
                t.add(frame(&mut rng), lambda, miss_cost, fa_cost);
            }
            t
        })
        .collect();
    tallies.iter().fold(Tally::default(), |a, t| a.merge(t)).report(lambda)
}

/// Simulates the cascade policy with features drawn from the spec's own models.
pub fn simulate(spec: &SystemSpec, policy: &Policy, cfg: &StreamConfig) -> Result<SimReport> {
    let models: Vec<FeatureModel> = spec.stages.iter().map(|s| s.model.clone()).collect();
    simulate_with_generators(spec, policy, &models, cfg)
}

/// Simulates the cascade policy (which computes posteriors with the spec's
/// models) on features drawn from `generators`, e.g. nominal models behind a
/// robustified design.
pub fn simulate_with_generators(
    spec: &SystemSpec,
    policy: &Policy,
    generators: &[FeatureModel],
    cfg: &StreamConfig,
) -> Result<SimReport> {
    cfg.validate()?;
    policy.check(spec)?;
    if generators.len() != spec.len()
        || generators
            .iter()
            .zip(&spec.stages)
            .any(|(g, s)| g.alphabet_size() != s.model.alphabet_size())
    {
        return Err(Error::PolicyMismatch(
            "generating models do not match the stages".into(),
        ));
    }
    let samplers = generators.iter().map(Sampler::new).collect::<Result<Vec<_>>>()?;
    let acc = spec.accumulated_off_cost();
    match cfg.mode {
        Mode::Belief => {
            let frame = |rng: &mut ChaCha8Rng| cascade_frame(spec, policy, &acc, &samplers, rng);
            Ok(run_chunked(cfg, policy.lambda, spec.miss_cost, spec.fa_cost, frame))
        }
        Mode::Adaptive { mu, burn_in } => simulate_adaptive(spec, policy, &acc, &samplers, cfg, mu, burn_in),
    }
}

#[inline]
#[allow(clippy::needless_range_loop)]
fn cascade_frame(
    spec: &SystemSpec,
    policy: &Policy,
    acc: &AccumulatedOffCost,
    samplers: &[Sampler],
    rng: &mut ChaCha8Rng,
) -> Outcome {
    let k = spec.len();
    let target = rng.gen::<f64>() < spec.prior;
    let mut pi = spec.prior;
    let mut energy = spec.stages[0].on_cost;
    for s in 0..k {
        let y = samplers[s].draw(target, rng);
        pi = spec.stages[s].model.posterior(pi, y);
        let go = policy.proceeds(s, pi);
        if s + 1 == k {
            return Outcome {
                target,
                declared: go,
                early_stop: false,
                energy,
            };
        }
        if go {
            energy += spec.stages[s + 1].on_cost;
        } else {
            return Outcome {
                target,
                declared: false,
                early_stop: true,
                energy: energy + acc.from(s + 1),
            };
        }
    }
    unreachable!("cascade has at least one stage")
}

fn simulate_adaptive(
    spec: &SystemSpec,
    policy: &Policy,
    acc: &AccumulatedOffCost,
    samplers: &[Sampler],
    cfg: &StreamConfig,
    mu: f64,
    burn_in: u64,
) -> Result<SimReport> {
    let k = spec.len();
    let mut state = AdaptiveState::new(spec, policy.grid(), mu)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tally = Tally::default();
    let mut visits = vec![vec![0u64; state.grid.size()]; k];
    let mut realized = vec![0.0; k];
    let mut expected = vec![0.0; k];
    for frame in 0..burn_in + cfg.n_frames {
        let measuring = frame >= burn_in;
        let target = rng.gen::<f64>() < spec.prior;
        let mut pi = spec.prior;
        let mut energy = spec.stages[0].on_cost;
        let mut outcome = None;
        for s in 0..k {
            let model = &spec.stages[s].model;
            let y = samplers[s].draw(target, &mut rng);
            let go = if state.adaptive[s] {
                let cell = state.cell(pi);
                let q = activation_probability(model, policy.decision_thresholds[s], pi);
                let go = state.decide(s, cell, y);
                state.observe(s, cell, go, q);
                if measuring {
                    visits[s][cell] += 1;
                    realized[s] += go as u8 as f64;
                    expected[s] += q;
                }
                pi = model.posterior(pi, y);
                go
            } else {
                pi = model.posterior(pi, y);
                policy.proceeds(s, pi)
            };
            if s + 1 == k {
                outcome = Some(Outcome {
                    target,
                    declared: go,
                    early_stop: false,
                    energy,
                });
            } else if go {
                energy += spec.stages[s + 1].on_cost;
                continue;
            } else {
                outcome = Some(Outcome {
                    target,
                    declared: false,
                    early_stop: true,
                    energy: energy + acc.from(s + 1),
                });
            }
            break;
        }
        if measuring {
            tally.add(
                outcome.expect("frame ends"),
                policy.lambda,
                spec.miss_cost,
                spec.fa_cost,
            );
        }
    }
    let mut report = tally.report(policy.lambda);
    let final_eta = (0..k)
        .map(|s| {
            let busiest = (0..visits[s].len()).max_by_key(|&c| (visits[s][c], std::cmp::Reverse(c)));
            busiest.map_or(f64::NAN, |c| state.eta[s][c])
        })
        .collect();
    let tracking_error = (0..k)
        .map(|s| {
            let n: u64 = visits[s].iter().sum();
            if n == 0 {
                0.0
            } else {
                (realized[s] - expected[s]).abs() / n as f64
            }
        })
        .collect();
    report.adaptive = Some(AdaptiveSummary {
        final_eta,
        tracking_error,
        adaptive_stages: state.adaptive.clone(),
    });
    Ok(report)
}

/// Duty-cycled single-stage detector; each frame is on with probability `rho`.
pub fn simulate_duty_cycle(dc: &DutyCycleSpec, lambda: f64, cfg: &StreamConfig) -> Result<SimReport> {
    cfg.validate()?;
    dc.validate()?;
    let sampler = Sampler::new(&dc.detector)?;
    let tau = dc.threshold();
    let frame = |rng: &mut ChaCha8Rng| {
        let target = rng.gen::<f64>() < dc.prior;
        if rng.gen::<f64>() < dc.rho {
            let y = sampler.draw(target, rng);
            Outcome {
                target,
                declared: dc.detector.posterior(dc.prior, y) >= tau,
                early_stop: false,
                energy: dc.on_cost,
            }
        } else {
            Outcome {
                target,
                declared: false,
                early_stop: true,
                energy: dc.off_cost,
            }
        }
    };
    Ok(run_chunked(cfg, lambda, dc.miss_cost, dc.fa_cost, frame))
}

/// Simulates a graph policy; each frame follows a single path from the root.
pub fn simulate_graph(graph: &DetectionGraph, policy: &GraphPolicy, cfg: &StreamConfig) -> Result<SimReport> {
    cfg.validate()?;
    if !matches!(cfg.mode, Mode::Belief) {
        return Err(Error::Input(
            "graphs are simulated with posterior thresholds only".into(),
        ));
    }
    let topo = graph.topology()?;
    if policy.nodes.len() != graph.len() {
        return Err(Error::PolicyMismatch("policy and graph sizes differ".into()));
    }
    let samplers = graph
        .nodes
        .iter()
        .map(|n| Sampler::new(&n.model))
        .collect::<Result<Vec<_>>>()?;
    let idle: Vec<f64> = (0..graph.len()).map(|v| graph.downstream_off_cost(&topo, v)).collect();
    let frame = |rng: &mut ChaCha8Rng| graph_frame(graph, &topo, policy, &samplers, &idle, rng);
    Ok(run_chunked(cfg, policy.lambda, policy.miss_cost, policy.fa_cost, frame))
}

#[inline]
fn graph_frame(
    graph: &DetectionGraph,
    topo: &Topology,
    policy: &GraphPolicy,
    samplers: &[Sampler],
    idle: &[f64],
    rng: &mut ChaCha8Rng,
) -> Outcome {
    let target = rng.gen::<f64>() < policy.prior;
    let mut pi = policy.prior;
    let mut v = 0;
    let mut energy = graph.nodes[0].on_cost;
    loop {
        let y = samplers[v].draw(target, rng);
        pi = graph.nodes[v].model.posterior(pi, y);
        match policy.decide(graph, topo, v, pi) {
            NodeDecision::Route(m) => {
                energy += graph.nodes[m].on_cost;
                v = m;
            }
            NodeDecision::Positive => {
                return Outcome {
                    target,
                    declared: true,
                    early_stop: false,
                    energy,
                }
            }
            NodeDecision::Stop => {
                return Outcome {
                    target,
                    declared: false,
                    early_stop: !topo.neighbors[v].is_empty(),
                    energy: energy + idle[v],
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::{evaluate_exact, solve, StageSpec};
    use crate::model::BeliefGrid;

    fn spec(prior: f64) -> SystemSpec {
        let a = FeatureModel::new(vec![0.5, 0.3, 0.2], vec![0.1, 0.3, 0.6]).unwrap();
        let b = FeatureModel::new(vec![0.7, 0.2, 0.1], vec![0.1, 0.2, 0.7]).unwrap();
        SystemSpec::new(
            vec![StageSpec::new(a, 1.0, 0.0), StageSpec::new(b, 10.0, 1.0)],
            3.0,
            1.0,
            prior,
            0.01,
        )
        .unwrap()
    }

    #[test]
    fn reproducible_and_thread_independent() {
        let s = spec(0.2);
        let p = solve(&s, BeliefGrid::new(201).unwrap()).unwrap();
        let cfg = StreamConfig::new(200_000, 11);
        let a = simulate(&s, &p, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| simulate(&s, &p, &cfg).unwrap());
        assert_eq!(a, b);
        let c = simulate(&s, &p, &StreamConfig::new(200_000, 12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn no_targets_no_misses() {
        let s = spec(0.0);
        let p = solve(&s, BeliefGrid::new(201).unwrap()).unwrap();
        let r = simulate(&s, &p, &StreamConfig::new(10_000, 1)).unwrap();
        assert_eq!((r.targets, r.misses), (0, 0));
        // stage 1 always stops at belief 0
        assert_eq!(r.energy, 2.0);
        assert_eq!(r.fa_rate, 0.0);
    }

    #[test]
    fn single_frame() {
        let s = spec(0.2);
        let p = solve(&s, BeliefGrid::new(201).unwrap()).unwrap();
        let r = simulate(&s, &p, &StreamConfig::new(1, 3)).unwrap();
        assert_eq!(r.n_frames, 1);
        assert!(r.energy_se.is_finite() && r.miss_rate_se.is_finite());
        assert!(simulate(&s, &p, &StreamConfig::new(0, 3)).is_err());
    }

    #[test]
    fn agrees_with_exact_evaluation() {
        let s = spec(0.3);
        let p = solve(&s, BeliefGrid::new(1001).unwrap()).unwrap();
        let x = evaluate_exact(&s, &p).unwrap();
        let r = simulate(&s, &p, &StreamConfig::new(400_000, 5)).unwrap();
        let miss = (x.inter_miss + x.final_miss) / s.miss_cost;
        assert!((r.miss_rate - miss).abs() < 4.0 * r.miss_rate_se);
        assert!((r.fa_rate - x.final_fa / s.fa_cost).abs() < 4.0 * r.fa_rate_se);
        assert!((r.energy - x.energy).abs() < 4.0 * r.energy_se);
    }

    #[test]
    fn duty_cycle_extremes() {
        let s = spec(0.2);
        let dc = DutyCycleSpec::ideal(&s, 0.0);
        let r = simulate_duty_cycle(&dc, 0.01, &StreamConfig::new(50_000, 2)).unwrap();
        assert_eq!(r.false_alarms, 0);
        assert_eq!(r.misses, r.targets);
        assert_eq!(r.energy, 1.0);
    }

    #[test]
    fn path_graph_replays_the_cascade() {
        let s = spec(0.25);
        let g = BeliefGrid::new(401).unwrap();
        let p = solve(&s, g).unwrap();
        let graph = DetectionGraph::path(s.stages.clone());
        let gp = crate::graph::solve_graph(&graph, s.miss_cost, s.fa_cost, s.lambda, s.prior, g).unwrap();
        let cfg = StreamConfig::new(100_000, 9);
        let a = simulate(&s, &p, &cfg).unwrap();
        let b = simulate_graph(&graph, &gp, &cfg).unwrap();
        assert_eq!((a.misses, a.false_alarms), (b.misses, b.false_alarms));
        assert!((a.energy - b.energy).abs() < 1e-9);
    }
}
