//! Backward dynamic programming for cascades.
//!
//! Stage `i < K` either stops (declares negative, idling every later stage) or
//! pays `D_{i+1}` to extract the next feature. The last stage declares positive
//! when its posterior reaches `C_A / (C_A + C_M)`. Value functions live on a
//! [`BeliefGrid`]; stages are indexed from 0 in code.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{BeliefGrid, BeliefTable, FeatureModel, UncertaintyParams};
use crate::robust::{least_favorable, posterior_bounds, BeliefInterval, LeastFavorable, RobustBand};

/// One cascade stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub model: FeatureModel,
    /// Energy per frame when the stage's feature is extracted (mJ).
    pub on_cost: f64,
    /// Energy per frame when the stage idles (mJ). Unused for the first stage.
    pub off_cost: f64,
    #[serde(default)]
    pub uncertainty: UncertaintyParams,
    /// Part of `on_cost` the following stage still needs if this stage is removed
    /// (data transport, for instance).
    #[serde(default)]
    pub carry_on_cost: f64,
}

impl StageSpec {
    pub fn new(model: FeatureModel, on_cost: f64, off_cost: f64) -> Self {
        Self {
            model,
            on_cost,
            off_cost,
            uncertainty: UncertaintyParams::default(),
            carry_on_cost: 0.0,
        }
    }

    pub fn with_uncertainty(mut self, u: UncertaintyParams) -> Self {
        self.uncertainty = u;
        self
    }
}

/// A cascade together with its costs and operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub stages: Vec<StageSpec>,
    pub miss_cost: f64,
    pub fa_cost: f64,
    pub prior: f64,
    pub lambda: f64,
}

/// `acc[s] = Σ_{t ≥ s} d_t`, with `acc[K] = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumulatedOffCost(Vec<f64>);

impl AccumulatedOffCost {
    pub fn new(stages: &[StageSpec]) -> Self {
        let mut acc = vec![0.0; stages.len() + 1];
        for s in (0..stages.len()).rev() {
            acc[s] = acc[s + 1] + stages[s].off_cost;
        }
        Self(acc)
    }

    /// Idle energy of stages `s..K`.
    pub fn from(&self, s: usize) -> f64 {
        self.0[s]
    }
}

impl SystemSpec {
    pub fn new(stages: Vec<StageSpec>, miss_cost: f64, fa_cost: f64, prior: f64, lambda: f64) -> Result<Self> {
        let spec = Self {
            stages,
            miss_cost,
            fa_cost,
            prior,
            lambda,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Input("stage list is empty".into()));
        }
        if self.stages.len() < 2 {
            return Err(Error::Input("a cascade needs at least two stages".into()));
        }
        if !(self.miss_cost > 0.0 && self.fa_cost > 0.0) {
            return Err(Error::Input("miss and false-alarm costs must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.prior) {
            return Err(Error::Input(format!("prior {} outside [0, 1]", self.prior)));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Input(format!(
                "lambda {} must be a finite nonnegative number",
                self.lambda
            )));
        }
        for (s, st) in self.stages.iter().enumerate() {
            if !(st.on_cost >= 0.0 && st.off_cost >= 0.0) {
                return Err(Error::Input(format!("stage {}: costs must be nonnegative", s + 1)));
            }
            if s > 0 && st.off_cost >= st.on_cost {
                return Err(Error::Input(format!(
                    "stage {}: off-cost {} must be below on-cost {}",
                    s + 1,
                    st.off_cost,
                    st.on_cost
                )));
            }
            st.uncertainty.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }

    pub fn with_prior(&self, prior: f64) -> Self {
        Self { prior, ..self.clone() }
    }

    pub fn accumulated_off_cost(&self) -> AccumulatedOffCost {
        AccumulatedOffCost::new(&self.stages)
    }

    /// `C_A / (C_A + C_M)`.
    pub fn final_threshold(&self) -> f64 {
        self.fa_cost / (self.fa_cost + self.miss_cost)
    }

    /// Energy when stage 1 always stops.
    pub fn min_energy(&self) -> f64 {
        self.stages[0].on_cost + self.accumulated_off_cost().from(1)
    }

    /// Energy when every stage always runs.
    pub fn max_energy(&self) -> f64 {
        self.stages.iter().map(|s| s.on_cost).sum()
    }

    /// Reachable posterior interval after each stage, propagated from the prior.
    /// The last stage is unrestricted.
    pub fn stage_bounds(&self) -> Vec<BeliefInterval> {
        let k = self.len();
        let mut out = Vec::with_capacity(k);
        let mut iv = BeliefInterval::point(self.prior);
        for st in &self.stages[..k - 1] {
            iv = posterior_bounds(iv, RobustBand::of_model(&st.model));
            out.push(iv);
        }
        out.push(BeliefInterval::full());
        out
    }

    /// Replaces stages `1..K-1` by their least-favorable models. The last stage is
    /// kept exact. Returned stages carry zero uncertainty.
    pub fn robustified(&self) -> Result<RobustSystem> {
        let k = self.len();
        let mut spec = self.clone();
        let mut reports = Vec::with_capacity(k);
        for (s, st) in spec.stages.iter_mut().enumerate() {
            let report = if s + 1 < k {
                least_favorable(&st.model, &st.uncertainty)?
            } else {
                if !st.uncertainty.is_zero() {
                    log::warn!("ignoring uncertainty parameters on the last stage");
                }
                least_favorable(&st.model, &UncertaintyParams::default())?
            };
            st.model = report.model.clone();
            st.uncertainty = UncertaintyParams::default();
            reports.push(report);
        }
        Ok(RobustSystem {
            nominal: self.stages.iter().map(|s| s.model.clone()).collect(),
            spec,
            reports,
        })
    }

    /// Removes stage `s` (0-based, not the first or last). Its `carry_on_cost`
    /// is added to the on-cost of the stage that follows.
    pub fn drop_stage(&self, s: usize) -> Result<Self> {
        if s == 0 || s + 1 >= self.len() {
            return Err(Error::Input("only intermediate stages can be dropped".into()));
        }
        let mut out = self.clone();
        let removed = out.stages.remove(s);
        out.stages[s].on_cost += removed.carry_on_cost;
        out.validate()?;
        Ok(out)
    }

    /// Short content hash used to tie policies and reports to their spec.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        let digest = Sha256::digest(&bytes);
        hex::encode(&digest[..8])
    }
}

/// A spec with robustified intermediate stages, plus the nominal models.
#[derive(Debug, Clone)]
pub struct RobustSystem {
    pub spec: SystemSpec,
    pub nominal: Vec<FeatureModel>,
    pub reports: Vec<LeastFavorable>,
}

/// Result of [`solve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    /// Thresholds clamped into each stage's reachable posterior interval.
    pub thresholds: Vec<f64>,
    /// Thresholds the policy acts on: the first grid belief where continuing
    /// is no worse than stopping (`+∞` when the stage always stops).
    #[serde(with = "crate::serde_ext::vec_f64_inf")]
    pub decision_thresholds: Vec<f64>,
    pub bounds: Vec<BeliefInterval>,
    pub value_tables: Vec<BeliefTable>,
    pub root_value: f64,
    pub lambda: f64,
    pub prior: f64,
    pub fingerprint: String,
}

impl Policy {
    pub fn grid(&self) -> BeliefGrid {
        self.value_tables[0].grid()
    }

    pub fn stage_count(&self) -> usize {
        self.thresholds.len()
    }

    /// Continue (or declare positive, at the last stage) at posterior `pi`.
    #[inline]
    pub fn proceeds(&self, stage: usize, pi: f64) -> bool {
        pi >= self.decision_thresholds[stage]
    }

    pub fn check(&self, spec: &SystemSpec) -> Result<()> {
        if self.stage_count() != spec.len() {
            return Err(Error::PolicyMismatch(format!(
                "policy has {} stages, system has {}",
                self.stage_count(),
                spec.len()
            )));
        }
        let fp = spec.fingerprint();
        if self.fingerprint != fp {
            return Err(Error::PolicyMismatch(format!(
                "policy fingerprint {} does not match system {}",
                self.fingerprint, fp
            )));
        }
        Ok(())
    }
}

/// Risk decomposition of a policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub total: f64,
    pub inter_miss: f64,
    pub final_miss: f64,
    pub final_fa: f64,
    /// Expected energy per frame (mJ).
    pub energy: f64,
    pub weighted_energy: f64,
}

impl RiskReport {
    /// Sum of the four components.
    pub fn recomposed(&self) -> f64 {
        self.weighted_energy + self.inter_miss + self.final_miss + self.final_fa
    }

    pub fn bayes_risk(&self) -> f64 {
        self.inter_miss + self.final_miss + self.final_fa
    }
}

/// `Σ_y p(y | b) · table(π(y, b))`.
#[inline]
pub(crate) fn expectation(model: &FeatureModel, table: &BeliefTable, b: f64) -> f64 {
    let mut acc = 0.0;
    for y in 0..model.alphabet_size() {
        let e = model.evidence(b, y);
        if e > 0.0 {
            acc += e * table.interpolate(model.posterior(b, y));
        }
    }
    acc
}

#[inline]
pub(crate) fn tie_tolerance(x: f64) -> f64 {
    1e-12 * (1.0 + x.abs())
}

/// Last-stage value `min(C_M b, C_A (1 − b))`.
pub(crate) fn terminal_table(grid: BeliefGrid, miss_cost: f64, fa_cost: f64) -> BeliefTable {
    grid.tabulate(|b| (miss_cost * b).min(fa_cost * (1.0 - b)))
}

/// One backward step: stop at `C_M b + λ·stop_energy`, or pay `λ·on_cost` and
/// move to `next`. Returns the value table and the first continuing grid index.
pub(crate) fn backward_step(
    grid: BeliefGrid,
    miss_cost: f64,
    lambda: f64,
    stop_energy: f64,
    on_cost: f64,
    model: &FeatureModel,
    next: &BeliefTable,
) -> (BeliefTable, Option<usize>) {
    let m = grid.size();
    let mut stop = Vec::with_capacity(m);
    let mut cont = Vec::with_capacity(m);
    for b in grid.points() {
        stop.push(miss_cost * b + lambda * stop_energy);
        cont.push(lambda * on_cost + expectation(model, next, b));
    }
    // Ties continue.
    let first = (0..m).find(|&j| cont[j] <= stop[j] + tie_tolerance(stop[j]));
    if let Some(f) = first {
        if let Some(j) = (f..m).find(|&j| cont[j] > stop[j] + 1e-9 * (1.0 + stop[j].abs())) {
            log::warn!("continue region is not an interval (grid index {j}); using threshold rule");
        }
    }
    let values = (0..m)
        .map(|j| match first {
            Some(f) if j >= f => cont[j],
            _ => stop[j],
        })
        .collect();
    (BeliefTable::new(grid, values).expect("grid-sized"), first)
}

/// Solves the cascade for the spec's λ.
pub fn solve(spec: &SystemSpec, grid: BeliefGrid) -> Result<Policy> {
    spec.validate()?;
    let k = spec.len();
    let lambda = spec.lambda;
    let acc = spec.accumulated_off_cost();
    let bounds = spec.stage_bounds();

    let mut tables = vec![terminal_table(grid, spec.miss_cost, spec.fa_cost)];
    let mut decision = vec![spec.final_threshold()];
    for s in (0..k - 1).rev() {
        let next = &spec.stages[s + 1];
        let (table, first) = backward_step(
            grid,
            spec.miss_cost,
            lambda,
            acc.from(s + 1),
            next.on_cost,
            &next.model,
            tables.last().expect("nonempty"),
        );
        tables.push(table);
        decision.push(first.map_or(f64::INFINITY, |j| grid.point(j)));
    }
    tables.reverse();
    decision.reverse();

    let thresholds = decision
        .iter()
        .zip(&bounds)
        .enumerate()
        .map(|(s, (&t, iv))| if s + 1 == k { t } else { iv.clamp(t) })
        .collect();
    let root_value = lambda * spec.stages[0].on_cost + expectation(&spec.stages[0].model, &tables[0], spec.prior);

    Ok(Policy {
        thresholds,
        decision_thresholds: decision,
        bounds,
        value_tables: tables,
        root_value,
        lambda,
        prior: spec.prior,
        fingerprint: spec.fingerprint(),
    })
}

/// Risk components of `policy` by backward recursion on its grid. The components
/// add up to the policy's root value.
pub fn evaluate(spec: &SystemSpec, policy: &Policy) -> Result<RiskReport> {
    policy.check(spec)?;
    let grid = policy.grid();
    let k = spec.len();
    let acc = spec.accumulated_off_cost();
    let tau_k = policy.decision_thresholds[k - 1];

    // [inter_miss, final_miss, final_fa, energy]
    let mut cur: [BeliefTable; 4] = [
        grid.tabulate(|_| 0.0),
        grid.tabulate(|b| if b < tau_k { spec.miss_cost * b } else { 0.0 }),
        grid.tabulate(|b| if b >= tau_k { spec.fa_cost * (1.0 - b) } else { 0.0 }),
        grid.tabulate(|_| 0.0),
    ];
    for s in (0..k - 1).rev() {
        let next = &spec.stages[s + 1];
        let tau = policy.decision_thresholds[s];
        let stop_energy = acc.from(s + 1);
        let mut vals: [Vec<f64>; 4] = Default::default();
        for b in grid.points() {
            if b < tau {
                vals[0].push(spec.miss_cost * b);
                vals[1].push(0.0);
                vals[2].push(0.0);
                vals[3].push(stop_energy);
            } else {
                for (c, v) in vals.iter_mut().enumerate() {
                    let e = expectation(&next.model, &cur[c], b);
                    v.push(if c == 3 { next.on_cost + e } else { e });
                }
            }
        }
        cur = vals.map(|v| BeliefTable::new(grid, v).expect("grid-sized"));
    }
    let first = &spec.stages[0];
    let e = |t: &BeliefTable| expectation(&first.model, t, spec.prior);
    let energy = first.on_cost + e(&cur[3]);
    Ok(RiskReport {
        total: policy.root_value,
        inter_miss: e(&cur[0]),
        final_miss: e(&cur[1]),
        final_fa: e(&cur[2]),
        energy,
        weighted_energy: policy.lambda * energy,
    })
}

/// Exact risk components of the threshold policy acting on exact posteriors,
/// by forward enumeration of the reachable posterior support. This is what a
/// deployment (or the simulator) realizes, free of grid interpolation.
pub fn evaluate_exact(spec: &SystemSpec, policy: &Policy) -> Result<RiskReport> {
    policy.check(spec)?;
    evaluate_thresholds_exact(spec, &policy.decision_thresholds)
}

/// [`evaluate_exact`] for an arbitrary threshold vector.
#[allow(clippy::needless_range_loop)]
pub fn evaluate_thresholds_exact(spec: &SystemSpec, thresholds: &[f64]) -> Result<RiskReport> {
    let k = spec.len();
    if thresholds.len() != k {
        return Err(Error::PolicyMismatch("threshold count differs from stage count".into()));
    }
    let acc = spec.accumulated_off_cost();
    let (cm, ca) = (spec.miss_cost, spec.fa_cost);
    // posterior bits -> (P(X=1, path), P(X=0, path))
    let mut support: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    support.insert(spec.prior.to_bits(), (spec.prior, 1.0 - spec.prior));
    let mut r = RiskReport {
        total: 0.0,
        inter_miss: 0.0,
        final_miss: 0.0,
        final_fa: 0.0,
        energy: spec.stages[0].on_cost,
        weighted_energy: 0.0,
    };
    for s in 0..k {
        let model = &spec.stages[s].model;
        let mut next: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
        for (&bits, &(m1, m0)) in &support {
            let pi = f64::from_bits(bits);
            for y in 0..model.alphabet_size() {
                let (a, b) = (m1 * model.p1()[y], m0 * model.p0()[y]);
                if a + b == 0.0 {
                    continue;
                }
                let post = model.posterior(pi, y);
                let go = post >= thresholds[s];
                if s + 1 == k {
                    if go {
                        r.final_fa += ca * b;
                    } else {
                        r.final_miss += cm * a;
                    }
                } else if go {
                    r.energy += (a + b) * spec.stages[s + 1].on_cost;
                    let slot = next.entry(post.to_bits()).or_insert((0.0, 0.0));
                    slot.0 += a;
                    slot.1 += b;
                } else {
                    r.inter_miss += cm * a;
                    r.energy += (a + b) * acc.from(s + 1);
                }
            }
        }
        support = next;
    }
    r.weighted_energy = spec.lambda * r.energy;
    r.total = r.recomposed();
    Ok(r)
}

/// Largest posterior-support enumeration used when calibrating λ.
const EXACT_ENERGY_LIMIT: f64 = 4.0e6;

/// Finds the λ whose policy spends at most `budget` mJ/frame, as close to it as
/// the bisection tolerance allows. Energy is the exact executed energy when the
/// feature paths are few enough to enumerate, the grid estimate otherwise.
pub fn calibrate_lambda(spec: &SystemSpec, budget: f64, grid: BeliefGrid) -> Result<(f64, Policy)> {
    spec.validate()?;
    let (lo_e, hi_e) = (spec.min_energy(), spec.max_energy());
    let slack = 1e-9 * hi_e.max(1.0);
    if !(budget >= lo_e - slack && budget <= hi_e + slack) {
        return Err(Error::InfeasibleBudget {
            budget,
            min: lo_e,
            max: hi_e,
        });
    }
    let paths: f64 = spec.stages.iter().map(|s| s.model.alphabet_size() as f64).product();
    let exact = paths <= EXACT_ENERGY_LIMIT;
    let run = |lambda: f64| -> Result<(f64, Policy)> {
        let s = spec.with_lambda(lambda);
        let p = solve(&s, grid)?;
        let e = if exact {
            evaluate_exact(&s, &p)?
        } else {
            evaluate(&s, &p)?
        }
        .energy;
        Ok((e, p))
    };
    let (e0, p0) = run(0.0)?;
    if e0 <= budget + slack {
        return Ok((0.0, p0));
    }
    // Past this λ every stage-2 extraction costs more than any miss it can prevent.
    let gap = spec.stages[1..]
        .iter()
        .map(|s| s.on_cost - s.off_cost)
        .fold(f64::INFINITY, f64::min);
    let mut hi = (spec.miss_cost / gap.max(1e-300)).max(1e-12);
    let (mut e_hi, mut p_hi) = run(hi)?;
    let mut guard = 0;
    while e_hi > budget + slack {
        hi *= 2.0;
        (e_hi, p_hi) = run(hi)?;
        guard += 1;
        if guard > 200 {
            return Err(Error::Numerical("λ search failed to reach the budget".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        if hi - lo <= 1e-6 * hi || (budget - e_hi).abs() <= 1e-4 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (e, p) = run(mid)?;
        if e <= budget + slack {
            hi = mid;
            e_hi = e;
            p_hi = p;
        } else {
            lo = mid;
        }
    }
    Ok((hi, p_hi))
}

/// Per-stage verdicts of the early-positive test plus the thresholds behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeOptimality {
    /// Largest grid belief at which the stage value is below the early-positive
    /// cost `C_A (1 − b) + λ·d_{i+1}`; `None` when there is none.
    pub positive_thresholds: Vec<Option<f64>>,
    pub upper_bounds: Vec<f64>,
    pub holds: Vec<bool>,
}

/// Whether early positive decisions could help any intermediate stage.
pub fn check_cascade_optimality_detailed(spec: &SystemSpec, policy: &Policy) -> Result<CascadeOptimality> {
    policy.check(spec)?;
    let k = spec.len();
    let acc = spec.accumulated_off_cost();
    let grid = policy.grid();
    let mut out = CascadeOptimality {
        positive_thresholds: Vec::with_capacity(k - 1),
        upper_bounds: Vec::with_capacity(k - 1),
        holds: Vec::with_capacity(k - 1),
    };
    for s in 0..k - 1 {
        let v = policy.value_tables[s].values();
        let stop_energy = policy.lambda * acc.from(s + 1);
        let t = (0..grid.size())
            .rev()
            .find(|&j| {
                let b = grid.point(j);
                v[j] - (spec.fa_cost * (1.0 - b) + stop_energy) < 0.0
            })
            .map(|j| grid.point(j));
        let upper = policy.bounds[s].hi;
        out.positive_thresholds.push(t);
        out.upper_bounds.push(upper);
        out.holds.push(t.is_some_and(|t| t > upper));
    }
    Ok(out)
}

/// One boolean per intermediate stage; all `true` means early positive
/// decisions cannot improve the design.
pub fn check_cascade_optimality(spec: &SystemSpec, policy: &Policy) -> Result<Vec<bool>> {
    Ok(check_cascade_optimality_detailed(spec, policy)?.holds)
}
