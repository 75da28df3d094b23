//! Feature-domain thresholds that adapt to target activation rates, so a
//! deployed stage can decide `y >= eta` without evaluating posteriors.
//!
//! The target rate of a stage depends on its incoming belief, so one threshold
//! and one rate estimate are kept per incoming-belief grid cell.

use serde::{Deserialize, Serialize};

use crate::cascade::{Policy, SystemSpec};
use crate::error::{Error, Result};
use crate::model::{BeliefGrid, BeliefTable, FeatureModel};

/// `q_i(b)` per stage, tabulated on the belief grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationTargets {
    pub tables: Vec<BeliefTable>,
}

/// Probability that the posterior after `model` clears `tau`, starting from `b`.
pub fn activation_probability(model: &FeatureModel, tau: f64, b: f64) -> f64 {
    (0..model.alphabet_size())
        .filter(|&y| model.posterior(b, y) >= tau)
        .map(|y| model.evidence(b, y))
        .sum()
}

pub fn compute_activation_targets(spec: &SystemSpec, policy: &Policy, grid: BeliefGrid) -> Result<ActivationTargets> {
    policy.check(spec)?;
    let tables = spec
        .stages
        .iter()
        .zip(&policy.decision_thresholds)
        .map(|(st, &tau)| grid.tabulate(|b| activation_probability(&st.model, tau, b)))
        .collect();
    Ok(ActivationTargets { tables })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveState {
    pub mu: f64,
    pub grid: BeliefGrid,
    /// `eta[stage][cell]`.
    pub eta: Vec<Vec<f64>>,
    /// Moving-average activation rate, `None` before the first visit.
    pub rate: Vec<Vec<Option<f64>>>,
    pub alphabet: Vec<usize>,
    /// Stages whose likelihood ratio is nondecreasing; the others keep the
    /// belief-domain rule.
    pub adaptive: Vec<bool>,
}

impl AdaptiveState {
    pub fn new(spec: &SystemSpec, grid: BeliefGrid, mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Input(format!("step size {mu} must be positive")));
        }
        let alphabet: Vec<usize> = spec.stages.iter().map(|s| s.model.alphabet_size()).collect();
        let adaptive: Vec<bool> = spec.stages.iter().map(|s| s.model.has_monotone_ratio()).collect();
        for (i, ok) in adaptive.iter().enumerate() {
            if !ok {
                log::warn!(
                    "stage {} has a non-monotone likelihood ratio; using posterior thresholds",
                    i + 1
                );
            }
        }
        Ok(Self {
            mu,
            grid,
            eta: alphabet.iter().map(|&q| vec![q as f64 / 2.0; grid.size()]).collect(),
            rate: alphabet.iter().map(|_| vec![None; grid.size()]).collect(),
            alphabet,
            adaptive,
        })
    }

    pub fn cell(&self, belief: f64) -> usize {
        self.grid.nearest(belief)
    }

    /// `true` means continue (or declare positive at the last stage).
    #[inline]
    pub fn decide(&self, stage: usize, cell: usize, y: usize) -> bool {
        y as f64 >= self.eta[stage][cell]
    }

    /// `eta += mu (observed - target)`, kept inside the feature range.
    pub fn step(&mut self, stage: usize, cell: usize, observed: f64, target: f64) {
        let eta = &mut self.eta[stage][cell];
        *eta = (*eta + self.mu * (observed - target)).clamp(0.0, self.alphabet[stage] as f64);
    }

    /// Folds one activation outcome into the rate estimate, then steps `eta`.
    pub fn observe(&mut self, stage: usize, cell: usize, activated: bool, target: f64) {
        let a = if activated { 1.0 } else { 0.0 };
        let r = self.rate[stage][cell].get_or_insert(target);
        *r += self.mu * (a - *r);
        let r = *r;
        self.step(stage, cell, r, target);
    }
}

/// Free-standing form of [`AdaptiveState::step`].
pub fn adaptive_step(state: &mut AdaptiveState, stage: usize, cell: usize, observed: f64, target: f64) {
    state.step(stage, cell, observed, target);
}
