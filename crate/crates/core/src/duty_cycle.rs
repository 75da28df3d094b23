//! Duty-cycling baseline: the full detector runs on a fraction `rho` of frames
//! and every other frame is declared negative.

use serde::{Deserialize, Serialize};

use crate::cascade::{Policy, RiskReport, SystemSpec};
use crate::error::{Error, Result};
use crate::model::FeatureModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DutyCycleSpec {
    pub rho: f64,
    pub on_cost: f64,
    pub off_cost: f64,
    pub detector: FeatureModel,
    pub miss_cost: f64,
    pub fa_cost: f64,
    pub prior: f64,
}

impl DutyCycleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Input(format!("duty factor {} outside [0, 1]", self.rho)));
        }
        if !(self.off_cost >= 0.0 && self.off_cost <= self.on_cost) {
            return Err(Error::Input("duty-cycle costs need 0 <= d_dc <= D_dc".into()));
        }
        if !(0.0..=1.0).contains(&self.prior) {
            return Err(Error::Input(format!("prior {} outside [0, 1]", self.prior)));
        }
        Ok(())
    }

    /// Duty-cycler built from the cascade's last stage (`D_K`, `d_K`).
    pub fn ideal(spec: &SystemSpec, rho: f64) -> Self {
        let last = spec.stages.last().expect("nonempty cascade");
        Self {
            rho,
            on_cost: last.on_cost,
            off_cost: last.off_cost,
            detector: last.model.clone(),
            miss_cost: spec.miss_cost,
            fa_cost: spec.fa_cost,
            prior: spec.prior,
        }
    }

    /// Same detector as [`DutyCycleSpec::ideal`] with explicit costs.
    pub fn with_costs(spec: &SystemSpec, rho: f64, on_cost: f64, off_cost: f64) -> Self {
        Self {
            on_cost,
            off_cost,
            ..Self::ideal(spec, rho)
        }
    }

    pub fn with_rho(&self, rho: f64) -> Self {
        Self { rho, ..self.clone() }
    }

    pub fn threshold(&self) -> f64 {
        self.fa_cost / (self.fa_cost + self.miss_cost)
    }

    pub fn energy(&self) -> f64 {
        self.rho * self.on_cost + (1.0 - self.rho) * self.off_cost
    }
}

/// On-mode miss and false-alarm risks of the single-stage Bayes detector.
pub fn on_mode_risks(spec: &DutyCycleSpec) -> (f64, f64) {
    let tau = spec.threshold();
    let m = &spec.detector;
    let (mut miss, mut fa) = (0.0, 0.0);
    for y in 0..m.alphabet_size() {
        if m.posterior(spec.prior, y) < tau {
            miss += m.p1()[y];
        } else {
            fa += m.p0()[y];
        }
    }
    (
        spec.miss_cost * spec.prior * miss,
        spec.fa_cost * (1.0 - spec.prior) * fa,
    )
}

/// Risk of a duty-cycler. Off-mode misses are reported as `inter_miss`,
/// on-mode errors as `final_miss` and `final_fa`.
pub fn dc_risk(spec: &DutyCycleSpec, lambda: f64) -> RiskReport {
    let (rm, ra) = on_mode_risks(spec);
    let rho = spec.rho;
    let energy = spec.energy();
    let mut r = RiskReport {
        total: 0.0,
        inter_miss: (1.0 - rho) * spec.miss_cost * spec.prior,
        final_miss: rho * rm,
        final_fa: rho * ra,
        energy,
        weighted_energy: lambda * energy,
    };
    r.total = r.recomposed();
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalentRho {
    pub rho: f64,
    /// The target energy was outside `[d_dc, D_dc]`.
    pub clamped: bool,
}

/// Duty factor whose expected energy equals `target`.
pub fn energy_equivalent_rho(target: f64, on_cost: f64, off_cost: f64) -> EquivalentRho {
    if on_cost <= off_cost {
        return EquivalentRho {
            rho: 1.0,
            clamped: target != on_cost,
        };
    }
    let rho = (target - off_cost) / (on_cost - off_cost);
    EquivalentRho {
        rho: rho.clamp(0.0, 1.0),
        clamped: !(0.0..=1.0).contains(&rho),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dominance {
    /// Cascade risk below the always-off risk.
    pub eq13: bool,
    /// Intermediate miss risk paid for by the weighted energy saving.
    pub eq14: bool,
}

impl Dominance {
    pub fn holds(&self) -> bool {
        self.eq13 && self.eq14
    }
}

/// Sufficient conditions for the cascade to beat the ideal duty-cycler at
/// every duty factor.
pub fn dominance_check(spec: &SystemSpec, policy: &Policy, report: &RiskReport) -> Result<Dominance> {
    policy.check(spec)?;
    let last = spec.stages.last().expect("nonempty cascade");
    let lambda = policy.lambda;
    Ok(Dominance {
        eq13: report.total <= spec.miss_cost * spec.prior + lambda * last.off_cost,
        eq14: report.inter_miss <= lambda * (last.on_cost - report.energy),
    })
}
