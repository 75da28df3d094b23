//! Synthetic three-stage acoustic-detector stand-in.
//!
//! Each stage observes a unit-variance Gaussian score shifted by its
//! discriminability under the target, quantized into 100 bins. Costs are
//! per-frame millijoules: power draw (mW) times processing time (s).

use crate::cascade::{StageSpec, SystemSpec};
use crate::error::Result;
use crate::model::{FeatureModel, UncertaintyParams};

pub const BINS: usize = 100;
pub const SEPARATIONS: [f64; 3] = [1.0, 2.0, 3.5];

/// Sensor-side pre-filter.
pub const D1: f64 = 84.36 * 0.016;
/// Transmission plus the spectral module.
pub const D2: f64 = 1097.0 * 0.011 + 15131.0 * 0.34e-6;
pub const D3: f64 = 15131.0 * 0.014;
pub const D2_OFF: f64 = 264.0 * 0.34e-6;
pub const D3_OFF: f64 = 264.0 * 0.014;
/// Transmission part of `D2`, still paid by the last stage when the middle one is removed.
pub const TRANSPORT: f64 = 1097.0 * 0.011;

/// Real duty-cycler: transmission plus the last stage.
pub const DC_ON: f64 = 1097.0 * 0.011 + 15131.0 * 0.014;
pub const DC_OFF: f64 = 264.0 * 0.014;

pub const MISS_COST: f64 = 3.0;
pub const FA_COST: f64 = 1.0;
pub const PRIOR: f64 = 0.1;
pub const LAMBDA: f64 = 1e-3;
pub const UNCERTAINTY: f64 = 0.1;

/// Quantized equal-variance Gaussian pair with the given mean separation.
pub fn gaussian_pair(separation: f64, bins: usize) -> Result<FeatureModel> {
    let (lo, hi) = (-4.0, separation + 4.0);
    let w = (hi - lo) / bins as f64;
    let density = |x: f64, mu: f64| (-0.5 * (x - mu) * (x - mu)).exp();
    let centers: Vec<f64> = (0..bins).map(|k| lo + (k as f64 + 0.5) * w).collect();
    let w0: Vec<f64> = centers.iter().map(|&x| density(x, 0.0)).collect();
    let w1: Vec<f64> = centers.iter().map(|&x| density(x, separation)).collect();
    FeatureModel::from_weights(&w0, &w1)
}

/// The fixture system with nominal models and uncertainty on the first two stages.
pub fn warbler_like() -> Result<SystemSpec> {
    let u = UncertaintyParams::uniform(UNCERTAINTY)?;
    let m: Vec<FeatureModel> = SEPARATIONS
        .iter()
        .map(|&s| gaussian_pair(s, BINS))
        .collect::<Result<_>>()?;
    let mut mid = StageSpec::new(m[1].clone(), D2, D2_OFF).with_uncertainty(u);
    mid.carry_on_cost = TRANSPORT;
    SystemSpec::new(
        vec![
            StageSpec::new(m[0].clone(), D1, 0.0).with_uncertainty(u),
            mid,
            StageSpec::new(m[2].clone(), D3, D3_OFF),
        ],
        MISS_COST,
        FA_COST,
        PRIOR,
        LAMBDA,
    )
}
