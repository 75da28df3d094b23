//! Energy-constrained robust detection with cascades and detection graphs.

pub mod cascade;
pub mod error;
pub mod model;
pub mod robust;
mod serde_ext;

pub use cascade::{
    calibrate_lambda, check_cascade_optimality, evaluate, evaluate_exact, solve, Policy, RiskReport, StageSpec,
    SystemSpec,
};
pub use error::{Error, Result};
pub use model::{BeliefGrid, BeliefTable, FeatureModel, UncertaintyParams};
pub use robust::{least_favorable, BeliefInterval, LeastFavorable, RobustBand};
pub mod adaptive;
pub mod duty_cycle;
pub mod fixture;
pub mod graph;
pub mod io;
pub mod sim;
