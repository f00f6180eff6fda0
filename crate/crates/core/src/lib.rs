//! Multilevel Monte Carlo gradient estimators for SGD on sequential
//! stochastic simulations, with a delayed variant that refreshes fine
//! levels less often and exact work/span accounting in simulation steps.

pub mod autodiff;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod nsde;
pub mod optimizer;
pub mod paths;

pub use error::{Error, Result};
pub use estimators::{Allocation, DelayState, GradResult, RateParams};
pub use nsde::{HedgeNet, MarketParams, ParamVector};
pub use optimizer::{EstimatorKind, SgdConfig, TrajectoryPoint};
pub use paths::{CoupledIncrements, SeedSpec};
