//! Off-policy value bounds that stay valid when the logging policy drifts at
//! runtime inside an `l_inf` ball of log-ratio radius `alpha`, plus policy
//! learning on the doubly robust lower bound.
//!
//! Numeric routines are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar type for the common cases.

pub mod aux_erm;
pub mod bounds;
pub mod data;
pub mod error;
pub mod estimators;
pub mod geometry;
pub mod io;
pub mod learn;
pub mod policy;
pub mod scalar;
pub mod simulate;
pub mod theory;

pub use aux_erm::{
    asym_loss, asym_loss_grad_hess, build_reward_bounds, fit_constant, fit_tree_ensemble, AsymLossSpec, BoostGrid,
    BoostParams, RewardBoundsTable, RewardModels, TreeEnsembleModel,
};
pub use bounds::{
    dr_bound, ips_bound, nips_bound_exact, nips_bound_greedy, rm_bound, tips_bound, BoundCertificate, Direction,
    EstimatorKind,
};
pub use data::{validate_dataset, LoggedDataset, ValidationReport, Violation};
pub use error::{Error, Result};
pub use estimators::{dr_value, ips_value, nips_value, rm_value, tips_value, PolicyProbs};
pub use geometry::{feasible_interval, feasible_interval_truncated, FeasibleInterval, UncertaintyBudget};
pub use learn::{minorize_maximize, LearnConfig, LearnTrace};
pub use policy::{adam_maximize, policy_probs, surrogate_objective_and_gradient, PolicyClass, PolicyModel};
pub use scalar::Scalar;
pub use simulate::{convert_supervised, fluctuation, oracle_value, sample_perturbed_policy, LoggingConfig, SplitSpec};
pub use theory::{generalization_slack, rademacher_mc, SlackInputs};

pub type Dataset = LoggedDataset<f64>;
pub type Budget = UncertaintyBudget<f64>;
pub type Interval = FeasibleInterval<f64>;
pub type Certificate = BoundCertificate<f64>;
pub type BoundsTable = RewardBoundsTable<f64>;
pub type Probs = PolicyProbs<f64>;
pub type Policy = PolicyModel<f64>;
pub type TreeModel = TreeEnsembleModel<f64>;

pub type Dataset32 = LoggedDataset<f32>;
pub type Budget32 = UncertaintyBudget<f32>;
pub type Certificate32 = BoundCertificate<f32>;
pub type BoundsTable32 = RewardBoundsTable<f32>;
pub type Probs32 = PolicyProbs<f32>;
pub type Policy32 = PolicyModel<f32>;
