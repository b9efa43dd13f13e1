//! Auxiliary asymmetric-loss regression producing surrogate reward bounds.

mod loss;
mod table;
mod tree;

pub use loss::{asym_loss, asym_loss_grad_hess, fit_constant, AsymLossSpec};
pub use table::{build_reward_bounds, BoostGrid, RewardBoundsTable, RewardModels, RewardTables, MIN_ACTION_SAMPLES};
pub use tree::{
    fit_tree_ensemble, fit_tree_ensemble_with_report, BoostParams, BoostReport, Node, RegressionTree,
    TreeEnsembleModel,
};
