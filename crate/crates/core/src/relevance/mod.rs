//! Pointwise relevance regression: least-squares gradient boosting, frozen
//! base models extended with a few residual adjustment trees, per-grade
//! evaluation and per-market threshold tuning.

mod dataset;
mod gbdt;
mod tree;
mod tune;

pub use dataset::{Dataset, Grade};
pub use gbdt::{
    rmse, rmse_by_label, train_adjustment, train_base, AdjustmentParams, GbdtModel, GbdtParams,
    GradeRmse, Predict, RmseReport, Score, StackedModel, TrainedBase, MAX_ADJUSTMENT_DEPTH, MAX_ADJUSTMENT_TREES,
};
pub use tree::{fit_tree, Node, RegressionTree};
pub(crate) use tree::stable_mean;
pub use tune::{tune_market_threshold, TunedThreshold, RELEVANT_GRADE};
