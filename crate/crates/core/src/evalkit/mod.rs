//! Downstream evaluation: RBF SVM on frozen representations and
//! classification metrics.

mod metrics;
mod svm;

pub use metrics::{metrics, metrics_with_labels, ClassMetrics, MetricsReport, SeedMetrics};
pub use svm::{
    default_c_grid, dual_objective, predict, rbf_kernel, smo_solve, stratified_folds, svm_fit_binary, svm_fit_select,
    BinaryMachine, DualSolution, GammaRule, SelectConfig, SmoParams, SvmModel, C_INFINITY,
};
