//! Evaluation harness: ROC curves, Gaussian smearing bands, uncertainty
//! separation metrics and an exact small-n GP posterior used as an oracle
//! for the random-feature head.

mod metrics;
mod oracle;
mod report;
mod roc;

pub use metrics::{class_means, mean, rankdata, spearman, uncertainty_ratio};
pub use oracle::{exact_gp_oracle, rbf, ORACLE_MAX_POINTS};
pub use report::{EvalReport, UncertaintySummary};
pub use roc::{fpr_grid, percentile, roc_curve, roc_with_smearing, RocCurve, SmearBand, DEFAULT_TRIALS, GRID_POINTS};
