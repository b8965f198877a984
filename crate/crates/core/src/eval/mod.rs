//! Automatic evaluation: per-pair metrics, corpus aggregates, λ-control
//! calibration, annotation agreement, and pluggable scorers.

pub mod agreement;
pub mod control;
pub mod metrics;
pub mod scorer;

pub use control::{control_report, evaluate_outputs, lambda_grid, score_pair, select_lambda_max, ControlReport, RewriteSystem, ScoreOptions};
pub use metrics::{a_acc, agg, calib, copy_metric, incr, r_acc, sim_indicator, unigram_f1, AccVariant, EvalRecord};
pub use scorer::{scorer_from_spec, OracleScorer, ScorerBundle};
