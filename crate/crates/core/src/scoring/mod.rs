//! Class-conditional Gaussian scoring of embeddings, softmax confidence and
//! the two-threshold outlier rule.

mod decision;
mod stats;

pub use decision::{
    calibrate_on, calibrate_thresholds, confidence_score, decide, distance_score, mahalanobis,
    quantile, read_scores_csv, score_embeddings, write_scores_csv, OODDecision, ScoreRow,
    Thresholds,
};
pub use stats::{fit_one_class, fit_stats, ClassStats, FitOptions, Metric, METRICS};

#[cfg(test)]
mod tests;
