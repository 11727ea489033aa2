//! Diagnostics beyond headline metrics: per-code performance, a smoothed
//! trend over training frequency, status regressions, the manual review
//! workflow and embedding export.

mod embedding;
mod per_code;
mod review;
mod ses;
mod trend;

use thiserror::Error;

pub use embedding::{export_embeddings, pca_2d, write_embeddings};
pub use per_code::{per_code_performance, write_per_code_csv, PerCodeStats};
pub use review::{draw_review_sample, score_review, ReviewCandidate, ReviewRow, ReviewSample, ReviewScore, Verdict};
pub use ses::{ols_hc1, ses_regression, Panel, RegressionError, RegressionResult, SesReport};
pub use trend::{kernel_trend, kernel_trend_with_bandwidth, silverman_bandwidth, TrendCurve};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least {needed} defined points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("sample of {requested} requested from a population of {population}")]
    SampleTooLarge { requested: usize, population: usize },
    #[error("rows without a verdict: {}", .0.join(", "))]
    UnannotatedRows(Vec<String>),
    #[error("invalid review file: {0}")]
    InvalidReview(String),
    #[error("threshold {0} outside (0,1)")]
    ThresholdOutOfRange(f64),
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error(transparent)]
    Model(#[from] crate::nn::ModelError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
