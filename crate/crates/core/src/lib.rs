//! Cultural expressiveness evaluation for language-model responses.
//!
//! The crate covers the whole measurement pipeline:
//!
//! * [`corpus`]: forum question ingestion, filtering, deduplication and sampling.
//! * [`harness`]: response collection from pluggable model backends.
//! * [`providers`]: sentiment and sentence-embedding providers, with deterministic doubles.
//! * [`aggregation`]: reduction of human respondent pools into two reference answers.
//! * [`metrics`]: keyword frequency, sentiment difference, similarity, lexical statistics
//!   and the composite CE score with weight calibration.
//! * [`stats`]: Wilcoxon signed-rank test and percentile bootstrap intervals.
//! * [`finetune`]: low-rank adapter training on a small causal language model.
//! * [`report`]: embedding projections, tables, figures and run manifests.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases below fix the
//! scalar to `f64`, which is what the pipeline uses end to end.

pub mod aggregation;
pub mod corpus;
pub mod error;
pub mod finetune;
pub mod harness;
pub mod metrics;
pub mod providers;
pub mod report;
pub mod scalar;
pub mod stats;
pub mod text;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type SentimentScore = providers::SentimentScore<f64>;
pub type EmbeddingVector = providers::EmbeddingVector<f64>;
pub type ReferencePair = aggregation::ReferencePair<f64>;
pub type CeWeights = metrics::CeWeights<f64>;
pub type CeInputs = metrics::CeInputs<f64>;
pub type MetricRow = metrics::MetricRow<f64>;
pub type ConfidenceInterval = stats::ConfidenceInterval<f64>;
pub type TinyCausalLm = finetune::TinyCausalLm<f64>;
pub type LoraAdapter = finetune::LoraAdapter<f64>;
pub type ProjectionResult = report::ProjectionResult<f64>;
