//! Multilingual text normalization: datasets, prompting, model access,
//! a rule-based English baseline, scoring and run bookkeeping.

pub mod baseline;
pub mod dataset;
pub mod eval;
pub mod hillclimb;
pub mod llm;
pub mod metrics;
pub mod model;
pub mod prompting;
pub mod reporting;
pub mod scalar;

pub use model::{Category, IclExample, Locale, Provenance, RunConfig, Sample};
pub use scalar::{Exact, Scalar};

pub type MetricValue = metrics::MetricValue<f64>;
pub type ExactMetricValue = metrics::MetricValue<Exact>;
pub type RunReport = reporting::RunReport<f64>;
pub type ScoredSample = reporting::ScoredSample<f64>;
pub type IterationRecord = hillclimb::IterationRecord<f64>;
