//! File formats, metrics and synthetic data.

pub mod formats;
pub mod report;
pub mod synth;

pub use formats::{
    read_features, read_labels, read_model, write_atomic, Dtype, FeatureFile, LabelFile, ModelFile, Standardization,
};
pub use report::{read_metrics, REPORT_SCHEMA, write_metrics, DatasetSummary, MetricsRecord, OracleComparison, RunReport};
pub use synth::{synth_data, SynthSpec};
