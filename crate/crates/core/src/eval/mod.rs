//! Confusion matrices, classification metrics and feature histograms.

mod histogram;
mod metrics;

pub use histogram::{
    export_feature_histograms, feature_histograms, histograms_to_delimited, FeatureHistogram, DEFAULT_BINS,
};
pub use metrics::{confusion, f1_score, metrics, Averages, ClassMetrics, ConfusionMatrix, MetricsReport};
