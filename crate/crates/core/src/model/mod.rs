//! Network assembly, shape tracing and resource accounting.

mod config;
mod network;
mod resources;
mod trace;

pub use config::{DilatedBlock, ExtractorLayer, Hyper, ModelConfig};
pub use network::{argmax, build_model, ForwardPass, Gradients, Model};
pub use resources::{
    complexity_decline_ratio, count_resources, separable_pairs, ResourceReport, ResourceRow, SeparablePair,
};
pub use trace::{first_violation, format_shape, shape_trace, Stage, TraceEntry};
