//! Depth metrics and the synthetic scenes that stand in for network side outputs.

mod metrics;
mod synth;

pub use metrics::{compute_metrics, MetricsReport, DEFAULT_MIN_VALID_DEPTH, DELTA_THRESHOLDS, METRICS_CSV_HEADER};
pub use synth::{gaussian_blur, synth_scene, synth_side_outputs, SynthSpec};
