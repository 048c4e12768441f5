//! Deterministic signal conditioning.

pub mod filter;
pub mod normalize;
pub mod pipeline;
pub mod rotation;
pub mod transient;

pub use filter::{lowpass_filter, Biquad, Butterworth};
pub use normalize::{apply_normalizer, fit_normalizer, NormStats, Normalization};
pub use pipeline::{
    fit_pipeline_normalizer, isolate_transient, run_pipeline, run_pipeline_detailed, Isolated, PipelineConfig,
};
pub use rotation::{channels_to_tcp, rotvec_to_matrix, wrench_to_tcp};
pub use transient::{
    extract_window, select_onset, short_time_energy, threshold_indices, CrossingIndices, OnsetRule, Thresholds,
};
