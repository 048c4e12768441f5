//! Multi-branch neural networks with hand-written reverse mode.

pub mod arch;
pub mod gradcheck;
pub mod input;
pub mod layers;
pub mod model;
pub mod optim;
pub mod serialize;
pub mod train;

pub use arch::{build_preset, lint, Architecture, BranchSpec, InputSelector, LintIssue, Preset, DEFAULT_PARAM_CAP};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use input::{check_class_map, InputBuilder};
pub use layers::LayerSpec;
pub use model::{
    argmax_lowest, softmax, softmax_cross_entropy, ForwardCache, Gradients, Mode, ModelGraph, ModelInput, ModelMeta,
    Prediction,
};
pub use optim::{Adam, AdamConfig};
pub use serialize::{load_model, model_from_bytes, model_to_bytes, save_model, ModelHeader, FORMAT_VERSION};
pub use train::{evaluate, train, EpochStats, History, Sample, TrainConfig};
