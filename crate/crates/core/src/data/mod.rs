//! Dataset files, synthetic data, cross-validation folds and model files.

mod dataset;
mod folds;
mod model_file;
mod synth;

pub use dataset::{Dataset, Record, Task};
pub use folds::{make_folds, FoldSplit};
pub use model_file::{load_model, save_model, Model, Provenance, MODEL_MAGIC, MODEL_VERSION};
pub use synth::{generate_synthetic, nearest_anchor_accuracy, SynthSpec};
