//! Cross-modal convolutional sequence embeddings.
//!
//! Each modality has its own bank of convolution filters over sliding windows
//! of its instance sequence; tanh activations are max-pooled into a shared
//! `u`-dimensional space. A linear classifier shared by all modalities and a
//! pairwise relevance penalty shape that space. Training alternates closed-form,
//! gradient and multiplier updates on the augmented Lagrangian of the problem
//! with the embeddings split out as free variables.

pub mod conv;
pub mod data;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod objective;
pub mod relevance;
pub mod solver;
pub mod windowing;

pub use conv::{activate, activate_grad, conv_max_pool, embed, score, Embedding, FilterBank};
pub use error::{Error, Result};
pub use objective::{Hyperparams, ModelParams, TrainState};
pub use relevance::{laplacian, GraphOperator, RelevanceMatrix};
pub use solver::{solve, SolveReport, Solver, SolverConfig, TrainingSet};
pub use windowing::{make_windows, window_count, Label, SequenceSample, WindowedSequence};
