//! Twin-branch transformer classifier with gated, learnable-similarity
//! multi-head attention, for windowed multivariate process data such as the
//! Tennessee Eastman benchmark.
//!
//! Everything runs on a small dense `f64` tensor type with a tape-based
//! reverse-mode autodiff engine, so the whole model (including attention
//! gates and the bilinear similarity form) can be trained and
//! gradient-checked without an external framework.
//!
//! ```
//! use twinfdd::{forward, TwinModelConfig, Tensor};
//!
//! let config = TwinModelConfig::tiny();
//! let params = config.init_params(0).unwrap();
//! let x = Tensor::zeros(&[config.window_len, config.n_features]);
//! let logits = forward(&x, &params, &config).unwrap();
//! assert_eq!(logits.len(), config.n_classes);
//! ```

pub mod attention;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod params;
pub mod reference;
pub mod tensor;
pub mod train;

pub use attention::{gdl_attention, scaled_attention, SimilarityKind};
pub use autodiff::{concat_cols, concat_rows, BoundParams, Gradients, Tape, Var};
pub use error::{Error, Result};
pub use gradcheck::{finite_diff_check, GradReport};
pub use metrics::{confusion, per_class_metrics, report, ClassificationReport, ConfusionMatrix};
pub use model::{argmax, forward, predict, SplitStrategy, TwinModelConfig};
pub use params::ParameterSet;
pub use tensor::Tensor;
pub use train::{evaluate, train, TrainConfig, TrainHistory};
