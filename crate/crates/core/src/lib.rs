//! Attribution analysis for post-LN transformer encoders.
//!
//! A forward pass records per-layer traces; attribution methods turn each
//! trace into an n×n token-to-token matrix; rollout composes them across
//! layers; finite-difference oracles and correlation metrics score the
//! result against gradient-based references.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`). The CLI and the
//! acceptance suite run in `f64`.

pub mod attribution;
pub mod cli;
pub mod encoder;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod rollout;
pub mod scalar;
pub mod tensor;

pub use attribution::{compute, compute_all_layers, AttributionMatrix, Method, MixingLevel, MixingRatios};
pub use encoder::{forward, Contributions, ForwardOutput, LayerTrace};
pub use error::{Error, Result};
pub use metrics::{method_report, pearson, spearman, CorrelationReport, EvalConfig};
pub use model::{Activation, EncoderWeights, InputSequence, LayerNormWeights, LayerWeights, Linear, ModelConfig, TokenInput};
pub use oracle::{hta_x_input, saliency_grad_x_input, FdStep, HtaMatrix, HtaScaling, SaliencyVector};
pub use rollout::{cls_attribution, rollout, rollout_with, RolloutOptions, RolloutStack};
pub use scalar::Scalar;
pub use tensor::Matrix;

/// Scalar used by the CLI.
pub type Engine = f64;

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Model64 = encoder::Model<f64>;
pub type Model32 = encoder::Model<f32>;
pub type Model<T> = encoder::Model<T>;
pub type Trace64 = LayerTrace<f64>;
pub type Input64 = InputSequence<f64>;
