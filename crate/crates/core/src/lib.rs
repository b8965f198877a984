//! Few-shot style transfer with style-vector differences: the rewriter
//! model, its training objectives, paraphrase mining, λ-controlled
//! inference and the evaluation suite.

pub mod autograd;
pub mod checkpoint;
pub mod decode;
pub mod error;
pub mod eval;
pub mod inference;
pub mod kernels;
pub mod model;
pub mod noise;
pub mod objectives;
pub mod optim;
pub mod paraphrase;
pub mod records;
pub mod scalar;
pub mod style;
pub mod synthetic;
pub mod system;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use decode::DecodeStrategy;
pub use error::{Error, Result};
pub use model::{ModelConfig, RewriteModel, StyleInjection};
pub use style::StyleVector;
pub use vocab::{SpecialTokens, TokenSequence, Vocabulary};

/// Single-precision model used for training and serving.
pub type Model = RewriteModel<f32>;
/// Double-precision model, used by gradient checks.
pub type Model64 = RewriteModel<f64>;
/// Style vector matching [`Model`].
pub type Style = StyleVector<f32>;
