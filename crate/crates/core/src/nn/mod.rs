//! Small reverse-mode tensor core: dense layers, normalization, attention,
//! losses, Adam and the warmup schedule.

mod encoding;
mod graph;
mod layers;
mod optim;
mod params;
mod real;
mod tensor;

pub use encoding::sinusoidal_encoding;
pub use graph::{AttnMask, Graph, Var, LAYER_NORM_EPS};
pub use layers::{FeedForward, LayerNorm, Linear, MultiHeadAttention};
pub use optim::{noam_lr, Adam, ScheduleConfig};
pub use params::{Gradients, Init, ParamId, Parameter, ParameterStore};
pub use real::Real;
pub use tensor::{Tensor, MAX_RANK};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("every position is masked")]
    EmptyMask,
    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),
    #[error("step must be at least 1")]
    ZeroStep,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
