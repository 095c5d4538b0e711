use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("{op}: expected {expected} input channels, found {found}")]
    ChannelMismatch {
        op: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{op}: output size would be non-positive")]
    EmptyOutput { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward already ran on this graph; reset gradients first")]
    AlreadyBackpropagated,
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("CFL number {cfl:.4} exceeds the stencil limit {limit}")]
    CflViolation { cfl: f64, limit: f64 },
    #[error("wavefield became non-finite at time step {step}")]
    Instability { step: usize },
    #[error("shot {source_index}: {inner}")]
    Shot { source_index: usize, inner: Box<Error> },
    #[error("sample {index}: {inner}")]
    Sample { index: usize, inner: Box<Error> },
    #[error("degenerate normalization statistics for {0}")]
    DegenerateStats(&'static str),
    #[error("malformed tensor data: {0}")]
    Format(String),
    #[error("model in {mode} mode cannot serve {requested}")]
    ModeMismatch {
        mode: &'static str,
        requested: &'static str,
    },
    #[error("coupling translator needs an even channel count, got {0}")]
    OddChannels(usize),
    #[error("image {h}x{w} is smaller than the {window}x{window} window")]
    ImageTooSmall { h: usize, w: usize, window: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("internal error: frozen parameter `{0}` was modified")]
    FrozenParameterMutated(String),
    #[error("normalization scheme mismatch: {0}")]
    StatsMismatch(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
