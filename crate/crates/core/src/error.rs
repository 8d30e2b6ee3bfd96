use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("unknown environment `{0}`")]
    UnknownEnvironment(String),
    #[error("cannot step from a terminal state")]
    TerminalState,
    #[error("action {action} out of range for {num_actions} actions")]
    InvalidAction { action: usize, num_actions: usize },
    #[error("index {index} out of range for trajectory of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("trajectory record {index} does not chain onto the previous state")]
    BrokenTrajectory { index: usize },
    #[error("factual index {index} has fewer than {horizon} steps of history")]
    InsufficientHistory { index: usize, horizon: usize },
    #[error("rollout is empty")]
    EmptyRollout,
    #[error("rollout of length {len} exceeds horizon {horizon}")]
    RolloutTooLong { len: usize, horizon: usize },
    #[error("sample count must be at least 1")]
    InvalidSampleCount,
    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty set")]
    EmptySet,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed state key `{0}`")]
    MalformedKey(String),
    #[error("evaluating genome {genome:?}: {source}")]
    Evaluation { genome: Vec<usize>, source: Box<Error> },
}
