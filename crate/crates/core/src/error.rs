use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("group {0} is empty, cannot balance groups")]
    EmptyGroup(usize),
    #[error("training data contains a single class, probe is unfittable")]
    SingleClass,
    #[error("optimization failed after {iterations} iterations: {reason}")]
    OptimizationFailure { iterations: usize, reason: String },
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Divergence { epoch: usize },
    #[error("feature space mismatch: summary is for `{summary}`, current space is `{current}`")]
    SpaceMismatch { summary: String, current: String },
    #[error("unknown artifact `{0}`")]
    UnknownArtifact(String),
    #[error("no valid resample after {0} redraws")]
    ResampleExhausted(usize),
    #[error("mixing map rejection sampling failed after {0} draws")]
    ConditioningFailed(usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
}
