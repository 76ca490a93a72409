use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("forward cache does not match the network or gradient it is used with")]
    StaleCache,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("episode is over; call reset before stepping again")]
    StepAfterDone,
    #[error("not computable: k = {k} outside 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("empty score list")]
    EmptyScores,
    #[error("training diverged at step {step}: {what} is not finite")]
    Divergence { what: &'static str, step: u64 },
}

impl Error {
    pub(crate) fn shape(
        context: &'static str,
        expected: impl core::fmt::Debug,
        found: impl core::fmt::Debug,
    ) -> Self {
        Error::ShapeMismatch {
            context,
            expected: alloc::format!("{expected:?}"),
            found: alloc::format!("{found:?}"),
        }
    }
}
