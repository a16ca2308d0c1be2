use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: alloc::vec::Vec<usize>,
        actual: alloc::vec::Vec<usize>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("domain index {index} out of range ({count} sources)")]
    Domain { index: usize, count: usize },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("gradient supplied for frozen parameter `{0}`")]
    FrozenGradient(String),
    #[error("non-finite loss at step {step}, source {source_index:?}, phase {phase}: {diagnostics}")]
    NonFinite {
        step: u64,
        source_index: Option<usize>,
        phase: String,
        diagnostics: String,
    },
    #[error("empty dataset: {0}")]
    Empty(String),
    #[error("training invariant violated: {0}")]
    Invariant(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
}
