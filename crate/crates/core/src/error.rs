use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("ingest: {0}")]
    Ingest(String),

    #[error("split refused: {0} positives is fewer than 10")]
    DegenerateSplit(usize),

    #[error("user {0} has interacted with every item; no negative exists")]
    NoNegativeAvailable(u32),

    #[error("index out of range: {kind} {index} (size {size})")]
    IndexOutOfRange {
        kind: &'static str,
        index: usize,
        size: usize,
    },

    #[error("parameter vector size mismatch: expected {expected}, got {got}")]
    ParamSizeMismatch { expected: usize, got: usize },

    #[error("noise multiplier is zero: mechanism is non-private")]
    NonPrivate,

    #[error("noise calibration cannot reach epsilon {target} within z in [{lo}, {hi}]")]
    CalibrationUnreachable { target: f64, lo: f64, hi: f64 },

    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("re-rank: user {user} has only {got} candidates, need at least {need}")]
    TooFewCandidates { user: u32, got: usize, need: usize },

    #[error("brute force refused: {0} joint selections exceeds the 10^6 budget")]
    InstanceTooLarge(u128),

    #[error("group {0} has no evaluable users")]
    EmptyGroup(&'static str),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("bad file format: {0}")]
    Format(String),
}

impl Error {
    /// Tag an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
