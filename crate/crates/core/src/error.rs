use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("step index {got} does not follow trajectory of length {len}")]
    IndexGap { len: usize, got: usize },
    #[error("cannot append a step after the terminal answer")]
    AfterTerminal,
    #[error("summary context requested but no summary supplied")]
    MissingSummary,
    #[error("schema violation at `{path}`: {reason}")]
    SchemaViolation { path: String, reason: String },

    #[error("invalid world spec: {0}")]
    InvalidSpec(String),
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("policy cannot be enumerated: {0}")]
    NonEnumerablePolicy(String),
    #[error("scripted policy has no distribution for state {0:#018x}")]
    UnknownState(u64),
    #[error("invalid policy distribution: {0}")]
    InvalidDistribution(String),

    #[error("summary for step {have} cannot be extended with step {got}")]
    SummaryOutOfOrder { have: usize, got: usize },

    #[error("backend unavailable after {attempts} attempt(s): {reason}")]
    BackendUnavailable { attempts: u32, reason: String },
    #[error("could not parse model output: {0}")]
    ParseFailure(String),
    #[error("no `Score:` line found in generation")]
    NoScoreFound,
    #[error("candidate carries no log-probabilities")]
    MissingLogprobs,

    #[error("group size mismatch: {winners} winner rollouts vs {losers} loser rollouts")]
    LengthMismatch { winners: usize, losers: usize },
    #[error("baseline mean accuracy is zero; ratio undefined")]
    ZeroBaseline,

    #[error("benchmark suite has no tasks")]
    EmptySuite,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn schema(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::SchemaViolation { path: path.into(), reason: reason.into() }
    }

    /// True for failures of a remote model backend (as opposed to bad input).
    pub fn is_backend(&self) -> bool {
        matches!(self, Error::BackendUnavailable { .. })
    }
}
