use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    #[error("undeclared atomic proposition `{0}`")]
    UndeclaredAtom(String),

    #[error("DFA construction exceeded the state cap of {0}")]
    StateCap(usize),

    #[error("invalid DFA: {0}")]
    InvalidDfa(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dense representation of {requested} entries exceeds the cap of {cap}")]
    DenseCap { requested: usize, cap: usize },

    #[error("negative factor entry {0} where a nonnegative tensor is required")]
    NegativeEntry(f64),

    #[error("no policy entry for mode {mode} at step {step}")]
    MissingPolicy { mode: usize, step: usize },

    #[error("internal consistency violation: {0}")]
    Consistency(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
