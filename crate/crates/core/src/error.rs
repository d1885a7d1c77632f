use thiserror::Error;

/// Errors produced anywhere in the lab.
#[derive(Debug, Error)]
pub enum Error {
    /// A document did not match its schema. `path` is the location of the
    /// offending field, e.g. `intersections[0].phases.3.turn`.
    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },

    /// A document parsed but broke a structural invariant.
    #[error("validation failed: {}", .findings.join("; "))]
    Validation { findings: Vec<String> },

    /// An argument outside its mathematical domain (negative volume, ActF < 1, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested design cannot be realized (oversaturation, min greens
    /// exceeding the cycle, too few runs for the model).
    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("rank deficient model matrix; dependent columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("{0}")]
    Config(String),

    #[error("experiment aborted: {0}")]
    Experiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Deserialize JSON, reporting the path of the first failing field.
pub(crate) fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::parse(path, e.into_inner().to_string())
    })
}
