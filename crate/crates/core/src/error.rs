use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("layer `{layer}`: {message}")]
    Shape { layer: String, message: String },

    #[error("layer `{layer}` produced a non-finite value")]
    NonFinite { layer: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("layer `{layer}`: expected {expected} parameters, found {actual}")]
    SizeMismatch {
        layer: String,
        expected: usize,
        actual: usize,
    },

    #[error("insufficient training pairs: {count} (need at least {min})")]
    InsufficientData { count: usize, min: usize },

    #[error("average precision is undefined without ground truth")]
    UndefinedAp,

    #[error("correlation is undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("degenerate box: {0}")]
    DegenerateBox(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn shape(layer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Shape {
            layer: layer.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape { .. } => 2,
            Error::NonFinite { .. } | Error::UndefinedCorrelation(_) => 4,
            _ => 3,
        }
    }
}
