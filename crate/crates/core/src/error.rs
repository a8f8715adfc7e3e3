use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt dump at byte offset {offset}: {reason}")]
    Corruption { offset: usize, reason: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("degenerate mean: norm {norm:e} is below the floor {floor:e}")]
    DegenerateMean { norm: f64, floor: f64 },

    #[error("undefined for dimension {0}")]
    UndefinedDimension(usize),

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("generator error: {0}")]
    Generator(String),

    #[error("index {index} out of range for {len} texts")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numeric(_)
                | Error::DegenerateMean { .. }
                | Error::UndefinedDimension(_)
                | Error::UndefinedRatio(_)
                | Error::UndefinedCorrelation(_)
                | Error::Generator(_)
        )
    }

    /// Degenerate inputs that corpus-level pipelines skip and count.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            Error::DegenerateMean { .. } | Error::UndefinedRatio(_) | Error::UndefinedDimension(_)
        )
    }
}
