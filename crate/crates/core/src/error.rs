use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A denominator of the exact continued fraction vanished.
    #[error("pole{}: {detail}", fmt_ladder(*ladder))]
    Pole {
        ladder: Option<usize>,
        detail: String,
    },

    /// A power-series expansion hit a denominator with (near-)zero constant term.
    #[error("singular expansion{} at stage {stage}: constant term {constant:e}", fmt_ladder(*ladder))]
    SingularExpansion {
        ladder: Option<usize>,
        stage: usize,
        constant: f64,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("missing value in row {row}, column {column}")]
    MissingValue { row: usize, column: String },

    #[error("unknown column {0:?}")]
    UnknownColumn(String),

    #[error("target range is zero")]
    ZeroRange,

    #[error("io: {0}")]
    Io(String),

    #[error("serialization: {0}")]
    Serde(String),
}

fn fmt_ladder(ladder: Option<usize>) -> String {
    match ladder {
        Some(l) => format!(" in ladder {l}"),
        None => String::new(),
    }
}

impl Error {
    /// Stable short name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Config(_) => "config",
            Error::Pole { .. } => "pole",
            Error::SingularExpansion { .. } => "singular_expansion",
            Error::Empty(_) => "empty",
            Error::OutOfRange(_) => "out_of_range",
            Error::NonFinite(_) => "non_finite",
            Error::Parse { .. } => "parse",
            Error::MissingValue { .. } => "missing_value",
            Error::UnknownColumn(_) => "unknown_column",
            Error::ZeroRange => "zero_range",
            Error::Io(_) => "io",
            Error::Serde(_) => "serde",
        }
    }

    /// Attach a ladder index to pole and expansion errors.
    pub fn in_ladder(self, index: usize) -> Self {
        match self {
            Error::Pole { detail, .. } => Error::Pole {
                ladder: Some(index),
                detail,
            },
            Error::SingularExpansion {
                stage, constant, ..
            } => Error::SingularExpansion {
                ladder: Some(index),
                stage,
                constant,
            },
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
