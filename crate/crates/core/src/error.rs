use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("computation graph: {0}")]
    Graph(String),

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: malformed `{field}` at offset {offset}: {detail}", file.display())]
    Format {
        file: PathBuf,
        field: String,
        offset: u64,
        detail: String,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(
        file: impl Into<PathBuf>,
        field: impl Into<String>,
        offset: u64,
        detail: impl Into<String>,
    ) -> Self {
        Error::Format {
            file: file.into(),
            field: field.into(),
            offset,
            detail: detail.into(),
        }
    }

    /// Short stable identifier used in the `error: <code>: <message>` line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite { .. } => "non-finite",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Graph(_) => "graph",
            Error::MissingGradient(_) => "missing-gradient",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
        }
    }
}
