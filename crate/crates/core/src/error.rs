use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("non-finite value while perturbing parameter `{param}`")]
    NonFinite { param: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    /// Failure inside one pipeline stage, tagged with the owning module.
    #[error("[{module}] {source}")]
    Stage {
        module: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-friendly kind tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Config(_) => "config",
            Error::MissingParam(_) => "missing-param",
            Error::NonFinite { .. } => "non-finite",
            Error::Input(_) => "input",
            Error::Generation(_) => "generation",
            Error::Undefined(_) => "undefined",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Stage { source, .. } => source.kind(),
        }
    }

    /// Module that raised the error, when it passed through a pipeline stage.
    pub fn module(&self) -> Option<&'static str> {
        match self {
            Error::Stage { module, .. } => Some(module),
            _ => None,
        }
    }
}

pub(crate) trait StageContext<T> {
    fn in_module(self, module: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn in_module(self, module: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                module,
                source: Box::new(e),
            },
        })
    }
}
