use std::path::PathBuf;

use crate::analysis::AnalysisError;
use crate::backend::BackendError;
use crate::keywords::KeywordError;
use crate::simpo::SimpoError;
use crate::synthesis::SynthesisError;
use crate::templates::ParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Process exit codes used by the CLI.
pub mod exit_code {
    pub const SUCCESS: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const BACKEND: i32 = 3;
    pub const STAGE: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Keyword(#[from] KeywordError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Simpo(#[from] SimpoError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("stage `{stage}` failed at iteration {iteration}: {message}")]
    Stage {
        iteration: u32,
        stage: String,
        message: String,
        /// Exit code of the underlying error.
        code: i32,
    },
    /// Every request in a batch failed; `backend` is set when all failures
    /// came from the model backend rather than from unparseable output.
    #[error("no usable output: {message}")]
    NoOutput { backend: bool, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record in {path} line {line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Machine-readable category used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Backend(_) => "backend",
            Error::Keyword(_) => "keyword",
            Error::Parse(_) => "parse",
            Error::Synthesis(_) => "synthesis",
            Error::Simpo(_) => "simpo",
            Error::Analysis(_) => "analysis",
            Error::Stage { .. } => "stage",
            Error::NoOutput { backend: true, .. } => "backend",
            Error::NoOutput { .. } => "no_output",
            Error::Io { .. } => "io",
            Error::Record { .. } => "record",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => exit_code::CONFIG,
            Error::Backend(_) => exit_code::BACKEND,
            Error::Synthesis(SynthesisError::Backend(_)) => exit_code::BACKEND,
            Error::Analysis(AnalysisError::Backend(_)) => exit_code::BACKEND,
            Error::Stage { code, .. } => *code,
            Error::NoOutput { backend: true, .. } => exit_code::BACKEND,
            _ => exit_code::STAGE,
        }
    }
}
