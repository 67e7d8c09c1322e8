//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("not a NIfTI-1 file ({0}): bad magic/header size")]
    Format(String),

    #[error("unsupported NIfTI datatype code {0}")]
    Datatype(i16),

    #[error("unsupported shape: {0}")]
    UnsupportedShape(String),

    #[error("volumes not conformable: {0}")]
    Conformability(String),

    #[error("analysis mask is empty")]
    EmptyMask,

    #[error("cohort error: {0}")]
    Cohort(String),

    #[error("design error: {0}")]
    Design(String),

    #[error("insufficient degrees of freedom: n = {n}, rank = {rank}")]
    InsufficientDf { n: usize, rank: usize },

    #[error("subject order mismatch between stack and design matrix")]
    OrderMismatch,

    #[error("contrast not estimable: {0}")]
    NotEstimable(String),

    #[error("smoothness undefined: {0}")]
    SmoothnessUndefined(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate ROI: {0}")]
    DegenerateRoi(String),

    #[error("statistics error: {0}")]
    Stats(String),

    #[error("prediction error: {0}")]
    Predict(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a pipeline stage name, preserving the exit-code class.
    pub fn at_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::InsufficientDf { .. }
            | Error::NotEstimable(_)
            | Error::SmoothnessUndefined(_)
            | Error::DegenerateRoi(_) => 4,
            _ => 3,
        }
    }
}
