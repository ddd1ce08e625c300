use std::io;

use thiserror::Error;

pub type Result<T, E = SeedError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SeedError {
    #[error("i/o error ({context}): {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("length error: expected {expected} payload bytes, found {found}")]
    Length { expected: u64, found: u64 },

    #[error("data error: non-finite value at row {row}, col {col}")]
    NonFinite { row: usize, col: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape mismatch in {context}: {detail}")]
    Shape { context: String, detail: String },

    #[error("unknown target set `{0}`")]
    UnknownTarget(String),

    #[error("instance too large for exact search: {nodes} nodes (limit {limit})")]
    SizeGuard { nodes: usize, limit: usize },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<SeedError>,
    },
}

impl SeedError {
    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        SeedError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        SeedError::Validation(msg.into())
    }

    pub fn shape(context: impl Into<String>, detail: impl Into<String>) -> Self {
        SeedError::Shape {
            context: context.into(),
            detail: detail.into(),
        }
    }

    /// Process exit status for the command-line front end.
    ///
    /// 2 for bad input, 3 for I/O, 4 for a broken internal invariant.
    pub fn exit_code(&self) -> u8 {
        match self {
            SeedError::Io { .. } => 3,
            SeedError::Invariant(_) => 4,
            SeedError::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }

    /// The innermost error, skipping stage wrappers.
    pub fn root(&self) -> &SeedError {
        match self {
            SeedError::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| SeedError::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
