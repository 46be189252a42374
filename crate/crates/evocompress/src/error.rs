use std::io;
use std::path::PathBuf;

use evocompress_core::Error as CoreError;

pub type Result<T, E = AppError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("evaluator worker: {0}")]
    Worker(String),
}

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        AppError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        AppError::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// 2 for bad input (usage, missing or malformed files, invalid
    /// configuration), 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) | AppError::Parse { .. } => 2,
            AppError::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => 2,
            AppError::Core(
                CoreError::InvalidConfig { .. }
                | CoreError::InvalidModel(_)
                | CoreError::ChannelChain { .. }
                | CoreError::KernelTooLarge { .. }
                | CoreError::NonFinite { .. }
                | CoreError::Shape(_)
                | CoreError::NoDecomposableLayer
                | CoreError::PlanMismatch(_)
                | CoreError::NotMaskable { .. }
                | CoreError::Infeasible { .. },
            ) => 2,
            _ => 1,
        }
    }
}
