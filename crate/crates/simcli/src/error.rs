use std::path::{Path, PathBuf};

use abs_traj::environment::EnvError;
use abs_traj::qlearning::QError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
    #[error("{}{}: {message}", path_prefix(.path), line_suffix(.line))]
    Parse {
        path: Option<PathBuf>,
        line: Option<usize>,
        message: String,
    },
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Diagnostic(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Table(#[from] QError),
}

fn path_prefix(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| "<input>".into())
}

fn line_suffix(l: &Option<usize>) -> String {
    l.map(|l| format!(":{l}")).unwrap_or_default()
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn parse(path: &Path, line: usize, message: impl Into<String>) -> Self {
        CliError::Parse {
            path: Some(path.to_path_buf()),
            line: Some(line),
            message: message.into(),
        }
    }

    pub fn with_path(self, path: &Path) -> Self {
        match self {
            CliError::Parse { line, message, .. } => CliError::Parse {
                path: Some(path.to_path_buf()),
                line,
                message,
            },
            other => other,
        }
    }

    /// Process exit code: 2 bad input, 3 I/O, 4 the trained policy failed
    /// its rollout checks, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Parse { .. } => 2,
            CliError::Io { .. } => 3,
            CliError::Diagnostic(_) => 4,
            CliError::Env(EnvError::InvalidScenario(_)) => 2,
            CliError::Table(QError::Io(_)) => 3,
            CliError::Table(QError::Malformed(_)) => 2,
            _ => 1,
        }
    }
}
