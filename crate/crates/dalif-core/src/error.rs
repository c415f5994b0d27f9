//! Crate-wide error type.

use std::fmt;
use std::path::PathBuf;

#[derive(Debug)]
pub enum Error {
    /// Tensor extents do not compose for the requested operation.
    Shape { op: &'static str, detail: String },
    /// A caller-visible contract was violated (e.g. non-binary spike tensor).
    Contract { op: &'static str, detail: String },
    /// Binary file parsing failed; `offset` is the byte offset of the problem.
    Parse {
        path: Option<PathBuf>,
        offset: usize,
        detail: String,
    },
    /// A value left the finite range during computation.
    NonFinite { context: String },
    /// Training aborted on a non-finite loss.
    NonFiniteLoss {
        epoch: usize,
        iteration: usize,
        layer: String,
    },
    /// Linear system has no unique solution.
    Singular { detail: String },
    /// Configuration problem (bad key, missing field, inconsistent values).
    Config { detail: String },
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "shape mismatch in {op}: {detail}"),
            Error::Contract { op, detail } => write!(f, "contract violation in {op}: {detail}"),
            Error::Parse {
                path,
                offset,
                detail,
            } => match path {
                Some(p) => write!(
                    f,
                    "parse error in {} at byte offset {offset}: {detail}",
                    p.display()
                ),
                None => write!(f, "parse error at byte offset {offset}: {detail}"),
            },
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::NonFiniteLoss {
                epoch,
                iteration,
                layer,
            } => write!(
                f,
                "non-finite loss at epoch {epoch}, iteration {iteration} (first \
                 non-finite tensor: {layer})"
            ),
            Error::Singular { detail } => write!(f, "singular system: {detail}"),
            Error::Config { detail } => write!(f, "config error: {detail}"),
            Error::Io { path, source } => {
                write!(f, "io error on {}: {source}", path.display())
            }
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract {
            op,
            detail: detail.into(),
        }
    }

    pub fn config(detail: impl Into<String>) -> Self {
        Error::Config {
            detail: detail.into(),
        }
    }
}
