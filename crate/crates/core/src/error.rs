use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the codec, the learners and the round driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate categorical: all weights are zero")]
    DegenerateCategorical,

    #[error("infinite divergence: q = {q} against p = {p}")]
    InfiniteDivergence { q: f64, p: f64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("no feasible candidate among {0} samples")]
    NoFeasibleCandidate(usize),

    #[error("index {index} out of range for {candidates} candidates")]
    IndexOutOfRange { index: usize, candidates: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed IDX file {}: {reason}", path.display())]
    Idx { path: PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(left: usize, right: usize) -> Result<()> {
    if left == right {
        Ok(())
    } else {
        Err(Error::LengthMismatch { left, right })
    }
}
