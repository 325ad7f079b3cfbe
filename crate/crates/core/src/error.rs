use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point ({:.6}, {:.6}, {:.6}) lies outside the grid bounds", .0[0], .0[1], .0[2])]
    OutOfBounds([f64; 3]),

    #[error("config error: {0}")]
    Config(String),

    #[error("numerical error in {group}: {detail}")]
    Numerical { group: String, detail: String },

    /// Operation requested in a state that cannot serve it (e.g. no gradients yet).
    #[error("state error: {0}")]
    State(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Dataset(#[from] DatasetError),

    #[error("scene spec error: {0}")]
    Scene(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Parse and load failures for on-disk datasets. Each variant names the
/// offending file or frame.
#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{file}: malformed JSON: {detail}")]
    Json { file: PathBuf, detail: String },

    #[error("{file}: frame {frame}: missing key `{key}`")]
    MissingKey {
        file: PathBuf,
        frame: String,
        key: String,
    },

    #[error("{file}: frame {frame}: bad pose: {detail}")]
    BadPose {
        file: PathBuf,
        frame: String,
        detail: String,
    },

    #[error("frame {frame}: cannot read image {path}: {detail}")]
    Image {
        frame: String,
        path: PathBuf,
        detail: String,
    },

    #[error("frame {frame}: image is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    ImageSize {
        frame: String,
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },

    #[error("{0}: no transforms_*.json splits found")]
    NoSplits(PathBuf),

    #[error("{file}: {detail}")]
    Io { file: PathBuf, detail: String },
}
