use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot open {path}: {source}")]
    Open {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported magic number {0:?} (expected P2 or P5)")]
    UnsupportedMagic(String),
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("maxval {0} exceeds 255")]
    MaxvalTooLarge(u32),
    #[error("truncated pixel data: expected {expected} samples, found {found}")]
    TruncatedData { expected: usize, found: usize },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("signal power is zero; SNR is undefined")]
    ZeroSignalPower,
    #[error("invalid patch size {size}: {reason}")]
    InvalidPatchSize { size: usize, reason: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("atom subset is rank deficient")]
    RankDeficient,
    #[error("dictionary too large for exhaustive enumeration ({0} atoms, limit 16)")]
    TooManyAtoms(usize),
    #[error("image too small for SSIM: {rows}x{cols}, need at least 11x11")]
    TooSmallForSsim { rows: usize, cols: usize },
}
