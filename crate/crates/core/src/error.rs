//! Error type shared by every module in the crate.
//!
//! Variants are deliberately fine-grained so callers (and the CLI) can map
//! them onto distinct failure categories: shape/argument problems are
//! validation failures, `NonFinite`/`Singular`/`Tolerance` are numeric
//! failures, and the file variants each name one way a binary container can
//! be unreadable.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error enum.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimensions of two operands (or an operand and a declared extent) disagree.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An argument is out of range or structurally invalid (empty dims, zero
    /// extents, bad mode index, negative weight, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A matrix that must be invertible (or full-rank) is not.
    #[error("singular input: {0}")]
    Singular(String),

    /// A size guard for an intentionally small-scale code path was exceeded.
    #[error("guard exceeded: {0}")]
    GuardExceeded(String),

    /// A NaN or infinity appeared where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A numeric tolerance was not met (e.g. a gradient check).
    #[error("tolerance not met: {0}")]
    Tolerance(String),

    /// A binary file does not start with the expected magic bytes.
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    /// A binary file declares an unsupported format version.
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    /// A binary file ended in the middle of the named array (or directory record).
    #[error("truncated file while reading array `{array}`")]
    Truncated { array: String },

    /// The trailing CRC32 does not match the file contents.
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    /// A required named array is missing from a container file.
    #[error("missing array `{0}`")]
    MissingArray(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors that indicate a numeric failure (as opposed to bad
    /// inputs or unreadable files). The CLI maps these onto its own exit code.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::Singular(_) | Error::Tolerance(_)
        )
    }
}
