use std::path::PathBuf;

use crate::seqio::Provenance;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: I/O failure: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: length {len} bytes is not a multiple of the {record}-byte record size")]
    TruncatedFile {
        path: PathBuf,
        len: u64,
        record: usize,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("rotation block is not orthonormal (deviation {deviation:e}){}", line_suffix(*.line))]
    OrthonormalityViolation { line: Option<usize>, deviation: f64 },

    #[error("pose bottom row must be [0, 0, 0, 1], got {0:?}")]
    NotHomogeneous([f64; 4]),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("length mismatch for {what}: expected {expected}, found {found}")]
    LengthMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("invalid manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("{path}: byte {index} of moving mask is {value}, expected 0 or 1")]
    InvalidMask {
        path: PathBuf,
        index: usize,
        value: u8,
    },

    #[error("index {index} out of range for {len} scans")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-smearing accumulation needs a moving mask for scan {scan}")]
    MissingMask { scan: u32 },

    #[error("cell size must be positive, got {0}")]
    NonPositiveCellSize(f64),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("reference points alone occupy {reference_voxels} voxels, budget is {max_voxel}")]
    BudgetInfeasible {
        reference_voxels: usize,
        max_voxel: usize,
    },

    #[error("radius must be non-negative, got {0}")]
    NegativeRadius(f64),

    #[error("frame {frame}: {detail}")]
    KeyMismatch { frame: u32, detail: String },

    #[error("point {0:?} has no recorded observation")]
    UnseenPoint(Provenance),

    #[error("class id {class} outside the {num_ids} known ids")]
    UnknownClass { class: u16, num_ids: usize },

    #[error("no class has a non-empty union")]
    EmptyReport,

    #[error("frame {frame}, index {index}: {detail}")]
    Alignment {
        frame: String,
        index: usize,
        detail: String,
    },
}

fn line_suffix(line: Option<usize>) -> String {
    line.map(|l| format!(" at line {l}")).unwrap_or_default()
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}
