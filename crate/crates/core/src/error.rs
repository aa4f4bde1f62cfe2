use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounding box ({x}, {y}, {w}, {h}): {reason}")]
    InvalidBox {
        x: f64,
        y: f64,
        w: f64,
        h: f64,
        reason: &'static str,
    },

    #[error("score {0} outside [0, 1]")]
    InvalidScore(f64),

    #[error("category index {index} out of range for {num_categories} categories")]
    InvalidCategory { index: usize, num_categories: usize },

    #[error("filter diverged: aspect {aspect}, height {height}")]
    Divergence { aspect: f64, height: f64 },

    #[error("frame {got} is not after previous frame {previous}")]
    OutOfOrderFrame { previous: u64, got: u64 },

    #[error("detection for frame {detection} grouped under frame {frame}")]
    FrameMismatch { frame: u64, detection: u64 },

    #[error("track {0} has no predictions")]
    EmptyBuffer(u64),

    #[error("{0} is undefined for an empty input")]
    EmptyInput(&'static str),

    #[error("length mismatch: {0} predictions vs {1} ground-truth labels")]
    LengthMismatch(usize, usize),

    #[error("no ground-truth boxes to evaluate against")]
    NoGroundTruth,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
