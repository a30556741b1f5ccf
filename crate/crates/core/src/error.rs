use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("depth {depth} mm does not lie beyond the mask distance {mask_distance} mm")]
    DepthBehindMask { depth: f64, mask_distance: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("{count} random patterns did not cover every pixel after {attempts} draws")]
    Coverage { count: usize, attempts: usize },

    #[error("objective became non-finite at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("no pixel is valid in both depth maps")]
    EmptyValidRegion,
}

pub type Result<T> = std::result::Result<T, Error>;
