//! The simulated microscope: slides, objectives, stage, camera capture with a
//! Bayer sensor, image-signal preprocessing and focus scoring.

mod capture;
pub mod demo;
mod focus;
mod imageio;
mod isp;
mod objective;
mod session;
mod slide;

pub use capture::{capture_fov, gaussian_blur, mosaic_rggb, render_fov, FovFrame, StageMark, StagePose};
pub use focus::{focus_score, laplacian_variance, FocusScorer};
pub use imageio::{decode_rgb_png, downscale, encode_rgb_png, load_rgb_png, save_rgb_png};
pub use isp::{debayer, flat_field_white_balance};
pub use objective::{Objective, ObjectiveName, DEFAULT_SENSOR_PITCH_UM};
pub use session::{ModelRegistry, ObjectiveChange, ScopeSession, NO_MODEL_NOTICE};
pub use slide::{list_slides, Annotation, SlideMeta, TissueClass, VirtualSlide};

use thiserror::Error;

use crate::inference::InferenceError;
use crate::netgraph::GraphError;

#[derive(Debug, Error)]
pub enum ScopeError {
    #[error("stage position ({x_um:.1}, {y_um:.1}) um is outside the slide")]
    OutOfBounds { x_um: f64, y_um: f64 },
    #[error("raster must have even dimensions, got {height}x{width}")]
    OddDimensions { height: usize, width: usize },
    #[error("FOV size must be a positive even number of pixels, got {0}")]
    BadFovSize(usize),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("unknown objective {0:?}")]
    UnknownObjective(String),
    #[error("unknown slide {0:?}")]
    UnknownSlide(String),
    #[error("invalid slide: {0}")]
    InvalidSlide(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(String),
    #[error("metadata error: {0}")]
    Meta(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

pub type Result<T> = std::result::Result<T, ScopeError>;
