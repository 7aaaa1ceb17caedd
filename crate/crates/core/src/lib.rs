//! Core of an augmented reality microscope simulator: a small CNN graph
//! executor with fully convolutional inference, a virtual microscope, the
//! six-stage display pipeline, overlay generation and an evaluation toolkit.
//!
//! The types other crates pass around are re-exported at the root.

pub mod evalkit;
pub mod inference;
pub mod netgraph;
pub mod overlay;
pub mod pipeline;
pub mod scope;
pub mod tensor;

pub use evalkit::{EvalError, LabeledFov, Scored};
pub use inference::{Heatmap, InferenceError};
pub use netgraph::{GraphError, GridGeometry, NetGraph};
pub use overlay::{ColorSpace, DisplayMode, FocusMeasurement, OverlayGraphic, OverlayStyle};
pub use pipeline::{ExecMode, InferenceMode, PipelineConfig, PipelineError, PipelineStats, QueuePolicy};
pub use scope::{ObjectiveName, ScopeError, ScopeSession, SlideMeta, StagePose, TissueClass, VirtualSlide};
pub use tensor::{Padding, Tensor};
