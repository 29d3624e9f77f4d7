//! Salient object detection network with boundary-aware pyramid
//! calibration, dual feedback from the deepest features and attention-based
//! refinement, together with its losses, metrics and training pipeline.

pub mod afr;
pub mod backbone;
pub mod bpc;
pub mod checkpoint;
pub mod config;
pub mod dffc;
mod error;
pub mod gradsuite;
pub mod network;
pub mod objective;
pub mod pipeline;

pub use config::{ablation_rows, BackboneConfig, ModelConfig, Preset};
pub use error::{Error, Result};
pub use network::{count_params, estimate_flops, params_by_module, FlopReport, ForwardOutputs, Network};
pub use checkpoint::Checkpoint;
