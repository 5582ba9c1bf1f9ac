//! RSTT space-time video super-resolution: four low-resolution frames in,
//! seven frames at twice the frame rate and four times the size out.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod metrics;
pub mod network;
pub mod params;
pub mod train;
pub mod verify;

pub use checkpoint::Checkpoint;
pub use config::{Fusion, ModelConfig, Preset};
pub use error::{Result, RsttError};
pub use network::{ClipSeptet, FrameQuad, Rstt};
pub use params::{InitScheme, ParamStore};
pub use train::{TrainConfig, Trainer};
