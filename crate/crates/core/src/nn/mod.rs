//! Minimal neural-network toolkit on candle tensors: named parameters,
//! layers, Adam and the checkpoint container.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod ops;
pub mod params;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use layers::{Conv1d, ConvStack, Gru, Linear, UNet1d};
pub use params::{NamedTensor, ParamStore};
