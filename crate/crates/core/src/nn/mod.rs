//! A small neural-network core: exactly the layers the trace CNN needs, with
//! hand-written backward passes, softmax cross-entropy and Adam.

pub mod adam;
pub mod layers;
pub mod loss;
pub mod network;
pub mod tensor;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use layers::{conv1d, maxpool1d, Layer, LayerSpec, Mode};
pub use loss::{cross_entropy, soft_cross_entropy, softmax_t, Target};
pub use network::{Grads, Network, Pass};
pub use tensor::{Batch, Shape, Tensor};
pub use train::{evaluate, fit, Example, History, TrainConfig};
