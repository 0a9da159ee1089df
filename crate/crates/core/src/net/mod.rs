//! Dense sigmoid networks with a softmax head, trained by plain SGD.

mod backprop;
mod network;
mod serialize;
mod train;

pub use backprop::{loss_and_gradients, Gradients};
pub use network::{init_network, xor_reference_network, Architecture, Head, Layer, Network};
pub use serialize::{network_from_bytes, network_to_bytes};
pub use train::{gradient_descent, pretrain_sda, train, DescentOutcome, TrainConfig};
