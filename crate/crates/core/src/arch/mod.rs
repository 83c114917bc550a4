//! Network specs, the model zoo, the conv-to-Ghost rewrite, materialized networks and
//! weight checkpoints.

pub mod checkpoint;
pub mod ghostify;
pub mod network;
pub mod spec;
pub mod zoo;

pub use ghostify::ghostify;
pub use network::Network;
pub use spec::{Activation, BneckSpec, ConvSpec, GhostSpec, LayerSpec, NetworkSpec};
pub use zoo::{build_ghostnet, build_ghostnet_for, scale_width, tiny_ghost_cnn, vgg16_cifar};
