//! Tensor layers, the reverse-mode tape and the three networks.

pub mod checkpoint;
pub mod graph;
pub mod layers;
pub mod nets;
pub mod params;
pub mod tensor;

pub use graph::{Gradients, Graph, Mode, NodeId};
pub use layers::{conv2d, instance_norm, transposed_conv2d, KernelShape, Padding, IN_EPS};
pub use nets::{
    boundary_tensor, vesselnet_forward, xnet_forward, znet_forward, NetConfig, NetKind, Network,
};
pub use params::{ModelParams, ParamId, ParamTensor};
pub use tensor::Tensor4;
