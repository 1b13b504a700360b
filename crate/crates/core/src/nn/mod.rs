//! Small neural-network toolkit: autograd graph, parameters, layers, optimizer.

pub mod gradcheck;
mod graph;
mod layers;
mod optim;
mod params;

pub use graph::{sigmoid, softmax_in_place, ConvGeom, Gradients, Graph, MapShape, Mat, Var};
pub use layers::{BiGru, Gru, Linear, Sequences};
pub use optim::Adam;
pub use params::{he_normal, xavier, ParamId, ParamSet};
