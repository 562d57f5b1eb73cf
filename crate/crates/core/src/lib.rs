//! Feed-forward networks whose links are discontinuous piecewise Lagrange
//! polynomials on Chebyshev-Lobatto nodes.
//!
//! Units average their incoming link outputs. There are no biases and no
//! unit nonlinearity; all expressiveness lives in the links. For any input
//! exactly one sub-link of each link fires, so every training step touches
//! only the active sub-network.

pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod link;
pub mod network;
pub mod polybasis;
pub mod registry;
pub mod train;

pub use error::{DataError, Error, Result};
pub use link::{build_link, recommended_range, LineInit, LinkOutput, LinkShape, PiecewiseLink};
pub use config::Params;
pub use data::SampleSet;
pub use network::{
    build_fully_connected, build_stencil, fresh_mask, DropoutMask, LayerShape, LinkConfig, Network, Trace,
};
pub use polybasis::NodeSet;
pub use registry::Registry;
pub use train::{
    backward, gradient_check, loss, loss_gradient, train_online, BackpropMode, GradientSet, History, TrainConfig,
    Trainer, UpdateRule,
};
