//! Predictive-coding networks trained by negative-free-energy gradient ascent.
//!
//! A hierarchical Gaussian generative model is inverted by alternating two
//! phases: an *inference* phase that relaxes per-sample variational
//! parameters (neural activity) toward the free-energy optimum, and a
//! *learning* phase that takes a single gradient step on the generative
//! weights and precisions at the converged activity. All update rules are
//! local: each layer touches only its own activity, the errors of the layer
//! below, and the weights between them.
//!
//! Two reference implementations live alongside the engine and serve as
//! oracles:
//!
//! - [`bp`] — a from-scratch backpropagation MLP sharing initialization with
//!   the PC network, used to demonstrate that precision-rescaled PC weight
//!   updates approximate BP gradients.
//! - [`kalman`] — a closed-form Kalman filter; the recurrent-PC filtering
//!   step reproduces its posterior mean on linear-Gaussian systems.
//!
//! The numeric kernels are generic over the scalar type through [`Scalar`];
//! concrete `f64` aliases are exported at the crate root.

pub mod activation;
pub mod bp;
pub mod checkpoint;
pub mod error;
pub mod inference;
pub mod kalman;
pub mod learning;
pub mod linalg;
pub mod model;
pub mod scalar;

pub use activation::Activation;
pub use error::{PcError, Result};
pub use inference::{ClampSpec, InferenceConfig, InferenceRun, PhiInit};
pub use learning::{LearningConfig, Task, TrainReport};
pub use model::{NetworkState, PCNetwork};
pub use scalar::Scalar;

/// Double-precision network, the default for all shipped experiments.
pub type PCNetwork64 = model::PCNetwork<f64>;
/// Single-precision network.
pub type PCNetwork32 = model::PCNetwork<f32>;
/// Double-precision per-sample state.
pub type NetworkState64 = model::NetworkState<f64>;
/// Double-precision BP reference network.
pub type MLPReference64 = bp::MLPReference<f64>;
/// Double-precision linear-Gaussian system.
pub type LinearGaussianSystem64 = kalman::LinearGaussianSystem<f64>;
