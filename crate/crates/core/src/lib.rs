//! From-scratch spatio-temporal video action classification.
//!
//! The pipeline: frame directories are resized and sampled ([`data`]),
//! dense optical flow is estimated between consecutive frames ([`flow`]),
//! RGB and flow-encoded frames are concatenated into one input volume,
//! a conv/GRU network classifies it ([`nn`], [`train`]), and results are
//! reported via k-fold cross-validation ([`eval`]).
//!
//! Every numeric kernel is generic over the element type: `f64` for the
//! verification profile (finite-difference gradient checks, flow oracles)
//! and `f32` for the training profile.

pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod flow;
pub mod nn;
pub mod tensor;
pub mod train;

pub use tensor::{Scalar, SeededRng, Tensor, TensorError};
