//! Track-guided temporal attention for video feature maps.
//!
//! The core layer gathers per-frame image features onto a set of point
//! tracks (attentional sampling), runs a small temporal transformer along
//! each track, and scatters the result back onto the feature grid
//! (attentional splatting). Because tracks follow scene motion, temporal
//! mixing happens along motion trajectories instead of fixed pixel columns,
//! at a cost linear in the number of image tokens.
//!
//! The crate also ships dense baselines (temporal / spatial / joint
//! space-time attention and a 3-D convolution), synthetic track generation
//! for testing, a depth-map evaluation helper, and a scaling-benchmark
//! harness. Everything is deterministic: all randomness flows from an
//! explicit seed through a counter-based generator.

pub mod baselines;
pub mod bench;
pub mod cli;
pub mod denoise;
pub mod error;
pub mod eval;
pub mod layer;
pub mod rng;
pub mod ten1;
pub mod tensor;
pub mod trackatt;
pub mod tracks;
pub mod tracktransformer;
pub mod video;

pub use error::{Error, Result};
pub use tensor::{DType, Scalar, Tensor};
