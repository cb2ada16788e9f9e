//! `stekit`: a desk-scale stackable temporal encoder for video frame embeddings.
//!
//! The crate is split into a small numeric layer ([`tensor`], [`autodiff`],
//! [`rng`]), the temporal encoder itself ([`ste`]), pure budget arithmetic
//! ([`planner`]), a toy vision-language pipeline ([`pipeline`]) and a
//! two-stage training harness ([`train`]).
//!
//! Frame embeddings are stored row-major as `(frame, patch, dim)` so the
//! temporal axis is outermost and a convolutional unit is a contiguous block.

pub mod autodiff;
pub mod error;
pub mod finite_diff;
pub mod io;
pub mod pipeline;
pub mod planner;
pub mod real;
pub mod rng;
pub mod spec_string;
pub mod ste;
pub mod tensor;
pub mod train;
pub mod verify;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use real::{Precision, Real};
pub use rng::Rng;
pub use ste::{FrameEmbeddings, Insertion, LayerSpec, LayerWeights, StackSpec};
pub use tensor::Tensor;
