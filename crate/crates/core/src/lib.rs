//! Similarity-metric learning and real-time template tracking on a
//! hand-rolled dense-tensor kernel.
//!
//! The crate covers the full offline/online stack:
//!
//! * [`tensor`] — 4-D float tensors with convolution, pooling, activation,
//!   bicubic resampling, cross-correlation, and a finite-difference
//!   gradient oracle;
//! * [`embed`] — the shared convolutional branch network with manual
//!   forward/backward and a binary parameter format;
//! * [`score`] — the similarity score map `f(z,x) = phi(z)*phi(x) + b`;
//! * [`loss`] — weighted logistic pair loss, softmax-squared-error triplet
//!   loss, and the learned two-way loss combination;
//! * [`mining`] — label maps, balance weights, weight adaptation, and
//!   hard positive/negative selection;
//! * [`train`] — the two-phase training iteration and SGD schedule;
//! * [`track`] — one-shot online tracking with a three-scale pyramid;
//! * [`eval`] — distance-precision / overlap-success metrics and the
//!   OPE / SRE / TRE protocols;
//! * [`gradcheck`] — the analytic-vs-numeric verification suite.
//!
//! Everything is pure computation over in-memory values; file formats and
//! the command-line interface live in the companion `quadtrack-tools`
//! crate. The crate is `no_std`-compatible (requires `alloc`): build with
//! `--no-default-features --features libm`.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("quadtrack-core requires either the `std` or the `libm` feature");

pub mod bbox;
pub mod data;
pub mod embed;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod loss;
pub(crate) mod math;
pub mod mining;
pub mod rng;
pub mod scalar;
pub mod score;
pub mod tensor;
pub mod track;
pub mod train;

pub use bbox::BoundingBox;
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Grid, Tensor};
