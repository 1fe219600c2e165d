//! Behavioral compression of policy parameter spaces.
//!
//! The crate covers the three stages of the pipeline without touching the
//! filesystem:
//!
//! 1. [`dataset`]: sample random MLP policies, score them by behavioral
//!    novelty on a fixed state probe and keep the most novel fraction.
//! 2. [`compressor`]: train a symmetric autoencoder over flat policy weights
//!    with a loss measured in action space rather than weight space.
//! 3. [`pgpe`]: fine-tune a policy for a task by running parameter-exploring
//!    policy gradients on the latent code, decoding each candidate through the
//!    frozen decoder.
//!
//! [`landscape`] evaluates decoded policies on a latent grid and computes the
//! performance-recovery ratio. The environments live in [`envs`].
//!
//! The crate is `no_std` with `alloc`. The `parallel` feature pulls in `std`
//! and rayon for data-parallel loops; results are identical with or without it.
#![cfg_attr(not(any(feature = "std", test)), no_std)]
// `!(x > 0.0)` deliberately rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod compressor;
pub mod dataset;
pub mod envs;
pub mod error;
pub mod landscape;
pub mod layers;
pub mod linalg;
pub mod mlp;
pub mod optim;
pub mod par;
pub mod pgpe;
pub mod policy;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
pub use linalg::Matrix;
