//! Neural estimators of transfer entropy (TENE) and intrinsic transfer
//! entropy (ITENE) between two scalar time series.
//!
//! The building blocks, bottom up:
//!
//! - [`nn`]: dense ELU networks with parameter and input gradients.
//! - [`mine`]: classifier-based mutual information estimation with a clipped
//!   Donsker-Varadhan plug-in.
//! - [`te`]: sliding-window embedding and the transfer entropy estimator
//!   written as a difference of two mutual informations.
//! - [`itene`]: a reparameterized channel on the target past, optimized with
//!   pathwise gradients to estimate the intrinsic part of the flow.
//! - [`synthetic`]: seeded benchmark processes and closed-form oracles.
//! - [`harness`]: experiment configs, CSV ingestion, quantization and reports.
//!
//! All values are in nats unless stated otherwise.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod itene;
pub mod mine;
pub mod nn;
pub mod rng;
pub mod synthetic;
pub mod te;

pub use error::{Error, Result};
