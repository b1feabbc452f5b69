//! Design toolkit for distributed (split) deep-learning deployments.
//!
//! The pipeline: train a small CNN ([`model`], [`train`]), rank candidate
//! split layers by Grad-CAM saliency ([`saliency`]), splice an autoencoder
//! bottleneck at a candidate ([`splitting`]), and evaluate local, remote and
//! split deployments over a simulated lossy link ([`netsim`], [`scenario`]).
//! [`profile`] covers static analysis of networks too large to train here.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod layer;
pub mod model;
pub mod netsim;
pub mod profile;
pub mod saliency;
pub mod scenario;
pub mod splitting;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
