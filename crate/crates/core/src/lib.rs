//! Sparsified secure aggregation for federated learning.
//!
//! Users mask quantized gradients with pairwise and private additive masks and
//! send only the coordinates selected by pairwise Bernoulli masks. The server
//! learns the weighted sum, and can still unmask when fewer than half of the
//! users drop out.

pub mod analysis;
pub mod crypto;
pub mod error;
pub mod experiments;
pub mod field;
pub mod fl_sim;
pub mod masking;
pub mod protocol;
pub mod quantizer;

pub use error::{Error, Result};
