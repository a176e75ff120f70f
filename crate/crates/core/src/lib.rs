//! Long short-term memory networks, layer-wise relevance propagation through
//! them, and the experiments that measure how faithful the explanations are.

pub mod baselines;
pub mod dtd;
pub mod error;
pub mod experiments;
pub mod lrp;
pub mod model;
pub mod numeric;
pub mod tasks;
pub mod train;

pub use error::{Error, Result};
