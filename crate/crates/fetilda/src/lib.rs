//! Long-document regression pipeline: chunked transformer encoding,
//! Bi-LSTM attention pooling over chunks, a regression head with historic
//! features, and the classical baselines it is compared against.

pub mod baselines;
pub mod chunker;
pub mod corpus;
pub mod docpool;
pub mod encoder;
pub mod error;
pub mod head;
pub mod model;
pub mod train;

pub use error::{FetildaError, Result};
