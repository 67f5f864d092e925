//! Dense f64 tensor arithmetic with reverse-mode automatic differentiation,
//! SGD/Adam optimizers, deterministic RNG streams and binary checkpoints.
//!
//! The substrate for every trainable module in this workspace: all values are
//! 64-bit reals, all randomness flows through seeded ChaCha streams, and the
//! same seed reproduces bit-identical results on any platform.

pub mod checkpoint;
pub mod error;
pub mod grad_check;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use error::NumError;
pub use grad_check::{grad_check, GradCheckReport};
pub use optim::{Method, Optimizer};
pub use params::{Param, ParamSet};
pub use rng::DetRng;
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
