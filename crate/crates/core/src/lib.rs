//! GDAS: gradient-based neural architecture search by differentiable
//! sampling of sub-graphs from a DAG supernet, plus a brute-force
//! enumeration oracle that makes the search verifiable on tiny spaces.

pub mod config;
pub mod data;
pub mod derive;
pub mod engine;
pub mod error;
pub mod net;
pub mod ops;
pub mod optim;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod space;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
