//! Attributed graph embedding by matching geodesic similarity distributions
//! between the input space and a learned latent space.

pub mod augment;
pub mod container;
pub mod distance;
pub mod error;
pub mod eval;
pub mod graph;
pub mod loss;
pub mod network;
pub mod optim;
pub mod similarity;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
