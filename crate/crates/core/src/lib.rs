pub mod error;
pub mod functional;
pub mod gaussian;
pub mod geometry;
pub mod orthant;
pub mod ou;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
