pub mod engine;
pub mod error;
pub mod game;
pub mod geometry;
pub mod harness;
pub(crate) mod linalg;
pub mod markov_chain;
pub mod mdp;

pub use error::{Error, Result};
