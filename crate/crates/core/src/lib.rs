//! Synthesis of control policies for decoupled stochastic systems against
//! co-safe temporal specifications, using value functions stored as trees of
//! rank-1 tensors.

pub mod error;
pub mod grid;
pub mod model;
pub mod config;
pub mod operators;
pub mod oracle;
pub mod pipeline;
pub mod policy;
pub mod problem;
pub mod scltl;
pub mod synthesis;
pub mod tensor;
pub mod tree;
pub mod validation;

pub use error::{Error, Result};
pub use problem::Problem;
