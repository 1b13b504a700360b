pub mod config;
pub mod corpus;
pub mod data;
pub mod derive;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod nn;
pub mod persist;
pub mod pipeline;
pub mod scoring;
pub mod synth;
pub mod text;
pub mod training;

pub use error::{Error, Result};
