//! Live runtime and HTTP surface for the elastiq pipeline.

pub mod engine;
pub mod http;

pub use engine::Engine;
