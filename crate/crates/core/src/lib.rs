pub mod error;
pub mod geo;
pub mod matcher;
pub mod quarter;

pub use error::{Error, Result};
pub mod community;
pub mod graph;
pub mod ingest;
pub mod demand;
pub mod stats;
pub mod synth;
pub mod pipeline;
