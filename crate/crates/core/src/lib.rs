pub mod bench;
pub mod catalog;
pub mod decoding;
pub mod error;
pub mod ingest;
mod math;
pub mod metrics;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod synthetic;
pub mod tokenizer;
pub mod trie;

pub use error::{Error, Result};
