//! File formats, corpus generation and batch pipelines around `comac-core`.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod corpus_io;
pub mod embfile;
pub mod error;
pub mod idf_io;
pub mod pipeline;
pub mod report;
pub mod sweep;
pub mod synthetic;

pub use comac_core as core;
pub use error::{Error, Result};
