//! Indexed dataframes: row batches, a snapshot trie index and an engine on top.

pub mod cluster;
pub mod csv_io;
pub mod dataframe;
pub mod datagen;
pub mod engine;
mod error;
pub mod partition;
pub mod rowstore;
pub mod table;
pub mod trie;

pub use error::{Error, Result};
