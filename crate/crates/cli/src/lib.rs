//! Library side of the `ixframe` binary: argument types, subcommands and
//! benchmark suites.

pub mod bench;
pub mod cli;
mod commands;
pub mod config;
pub mod error;

pub use commands::{parse_dist, parse_payload, run};
