//! Command-line front end for the mirrorscan library.

pub mod args;
pub mod commands;
pub mod output;
pub mod report;

pub use args::Cli;
pub use commands::{execute, Console};
