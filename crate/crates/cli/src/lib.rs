//! Command-line front end: model files, the analysis pipeline and artifact writers.

pub mod commands;
pub mod model_file;
pub mod oracle;
pub mod output;
pub mod pipeline;
pub mod selftest;

pub use commands::run;
