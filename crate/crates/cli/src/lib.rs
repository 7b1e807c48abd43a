//! File formats, run configuration and command implementations behind the `decodec` binary.

pub mod commands;
pub mod runconfig;
pub mod tokenfile;

pub use runconfig::RunConfig;
pub use tokenfile::TokenFile;
