//! File formats and subcommands of the `crffuse` tool.

pub mod commands;
pub mod fixtures;
pub mod gradcheck;
pub mod io;
pub mod manifest;
pub mod params;

pub use commands::run;
