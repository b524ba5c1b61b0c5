//! The pieces behind the `repchain` binary, kept in a library so tests can
//! drive them without spawning processes.

pub mod analyze;
pub mod report;
pub mod simulate;

/// Written into every run manifest.
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
