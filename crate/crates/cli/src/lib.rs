//! Library half of the `woc` command: settings, verbs, and the helpers they
//! share with tests.

pub mod bench;
pub mod commands;
pub mod config;
pub mod extsort;
pub mod trend;

pub use commands::{run, EXIT_FATAL, EXIT_OK, EXIT_PARTIAL};
