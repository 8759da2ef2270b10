//! Command-line pipeline: `generate`, `idest`, `extract`, `unmix`, `eval`.

pub mod commands;
pub mod error;
pub mod formats;

pub use commands::{run, Cli};
pub use error::{CliError, EXIT_NUMERICAL, EXIT_USAGE};
