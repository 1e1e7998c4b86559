//! Command-line front end: run configuration, checkpoints, subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;

pub use checkpoint::{load_checkpoint, load_checkpoint_as, save_checkpoint, Checkpoint};
pub use commands::{gradcheck_objective, prepare_data, run_command, train_run, Cli, Command, Flags};
pub use config::{parse_config, parse_config_str, RunConfig};
pub use error::{CliError, Result};
