//! Configuration handling and command dispatch for the `tikhon` binary.

pub mod config;
pub mod dispatch;

pub use config::{config_digest, parse_config, serialize_config, Command, ConfigError, ConfigErrors, Format, RunConfig};
pub use dispatch::{dispatch, DispatchError, Outcome, RunOptions};
