//! Batch runs from TOML configurations.

pub mod commands;
pub mod config;
pub mod io;

pub use commands::{audit_command, oracle_command, output_dir, simulate, simulate_into, Outcome, OUTPUT_ROOT_ENV};
pub use config::{parse_config, parse_config_str, ConfigError, ModelConfig};
