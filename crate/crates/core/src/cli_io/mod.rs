//! Configuration, on-disk formats and the subcommand drivers.

pub mod commands;
pub mod config;
pub mod snapshot;
pub mod table;
pub mod verify;

pub use config::{parse_config, QInit, RunConfig, VelocityInit};
pub use snapshot::{decode_snapshot, encode_snapshot, read_snapshot, write_snapshot};
pub use table::{format_f64, parse_diagnostics, read_diagnostics, DiagnosticsWriter};
