//! Protocol runs, configs, checkpoints and acceptance checks.

pub mod artifacts;
pub mod checkpoint;
pub mod checks;
pub mod config;
pub mod lab;
pub mod protocols;

pub use config::{Protocol, ProtocolConfig};
pub use lab::Lab;
pub use protocols::{run, run_protocol, write_outputs, ProtocolOutput};
