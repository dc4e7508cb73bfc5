//! Std side of the simulator: config files, run logs, the benchmark harness,
//! the wire protocol and the live server.

pub mod bench;
pub mod config;
pub mod runlog;
pub mod server;
pub mod session;
pub mod wire;
