//! Runner, experiment harness and line-delimited JSON environment server.

pub mod harness;
pub mod protocol;
pub mod server;
