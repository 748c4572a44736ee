//! Multi-server runtime: messages, network, servers, clients and the
//! deterministic driver.

pub mod client;
pub mod config;
pub mod ctx;
pub mod message;
pub mod net;
pub mod registry;
pub mod server;
pub mod sim;
pub mod stats;
pub mod trace;

pub use config::{Protocol, SimConfig, Variant};
pub use sim::{simulate, Report, World};
