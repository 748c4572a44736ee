//! Lock-free context-aware linked list partitioned into sublists across
//! simulated servers, with aborting and replicating move protocols.

pub mod am_protocol;
pub mod atomics;
pub mod core_list;
pub mod error;
pub mod exec;
pub mod runtime;
pub mod sorted_list;
pub mod tr_protocol;
pub mod verify;

pub use core_list::{Item, ItemRef, Key, List, NodeId};
pub use error::{ListError, Result};
