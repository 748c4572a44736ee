//! Lock-free unordered list: node storage, keys and the single-server list.

pub mod arena;
pub mod key;
pub mod list;

pub use arena::{Arena, CounterId, Ident, Item, ItemRef, NewNode, NodeId, ServerId};
pub use key::{Key, KeyOrder, Natural, KEY_MAX};
pub use list::List;
