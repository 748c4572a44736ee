use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Largest application key.
pub const KEY_MAX: u64 = (1 << 60) - 1;

const SENTINEL_BASE: u64 = 1 << 60;

/// An application key or one of the reserved sentinels.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Key {
    App(u64),
    Head,
    Tail,
    SubHead,
    SubTail,
    DummyNode,
}

impl Key {
    pub fn encode(self) -> u64 {
        match self {
            Key::App(k) => {
                assert!(k <= KEY_MAX, "application key out of range");
                k
            }
            Key::Head => SENTINEL_BASE + 1,
            Key::Tail => SENTINEL_BASE + 2,
            Key::SubHead => SENTINEL_BASE + 3,
            Key::SubTail => SENTINEL_BASE + 4,
            Key::DummyNode => SENTINEL_BASE + 5,
        }
    }

    pub fn decode(v: u64) -> Key {
        match v {
            k if k <= KEY_MAX => Key::App(k),
            x if x == SENTINEL_BASE + 1 => Key::Head,
            x if x == SENTINEL_BASE + 2 => Key::Tail,
            x if x == SENTINEL_BASE + 3 => Key::SubHead,
            x if x == SENTINEL_BASE + 4 => Key::SubTail,
            x if x == SENTINEL_BASE + 5 => Key::DummyNode,
            _ => panic!("bad key encoding {v}"),
        }
    }

    pub fn is_sentinel(self) -> bool {
        !matches!(self, Key::App(_))
    }

    pub fn app(self) -> Option<u64> {
        match self {
            Key::App(k) => Some(k),
            _ => None,
        }
    }
}

impl fmt::Debug for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Key::App(k) => write!(f, "{k}"),
            Key::Head => f.write_str("H"),
            Key::Tail => f.write_str("T"),
            Key::SubHead => f.write_str("SH"),
            Key::SubTail => f.write_str("ST"),
            Key::DummyNode => f.write_str("D"),
        }
    }
}

/// Total order on application keys used by the sorted list.
pub trait KeyOrder: Send + Sync {
    fn cmp(&self, a: u64, b: u64) -> Ordering;
}

/// Natural order of the integers.
#[derive(Clone, Copy, Debug, Default)]
pub struct Natural;

impl KeyOrder for Natural {
    fn cmp(&self, a: u64, b: u64) -> Ordering {
        a.cmp(&b)
    }
}
