//! Per-server slab of list nodes with generation-checked references.

use std::sync::atomic::{AtomicI64, AtomicU32, AtomicU64, AtomicU8, Ordering::SeqCst};

use serde::{Deserialize, Serialize};

use super::key::Key;
use crate::atomics::{AtomicWord, CellMap, Rdcss, SharedCounter};
use crate::error::{ListError, Result};

pub type ServerId = u16;
pub type CounterId = u32;

const SID_BITS: u32 = 10;
const SLOT_BITS: u32 = 28;
const GEN_BITS: u32 = 24;
const GEN_MASK: u64 = (1 << GEN_BITS) - 1;
const SLOT_MASK: u64 = (1 << SLOT_BITS) - 1;

pub const MAX_SERVERS: usize = 1 << SID_BITS;

/// Status word bits. Both live in the RDCSS control cell.
pub const DELETED: u64 = 1;
pub const MOVED: u64 = 2;

const NO_COUNTER: u64 = u64::MAX >> 1;

/// Location of a node: server, slot and generation.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub sid: ServerId,
    pub slot: u32,
    pub gen: u32,
}

impl std::fmt::Debug for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}.{}", self.sid, self.slot, self.gen)
    }
}

impl NodeId {
    pub fn pack(self) -> u64 {
        (self.sid as u64) << (SLOT_BITS + GEN_BITS) | (self.slot as u64) << GEN_BITS | self.gen as u64
    }

    /// `None` for the nil word.
    pub fn unpack(v: u64) -> Option<NodeId> {
        if v == 0 {
            return None;
        }
        Some(NodeId {
            sid: (v >> (SLOT_BITS + GEN_BITS)) as ServerId,
            slot: ((v >> GEN_BITS) & SLOT_MASK) as u32,
            gen: (v & GEN_MASK) as u32,
        })
    }

    pub fn with_lease(self, lease: u64) -> ItemRef {
        ItemRef {
            sid: self.sid,
            slot: self.slot,
            gen: self.gen,
            lease,
        }
    }
}

fn pack_opt(n: Option<NodeId>) -> u64 {
    n.map_or(0, NodeId::pack)
}

/// Client-held reference: a node location plus a lease deadline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemRef {
    pub sid: ServerId,
    pub slot: u32,
    pub gen: u32,
    pub lease: u64,
}

impl ItemRef {
    pub fn node(self) -> NodeId {
        NodeId {
            sid: self.sid,
            slot: self.slot,
            gen: self.gen,
        }
    }
}

/// Cross-server identity of a node: originating server and timestamp.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Ident {
    pub sid: ServerId,
    pub ts: u64,
}

/// Snapshot copy of a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub key: Key,
    pub next: Option<NodeId>,
    pub is_deleted: bool,
    pub start_count: Option<CounterId>,
    pub end_count: Option<CounterId>,
    pub new_location: Option<NodeId>,
    pub ts: u64,
    pub sid: ServerId,
}

impl Item {
    pub fn ident(&self) -> Ident {
        Ident {
            sid: self.sid,
            ts: self.ts,
        }
    }
}

/// Initial field values for a fresh node.
#[derive(Clone, Copy, Debug)]
pub struct NewNode {
    pub key: Key,
    pub next: Option<NodeId>,
    pub deleted: bool,
    pub moved: bool,
    pub start: Option<CounterId>,
    pub end: Option<CounterId>,
    pub new_loc: Option<NodeId>,
    pub ts: u64,
    pub origin: ServerId,
    pub tag: u64,
}

impl NewNode {
    pub fn sentinel(key: Key, origin: ServerId) -> Self {
        NewNode {
            key,
            next: None,
            deleted: false,
            moved: false,
            start: None,
            end: None,
            new_loc: None,
            ts: 0,
            origin,
            tag: 0,
        }
    }
}

const FREE: u8 = 0;
const LIVE: u8 = 1;

#[derive(Debug)]
struct Node {
    key: AtomicU64,
    next: AtomicWord,
    status: AtomicWord,
    start: AtomicU64,
    end: AtomicU64,
    new_loc: AtomicU64,
    ts: AtomicU64,
    origin: AtomicU64,
    gen: AtomicU64,
    state: AtomicU8,
    free_next: AtomicU32,
    tag: AtomicU64,
}

impl Node {
    fn empty() -> Self {
        Node {
            key: AtomicU64::new(0),
            next: AtomicWord::new(0),
            status: AtomicWord::new(0),
            start: AtomicU64::new(NO_COUNTER),
            end: AtomicU64::new(NO_COUNTER),
            new_loc: AtomicU64::new(0),
            ts: AtomicU64::new(0),
            origin: AtomicU64::new(0),
            gen: AtomicU64::new(1),
            state: AtomicU8::new(FREE),
            free_next: AtomicU32::new(0),
            tag: AtomicU64::new(0),
        }
    }
}

/// Fixed-capacity node and counter storage for one server.
#[derive(Debug)]
pub struct Arena {
    sid: ServerId,
    nodes: Box<[Node]>,
    bump: AtomicU64,
    // (aba << 32) | (slot + 1)
    free_head: AtomicU64,
    counters: Box<[SharedCounter]>,
    counter_bump: AtomicU64,
    rd: Rdcss,
    live: AtomicI64,
    gen_trips: AtomicU64,
}

impl CellMap for Arena {
    fn cell(&self, id: u64) -> &AtomicWord {
        let n = &self.nodes[(id >> 1) as usize];
        if id & 1 == 0 {
            &n.status
        } else {
            &n.next
        }
    }
}

fn status_cell(slot: u32) -> u64 {
    (slot as u64) << 1
}

fn next_cell(slot: u32) -> u64 {
    (slot as u64) << 1 | 1
}

impl Arena {
    pub fn new(sid: ServerId, capacity: usize, counter_capacity: usize) -> Self {
        assert!((sid as usize) < MAX_SERVERS);
        assert!(capacity < (1 << SLOT_BITS));
        Arena {
            sid,
            nodes: (0..capacity).map(|_| Node::empty()).collect(),
            bump: AtomicU64::new(0),
            free_head: AtomicU64::new(0),
            counters: (0..counter_capacity).map(|_| SharedCounter::new(0)).collect(),
            counter_bump: AtomicU64::new(0),
            rd: Rdcss::new(1024),
            live: AtomicI64::new(0),
            gen_trips: AtomicU64::new(0),
        }
    }

    pub fn sid(&self) -> ServerId {
        self.sid
    }

    fn node(&self, id: NodeId) -> &Node {
        debug_assert_eq!(id.sid, self.sid, "foreign node {id:?} read on server {}", self.sid);
        &self.nodes[id.slot as usize]
    }

    fn pop_free(&self) -> Option<u32> {
        loop {
            let h = self.free_head.load(SeqCst);
            let low = h & 0xffff_ffff;
            if low == 0 {
                return None;
            }
            let slot = (low - 1) as u32;
            let nxt = self.nodes[slot as usize].free_next.load(SeqCst) as u64;
            let aba = (h >> 32) + 1;
            if self
                .free_head
                .compare_exchange(h, aba << 32 | nxt, SeqCst, SeqCst)
                .is_ok()
            {
                return Some(slot);
            }
        }
    }

    fn push_free(&self, slot: u32) {
        loop {
            let h = self.free_head.load(SeqCst);
            self.nodes[slot as usize]
                .free_next
                .store((h & 0xffff_ffff) as u32, SeqCst);
            let aba = (h >> 32) + 1;
            if self
                .free_head
                .compare_exchange(h, aba << 32 | (slot as u64 + 1), SeqCst, SeqCst)
                .is_ok()
            {
                return;
            }
        }
    }

    /// Allocates and initialises a node. Panics when the arena is full.
    pub fn alloc(&self, init: NewNode) -> NodeId {
        let slot = self.pop_free().unwrap_or_else(|| {
            let s = self.bump.fetch_add(1, SeqCst);
            assert!((s as usize) < self.nodes.len(), "arena exhausted on server {}", self.sid);
            s as u32
        });
        let n = &self.nodes[slot as usize];
        n.key.store(init.key.encode(), SeqCst);
        n.next.store(pack_opt(init.next));
        n.status.store(if init.deleted { DELETED } else { 0 } | if init.moved { MOVED } else { 0 });
        n.start.store(init.start.map_or(NO_COUNTER, |c| c as u64), SeqCst);
        n.end.store(init.end.map_or(NO_COUNTER, |c| c as u64), SeqCst);
        n.new_loc.store(pack_opt(init.new_loc), SeqCst);
        n.ts.store(init.ts, SeqCst);
        n.origin.store(init.origin as u64, SeqCst);
        n.tag.store(init.tag, SeqCst);
        n.state.store(LIVE, SeqCst);
        self.live.fetch_add(1, SeqCst);
        NodeId {
            sid: self.sid,
            slot,
            gen: n.gen.load(SeqCst) as u32,
        }
    }

    /// Returns a slot to the free list and bumps its generation. Callers are
    /// responsible for any grace period.
    pub fn free(&self, id: NodeId) {
        let n = self.node(id);
        if n.state
            .compare_exchange(LIVE, FREE, SeqCst, SeqCst)
            .is_err()
        {
            return;
        }
        if n.gen.load(SeqCst) as u32 != id.gen {
            n.state.store(LIVE, SeqCst);
            return;
        }
        let g = n.gen.load(SeqCst);
        n.gen.store(if g >= GEN_MASK { 1 } else { g + 1 }, SeqCst);
        self.live.fetch_sub(1, SeqCst);
        self.push_free(id.slot);
    }

    /// True if `id` names a live node of this arena with a current generation.
    pub fn is_valid(&self, id: NodeId) -> bool {
        if id.sid != self.sid || id.slot as usize >= self.nodes.len() {
            return false;
        }
        let n = &self.nodes[id.slot as usize];
        n.state.load(SeqCst) == LIVE && n.gen.load(SeqCst) as u32 == id.gen
    }

    /// Generation check for client-supplied references. Every failure is
    /// counted.
    pub fn check(&self, id: NodeId) -> Result<()> {
        if self.is_valid(id) {
            Ok(())
        } else {
            self.gen_trips.fetch_add(1, SeqCst);
            Err(ListError::UnknownRef)
        }
    }

    pub fn gen_trips(&self) -> u64 {
        self.gen_trips.load(SeqCst)
    }

    pub fn live_count(&self) -> usize {
        self.live.load(SeqCst) as usize
    }

    /// Live nodes carrying the given session tag.
    pub fn live_with_tag(&self, tag: u64) -> usize {
        let used = self.bump.load(SeqCst) as usize;
        self.nodes[..used.min(self.nodes.len())]
            .iter()
            .filter(|n| n.state.load(SeqCst) == LIVE && n.tag.load(SeqCst) == tag)
            .count()
    }

    // ---- fields ----

    pub fn key(&self, id: NodeId) -> Key {
        Key::decode(self.node(id).key.load(SeqCst))
    }

    pub fn set_key(&self, id: NodeId, k: Key) {
        self.node(id).key.store(k.encode(), SeqCst)
    }

    pub fn next(&self, id: NodeId) -> Option<NodeId> {
        NodeId::unpack(self.rd.read(self, next_cell(id.slot)))
    }

    pub fn cas_next(&self, id: NodeId, expected: Option<NodeId>, new: Option<NodeId>) -> bool {
        self.rd
            .cas(self, next_cell(id.slot), pack_opt(expected), pack_opt(new))
    }

    pub fn store_next(&self, id: NodeId, new: Option<NodeId>) {
        self.rd.store(self, next_cell(id.slot), pack_opt(new))
    }

    /// Initialising write of `next` for a node not yet shared.
    pub fn init_next(&self, id: NodeId, new: Option<NodeId>) {
        self.node(id).next.store(pack_opt(new))
    }

    pub fn status(&self, id: NodeId) -> u64 {
        self.node(id).status.load()
    }

    pub fn is_deleted(&self, id: NodeId) -> bool {
        self.status(id) & DELETED != 0
    }

    pub fn cas_status(&self, id: NodeId, expected: u64, new: u64) -> bool {
        self.node(id).status.cas(expected, new)
    }

    /// Sets a status bit, returning true if this call set it.
    pub fn set_status_bit(&self, id: NodeId, bit: u64) -> bool {
        loop {
            let s = self.status(id);
            if s & bit != 0 {
                return false;
            }
            if self.cas_status(id, s, s | bit) {
                return true;
            }
        }
    }

    /// `rdcss(&prev.status, exp_status, &prev.next, exp_next, new)`.
    pub fn rdcss_next(&self, prev: NodeId, exp_status: u64, exp_next: Option<NodeId>, new: NodeId) -> bool {
        self.rd.rdcss(
            self,
            status_cell(prev.slot),
            exp_status,
            next_cell(prev.slot),
            pack_opt(exp_next),
            new.pack(),
        )
    }

    pub fn start(&self, id: NodeId) -> Option<CounterId> {
        let v = self.node(id).start.load(SeqCst);
        (v != NO_COUNTER).then_some(v as CounterId)
    }

    pub fn end(&self, id: NodeId) -> Option<CounterId> {
        let v = self.node(id).end.load(SeqCst);
        (v != NO_COUNTER).then_some(v as CounterId)
    }

    pub fn set_start(&self, id: NodeId, c: CounterId) {
        self.node(id).start.store(c as u64, SeqCst)
    }

    pub fn set_end(&self, id: NodeId, c: CounterId) {
        self.node(id).end.store(c as u64, SeqCst)
    }

    pub fn cas_start(&self, id: NodeId, expected: CounterId, new: CounterId) -> bool {
        self.node(id)
            .start
            .compare_exchange(expected as u64, new as u64, SeqCst, SeqCst)
            .is_ok()
    }

    pub fn cas_end(&self, id: NodeId, expected: CounterId, new: CounterId) -> bool {
        self.node(id)
            .end
            .compare_exchange(expected as u64, new as u64, SeqCst, SeqCst)
            .is_ok()
    }

    pub fn new_loc(&self, id: NodeId) -> Option<NodeId> {
        NodeId::unpack(self.node(id).new_loc.load(SeqCst))
    }

    pub fn set_new_loc(&self, id: NodeId, loc: Option<NodeId>) {
        self.node(id).new_loc.store(pack_opt(loc), SeqCst)
    }

    pub fn ts(&self, id: NodeId) -> u64 {
        self.node(id).ts.load(SeqCst)
    }

    pub fn origin(&self, id: NodeId) -> ServerId {
        self.node(id).origin.load(SeqCst) as ServerId
    }

    pub fn ident(&self, id: NodeId) -> Ident {
        Ident {
            sid: self.origin(id),
            ts: self.ts(id),
        }
    }

    pub fn snapshot(&self, id: NodeId) -> Item {
        Item {
            key: self.key(id),
            next: self.next(id),
            is_deleted: self.is_deleted(id),
            start_count: self.start(id),
            end_count: self.end(id),
            new_location: self.new_loc(id),
            ts: self.ts(id),
            sid: self.origin(id),
        }
    }

    // ---- counters ----

    pub fn new_counter(&self, v: i64) -> CounterId {
        let c = self.counter_bump.fetch_add(1, SeqCst) as usize;
        assert!(c < self.counters.len(), "counter space exhausted on server {}", self.sid);
        self.counters[c].set(v);
        c as CounterId
    }

    pub fn counter(&self, c: CounterId) -> &SharedCounter {
        &self.counters[c as usize]
    }
}
