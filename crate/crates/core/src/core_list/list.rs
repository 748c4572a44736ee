//! Single-server lock-free unordered list with a background delink pass.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering::SeqCst};

use super::arena::{Arena, Item, ItemRef, NewNode, NodeId, DELETED};
use super::key::Key;
use crate::error::{ListError, Result};
use crate::exec::pause;

/// Lease value for refs handed out by the standalone list.
pub const NO_LEASE: u64 = u64::MAX;

#[derive(Debug)]
pub struct List {
    arena: Arena,
    head: NodeId,
    tail: NodeId,
    clock: AtomicU64,
    busy: AtomicBool,
}

impl List {
    pub fn new(capacity: usize) -> Self {
        let arena = Arena::new(0, capacity + 2, 1);
        let tail = arena.alloc(NewNode::sentinel(Key::Tail, 0));
        let head = arena.alloc(NewNode {
            next: Some(tail),
            ..NewNode::sentinel(Key::Head, 0)
        });
        List {
            arena,
            head,
            tail,
            clock: AtomicU64::new(1),
            busy: AtomicBool::new(false),
        }
    }

    /// Builds a list holding `keys` in order.
    pub fn from_keys(capacity: usize, keys: &[u64]) -> Self {
        let l = List::new(capacity);
        let mut prev = l.head();
        for &k in keys {
            prev = crate::exec::block_on(l.insert_after(prev, k)).expect("fresh list");
        }
        l
    }

    pub fn arena(&self) -> &Arena {
        &self.arena
    }

    pub fn head(&self) -> ItemRef {
        self.head.with_lease(NO_LEASE)
    }

    pub fn tail(&self) -> ItemRef {
        self.tail.with_lease(NO_LEASE)
    }

    pub fn get_item(&self, r: ItemRef) -> Result<(ItemRef, Item)> {
        let id = r.node();
        self.arena.check(id)?;
        Ok((r, self.arena.snapshot(id)))
    }

    pub async fn insert_after(&self, prev: ItemRef, key: u64) -> Result<ItemRef> {
        let prev = prev.node();
        self.arena.check(prev)?;
        if matches!(self.arena.key(prev), Key::Tail | Key::SubTail) {
            return Err(ListError::SentinelTarget);
        }
        loop {
            let status = self.arena.status(prev);
            pause().await;
            if status & DELETED != 0 {
                return Err(ListError::NodeNotFound);
            }
            let temp = self.arena.next(prev);
            pause().await;
            let node = self.arena.alloc(NewNode {
                key: Key::App(key),
                next: temp,
                ts: self.clock.fetch_add(1, SeqCst),
                ..NewNode::sentinel(Key::App(key), 0)
            });
            if self.arena.rdcss_next(prev, status, temp, node) {
                return Ok(node.with_lease(NO_LEASE));
            }
            self.arena.free(node);
            pause().await;
        }
    }

    pub async fn delete(&self, r: ItemRef) -> Result<()> {
        let id = r.node();
        self.arena.check(id)?;
        if self.arena.key(id).is_sentinel() {
            return Err(ListError::SentinelTarget);
        }
        loop {
            let s = self.arena.status(id);
            pause().await;
            if s & DELETED != 0 {
                return Err(ListError::NodeNotFound);
            }
            if self.arena.cas_status(id, s, s | DELETED) {
                pause().await;
                return Ok(());
            }
        }
    }

    pub async fn next(&self, r: ItemRef) -> Result<ItemRef> {
        let mut curr = r.node();
        self.arena.check(curr)?;
        if self.arena.key(curr) == Key::Tail {
            return Err(ListError::SentinelTarget);
        }
        let start = curr;
        'retry: loop {
            // Links followed so far; re-read before answering past a tombstone.
            let mut path = vec![];
            curr = start;
            loop {
                let nx = self.arena.next(curr).expect("next of non-tail");
                path.push((curr, nx));
                curr = nx;
                pause().await;
                let deleted = self.arena.is_deleted(curr);
                pause().await;
                if deleted {
                    continue;
                }
                if path.len() > 1 {
                    for &(from, to) in &path {
                        if self.arena.next(from) != Some(to) {
                            continue 'retry;
                        }
                    }
                    pause().await;
                }
                return Ok(curr.with_lease(NO_LEASE));
            }
        }
    }

    pub async fn lookup(&self, key: u64) -> Vec<ItemRef> {
        let mut out = vec![];
        let mut curr = self.arena.next(self.head).expect("head.next");
        pause().await;
        while curr != self.tail {
            if self.arena.key(curr) == Key::App(key) && !self.arena.is_deleted(curr) {
                out.push(curr.with_lease(NO_LEASE));
            }
            pause().await;
            curr = self.arena.next(curr).expect("next of non-tail");
            pause().await;
        }
        out
    }

    /// Marks a transformation as active; delink passes fail while set.
    pub fn set_busy(&self, b: bool) {
        self.busy.store(b, SeqCst)
    }

    /// Physically unlinks tombstoned nodes. Returns the unlinked nodes; they
    /// must not be reclaimed before outstanding refs have expired.
    pub async fn delink_pass(&self) -> Result<Vec<NodeId>> {
        if self.busy.load(SeqCst) {
            return Err(ListError::Busy);
        }
        let mut out = vec![];
        let mut prev = self.head;
        let mut curr = self.arena.next(prev).expect("head.next");
        pause().await;
        while curr != self.tail {
            if self.arena.is_deleted(curr) {
                let succ = self.arena.next(curr);
                pause().await;
                if self.arena.cas_next(prev, Some(curr), succ) {
                    pause().await;
                    self.arena.store_next(curr, succ);
                    out.push(curr);
                }
                pause().await;
                curr = self.arena.next(prev).expect("live prev has a successor");
            } else {
                prev = curr;
                curr = self.arena.next(curr).expect("next of non-tail");
            }
            pause().await;
        }
        Ok(out)
    }

    pub fn reclaim(&self, ids: &[NodeId]) {
        for &id in ids {
            self.arena.free(id);
        }
    }

    /// Keys from head to tail, tombstones included, as (key, deleted).
    pub fn dump(&self) -> Vec<(u64, bool)> {
        let mut out = vec![];
        let mut curr = self.arena.next(self.head).expect("head.next");
        while curr != self.tail {
            out.push((self.arena.key(curr).app().expect("app key"), self.arena.is_deleted(curr)));
            curr = self.arena.next(curr).expect("next");
        }
        out
    }

    /// Live keys in list order.
    pub fn keys(&self) -> Vec<u64> {
        self.dump().into_iter().filter(|e| !e.1).map(|e| e.0).collect()
    }

    /// Ref of the first node holding `key`.
    pub fn find(&self, key: u64) -> Option<ItemRef> {
        let mut curr = self.arena.next(self.head)?;
        while curr != self.tail {
            if self.arena.key(curr) == Key::App(key) {
                return Some(curr.with_lease(NO_LEASE));
            }
            curr = self.arena.next(curr)?;
        }
        None
    }
}
