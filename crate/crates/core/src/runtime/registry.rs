use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::message::KeyRange;
use crate::core_list::{CounterId, NodeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    /// Stable id of the logical sublist, kept across moves.
    pub sublist: u64,
    pub subhead: NodeId,
    pub start: CounterId,
    pub end: CounterId,
    pub offset: i64,
    pub prev_subtail: NodeId,
    pub range: Option<KeyRange>,
    /// Sublist this one was split from on this server.
    pub parent: Option<u64>,
    /// A split, move or switch is running on this sublist.
    pub busy: bool,
}

/// Per-server map from owned subheads to sublist metadata.
#[derive(Debug, Default, Clone)]
pub struct Registry {
    entries: BTreeMap<NodeId, RegistryEntry>,
}

impl Registry {
    pub fn add(&mut self, e: RegistryEntry) {
        let prev = self.entries.insert(e.subhead, e);
        assert!(prev.is_none(), "subhead registered twice");
    }

    pub fn remove(&mut self, sh: NodeId) -> Option<RegistryEntry> {
        self.entries.remove(&sh)
    }

    pub fn get(&self, sh: NodeId) -> Option<&RegistryEntry> {
        self.entries.get(&sh)
    }

    pub fn get_mut(&mut self, sh: NodeId) -> Option<&mut RegistryEntry> {
        self.entries.get_mut(&sh)
    }

    pub fn subheads(&self) -> Vec<NodeId> {
        self.entries.keys().copied().collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = &RegistryEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn any_busy(&self) -> bool {
        self.entries.values().any(|e| e.busy)
    }

    /// Subheads of sublists split, directly or not, from `sublist` here.
    pub fn descendants(&self, sublist: u64) -> Vec<NodeId> {
        let mut family = vec![sublist];
        let mut out = vec![];
        let mut i = 0;
        while i < family.len() {
            for e in self.entries.values() {
                if e.parent == Some(family[i]) && !family.contains(&e.sublist) {
                    family.push(e.sublist);
                    out.push(e.subhead);
                }
            }
            i += 1;
        }
        out
    }

    /// Entries whose key range covers `k`.
    pub fn covering(&self, k: u64) -> Vec<RegistryEntry> {
        self.entries
            .values()
            .filter(|e| e.range.is_some_and(|r| r.contains(k)))
            .copied()
            .collect()
    }
}
