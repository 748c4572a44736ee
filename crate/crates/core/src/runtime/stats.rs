use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::message::{ClientId, ReqId};
use crate::core_list::{CounterId, ServerId};
use crate::verify::history::History;
use crate::verify::oracle::SublistEvent;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveRecord {
    pub sublist: u64,
    pub protocol: String,
    pub from: ServerId,
    pub to: ServerId,
    /// Application nodes in the sublist when the move began.
    pub nodes: usize,
    pub t_start: u64,
    pub attempts: u32,
    pub aborts: u32,
    /// Target nodes left over after each abort cleanup.
    pub residues: Vec<usize>,
    pub t_cas: Option<u64>,
    pub t_switch: Option<u64>,
    pub t_reclaim: Option<u64>,
    pub snapshots_equal: Option<bool>,
    pub oracle_equal: Option<bool>,
    pub replayed_events: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub sublist: u64,
    pub new_sublist: u64,
    pub server: ServerId,
    pub a1: i64,
    pub a2: i64,
    pub old_offset: i64,
    pub t: u64,
}

/// Counters and logs collected while a simulation runs.
#[derive(Debug, Default)]
pub struct Stats {
    pub history: History,
    pub moves: Vec<MoveRecord>,
    pub splits: Vec<SplitRecord>,
    pub delegations: BTreeMap<String, u64>,
    pub replicates: u64,
    pub replays: u64,
    pub compensations: u64,
    pub delete_moved: u64,
    pub checkpoints: u64,
    pub checkpoint_violations: Vec<String>,
    /// Sorted-order problems seen at quiescent checkpoints.
    pub order_violations: Vec<String>,
    pub post_switch_requests: u64,
    pub post_switch_delegated: u64,
    pub lookup_duplicates: u64,
    pub lease_expired: u64,
    pub faults: Vec<String>,
    /// (visits, bound) per sorted search.
    pub visits: Vec<(u64, u64)>,
    /// Trace line of the response to each client request.
    pub response_line: HashMap<(ClientId, ReqId), usize>,
    /// Trace line of each replicate sent on behalf of a client request.
    pub replicate_lines: Vec<((ClientId, ReqId), usize)>,
    pub ts_order_violations: u64,
    pub deferred_directives: u64,
    pub delink_passes: u64,
    pub delink_busy: u64,
    pub delinked: u64,
    pub reclaimed: u64,
    pub sorted_retries: u64,
    /// Sublists (server, start counter) whose updates are being logged.
    pub watched: HashSet<(ServerId, CounterId)>,
    pub events: HashMap<(ServerId, CounterId), Vec<SublistEvent>>,
}

impl Stats {
    pub fn delegated(&mut self, kind: &str) {
        *self.delegations.entry(kind.to_string()).or_default() += 1;
    }

    pub fn total_delegations(&self) -> u64 {
        self.delegations.values().sum()
    }

    pub fn log_event(&mut self, sid: ServerId, counter: CounterId, ev: SublistEvent) {
        if self.watched.contains(&(sid, counter)) {
            self.events.entry((sid, counter)).or_default().push(ev);
        }
    }

    pub fn fault(&mut self, msg: impl Into<String>) {
        self.faults.push(msg.into());
    }
}
