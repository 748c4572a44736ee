use serde::{Deserialize, Serialize};

use crate::core_list::Ident;
use crate::error::ListError;

/// A node as seen by clients: one of the list endpoints or an application
/// node named by its cross-server identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Target {
    Head,
    Tail,
    Node(Ident),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    InsertAfter(Target, u64),
    Delete(Target),
    Next(Target),
    Lookup(u64),
    GetItem(Target),
    SortedInsert(u64),
    SortedSearch(u64),
    SortedDelete(u64),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::InsertAfter(..) => "insert_after",
            Op::Delete(_) => "delete",
            Op::Next(_) => "next",
            Op::Lookup(_) => "lookup",
            Op::GetItem(_) => "get_item",
            Op::SortedInsert(_) => "sorted_insert",
            Op::SortedSearch(_) => "sorted_search",
            Op::SortedDelete(_) => "sorted_delete",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ret {
    Node(Target),
    Nodes(Vec<Ident>),
    Ok,
    Err(ListError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Invoke(Op),
    Respond(Ret),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub step: u64,
    pub tick: u64,
    pub worker: u32,
    pub op_id: u64,
    pub kind: EventKind,
}

/// One operation with its invocation and (if any) response.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpRecord {
    pub op_id: u64,
    pub worker: u32,
    pub op: Op,
    pub ret: Option<Ret>,
    pub inv: u64,
    pub res: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct History {
    events: Vec<Event>,
    next_op: u64,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn invoke(&mut self, step: u64, tick: u64, worker: u32, op: Op) -> u64 {
        let op_id = self.next_op;
        self.next_op += 1;
        self.events.push(Event {
            step,
            tick,
            worker,
            op_id,
            kind: EventKind::Invoke(op),
        });
        op_id
    }

    pub fn respond(&mut self, op_id: u64, step: u64, tick: u64, ret: Ret) {
        let worker = self
            .events
            .iter()
            .rev()
            .find(|e| e.op_id == op_id)
            .map(|e| e.worker)
            .expect("respond without invoke");
        self.events.push(Event {
            step,
            tick,
            worker,
            op_id,
            kind: EventKind::Respond(ret),
        });
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Pairs invocations with responses. `inv` and `res` are positions in
    /// the event log, so they order events totally; pending operations get
    /// `res = u64::MAX`.
    pub fn ops(&self) -> Vec<OpRecord> {
        let mut out: Vec<OpRecord> = vec![];
        let mut idx = std::collections::HashMap::new();
        for (pos, e) in self.events.iter().enumerate() {
            let pos = pos as u64;
            match &e.kind {
                EventKind::Invoke(op) => {
                    idx.insert(e.op_id, out.len());
                    out.push(OpRecord {
                        op_id: e.op_id,
                        worker: e.worker,
                        op: op.clone(),
                        ret: None,
                        inv: pos,
                        res: u64::MAX,
                    });
                }
                EventKind::Respond(r) => {
                    let i = idx[&e.op_id];
                    assert!(out[i].ret.is_none(), "op {} answered twice", e.op_id);
                    out[i].ret = Some(r.clone());
                    out[i].res = pos;
                }
            }
        }
        out
    }

    /// Every response matches exactly one earlier invoke.
    pub fn well_formed(&self) -> bool {
        let mut open = std::collections::HashSet::new();
        let mut done = std::collections::HashSet::new();
        for e in &self.events {
            match e.kind {
                EventKind::Invoke(_) => {
                    if !open.insert(e.op_id) {
                        return false;
                    }
                }
                EventKind::Respond(_) => {
                    if !open.remove(&e.op_id) || !done.insert(e.op_id) {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Inverse of [`History::to_lines`].
    pub fn from_lines(text: &str) -> Result<History, String> {
        let mut events = vec![];
        for (i, l) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let e: Event = serde_json::from_str(l).map_err(|e| format!("history line {}: {e}", i + 1))?;
            events.push(e);
        }
        let next_op = events.iter().map(|e| e.op_id + 1).max().unwrap_or(0);
        Ok(History { events, next_op })
    }

    /// One event per line as JSON.
    pub fn to_lines(&self) -> String {
        self.events
            .iter()
            .map(|e| serde_json::to_string(e).expect("event") + "\n")
            .collect()
    }
}
