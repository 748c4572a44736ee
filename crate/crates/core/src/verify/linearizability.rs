//! Linearizability checking against a sequential list model.
//!
//! A depth-first search over the operations that may go next, memoized on
//! the set already placed and the model state.

use std::collections::{BTreeMap, HashSet};

use super::history::{Op, OpRecord, Ret, Target};
use super::oracle::SeqEntry;
use crate::core_list::Ident;
use crate::error::ListError;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Model {
    seq: Vec<(Ident, u64, bool)>,
}

impl Model {
    pub fn new(initial: &[SeqEntry]) -> Self {
        Model {
            seq: initial.iter().map(|e| (e.ident(), e.key, e.deleted)).collect(),
        }
    }

    fn pos(&self, id: Ident) -> Option<usize> {
        self.seq.iter().position(|e| e.0 == id)
    }

    fn live_with(&self, k: u64) -> Vec<Ident> {
        let mut v: Vec<Ident> = self.seq.iter().filter(|e| e.1 == k && !e.2).map(|e| e.0).collect();
        v.sort();
        v
    }

    /// First live node after index `from` (exclusive of earlier ones).
    fn next_live(&self, from: usize) -> Target {
        self.seq[from..]
            .iter()
            .find(|e| !e.2)
            .map_or(Target::Tail, |e| Target::Node(e.0))
    }

    /// Applies `op` with the observed `ret`. `None` if the pair is not a
    /// legal sequential step from this state. A missing `ret` (pending
    /// operation) takes whatever effect the model gives it.
    pub fn apply(&self, op: &Op, ret: Option<&Ret>) -> Option<Model> {
        let no_op = |r: Option<&Ret>| matches!(r, Some(Ret::Err(ListError::LeaseExpired | ListError::UnknownRef)));
        if no_op(ret) {
            return Some(self.clone());
        }
        let mut m = self.clone();
        match op {
            Op::InsertAfter(prev, key) => {
                let at = match prev {
                    Target::Tail => {
                        return matches!(ret, None | Some(Ret::Err(ListError::SentinelTarget))).then_some(m);
                    }
                    Target::Head => 0,
                    Target::Node(p) => {
                        let i = self.pos(*p)?;
                        if self.seq[i].2 {
                            return matches!(ret, None | Some(Ret::Err(ListError::NodeNotFound))).then_some(m);
                        }
                        i + 1
                    }
                };
                match ret {
                    Some(Ret::Node(Target::Node(id))) => {
                        if self.pos(*id).is_some() {
                            return None;
                        }
                        m.seq.insert(at, (*id, *key, false));
                        Some(m)
                    }
                    None => Some(m),
                    _ => None,
                }
            }
            Op::Delete(t) => match t {
                Target::Head | Target::Tail => {
                    matches!(ret, None | Some(Ret::Err(ListError::SentinelTarget))).then_some(m)
                }
                Target::Node(id) => {
                    let i = self.pos(*id)?;
                    if self.seq[i].2 {
                        matches!(ret, None | Some(Ret::Err(ListError::NodeNotFound))).then_some(m)
                    } else {
                        m.seq[i].2 = true;
                        matches!(ret, None | Some(Ret::Ok)).then_some(m)
                    }
                }
            },
            Op::Next(prev) => {
                let expect = match prev {
                    Target::Tail => {
                        return matches!(ret, None | Some(Ret::Err(ListError::SentinelTarget))).then_some(m);
                    }
                    Target::Head => self.next_live(0),
                    Target::Node(p) => self.next_live(self.pos(*p)? + 1),
                };
                match ret {
                    None => Some(m),
                    Some(Ret::Node(t)) => (*t == expect).then_some(m),
                    _ => None,
                }
            }
            Op::GetItem(t) => {
                let Target::Node(id) = t else {
                    return Some(m);
                };
                let i = self.pos(*id)?;
                let expect = if self.seq[i].2 { vec![] } else { vec![*id] };
                match ret {
                    None => Some(m),
                    Some(Ret::Nodes(v)) => (*v == expect).then_some(m),
                    _ => None,
                }
            }
            Op::Lookup(k) | Op::SortedSearch(k) => match ret {
                None => Some(m),
                Some(Ret::Nodes(v)) => {
                    let mut v = v.clone();
                    v.sort();
                    (v == self.live_with(*k)).then_some(m)
                }
                _ => None,
            },
            Op::SortedInsert(k) => {
                let exists = !self.live_with(*k).is_empty();
                match ret {
                    Some(Ret::Err(ListError::DuplicateKey)) => exists.then_some(m),
                    Some(Ret::Node(Target::Node(id))) if !exists && self.pos(*id).is_none() => {
                        m.seq.push((*id, *k, false));
                        Some(m)
                    }
                    None => Some(m),
                    _ => None,
                }
            }
            Op::SortedDelete(k) => {
                let live = self.live_with(*k);
                match ret {
                    Some(Ret::Err(ListError::NotFound)) => live.is_empty().then_some(m),
                    Some(Ret::Ok) if live.len() == 1 => {
                        let i = m.pos(live[0]).expect("live node");
                        m.seq[i].2 = true;
                        Some(m)
                    }
                    None => Some(m),
                    _ => None,
                }
            }
        }
    }
}

/// Search budget, in visited (linearized set, state) pairs.
const MAX_VISITS: usize = 4_000_000;

/// Outcome of a check: `Err` describes where the search got stuck.
///
/// Histories made only of key-addressed sorted operations are checked one
/// key at a time, since such operations on different keys commute.
pub fn check_linearizable(initial: &[SeqEntry], ops: &[OpRecord]) -> Result<(), String> {
    let keyed = |o: &OpRecord| match o.op {
        Op::SortedInsert(k) | Op::SortedSearch(k) | Op::SortedDelete(k) => Some(k),
        _ => None,
    };
    if !ops.is_empty() && ops.iter().all(|o| keyed(o).is_some()) {
        let mut by_key: BTreeMap<u64, Vec<OpRecord>> = BTreeMap::new();
        for o in ops {
            by_key.entry(keyed(o).expect("keyed")).or_default().push(o.clone());
        }
        for (k, part) in by_key {
            let init: Vec<SeqEntry> = initial.iter().filter(|e| e.key == k).copied().collect();
            search(&init, &part).map_err(|e| format!("key {k}: {e}"))?;
        }
        return Ok(());
    }
    search(initial, ops)
}

/// Depth-first search for a legal order. Pending operations may be placed
/// anywhere after their invocation, or not at all.
fn search(initial: &[SeqEntry], ops: &[OpRecord]) -> Result<(), String> {
    let mut ops: Vec<&OpRecord> = ops.iter().collect();
    ops.sort_by_key(|o| o.inv);
    let mut s = Search {
        ops: &ops,
        completed: ops.iter().filter(|o| o.ret.is_some()).count(),
        done: vec![0u64; ops.len().div_ceil(64)],
        memo: HashSet::new(),
        deepest: (0, Vec::new()),
    };
    match s.dfs(&Model::new(initial), 0) {
        Some(true) => Ok(()),
        found => {
            let stuck = (0..ops.len())
                .find(|&i| ops[i].ret.is_some() && !s.is_done_at_deepest(i))
                .map_or(0, |i| ops[i].op_id);
            let why = if found.is_none() { "search budget exhausted" } else { "no linearization" };
            Err(format!(
                "{why}: at most {} of {} completed operations ordered, first unplaced op {stuck}",
                s.deepest.0,
                s.completed
            ))
        }
    }
}

struct Search<'a> {
    ops: &'a [&'a OpRecord],
    completed: usize,
    done: Vec<u64>,
    memo: HashSet<(Vec<u64>, Model)>,
    /// Longest prefix reached and its linearized set.
    deepest: (usize, Vec<u64>),
}

impl Search<'_> {
    fn is_done(&self, i: usize) -> bool {
        self.done[i / 64] >> (i % 64) & 1 == 1
    }

    fn is_done_at_deepest(&self, i: usize) -> bool {
        self.deepest.1.get(i / 64).is_some_and(|w| w >> (i % 64) & 1 == 1)
    }

    fn flip(&mut self, i: usize) {
        self.done[i / 64] ^= 1 << (i % 64);
    }

    /// `Some(true)` on success, `Some(false)` if no order exists from here,
    /// `None` once the budget is spent.
    fn dfs(&mut self, state: &Model, placed: usize) -> Option<bool> {
        if placed == self.completed {
            return Some(true);
        }
        if placed > self.deepest.0 || self.deepest.1.is_empty() {
            self.deepest = (placed, self.done.clone());
        }
        if !self.memo.insert((self.done.clone(), state.clone())) {
            return Some(false);
        }
        if self.memo.len() > MAX_VISITS {
            return None;
        }
        let first = (0..self.ops.len()).find(|&i| !self.is_done(i)).expect("an open op");
        let min_res = (first..self.ops.len())
            .filter(|&i| !self.is_done(i) && self.ops[i].ret.is_some())
            .map(|i| self.ops[i].res)
            .min()
            .unwrap_or(u64::MAX);
        let mut i = first;
        while i < self.ops.len() && self.ops[i].inv < min_res {
            if !self.is_done(i) {
                let o = self.ops[i];
                if let Some(next) = state.apply(&o.op, o.ret.as_ref()) {
                    self.flip(i);
                    let r = self.dfs(&next, placed + usize::from(o.ret.is_some()));
                    self.flip(i);
                    if r != Some(false) {
                        return r;
                    }
                }
            }
            i += 1;
        }
        Some(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(ts: u64) -> Ident {
        Ident { sid: 0, ts }
    }

    fn rec(op_id: u64, op: Op, ret: Ret, inv: u64, res: u64) -> OpRecord {
        OpRecord {
            op_id,
            worker: 0,
            op,
            ret: Some(ret),
            inv,
            res,
        }
    }

    #[test]
    fn sequential_history_is_accepted() {
        let ops = vec![
            rec(0, Op::InsertAfter(Target::Head, 5), Ret::Node(Target::Node(id(1))), 1, 2),
            rec(1, Op::Next(Target::Head), Ret::Node(Target::Node(id(1))), 3, 4),
            rec(2, Op::Delete(Target::Node(id(1))), Ret::Ok, 5, 6),
            rec(3, Op::Next(Target::Head), Ret::Node(Target::Tail), 7, 8),
        ];
        assert!(check_linearizable(&[], &ops).is_ok());
    }

    #[test]
    fn stale_read_after_delete_is_rejected() {
        let ops = vec![
            rec(0, Op::InsertAfter(Target::Head, 5), Ret::Node(Target::Node(id(1))), 1, 2),
            rec(1, Op::Delete(Target::Node(id(1))), Ret::Ok, 3, 4),
            rec(2, Op::Next(Target::Head), Ret::Node(Target::Node(id(1))), 5, 6),
        ];
        assert!(check_linearizable(&[], &ops).is_err());
    }

    #[test]
    fn overlapping_ops_may_reorder() {
        let ops = vec![
            rec(0, Op::InsertAfter(Target::Head, 5), Ret::Node(Target::Node(id(1))), 1, 6),
            rec(1, Op::Next(Target::Head), Ret::Node(Target::Tail), 2, 3),
        ];
        assert!(check_linearizable(&[], &ops).is_ok());
    }

    #[test]
    fn inserts_at_same_prev_stack_newest_first() {
        let ops = vec![
            rec(0, Op::InsertAfter(Target::Head, 1), Ret::Node(Target::Node(id(1))), 1, 2),
            rec(1, Op::InsertAfter(Target::Head, 2), Ret::Node(Target::Node(id(2))), 3, 4),
            rec(2, Op::Next(Target::Head), Ret::Node(Target::Node(id(1))), 5, 6),
        ];
        assert!(check_linearizable(&[], &ops).is_err());
    }

    #[test]
    fn pending_delete_may_take_effect() {
        let mut pending = rec(1, Op::Delete(Target::Node(id(1))), Ret::Ok, 3, u64::MAX);
        pending.ret = None;
        let ops = vec![
            rec(0, Op::InsertAfter(Target::Head, 5), Ret::Node(Target::Node(id(1))), 1, 2),
            pending,
            rec(2, Op::Next(Target::Head), Ret::Node(Target::Tail), 5, 6),
        ];
        assert!(check_linearizable(&[], &ops).is_ok());
    }
}
