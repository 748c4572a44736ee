//! Lookup inclusion: a lookup must report every node that surely held its
//! key for the whole call, and nothing that surely did not.

use std::collections::HashMap;

use super::history::{Op, OpRecord, Ret, Target};
use super::oracle::SeqEntry;
use crate::core_list::Ident;

#[derive(Clone, Copy, Debug)]
struct Life {
    key: u64,
    /// Step by which the insert had responded (0 for initial nodes).
    inserted_by: u64,
    /// Step at which the insert was invoked.
    insert_inv: u64,
    /// Earliest invocation of a delete that may have removed it.
    delete_inv: u64,
    /// Earliest response of a successful delete.
    deleted_by: u64,
}

/// Returns one message per violating lookup.
pub fn check_lookups(initial: &[SeqEntry], ops: &[OpRecord]) -> Vec<String> {
    let mut life: HashMap<Ident, Life> = HashMap::new();
    for e in initial {
        life.insert(
            e.ident(),
            Life {
                key: e.key,
                inserted_by: 0,
                insert_inv: 0,
                delete_inv: if e.deleted { 0 } else { u64::MAX },
                deleted_by: if e.deleted { 0 } else { u64::MAX },
            },
        );
    }
    for o in ops {
        let key = match o.op {
            Op::InsertAfter(_, k) | Op::SortedInsert(k) => k,
            _ => continue,
        };
        if let Some(Ret::Node(Target::Node(id))) = &o.ret {
            life.insert(
                *id,
                Life {
                    key,
                    inserted_by: o.res,
                    insert_inv: o.inv,
                    delete_inv: u64::MAX,
                    deleted_by: u64::MAX,
                },
            );
        }
    }
    for o in ops {
        let ids: Vec<Ident> = match &o.op {
            Op::Delete(Target::Node(id)) => vec![*id],
            Op::SortedDelete(k) => life.iter().filter(|(_, l)| l.key == *k).map(|(id, _)| *id).collect(),
            _ => continue,
        };
        let sure = matches!(o.ret, Some(Ret::Ok)) && ids.len() == 1;
        for id in ids {
            if let Some(l) = life.get_mut(&id) {
                l.delete_inv = l.delete_inv.min(o.inv);
                if sure {
                    l.deleted_by = l.deleted_by.min(o.res);
                }
            }
        }
    }
    let mut out = vec![];
    for o in ops {
        let k = match o.op {
            Op::Lookup(k) | Op::SortedSearch(k) => k,
            _ => continue,
        };
        let Some(Ret::Nodes(got)) = &o.ret else { continue };
        for (id, l) in &life {
            let must = l.key == k && l.inserted_by < o.inv && l.delete_inv > o.res;
            if must && !got.contains(id) {
                out.push(format!("lookup op {} of {k} missed {id:?}", o.op_id));
            }
        }
        for id in got {
            match life.get(id) {
                Some(l) if l.key != k => out.push(format!("lookup op {} of {k} returned {id:?} with key {}", o.op_id, l.key)),
                Some(l) if l.insert_inv > o.res => {
                    out.push(format!("lookup op {} of {k} returned {id:?} before its insert", o.op_id))
                }
                Some(l) if l.deleted_by < o.inv => {
                    out.push(format!("lookup op {} of {k} returned deleted {id:?}", o.op_id))
                }
                Some(_) => {}
                None => {}
            }
        }
    }
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

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
    fn completed_insert_must_be_seen() {
        let a = Ident { sid: 0, ts: 9 };
        let ops = vec![
            rec(0, Op::InsertAfter(Target::Head, 3), Ret::Node(Target::Node(a)), 1, 2),
            rec(1, Op::Lookup(3), Ret::Nodes(vec![]), 3, 4),
        ];
        assert_eq!(check_lookups(&[], &ops).len(), 1);
    }

    #[test]
    fn concurrent_delete_excuses_a_miss() {
        let a = SeqEntry {
            key: 3,
            ts: 1,
            sid: 0,
            deleted: false,
        };
        let ops = vec![
            rec(0, Op::Delete(Target::Node(a.ident())), Ret::Ok, 2, 6),
            rec(1, Op::Lookup(3), Ret::Nodes(vec![]), 3, 4),
        ];
        assert!(check_lookups(&[a], &ops).is_empty());
    }

    #[test]
    fn deleted_node_must_not_be_returned() {
        let a = SeqEntry {
            key: 3,
            ts: 1,
            sid: 0,
            deleted: false,
        };
        let ops = vec![
            rec(0, Op::Delete(Target::Node(a.ident())), Ret::Ok, 1, 2),
            rec(1, Op::Lookup(3), Ret::Nodes(vec![a.ident()]), 3, 4),
        ];
        assert_eq!(check_lookups(&[a], &ops).len(), 1);
    }
}
