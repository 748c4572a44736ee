//! Property checks over a finished simulation.

use std::collections::BTreeMap;

use super::history::{History, Op};
use super::linearizability::check_linearizable;
use super::lookup::check_lookups;
use super::oracle::SeqEntry;
use crate::core_list::Key;
use crate::runtime::config::Variant;
use crate::runtime::sim::{Verdict, World};

fn verdict(problems: Vec<String>) -> Verdict {
    Verdict {
        ok: problems.is_empty(),
        detail: match problems.len() {
            0 => "ok".into(),
            n => format!("{n} problem(s), first: {}", problems[0]),
        },
    }
}

/// Checks that need only the client history: well-formedness,
/// linearizability and lookup inclusion. Lookups join the linearizability
/// check only on a single server.
pub fn history_verdicts(initial: &[SeqEntry], h: &History, servers: u16) -> BTreeMap<String, Verdict> {
    let mut out = BTreeMap::new();
    let well_formed = h.well_formed();
    out.insert(
        "history_well_formed".into(),
        verdict(if well_formed { vec![] } else { vec!["unmatched invoke or response".into()] }),
    );
    if !well_formed {
        return out;
    }
    let ops = h.ops();
    let lin_ops: Vec<_> = ops
        .iter()
        .filter(|o| servers == 1 || !matches!(o.op, Op::Lookup(_)))
        .cloned()
        .collect();
    out.insert(
        "linearizable".into(),
        verdict(check_linearizable(initial, &lin_ops).err().into_iter().collect()),
    );
    out.insert("lookup_inclusion".into(), verdict(check_lookups(initial, &ops)));
    out
}

/// Runs every check that applies to the world's configuration.
pub fn evaluate(w: &World) -> BTreeMap<String, Verdict> {
    let ctx = &w.ctx;
    let cfg = &ctx.cfg;
    let st = ctx.stats.borrow();
    let mut out = BTreeMap::new();

    out.extend(history_verdicts(&w.initial, &st.history, cfg.servers));
    if !out["history_well_formed"].ok {
        return out;
    }

    let mut counters = st.checkpoint_violations.clone();
    for sp in &st.splits {
        if sp.a1 + sp.a2 != sp.old_offset {
            counters.push(format!(
                "split of sublist {}: {} + {} != {}",
                sp.sublist, sp.a1, sp.a2, sp.old_offset
            ));
        }
    }
    out.insert("counter_identity".into(), verdict(counters));

    let mut moves = vec![];
    for m in &st.moves {
        if m.t_cas.is_none() {
            moves.push(format!("move of sublist {} never completed", m.sublist));
            continue;
        }
        if m.snapshots_equal == Some(false) {
            moves.push(format!("move of sublist {}: target differs from source", m.sublist));
        }
        if m.oracle_equal == Some(false) {
            moves.push(format!("move of sublist {}: target differs from replay", m.sublist));
        }
        if m.residues.iter().any(|&r| r > 0) {
            moves.push(format!("move of sublist {} left residue {:?}", m.sublist, m.residues));
        }
        match (m.t_switch, m.t_reclaim) {
            (Some(s), Some(r)) if r - s != cfg.theta => {
                moves.push(format!("sublist {} reclaimed {} after switch", m.sublist, r - s))
            }
            (Some(_), None) => moves.push(format!("sublist {} never reclaimed", m.sublist)),
            _ => {}
        }
    }
    out.insert("moves".into(), verdict(moves));

    let mut order = vec![];
    for &(req, line) in &st.replicate_lines {
        match st.response_line.get(&req) {
            Some(&r) if r < line => {}
            Some(&r) => order.push(format!("request {req:?}: response line {r} after replicate line {line}")),
            None => order.push(format!("request {req:?}: replicate without response")),
        }
    }
    if st.ts_order_violations > 0 {
        order.push(format!("{} replicated inserts with prev.ts >= item.ts", st.ts_order_violations));
    }
    out.insert("replicate_after_response".into(), verdict(order));

    let dup: Vec<String> = ctx
        .responses
        .borrow()
        .iter()
        .filter(|(_, &n)| n != 1)
        .map(|(k, n)| format!("request {k:?} answered {n} times"))
        .collect();
    out.insert("one_response_per_request".into(), verdict(dup));

    let mut lease = vec![];
    let trips: u64 = ctx.servers.borrow().iter().map(|s| s.arena.gen_trips()).sum();
    if trips > 0 {
        lease.push(format!("{trips} generation wrap(s) on live references"));
    }
    if st.post_switch_delegated != st.post_switch_requests {
        lease.push(format!(
            "{} of {} post-switch requests delegated",
            st.post_switch_delegated, st.post_switch_requests
        ));
    }
    out.insert("switch_and_leases".into(), verdict(lease));

    if cfg.variant == Variant::Sorted {
        drop(st);
        out.insert("sorted_structure".into(), verdict(sorted_problems(w)));
        let st = ctx.stats.borrow();
        let over: Vec<String> = st
            .visits
            .iter()
            .filter(|(v, b)| v > b)
            .map(|(v, b)| format!("search visited {v} nodes, bound {b}"))
            .collect();
        out.insert("search_visits".into(), verdict(over));
        out.insert("sorted_order_checkpoints".into(), verdict(st.order_violations.clone()));
    }
    out.insert("faults".into(), verdict(ctx.stats.borrow().faults.clone()));
    out
}

/// Live keys in global order are strictly increasing.
pub fn order_problems(w: &World) -> Vec<String> {
    let mut out = vec![];
    let mut last: Option<u64> = None;
    for n in w.global() {
        if n.deleted {
            continue;
        }
        if let Key::App(k) = n.key {
            if let Some(l) = last {
                if k == l {
                    out.push(format!("duplicate key {k}"));
                } else if k < l {
                    out.push(format!("key {k} after {l}"));
                }
            }
            last = Some(k);
        }
    }
    out
}

/// Order, range partition and routing of the final sorted list.
fn sorted_problems(w: &World) -> Vec<String> {
    let ctx = &w.ctx;
    let mut out = order_problems(w);
    // Active ranges in global order, with the live keys under each.
    let mut spans: Vec<(u64, Option<u64>, u64, Vec<u64>)> = vec![];
    for n in w.global() {
        match n.key {
            Key::SubHead => {
                let s = ctx.server(n.id.sid);
                let reg = s.registry.borrow();
                let Some(e) = reg.get(n.id) else {
                    out.push(format!("subhead {:?} reachable but unregistered", n.id));
                    continue;
                };
                let Some(r) = e.range else {
                    out.push(format!("sublist {} has no range", e.sublist));
                    continue;
                };
                spans.push((e.sublist, r.lo, r.hi, vec![]));
            }
            Key::App(k) if !n.deleted => match spans.last_mut() {
                Some(sp) => sp.3.push(k),
                None => out.push(format!("key {k} before the first sublist")),
            },
            _ => {}
        }
    }
    let mut expect_lo = None;
    for (i, (id, lo, hi, keys)) in spans.iter().enumerate() {
        if *lo != expect_lo {
            out.push(format!("sublist {id} starts at {lo:?}, expected {expect_lo:?}"));
        }
        if i + 1 == spans.len() && *hi != u64::MAX {
            out.push(format!("last sublist {id} ends at {hi}"));
        }
        expect_lo = Some(*hi);
        for &k in keys {
            if lo.is_some_and(|l| k <= l) || k > *hi {
                out.push(format!("key {k} outside sublist {id} ({lo:?}, {hi}]"));
            }
        }
    }
    // Routing: the registries agree with a scan of the ranges.
    let brute = |k: u64| {
        spans
            .iter()
            .find(|(_, lo, hi, _)| lo.is_none_or(|l| k > l) && k <= *hi)
            .map(|sp| sp.0)
    };
    let step = (ctx.cfg.key_space / 4096).max(1);
    let mut k = 0;
    while k < ctx.cfg.key_space {
        let mut routed = vec![];
        for s in ctx.servers.borrow().iter() {
            for e in s.registry.borrow().covering(k) {
                if !s.is_retired_node(e.subhead) {
                    routed.push(e.sublist);
                }
            }
        }
        let want: Vec<u64> = brute(k).into_iter().collect();
        if routed != want {
            out.push(format!("key {k} routed to {routed:?}, scan says {want:?}"));
        }
        k += step;
    }
    out
}
