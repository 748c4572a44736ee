//! Aborting move: counter-gated updates, split, move with abort and retry,
//! and the switch shared with the replicating protocol.

use std::rc::Rc;

use crate::core_list::arena::{DELETED, MOVED};
use crate::core_list::{Key, NewNode, NodeId, ServerId};
use crate::error::ListError;
use crate::exec::{now, pause, sleep, sleep_until};
use crate::runtime::message::{Body, RelinkKind};
use crate::runtime::registry::RegistryEntry;
use crate::runtime::server::Server;
use crate::runtime::stats::{MoveRecord, SplitRecord};
use crate::verify::oracle::{SeqEntry, SublistEvent};

/// Result of a gated update on the local copy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Applied {
    Failed(ListError),
    /// `remote` is the forwarding address of `prev` when the update must
    /// be replicated.
    Inserted { node: NodeId, prev: NodeId, remote: Option<NodeId> },
    Deleted { node: NodeId, remote: Option<NodeId> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    /// The sublist has moved; forward to this node.
    Delegate(NodeId),
    Done(Applied),
}

fn log(s: &Server, n: NodeId, ev: SublistEvent) {
    if let Some(c) = s.arena.start(n) {
        s.ctx().stats.borrow_mut().log_event(s.sid, c, ev);
    }
}

/// Counter-gated insert. With `tr`, an insert at a node whose copy already
/// lives elsewhere leaves the end counter for the replay ack.
pub async fn insert_after(s: &Server, prev: NodeId, key: u64, tr: bool) -> Outcome {
    let a = &s.arena;
    if matches!(a.key(prev), Key::Tail | Key::SubTail | Key::DummyNode) {
        return Outcome::Done(Applied::Failed(ListError::SentinelTarget));
    }
    let ctx = s.ctx();
    let v = a.counter(a.start(prev).expect("node without counters")).increment();
    ctx.add_inflight(1);
    pause().await;
    if v < 0 {
        ctx.add_inflight(-1);
        return unmoved(s, prev);
    }
    loop {
        let st = a.status(prev);
        pause().await;
        if st & DELETED != 0 {
            s.bump_end(prev);
            ctx.add_inflight(-1);
            return Outcome::Done(Applied::Failed(ListError::NodeNotFound));
        }
        let temp = a.next(prev);
        pause().await;
        let nl = a.new_loc(prev);
        let remote = nl.filter(|n| tr && n.sid != s.sid);
        let (sc, ec) = (a.start(prev), a.end(prev));
        let ts = s.tick_clock();
        let node = a.alloc(NewNode {
            key: Key::App(key),
            next: temp,
            moved: remote.is_some(),
            new_loc: remote,
            start: sc,
            end: ec,
            ts,
            ..NewNode::sentinel(Key::App(key), s.sid)
        });
        if a.rdcss_next(prev, st, temp, node) {
            fix_handles(s, node, prev, sc, ec);
            let p = (a.key(prev) != Key::SubHead).then(|| a.ident(prev));
            let item = SeqEntry {
                key,
                ts,
                sid: s.sid,
                deleted: false,
            };
            log(s, prev, SublistEvent::Insert { prev: p, item });
            if remote.is_none() {
                s.bump_end(prev);
                ctx.add_inflight(-1);
            }
            return Outcome::Done(Applied::Inserted { node, prev, remote });
        }
        a.free(node);
        pause().await;
    }
}

/// Forwarding for a node of a moved sublist. A tombstone unlinked before
/// the move was never copied and stays deleted.
fn unmoved(s: &Server, n: NodeId) -> Outcome {
    match s.arena.new_loc(n) {
        Some(nl) => Outcome::Delegate(nl),
        None => {
            assert!(s.arena.is_deleted(n), "moved node without forwarding");
            Outcome::Done(Applied::Failed(ListError::NodeNotFound))
        }
    }
}

/// A split may have repointed `prev` while the insert was in progress.
fn fix_handles(s: &Server, node: NodeId, prev: NodeId, sc: Option<u32>, ec: Option<u32>) {
    let a = &s.arena;
    if let (Some(old), Some(cur)) = (sc, a.start(prev)) {
        if old != cur {
            a.cas_start(node, old, cur);
        }
    }
    if let (Some(old), Some(cur)) = (ec, a.end(prev)) {
        if old != cur {
            a.cas_end(node, old, cur);
        }
    }
}

/// Counter-gated delete.
pub async fn delete(s: &Server, target: NodeId, tr: bool) -> Outcome {
    let a = &s.arena;
    if a.key(target).is_sentinel() {
        return Outcome::Done(Applied::Failed(ListError::SentinelTarget));
    }
    let ctx = s.ctx();
    let v = a.counter(a.start(target).expect("node without counters")).increment();
    ctx.add_inflight(1);
    pause().await;
    if v < 0 {
        ctx.add_inflight(-1);
        return unmoved(s, target);
    }
    loop {
        let st = a.status(target);
        pause().await;
        if st & DELETED != 0 {
            s.bump_end(target);
            ctx.add_inflight(-1);
            return Outcome::Done(Applied::Failed(ListError::NodeNotFound));
        }
        if a.cas_status(target, st, st | DELETED) {
            log(s, target, SublistEvent::Delete { target: a.ident(target) });
            let remote = if tr && st & MOVED != 0 { a.new_loc(target) } else { None };
            if remote.is_none() {
                s.bump_end(target);
                ctx.add_inflight(-1);
            }
            return Outcome::Done(Applied::Deleted { node: target, remote });
        }
        pause().await;
    }
}

/// Claims the sublist for a transformation once no delink pass runs.
pub(crate) async fn claim(s: &Server, sh: NodeId) -> Option<RegistryEntry> {
    while s.delinking.get() {
        sleep(1).await;
    }
    try_claim(s, sh)
}

/// Marks the sublist busy. Fails if a delink pass or another
/// transformation is running on it.
pub fn try_claim(s: &Server, sh: NodeId) -> Option<RegistryEntry> {
    if s.delinking.get() || s.is_retired_node(sh) {
        return None;
    }
    let mut reg = s.registry.borrow_mut();
    let e = reg.get_mut(sh)?;
    if e.busy {
        return None;
    }
    e.busy = true;
    s.ctx().begin_transform(&[e.sublist]);
    Some(*e)
}

fn release(s: &Server, sh: NodeId, sublist: u64) {
    if let Some(e) = s.registry.borrow_mut().get_mut(sh) {
        e.busy = false;
    }
    s.ctx().end_transform(&[sublist]);
}

/// Splits the sublist at `sh` after its `pos`-th application node.
/// Returns the new subhead.
pub async fn split(s: Rc<Server>, sh: NodeId, pos: usize) -> Option<NodeId> {
    let e = claim(&s, sh).await?;
    split_claimed(s, sh, e, pos).await
}

/// Split on a sublist already claimed with [`try_claim`].
pub async fn split_claimed(s: Rc<Server>, sh: NodeId, e: RegistryEntry, pos: usize) -> Option<NodeId> {
    let a = &s.arena;
    let ctx = s.ctx();
    let apps: Vec<NodeId> = s
        .sublist_nodes(sh)
        .into_iter()
        .filter(|&n| !a.key(n).is_sentinel())
        .collect();
    if apps.len() < 2 {
        release(&s, sh, e.sublist);
        return None;
    }
    let x = apps[pos.clamp(1, apps.len() - 1) - 1];
    let sc = a.new_counter(0);
    let ec = a.new_counter(0);
    let sh2 = a.alloc(NewNode {
        start: Some(sc),
        end: Some(ec),
        ts: s.tick_clock(),
        ..NewNode::sentinel(Key::SubHead, s.sid)
    });
    let dummy = a.alloc(NewNode {
        next: Some(sh2),
        start: Some(e.start),
        end: Some(e.end),
        ts: s.tick_clock(),
        ..NewNode::sentinel(Key::DummyNode, s.sid)
    });
    loop {
        let nx = a.next(x);
        pause().await;
        a.init_next(sh2, nx);
        if a.cas_next(x, nx, Some(dummy)) {
            break;
        }
        pause().await;
    }
    pause().await;
    let mut curr = a.next(sh2).expect("split point has a successor");
    loop {
        a.set_start(curr, sc);
        a.set_end(curr, ec);
        pause().await;
        if a.key(curr) == Key::SubTail {
            break;
        }
        curr = a.next(curr).expect("sublist node has a successor");
    }
    let (a1, a2) = loop {
        let a1 = a.counter(sc).get() - a.counter(ec).get();
        let a2 = a.counter(e.start).get() - a.counter(e.end).get();
        if a1 + a2 == e.offset {
            break (a1, a2);
        }
        sleep(1).await;
    };
    let new_sublist = ctx.new_sublist_id();
    let cut = a.key(x).app();
    let (left, right) = match (e.range, cut) {
        (Some(r), Some(k)) => (
            Some(crate::runtime::message::KeyRange { lo: r.lo, hi: k }),
            Some(crate::runtime::message::KeyRange { lo: Some(k), hi: r.hi }),
        ),
        (r, _) => (r, r),
    };
    {
        let mut reg = s.registry.borrow_mut();
        reg.add(RegistryEntry {
            sublist: new_sublist,
            subhead: sh2,
            start: sc,
            end: ec,
            offset: a1,
            prev_subtail: dummy,
            range: right,
            parent: Some(e.sublist),
            busy: false,
        });
        let old = reg.get_mut(sh).expect("split sublist vanished");
        old.offset = a2;
        old.range = left;
    }
    a.set_key(dummy, Key::SubTail);
    ctx.stats.borrow_mut().splits.push(SplitRecord {
        sublist: e.sublist,
        new_sublist,
        server: s.sid,
        a1,
        a2,
        old_offset: e.offset,
        t: now(),
    });
    release(&s, sh, e.sublist);
    Some(sh2)
}

/// Moves the sublist at `sh` to server `to`, retrying until the counter
/// swap succeeds, then switches ownership.
pub async fn move_sublist(s: Rc<Server>, sh: NodeId, to: ServerId) {
    if let Some(e) = claim(&s, sh).await {
        move_claimed(s, sh, e, to).await
    }
}

/// Move of a sublist already claimed with [`try_claim`].
pub async fn move_claimed(s: Rc<Server>, sh: NodeId, e: RegistryEntry, to: ServerId) {
    let a = &s.arena;
    let ctx = s.ctx();
    let mut rec = MoveRecord {
        sublist: e.sublist,
        protocol: "am".into(),
        from: s.sid,
        to,
        nodes: app_count(&s, sh),
        t_start: now(),
        ..Default::default()
    };
    let batch = ctx.cfg.move_batch.max(1);
    let (session, new_sh) = loop {
        rec.attempts += 1;
        let session = ctx.next_id();
        let counter_temp = a.counter(e.end).get() + e.offset;
        pause().await;
        let mut first = None;
        let mut last = None;
        let mut items = vec![];
        let mut locals = vec![];
        let mut curr = sh;
        loop {
            let it = a.snapshot(curr);
            pause().await;
            items.push(it);
            locals.push(curr);
            let done = it.key == Key::SubTail;
            if items.len() >= batch || done {
                let body = Body::Move {
                    session,
                    prev: last,
                    items: std::mem::take(&mut items),
                    range: e.range,
                };
                let Body::MoveAck { refs } = s.call(to, body).await else {
                    panic!("bad reply to Move");
                };
                for (&n, &r) in locals.iter().zip(&refs) {
                    a.set_new_loc(n, Some(r));
                }
                locals.clear();
                first = first.or(refs.first().copied());
                last = refs.last().copied();
            }
            if done {
                break;
            }
            curr = it.next.expect("sublist node has a successor");
        }
        let new_sh = first.expect("move sent no items");
        if a.counter(e.start).cas(counter_temp, crate::atomics::NEG_INF) {
            rec.t_cas = Some(now());
            rec.snapshots_equal = Some(s.sequence(sh) == ctx.server(to).sequence(new_sh));
            break (session, new_sh);
        }
        rec.aborts += 1;
        ctx.stats.borrow_mut().delete_moved += 1;
        let Body::DeleteMovedAck { residue } = s.call(to, Body::DeleteMovedSublist { session, subhead: new_sh }).await
        else {
            panic!("bad reply to DeleteMovedSublist");
        };
        rec.residues.push(residue);
        sleep(1).await;
    };
    switch(&s, sh, e, to, new_sh, session, rec).await;
}

pub(crate) fn app_count(s: &Server, sh: NodeId) -> usize {
    s.sublist_nodes(sh)
        .into_iter()
        .filter(|&n| !s.arena.key(n).is_sentinel())
        .count()
}

/// Hands ownership of the moved sublist to `to`, then reclaims the stale
/// copy once every ref into it has expired.
pub(crate) async fn switch(
    s: &Server,
    sh: NodeId,
    e: RegistryEntry,
    to: ServerId,
    new_sh: NodeId,
    session: u64,
    mut rec: MoveRecord,
) {
    let a = &s.arena;
    let ctx = s.ctx();
    let pst = e.prev_subtail;
    relink_at(s, pst, RelinkKind::SubtailNext(new_sh)).await;
    let st = *s.sublist_nodes(sh).last().expect("empty sublist");
    let succ = a.next(st).expect("subtail has a successor");
    if succ != ctx.tail.get() {
        let new_st = a.new_loc(st).expect("subtail was not moved");
        relink_at(s, succ, RelinkKind::PrevSubtail(new_st)).await;
    }
    let t_switch = now();
    let done_ops = match e.range {
        Some(r) => s
            .sorted_seen
            .borrow()
            .iter()
            .filter_map(|(&k, &(key, ref resp))| {
                let resp = resp.as_ref()?;
                r.contains(key).then(|| (k, key, resp.clone()))
            })
            .collect(),
        None => vec![],
    };
    let body = Body::Switch {
        session,
        subhead: new_sh,
        prev_subtail: pst,
        range: e.range,
        sublist: e.sublist,
        done_ops,
    };
    s.call(to, body).await;
    s.retired.borrow_mut().insert(sh, t_switch);
    release(s, sh, e.sublist);
    rec.t_switch = Some(t_switch);
    let idx = {
        let mut st = ctx.stats.borrow_mut();
        st.moves.push(rec);
        st.moves.len() - 1
    };
    sleep_until(t_switch + ctx.cfg.theta).await;
    let n = s.reclaim_sublist(sh);
    let mut st = ctx.stats.borrow_mut();
    st.moves[idx].t_reclaim = Some(now());
    st.reclaimed += n as u64;
}

async fn relink_at(s: &Server, target: NodeId, kind: RelinkKind) {
    if target.sid == s.sid {
        s.relink(target, kind).await;
    } else {
        s.call(target.sid, Body::Relink { target, kind }).await;
    }
}

/// Appends moved items after `prev` on the receiving server.
pub fn move_receive(s: &Server, session: u64, prev: Option<NodeId>, items: &[crate::core_list::Item]) -> Vec<NodeId> {
    let a = &s.arena;
    let mut refs = vec![];
    let mut prev = prev;
    for it in items {
        s.join_clock(it.ts);
        let n = match it.key {
            Key::SubHead => {
                let sc = a.new_counter(0);
                let ec = a.new_counter(0);
                let st = a.alloc(NewNode {
                    start: Some(sc),
                    end: Some(ec),
                    tag: session,
                    ..NewNode::sentinel(Key::SubTail, it.sid)
                });
                let sh = a.alloc(NewNode {
                    next: Some(st),
                    start: Some(sc),
                    end: Some(ec),
                    ts: it.ts,
                    tag: session,
                    ..NewNode::sentinel(Key::SubHead, it.sid)
                });
                s.received.borrow_mut().entry(session).or_default().extend([sh, st]);
                sh
            }
            Key::SubTail => {
                let p = prev.expect("subtail moved before its subhead");
                let st = a.next(p).expect("skeleton without subtail");
                a.store_next(st, it.next);
                st
            }
            k => {
                let p = prev.expect("item moved before its subhead");
                let nx = a.next(p);
                let n = a.alloc(NewNode {
                    key: k,
                    next: nx,
                    deleted: it.is_deleted,
                    start: a.start(p),
                    end: a.end(p),
                    ts: it.ts,
                    tag: session,
                    ..NewNode::sentinel(k, it.sid)
                });
                assert!(a.cas_next(p, nx, Some(n)), "move stream raced on the target");
                s.received.borrow_mut().entry(session).or_default().push(n);
                n
            }
        };
        refs.push(n);
        prev = Some(n);
    }
    refs
}

/// Drops everything received for an aborted session. Returns the number
/// of session nodes still live afterwards.
pub fn delete_moved(s: &Server, session: u64) -> usize {
    if let Some(nodes) = s.received.borrow_mut().remove(&session) {
        for n in nodes {
            s.arena.free(n);
        }
    }
    s.arena.live_with_tag(session)
}
