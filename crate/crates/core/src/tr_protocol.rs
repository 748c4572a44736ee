//! Temporary replication: updates that reach already-moved nodes are
//! shipped to the target and replayed there in timestamp order, so a move
//! waits for them instead of aborting.

use std::rc::Rc;

use crate::am_protocol::{self, Applied};
use crate::atomics::NEG_INF;
use crate::core_list::arena::MOVED;
use crate::core_list::{Ident, Item, Key, NewNode, NodeId, ServerId};
use crate::exec::{now, pause, sleep};
use crate::runtime::message::{Body, ClientId, ReqId};
use crate::runtime::registry::RegistryEntry;
use crate::runtime::server::Server;
use crate::runtime::stats::MoveRecord;
use crate::verify::oracle::replay_oracle;

/// Ships an update applied at a moved node. Runs after the client has its
/// response.
pub fn after_response(s: &Server, r: &Applied, op: Option<(ClientId, ReqId)>) {
    let a = &s.arena;
    let ctx = s.ctx();
    let (dst, body) = match *r {
        Applied::Inserted {
            node,
            prev,
            remote: Some(nl),
        } => {
            let p = a.snapshot(prev);
            let it = a.snapshot(node);
            if p.ts >= it.ts {
                ctx.stats.borrow_mut().ts_order_violations += 1;
            }
            (
                nl.sid,
                Body::ReplicateInsertAfter {
                    session: 0,
                    prev: p,
                    item: it,
                    old: node,
                    op,
                },
            )
        }
        Applied::Deleted { node, remote: Some(nl) } => (
            nl.sid,
            Body::ReplicateDelete {
                session: 0,
                target: a.snapshot(node),
                old: node,
                counted: true,
                op,
            },
        ),
        _ => return,
    };
    let (_, line) = s.send(dst, body);
    let mut st = ctx.stats.borrow_mut();
    st.replicates += 1;
    if let Some(op) = op {
        st.replicate_lines.push((op, line));
    }
}

/// Finds the copy of `id` at or after `hint`, waiting for it to arrive.
async fn find(s: &Server, hint: NodeId, id: Ident) -> NodeId {
    let a = &s.arena;
    loop {
        let mut c = hint;
        loop {
            if !a.key(c).is_sentinel() && a.ident(c) == id {
                return c;
            }
            if a.key(c) == Key::SubTail {
                break;
            }
            c = a.next(c).expect("sublist node has a successor");
            pause().await;
        }
        sleep(1).await;
    }
}

/// Replays an insert on the target: the copy goes after the copy of
/// `prev`, past any newer siblings.
pub async fn replicate_insert_receive(s: &Server, prev: &Item, item: &Item) -> NodeId {
    let a = &s.arena;
    let hint = prev.new_location.expect("replicated insert without forwarding");
    let p = if prev.key == Key::SubHead {
        hint
    } else {
        find(s, hint, prev.ident()).await
    };
    s.join_clock(item.ts);
    loop {
        let mut cp = p;
        let mut c = a.next(cp).expect("sublist node has a successor");
        pause().await;
        while a.key(c) != Key::SubTail && a.ts(c) > item.ts {
            cp = c;
            c = a.next(c).expect("sublist node has a successor");
            pause().await;
        }
        let n = a.alloc(NewNode {
            key: item.key,
            next: Some(c),
            deleted: item.is_deleted,
            start: a.start(cp),
            end: a.end(cp),
            ts: item.ts,
            ..NewNode::sentinel(item.key, item.sid)
        });
        if a.cas_next(cp, Some(c), Some(n)) {
            return n;
        }
        a.free(n);
        pause().await;
    }
}

pub async fn replicate_delete_receive(s: &Server, target: &Item) {
    let hint = target.new_location.expect("replicated delete without forwarding");
    let n = find(s, hint, target.ident()).await;
    s.arena.set_status_bit(n, crate::core_list::arena::DELETED);
}

/// Source side of an insert replay ack.
pub fn insert_replay_receive(s: &Server, remote: NodeId, old: NodeId) {
    let ctx = s.ctx();
    if s.arena.is_valid(old) {
        s.arena.set_new_loc(old, Some(remote));
        s.bump_end(old);
    }
    ctx.add_inflight(-1);
    ctx.stats.borrow_mut().replays += 1;
}

pub fn delete_replay_receive(s: &Server, old: NodeId, counted: bool) {
    let ctx = s.ctx();
    if counted {
        if s.arena.is_valid(old) {
            s.bump_end(old);
        }
        ctx.add_inflight(-1);
    }
    ctx.stats.borrow_mut().replays += 1;
}

/// Places moved items on the target after the copy of the previous item.
pub async fn move_receive(s: &Server, session: u64, prev: Option<NodeId>, items: &[Item]) -> Vec<NodeId> {
    let a = &s.arena;
    let mut refs = vec![];
    let mut prev = prev;
    for it in items {
        if it.key == Key::SubHead {
            let r = am_protocol::move_receive(s, session, None, std::slice::from_ref(it));
            prev = r.first().copied();
            refs.extend(r);
            continue;
        }
        s.join_clock(it.ts);
        let p = prev.expect("item moved before its subhead");
        let n = loop {
            let mut cp = p;
            let mut c = a.next(cp).expect("sublist node has a successor");
            pause().await;
            while a.key(c) != Key::SubTail {
                cp = c;
                c = a.next(c).expect("sublist node has a successor");
                pause().await;
            }
            if it.key == Key::SubTail {
                a.store_next(c, it.next);
                break c;
            }
            let n = a.alloc(NewNode {
                key: it.key,
                next: Some(c),
                deleted: it.is_deleted,
                start: a.start(cp),
                end: a.end(cp),
                ts: it.ts,
                tag: session,
                ..NewNode::sentinel(it.key, it.sid)
            });
            if a.cas_next(cp, Some(c), Some(n)) {
                s.received.borrow_mut().entry(session).or_default().push(n);
                break n;
            }
            a.free(n);
            pause().await;
        };
        refs.push(n);
        prev = Some(n);
    }
    refs
}

/// Moves the sublist at `sh` node by node. Updates at nodes already moved
/// are replicated; the counter swap waits until every replica is acked.
pub async fn move_sublist(s: Rc<Server>, sh: NodeId, to: ServerId) {
    if let Some(e) = am_protocol::claim(&s, sh).await {
        move_claimed(s, sh, e, to).await
    }
}

/// Move of a sublist already claimed with [`am_protocol::try_claim`].
pub async fn move_claimed(s: Rc<Server>, sh: NodeId, e: RegistryEntry, to: ServerId) {
    let a = &s.arena;
    let ctx = s.ctx();
    let key = (s.sid, e.start);
    let base = s.sequence(sh);
    let from = {
        let mut st = ctx.stats.borrow_mut();
        st.watched.insert(key);
        st.events.get(&key).map_or(0, |v| v.len())
    };
    let mut rec = MoveRecord {
        sublist: e.sublist,
        protocol: "tr".into(),
        from: s.sid,
        to,
        nodes: base.len(),
        t_start: now(),
        attempts: 1,
        ..Default::default()
    };
    let session = ctx.next_id();
    let mut last: Option<NodeId> = None;
    let mut new_sh = None;
    let mut curr = sh;
    loop {
        let k = a.key(curr);
        let skip = k != Key::SubHead && a.new_loc(curr).is_some_and(|n| n.sid != s.sid);
        if !skip {
            let snap = a.snapshot(curr);
            pause().await;
            let body = Body::Move {
                session,
                prev: last,
                items: vec![snap],
                range: e.range,
            };
            let Body::MoveAck { refs } = s.call(to, body).await else {
                panic!("bad reply to Move");
            };
            let r = refs[0];
            a.set_new_loc(curr, Some(r));
            new_sh = new_sh.or(Some(r));
            last = Some(r);
            let st = loop {
                let st = a.status(curr);
                if a.cas_status(curr, st, st | MOVED) {
                    break st;
                }
                pause().await;
            };
            pause().await;
            let deleted = st & crate::core_list::arena::DELETED != 0;
            if deleted != snap.is_deleted {
                ctx.stats.borrow_mut().compensations += 1;
                let body = Body::ReplicateDelete {
                    session,
                    target: a.snapshot(curr),
                    old: curr,
                    counted: false,
                    op: None,
                };
                s.call(to, body).await;
            }
        }
        if k == Key::SubTail {
            break;
        }
        curr = a.next(curr).expect("sublist node has a successor");
        pause().await;
    }
    let start = a.counter(e.start);
    loop {
        let temp = a.counter(e.end).get() + e.offset;
        if start.cas(temp, NEG_INF) {
            break;
        }
        sleep(1).await;
    }
    let new_sh = new_sh.expect("move sent no items");
    rec.t_cas = Some(now());
    let src = s.sequence(sh);
    rec.snapshots_equal = Some(src == ctx.server(to).sequence(new_sh));
    {
        let mut st = ctx.stats.borrow_mut();
        st.watched.remove(&key);
        let evs = st.events.remove(&key).unwrap_or_default();
        let evs = &evs[from.min(evs.len())..];
        rec.replayed_events = evs.len();
        rec.oracle_equal = Some(replay_oracle(&base, evs).is_ok_and(|o| o == src));
    }
    am_protocol::switch(&s, sh, e, to, new_sh, session, rec).await;
}
