//! Sorted variant: every sublist owns a key range, and operations run only
//! on the server whose registry covers the key.

use std::cell::Cell;

use crate::am_protocol::{self, Applied, Outcome};
use crate::core_list::arena::DELETED;
use crate::core_list::{Key, NewNode, NodeId};
use crate::error::ListError;
use crate::exec::{pause, sleep};
use crate::runtime::config::Protocol;
use crate::runtime::message::{Body, ClientInfo, Resp, SortedOp};
use crate::runtime::server::Server;
use crate::verify::oracle::{SeqEntry, SublistEvent};

enum Step {
    Reply(Resp, Option<Applied>),
    Delegate(NodeId),
    Reroute(NodeId),
}

/// Broadcast copy of a client operation.
pub async fn client_op(s: &Server, op: SortedOp, op_id: u64, info: ClientInfo) {
    let k = op.key();
    let sh = s
        .registry
        .borrow()
        .covering(k)
        .into_iter()
        .map(|e| e.subhead)
        .next();
    match sh {
        Some(sh) => run(s, sh, op, op_id, info).await,
        None => {
            s.respond(info, Resp::NotOwner);
        }
    }
}

pub async fn delegated_op(s: &Server, sh: NodeId, op: SortedOp, op_id: u64, info: ClientInfo) {
    run(s, sh, op, op_id, info).await
}

async fn run(s: &Server, sh: NodeId, op: SortedOp, op_id: u64, info: ClientInfo) {
    let slot = (info.client, op_id);
    let k = op.key();
    let fresh = !s.sorted_seen.borrow().contains_key(&slot);
    if fresh {
        s.sorted_seen.borrow_mut().insert(slot, (k, None));
    } else {
        loop {
            let cached = s.sorted_seen.borrow().get(&slot).cloned();
            match cached {
                Some((_, Some(r))) => {
                    s.respond(info, r);
                    return;
                }
                Some((_, None)) => sleep(1).await,
                None => break,
            }
        }
        s.sorted_seen.borrow_mut().insert(slot, (k, None));
    }
    let mut sh = sh;
    loop {
        let step = match op {
            SortedOp::Insert(k) => insert(s, sh, k).await,
            SortedOp::Search(k) => search(s, sh, k).await,
            SortedOp::Delete(k) => delete(s, sh, k).await,
        };
        match step {
            Step::Reply(r, applied) => {
                s.sorted_seen.borrow_mut().insert(slot, (k, Some(r.clone())));
                s.respond(info, r);
                if let Some(ap) = applied {
                    crate::tr_protocol::after_response(s, &ap, Some((info.client, info.req)));
                }
                return;
            }
            Step::Delegate(nl) => {
                s.sorted_seen.borrow_mut().remove(&slot);
                let ps = s.retired.borrow().contains_key(&sh);
                if ps {
                    s.ctx().stats.borrow_mut().post_switch_requests += 1;
                }
                let body = Body::DelegateSorted {
                    subhead: nl,
                    op,
                    op_id,
                    client: info,
                };
                s.delegate(nl, body, ps);
                return;
            }
            Step::Reroute(to) => {
                s.ctx().stats.borrow_mut().sorted_retries += 1;
                sh = to;
            }
        }
    }
}

/// Subhead now responsible for `k` if it differs from `sh`.
fn rerouted(s: &Server, sh: NodeId, k: u64) -> Option<NodeId> {
    let cov = s.registry.borrow().covering(k);
    match cov.first() {
        Some(e) if e.subhead != sh => Some(e.subhead),
        _ => None,
    }
}

/// Last live node with key at most `k` and the successor observed there.
async fn locate(s: &Server, sh: NodeId, k: u64) -> (NodeId, Option<NodeId>) {
    let a = &s.arena;
    let mut prev = sh;
    let mut pn = a.next(sh);
    pause().await;
    let mut curr = pn.expect("subhead has a successor");
    while a.key(curr) != Key::SubTail {
        match a.key(curr) {
            Key::App(ck) if !a.is_deleted(curr) => {
                if ck > k {
                    break;
                }
                prev = curr;
                pn = a.next(curr);
                pause().await;
            }
            _ => {}
        }
        curr = a.next(curr).expect("sublist node has a successor");
        pause().await;
    }
    (prev, pn)
}

async fn insert(s: &Server, sh: NodeId, k: u64) -> Step {
    let a = &s.arena;
    let ctx = s.ctx();
    let tr = s.protocol() == Protocol::Tr;
    loop {
        if s.is_retired_node(sh) {
            return forward(s, sh);
        }
        let (prev, pn) = locate(s, sh, k).await;
        if let Some(to) = rerouted(s, sh, k) {
            return Step::Reroute(to);
        }
        if a.key(prev) == Key::App(k) {
            return Step::Reply(Resp::Fail(ListError::DuplicateKey), None);
        }
        let v = a.counter(a.start(prev).expect("node without counters")).increment();
        ctx.add_inflight(1);
        pause().await;
        if v < 0 {
            ctx.add_inflight(-1);
            return forward(s, sh);
        }
        let st = a.status(prev);
        pause().await;
        let remote = a.new_loc(prev).filter(|n| tr && n.sid != s.sid);
        let (sc, ec) = (a.start(prev), a.end(prev));
        let ts = s.tick_clock();
        let node = a.alloc(NewNode {
            next: pn,
            moved: remote.is_some(),
            new_loc: remote,
            start: sc,
            end: ec,
            ts,
            ..NewNode::sentinel(Key::App(k), s.sid)
        });
        if st & DELETED == 0 && a.rdcss_next(prev, st, pn, node) {
            if let (Some(o), Some(c)) = (sc, a.start(prev)) {
                a.cas_start(node, o, c);
            }
            if let (Some(o), Some(c)) = (ec, a.end(prev)) {
                a.cas_end(node, o, c);
            }
            let p = (a.key(prev) != Key::SubHead).then(|| a.ident(prev));
            let item = SeqEntry {
                key: k,
                ts,
                sid: s.sid,
                deleted: false,
            };
            if let Some(c) = a.start(prev) {
                ctx.stats
                    .borrow_mut()
                    .log_event(s.sid, c, SublistEvent::Insert { prev: p, item });
            }
            if remote.is_none() {
                s.bump_end(prev);
                ctx.add_inflight(-1);
            }
            let applied = Applied::Inserted { node, prev, remote };
            return Step::Reply(Resp::Ref(s.issue(node)), tr.then_some(applied));
        }
        a.free(node);
        s.bump_end(prev);
        ctx.add_inflight(-1);
        ctx.stats.borrow_mut().sorted_retries += 1;
        pause().await;
    }
}

fn forward(s: &Server, sh: NodeId) -> Step {
    Step::Delegate(s.arena.new_loc(sh).expect("moved subhead without forwarding"))
}

async fn search(s: &Server, sh: NodeId, k: u64) -> Step {
    let visits = Cell::new(0);
    let before = s.sublist_nodes(sh).len();
    let Some(refs) = s.scan_sublist(sh, k, &visits).await else {
        return forward(s, sh);
    };
    if let Some(to) = rerouted(s, sh, k) {
        return Step::Reroute(to);
    }
    let len = before.max(s.sublist_nodes(sh).len());
    let bound = (s.registry.borrow().len() + len) as u64;
    s.ctx().stats.borrow_mut().visits.push((visits.get(), bound));
    Step::Reply(Resp::Refs(refs), None)
}

async fn delete(s: &Server, sh: NodeId, k: u64) -> Step {
    let tr = s.protocol() == Protocol::Tr;
    loop {
        if s.is_retired_node(sh) {
            return forward(s, sh);
        }
        let Some(refs) = s.scan_sublist(sh, k, &Cell::new(0)).await else {
            return forward(s, sh);
        };
        if let Some(to) = rerouted(s, sh, k) {
            return Step::Reroute(to);
        }
        let Some(r) = refs.first() else {
            return Step::Reply(Resp::Fail(ListError::NotFound), None);
        };
        match am_protocol::delete(s, r.r.node(), tr).await {
            Outcome::Delegate(_) => {
                return forward(s, sh)
            }
            Outcome::Done(Applied::Failed(_)) => {
                s.ctx().stats.borrow_mut().sorted_retries += 1;
            }
            Outcome::Done(applied) => return Step::Reply(Resp::Done, tr.then_some(applied)),
        }
    }
}
