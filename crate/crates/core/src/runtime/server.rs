//! One simulated server: its arena, registry and message handlers.

use std::cell::{Cell, RefCell};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::rc::{Rc, Weak};

use super::ctx::Ctx;
use super::message::{Body, ClientId, ClientInfo, Endpoint, Msg, RefInfo, RelinkKind, Resp};
use super::registry::{Registry, RegistryEntry};
use crate::atomics::NEG_INF;
use crate::core_list::{Arena, Ident, Key, NodeId, ServerId};
use crate::error::{ListError, Result};
use crate::exec::{now, pause, sleep};
use crate::runtime::config::{Protocol, Variant};
use crate::verify::oracle::SeqEntry;
use crate::{am_protocol, sorted_list, tr_protocol};

/// Cached outcome of a sorted operation: its key and, once finished, the
/// response.
pub(crate) type SortedSlot = (u64, Option<Resp>);

pub struct Server {
    pub sid: ServerId,
    pub arena: Arena,
    pub registry: RefCell<Registry>,
    lc: Cell<u64>,
    ctx: Weak<Ctx>,
    pending: RefCell<HashMap<u64, Body>>,
    pub(crate) replay_seen: RefCell<HashSet<u64>>,
    pub(crate) sorted_seen: RefCell<BTreeMap<(ClientId, u64), SortedSlot>>,
    quarantine: RefCell<Vec<(u64, NodeId)>>,
    /// Nodes created on this server per incoming move session.
    pub(crate) received: RefCell<BTreeMap<u64, Vec<NodeId>>>,
    pub(crate) delinking: Cell<bool>,
    /// Subheads of sublists whose ownership moved away, with the tick of
    /// the counter swap.
    pub retired: RefCell<BTreeMap<NodeId, u64>>,
}

impl Server {
    pub fn new(sid: ServerId, capacity: usize, ctx: &Rc<Ctx>) -> Self {
        Server {
            sid,
            arena: Arena::new(sid, capacity, capacity / 4 + 64),
            registry: RefCell::new(Registry::default()),
            lc: Cell::new(0),
            ctx: Rc::downgrade(ctx),
            pending: RefCell::new(HashMap::new()),
            replay_seen: RefCell::new(HashSet::new()),
            sorted_seen: RefCell::new(BTreeMap::new()),
            quarantine: RefCell::new(vec![]),
            received: RefCell::new(BTreeMap::new()),
            delinking: Cell::new(false),
            retired: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn ctx(&self) -> Rc<Ctx> {
        self.ctx.upgrade().expect("simulation context dropped")
    }

    pub fn me(&self) -> Endpoint {
        Endpoint::Server(self.sid)
    }

    pub fn protocol(&self) -> Protocol {
        self.ctx().cfg.protocol
    }

    pub fn variant(&self) -> Variant {
        self.ctx().cfg.variant
    }

    // ---- logical clock ----

    pub fn tick_clock(&self) -> u64 {
        let v = self.lc.get() + 1;
        self.lc.set(v);
        v
    }

    pub fn join_clock(&self, ts: u64) {
        if ts > self.lc.get() {
            self.lc.set(ts);
        }
    }

    pub fn clock(&self) -> u64 {
        self.lc.get()
    }

    // ---- counters ----

    /// Value of the start counter attached to `n`, if it has one.
    pub fn start_value(&self, n: NodeId) -> Option<i64> {
        self.arena.start(n).map(|c| self.arena.counter(c).get())
    }

    pub fn is_retired_node(&self, n: NodeId) -> bool {
        self.start_value(n).is_some_and(|v| v < 0)
    }

    pub(crate) fn bump_end(&self, n: NodeId) {
        let c = self.arena.end(n).expect("node without end counter");
        self.arena.counter(c).increment();
    }

    // ---- messaging ----

    pub fn send(&self, dst: ServerId, body: Body) -> (u64, usize) {
        self.ctx().send(self.me(), Endpoint::Server(dst), None, body)
    }

    pub fn reply(&self, to: &Msg, body: Body) {
        self.ctx().send(self.me(), to.src, Some(to.id), body);
    }

    /// Request-response exchange with another server.
    pub async fn call(&self, dst: ServerId, body: Body) -> Body {
        let kind = body.kind();
        let (id, _) = self.send(dst, body);
        let limit = now() + 10 * self.ctx().cfg.theta;
        loop {
            if let Some(b) = self.pending.borrow_mut().remove(&id) {
                return b;
            }
            if now() > limit {
                self.ctx()
                    .stats
                    .borrow_mut()
                    .fault(format!("s{}: no reply to {kind} from s{dst}", self.sid));
                panic!("server s{dst} never answered {kind}");
            }
            sleep(1).await;
        }
    }

    pub(crate) fn deliver_reply(&self, reply_to: u64, body: Body) {
        self.pending.borrow_mut().insert(reply_to, body);
    }

    pub fn respond(&self, info: ClientInfo, resp: Resp) -> usize {
        let ctx = self.ctx();
        let (_, line) = ctx.send(
            self.me(),
            Endpoint::Client(info.client),
            None,
            Body::Response {
                req: info.req,
                via: info.via,
                resp,
            },
        );
        ctx.stats
            .borrow_mut()
            .response_line
            .insert((info.client, info.req), line);
        *ctx.responses.borrow_mut().entry((info.client, info.req)).or_default() += 1;
        line
    }

    /// Forwards a request to the server now holding the active copy.
    pub fn delegate(&self, dst: NodeId, body: Body, post_switch: bool) {
        let ctx = self.ctx();
        {
            let mut st = ctx.stats.borrow_mut();
            st.delegated(body.kind());
            if post_switch {
                st.post_switch_delegated += 1;
            }
        }
        self.send(dst.sid, body);
    }

    // ---- refs ----

    /// Validates a client-held ref: lease first, then generation.
    pub fn check_ref(&self, r: crate::core_list::ItemRef) -> Result<NodeId> {
        if r.sid != self.sid {
            return Err(ListError::UnknownRef);
        }
        if now() >= r.lease {
            self.ctx().stats.borrow_mut().lease_expired += 1;
            return Err(ListError::LeaseExpired);
        }
        let n = r.node();
        self.arena.check(n)?;
        Ok(n)
    }

    pub fn ident_of(&self, n: NodeId) -> Ident {
        let ctx = self.ctx();
        if n == ctx.tail.get() || n == ctx.head.get() {
            return Ident { sid: 0, ts: 0 };
        }
        self.arena.ident(n)
    }

    pub fn issue(&self, n: NodeId) -> RefInfo {
        RefInfo {
            r: n.with_lease(now() + self.ctx().cfg.theta),
            ident: self.ident_of(n),
        }
    }

    /// Counts a client request landing on a retired sublist.
    /// Unlinked tombstones were never copied and are answered locally.
    fn note_post_switch(&self, n: NodeId) -> bool {
        let ps = self.is_retired_node(n) && self.arena.new_loc(n).is_some();
        if ps {
            self.ctx().stats.borrow_mut().post_switch_requests += 1;
        }
        ps
    }

    // ---- dispatch ----

    pub async fn handle(self: Rc<Self>, msg: Msg) {
        let client = |m: &Msg| match m.src {
            Endpoint::Client(c) => ClientInfo {
                client: c,
                req: m.id,
                via: self.sid,
            },
            Endpoint::Server(_) => panic!("client request from a server"),
        };
        match msg.body.clone() {
            Body::ClientLookup { key } => {
                let info = client(&msg);
                let refs = self.lookup_all(key).await;
                self.respond(info, Resp::Refs(refs));
            }
            Body::ClientInsertAfter { prev, key } => {
                let info = client(&msg);
                match self.check_ref(prev) {
                    Ok(n) => {
                        let ps = self.note_post_switch(n);
                        self.insert_after(n, key, info, ps).await
                    }
                    Err(e) => {
                        self.respond(info, Resp::Fail(e));
                    }
                }
            }
            Body::ClientDelete { target } => {
                let info = client(&msg);
                match self.check_ref(target) {
                    Ok(n) => {
                        let ps = self.note_post_switch(n);
                        self.delete(n, info, ps).await
                    }
                    Err(e) => {
                        self.respond(info, Resp::Fail(e));
                    }
                }
            }
            Body::ClientNext { prev } => {
                let info = client(&msg);
                match self.check_ref(prev) {
                    Ok(n) => {
                        let ps = self.note_post_switch(n);
                        self.next_op(n, info, ps, false).await
                    }
                    Err(e) => {
                        self.respond(info, Resp::Fail(e));
                    }
                }
            }
            Body::ClientGetItem { target } => {
                let info = client(&msg);
                match self.check_ref(target) {
                    Ok(n) => {
                        let ps = self.note_post_switch(n);
                        self.get_item(n, info, ps)
                    }
                    Err(e) => {
                        self.respond(info, Resp::Fail(e));
                    }
                }
            }
            Body::ClientSorted { op, op_id } => {
                let info = client(&msg);
                sorted_list::client_op(&self, op, op_id, info).await;
            }
            Body::DelegateLookup { subhead, key } => {
                self.arena.check(subhead).expect("delegated lookup on a reclaimed subhead");
                let refs = self.delegated_lookup(subhead, key).await;
                self.reply(&msg, Body::LookupResult { refs });
            }
            Body::DelegateInsertAfter { prev, key, client } => {
                self.arena.check(prev).expect("delegated insert on a reclaimed node");
                self.insert_after(prev, key, client, false).await
            }
            Body::DelegateDelete { target, client } => {
                self.arena.check(target).expect("delegated delete on a reclaimed node");
                self.delete(target, client, false).await
            }
            Body::DelegateNext { prev, client, inclusive } => {
                if prev == self.ctx().tail.get() {
                    self.respond(client, Resp::Ref(self.issue(prev)));
                } else {
                    self.arena.check(prev).expect("delegated next on a reclaimed node");
                    self.next_op(prev, client, false, inclusive).await
                }
            }
            Body::DelegateGetItem { target, client } => {
                self.arena.check(target).expect("delegated get on a reclaimed node");
                self.get_item(target, client, false)
            }
            Body::DelegateSorted {
                subhead,
                op,
                op_id,
                client,
            } => {
                sorted_list::delegated_op(&self, subhead, op, op_id, client).await;
            }
            Body::Move {
                session,
                prev,
                items,
                ..
            } => {
                let refs = match self.protocol() {
                    Protocol::Am => am_protocol::move_receive(&self, session, prev, &items),
                    Protocol::Tr => tr_protocol::move_receive(&self, session, prev, &items).await,
                };
                self.reply(&msg, Body::MoveAck { refs });
            }
            Body::DeleteMovedSublist { session, .. } => {
                let residue = am_protocol::delete_moved(&self, session);
                self.reply(&msg, Body::DeleteMovedAck { residue });
            }
            Body::Switch {
                subhead,
                prev_subtail,
                range,
                sublist,
                done_ops,
                ..
            } => {
                self.switch_receive(subhead, prev_subtail, range, sublist, done_ops);
                self.reply(&msg, Body::SwitchAck);
            }
            Body::Relink { target, kind } => {
                self.relink(target, kind).await;
                self.reply(&msg, Body::RelinkAck);
            }
            Body::ReplicateInsertAfter { prev, item, old, .. } => {
                if !self.replay_seen.borrow_mut().insert(msg.id) {
                    return;
                }
                let remote = tr_protocol::replicate_insert_receive(&self, &prev, &item).await;
                self.send(msg.src_server(), Body::InsertReplay { remote, old });
            }
            Body::ReplicateDelete {
                target, old, counted, ..
            } => {
                if !self.replay_seen.borrow_mut().insert(msg.id) {
                    return;
                }
                tr_protocol::replicate_delete_receive(&self, &target).await;
                if counted {
                    self.send(msg.src_server(), Body::DeleteReplay { old, counted });
                } else {
                    self.reply(&msg, Body::DeleteReplay { old, counted });
                }
            }
            Body::InsertReplay { remote, old } => tr_protocol::insert_replay_receive(&self, remote, old),
            Body::DeleteReplay { old, counted } => tr_protocol::delete_replay_receive(&self, old, counted),
            Body::MoveAck { .. }
            | Body::SwitchAck
            | Body::RelinkAck
            | Body::DeleteMovedAck { .. }
            | Body::LookupResult { .. }
            | Body::Response { .. } => {
                self.ctx()
                    .stats
                    .borrow_mut()
                    .fault(format!("s{}: stray {}", self.sid, msg.body.kind()));
            }
        }
    }

    // ---- client-visible operations ----

    pub async fn insert_after(&self, prev: NodeId, key: u64, info: ClientInfo, ps: bool) {
        let tr = self.protocol() == Protocol::Tr;
        let prev = match self.redirect_head(prev) {
            Some(p) => p,
            None => {
                let sh = self.arena.next(prev).expect("head has a successor");
                self.delegate(sh, Body::DelegateInsertAfter { prev: sh, key, client: info }, ps);
                return;
            }
        };
        match am_protocol::insert_after(self, prev, key, tr).await {
            am_protocol::Outcome::Delegate(nl) => {
                self.delegate(nl, Body::DelegateInsertAfter { prev: nl, key, client: info }, ps);
            }
            am_protocol::Outcome::Done(r) => {
                self.finish_update(r, info, tr);
            }
        }
    }

    pub async fn delete(&self, target: NodeId, info: ClientInfo, ps: bool) {
        let tr = self.protocol() == Protocol::Tr;
        match am_protocol::delete(self, target, tr).await {
            am_protocol::Outcome::Delegate(nl) => {
                self.delegate(nl, Body::DelegateDelete { target: nl, client: info }, ps);
            }
            am_protocol::Outcome::Done(r) => self.finish_update(r, info, tr),
        }
    }

    /// Sends the client response, then (TR) any replicate for the update.
    pub(crate) fn finish_update(&self, r: am_protocol::Applied, info: ClientInfo, tr: bool) {
        let resp = match &r {
            am_protocol::Applied::Failed(e) => Resp::Fail(*e),
            am_protocol::Applied::Inserted { node, .. } => Resp::Ref(self.issue(*node)),
            am_protocol::Applied::Deleted { .. } => Resp::Done,
        };
        self.respond(info, resp);
        if tr {
            tr_protocol::after_response(self, &r, Some((info.client, info.req)));
        }
    }

    /// Maps an insert at Head to its first subhead. Returns None when that
    /// subhead lives on another server.
    fn redirect_head(&self, prev: NodeId) -> Option<NodeId> {
        if self.arena.key(prev) != Key::Head {
            return Some(prev);
        }
        let sh = self.arena.next(prev).expect("head has a successor");
        (sh.sid == self.sid).then_some(sh)
    }

    pub async fn next_op(&self, prev: NodeId, info: ClientInfo, ps: bool, inclusive: bool) {
        let tail = self.ctx().tail.get();
        let a = &self.arena;
        if prev == tail {
            self.respond(info, Resp::Fail(ListError::SentinelTarget));
            return;
        }
        if inclusive && a.key(prev).app().is_some() {
            if self.is_retired_node(prev) {
                let nl = a.new_loc(prev).expect("retired node without forwarding");
                self.delegate(nl, Body::DelegateNext { prev: nl, client: info, inclusive }, ps);
                return;
            }
            if !a.is_deleted(prev) {
                self.respond(info, Resp::Ref(self.issue(prev)));
                return;
            }
        }
        let mut prev = prev;
        loop {
            if matches!(a.key(prev), Key::Head | Key::SubTail) {
                let n = a.next(prev).expect("subtail has a successor");
                pause().await;
                if n == tail {
                    self.respond(info, Resp::Ref(self.issue(tail)));
                    return;
                }
                if n.sid != self.sid {
                    let body = Body::DelegateNext {
                        prev: n,
                        client: info,
                        inclusive: false,
                    };
                    self.delegate(n, body, ps);
                    return;
                }
                prev = n;
            }
            let mut curr = prev;
            let mut path = vec![];
            loop {
                let nx = a.next(curr).expect("sublist node has a successor");
                path.push((curr, nx));
                curr = nx;
                pause().await;
                let k = a.key(curr);
                if matches!(k, Key::DummyNode | Key::SubHead) {
                    continue;
                }
                let del = a.is_deleted(curr);
                pause().await;
                if del {
                    continue;
                }
                if path.len() > 1 && path.iter().any(|&(f, t)| a.next(f) != Some(t)) {
                    // A link moved while we walked past tombstones.
                    curr = prev;
                    path.clear();
                    pause().await;
                    continue;
                }
                break;
            }
            if self.is_retired_node(curr) {
                // An unlinked tombstone was never copied; its frozen next
                // chain leads back into the moved nodes.
                let (nl, inclusive) = match a.new_loc(prev) {
                    Some(nl) => (nl, false),
                    None => {
                        let mut z = a.next(prev).expect("sublist node has a successor");
                        while a.new_loc(z).is_none() {
                            z = a.next(z).expect("sublist node has a successor");
                        }
                        (a.new_loc(z).expect("checked"), true)
                    }
                };
                self.delegate(nl, Body::DelegateNext { prev: nl, client: info, inclusive }, ps);
                return;
            }
            if a.key(curr) == Key::SubTail {
                prev = curr;
                continue;
            }
            self.respond(info, Resp::Ref(self.issue(curr)));
            return;
        }
    }

    pub fn get_item(&self, n: NodeId, info: ClientInfo, ps: bool) {
        if self.is_retired_node(n) {
            if let Some(nl) = self.arena.new_loc(n) {
                self.delegate(nl, Body::DelegateGetItem { target: nl, client: info }, ps);
                return;
            }
        }
        let item = self.arena.snapshot(n);
        self.respond(info, Resp::Item(self.issue(n), item));
    }

    /// Lookup over every owned sublist. Subheads registered by a split
    /// while the scan ran are scanned too, since the scan may have stopped
    /// at the relabeled dummy.
    pub async fn lookup_all(&self, key: u64) -> Vec<RefInfo> {
        let mut out: Vec<RefInfo> = vec![];
        let mut done = BTreeSet::new();
        loop {
            let fresh: Vec<NodeId> = self
                .registry
                .borrow()
                .subheads()
                .into_iter()
                .filter(|sh| !done.contains(sh))
                .collect();
            if fresh.is_empty() {
                break;
            }
            for sh in fresh {
                done.insert(sh);
                if !self.arena.is_valid(sh) || self.registry.borrow().get(sh).is_none() {
                    continue;
                }
                for r in self.lookup_sublist(sh, key, &Cell::new(0)).await {
                    if !out.iter().any(|o| o.r.node() == r.r.node()) {
                        out.push(r);
                    }
                }
            }
        }
        out
    }

    /// Collects live nodes holding `key` in the sublist at `sh`, delegating
    /// to the new owner if the sublist has moved. `visits` counts nodes
    /// read.
    pub async fn lookup_sublist(&self, sh: NodeId, key: u64, visits: &Cell<u64>) -> Vec<RefInfo> {
        let retired = self.retired.borrow().contains_key(&sh);
        if retired {
            self.ctx().stats.borrow_mut().post_switch_requests += 1;
        }
        match self.scan_sublist(sh, key, visits).await {
            Some(refs) => refs,
            None => self.delegate_lookup(sh, key, retired).await,
        }
    }

    /// Lookup on behalf of a former owner. Parts split off the sublist
    /// since the switch are scanned too, as the caller knows only the
    /// subhead it forwarded.
    async fn delegated_lookup(&self, sh: NodeId, key: u64) -> Vec<RefInfo> {
        let mut out = self.lookup_sublist(sh, key, &Cell::new(0)).await;
        let Some(root) = self.registry.borrow().get(sh).map(|e| e.sublist) else {
            return out;
        };
        let mut done = BTreeSet::new();
        loop {
            let fresh: Vec<NodeId> = self
                .registry
                .borrow()
                .descendants(root)
                .into_iter()
                .filter(|d| !done.contains(d))
                .collect();
            if fresh.is_empty() {
                return out;
            }
            for d in fresh {
                done.insert(d);
                for r in self.lookup_sublist(d, key, &Cell::new(0)).await {
                    if !out.iter().any(|o| o.r.node() == r.r.node()) {
                        out.push(r);
                    }
                }
            }
        }
    }

    /// Live nodes holding `key` in the local copy, or None if the copy
    /// was retired before the scan finished.
    pub async fn scan_sublist(&self, sh: NodeId, key: u64, visits: &Cell<u64>) -> Option<Vec<RefInfo>> {
        let a = &self.arena;
        if self.is_retired_node(sh) {
            return None;
        }
        let mut out = vec![];
        let mut curr = a.next(sh).expect("subhead has a successor");
        visits.set(visits.get() + 1);
        pause().await;
        while a.key(curr) != Key::SubTail {
            if a.key(curr) == Key::App(key)
                && !a.is_deleted(curr)
                && self.start_value(curr).is_some_and(|v| v >= 0)
            {
                out.push(self.issue(curr));
            }
            pause().await;
            curr = a.next(curr).expect("sublist node has a successor");
            visits.set(visits.get() + 1);
            pause().await;
        }
        (!self.is_retired_node(curr)).then_some(out)
    }

    async fn delegate_lookup(&self, sh: NodeId, key: u64, post_switch: bool) -> Vec<RefInfo> {
        let nl = self.arena.new_loc(sh).expect("moved subhead without forwarding");
        {
            let ctx = self.ctx();
            let mut st = ctx.stats.borrow_mut();
            st.delegated("DelegateLookup");
            if post_switch {
                st.post_switch_delegated += 1;
            }
        }
        match self.call(nl.sid, Body::DelegateLookup { subhead: nl, key }).await {
            Body::LookupResult { refs } => refs,
            other => panic!("unexpected reply to DelegateLookup: {}", other.kind()),
        }
    }

    // ---- switch plumbing ----

    pub(crate) async fn relink(&self, target: NodeId, kind: RelinkKind) {
        match kind {
            RelinkKind::SubtailNext(new) => {
                if self.arena.key(target) != Key::Head && self.is_retired_node(target) {
                    let nl = self.arena.new_loc(target).expect("moved subtail without forwarding");
                    self.call(nl.sid, Body::Relink { target: nl, kind }).await;
                } else {
                    self.arena.store_next(target, Some(new));
                }
            }
            RelinkKind::PrevSubtail(st) => {
                let found = match self.registry.borrow_mut().get_mut(target) {
                    Some(e) => {
                        e.prev_subtail = st;
                        true
                    }
                    None => false,
                };
                if !found {
                    let nl = self
                        .arena
                        .new_loc(target)
                        .expect("relink of an unknown subhead");
                    self.call(nl.sid, Body::Relink { target: nl, kind }).await;
                }
            }
        }
    }

    fn switch_receive(
        &self,
        sh: NodeId,
        prev_subtail: NodeId,
        range: Option<super::message::KeyRange>,
        sublist: u64,
        done_ops: Vec<((ClientId, u64), u64, Resp)>,
    ) {
        let a = &self.arena;
        self.registry.borrow_mut().add(RegistryEntry {
            sublist,
            subhead: sh,
            start: a.start(sh).expect("subhead counters"),
            end: a.end(sh).expect("subhead counters"),
            offset: 0,
            prev_subtail,
            range,
            parent: None,
            busy: false,
        });
        let mut seen = self.sorted_seen.borrow_mut();
        for (k, key, r) in done_ops {
            seen.entry(k).or_insert((key, Some(r)));
        }
    }

    /// Frees the stale copy of a sublist after its ownership moved away.
    pub(crate) fn reclaim_sublist(&self, sh: NodeId) -> usize {
        let a = &self.arena;
        self.registry.borrow_mut().remove(sh);
        let mut nodes = vec![];
        let mut curr = sh;
        loop {
            nodes.push(curr);
            if a.key(curr) == Key::SubTail {
                break;
            }
            curr = a.next(curr).expect("stale node has a successor");
        }
        for &n in &nodes {
            a.set_status_bit(n, crate::core_list::arena::DELETED);
        }
        for &n in &nodes {
            a.free(n);
        }
        self.retired.borrow_mut().remove(&sh);
        nodes.len()
    }

    // ---- delinking ----

    /// One delink pass over every owned sublist. Unlinked nodes are freed
    /// once outstanding leases have run out.
    pub async fn delink_all(&self) -> Result<usize> {
        let ctx = self.ctx();
        if self.registry.borrow().any_busy() {
            ctx.stats.borrow_mut().delink_busy += 1;
            return Err(ListError::Busy);
        }
        self.delinking.set(true);
        let mut total = 0;
        let subheads = self.registry.borrow().subheads();
        for sh in subheads {
            if self.is_retired_node(sh) || self.registry.borrow().get(sh).is_none() {
                continue;
            }
            let gone = self.delink_sublist(sh).await;
            total += gone.len();
            let deadline = now() + ctx.cfg.theta;
            self.quarantine
                .borrow_mut()
                .extend(gone.into_iter().map(|n| (deadline, n)));
        }
        self.delinking.set(false);
        let mut st = ctx.stats.borrow_mut();
        st.delink_passes += 1;
        st.delinked += total as u64;
        Ok(total)
    }

    async fn delink_sublist(&self, sh: NodeId) -> Vec<NodeId> {
        let a = &self.arena;
        let mut out = vec![];
        let mut prev = sh;
        let mut curr = a.next(prev).expect("subhead has a successor");
        pause().await;
        while a.key(curr) != Key::SubTail {
            if a.is_deleted(curr) && !a.key(curr).is_sentinel() {
                let succ = a.next(curr);
                pause().await;
                if a.cas_next(prev, Some(curr), succ) {
                    pause().await;
                    a.store_next(curr, succ);
                    out.push(curr);
                }
                pause().await;
                curr = a.next(prev).expect("live node has a successor");
            } else {
                prev = curr;
                curr = a.next(curr).expect("sublist node has a successor");
            }
            pause().await;
        }
        out
    }

    /// Frees quarantined nodes whose grace period is over.
    pub fn reap(&self) -> usize {
        let t = now();
        let mut q = self.quarantine.borrow_mut();
        let (due, keep): (Vec<_>, Vec<_>) = q.drain(..).partition(|(d, _)| *d <= t);
        *q = keep;
        for (_, n) in &due {
            self.arena.free(*n);
        }
        due.len()
    }

    /// Nodes of the sublist from its subhead to its subtail, inclusive.
    pub fn sublist_nodes(&self, sh: NodeId) -> Vec<NodeId> {
        let a = &self.arena;
        let mut out = vec![sh];
        let mut curr = sh;
        while a.key(curr) != Key::SubTail {
            curr = a.next(curr).expect("sublist node has a successor");
            out.push(curr);
        }
        out
    }

    /// Application nodes of the sublist at `sh` in list order.
    pub fn sequence(&self, sh: NodeId) -> Vec<SeqEntry> {
        self.sublist_nodes(sh)
            .into_iter()
            .filter_map(|n| {
                let k = self.arena.key(n).app()?;
                let id = self.arena.ident(n);
                Some(SeqEntry {
                    key: k,
                    ts: id.ts,
                    sid: id.sid,
                    deleted: self.arena.is_deleted(n),
                })
            })
            .collect()
    }

    /// Quiescent identity check for every active sublist on this server.
    pub fn counter_violations(&self) -> Vec<String> {
        let mut out = vec![];
        for e in self.registry.borrow().entries() {
            if e.busy {
                continue;
            }
            let s = self.arena.counter(e.start).get();
            if s < 0 {
                continue;
            }
            let en = self.arena.counter(e.end).get();
            if s - en != e.offset {
                out.push(format!(
                    "s{} sublist {}: start {} - end {} != offset {}",
                    self.sid, e.sublist, s, en, e.offset
                ));
            }
        }
        out
    }
}

impl Msg {
    pub fn src_server(&self) -> ServerId {
        match self.src {
            Endpoint::Server(s) => s,
            Endpoint::Client(_) => panic!("expected a server sender"),
        }
    }
}

/// True when `v` is the swapped-in start counter value.
pub fn is_neg_inf(v: i64) -> bool {
    v <= NEG_INF / 2
}
