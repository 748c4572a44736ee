//! The simulated world: servers, clients, network and the driver loop.

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::client::{run_client, ClientPort};
use super::config::{Action, Directive, Protocol, SimConfig, Variant};
use super::ctx::Ctx;
use super::message::{Endpoint, KeyRange, Msg};
use super::net::{NetConfig, SimNet};
use super::registry::RegistryEntry;
use super::server::Server;
use super::stats::{MoveRecord, SplitRecord};
use crate::core_list::{Ident, Key, NewNode, NodeId, ServerId};
use crate::exec::{sleep, Executor};
use crate::verify::history::EventKind;
use crate::verify::oracle::SeqEntry;
use crate::{am_protocol, tr_protocol};

/// One node of the global list as seen from the outside.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GlobalNode {
    pub id: NodeId,
    pub key: Key,
    pub ident: Ident,
    pub deleted: bool,
}

pub struct World {
    pub ctx: Rc<Ctx>,
    exec: Executor,
    rng: ChaCha8Rng,
    script: Vec<Directive>,
    fired: usize,
    deferred: Vec<Directive>,
    polls: u64,
    quiescent: bool,
    /// Application nodes of the global list before any client ran.
    pub initial: Vec<SeqEntry>,
}

impl World {
    pub fn new(cfg: SimConfig) -> World {
        cfg.validate().expect("invalid simulation config");
        let exec = Executor::new();
        let net = SimNet::new(
            NetConfig {
                min_delay: cfg.net_delay.0,
                max_delay: cfg.net_delay.1,
                reorder: cfg.reorder,
            },
            cfg.seed.wrapping_mul(31).wrapping_add(7),
        );
        let mut script = cfg.script.clone();
        script.sort_by_key(|d| d.at);
        let ctx = Rc::new(Ctx::new(cfg, net));
        let servers: Vec<Rc<Server>> = (0..ctx.cfg.servers)
            .map(|sid| Rc::new(Server::new(sid, ctx.cfg.capacity, &ctx)))
            .collect();
        *ctx.servers.borrow_mut() = servers;
        let mut w = World {
            rng: ChaCha8Rng::seed_from_u64(ctx.cfg.seed),
            ctx,
            exec,
            script,
            fired: 0,
            deferred: vec![],
            polls: 0,
            quiescent: false,
            initial: vec![],
        };
        w.layout();
        w.initial = w
            .global()
            .iter()
            .filter(|n| !n.key.is_sentinel())
            .map(|n| SeqEntry {
                key: n.key.app().expect("app key"),
                ts: n.ident.ts,
                sid: n.ident.sid,
                deleted: n.deleted,
            })
            .collect();
        for c in 0..w.ctx.cfg.clients {
            let port = Rc::new(ClientPort::new(c));
            w.ctx.clients.borrow_mut().push(port.clone());
            w.ctx.spawn(run_client(w.ctx.clone(), port), false);
        }
        if w.ctx.cfg.delink_every > 0 {
            for s in w.ctx.servers.borrow().iter() {
                let s = s.clone();
                let every = w.ctx.cfg.delink_every;
                w.ctx.spawn(
                    async move {
                        loop {
                            sleep(every).await;
                            let _ = s.delink_all().await;
                            s.reap();
                        }
                    },
                    true,
                );
            }
        }
        w.drain();
        w
    }

    /// Builds Head, Tail and the initial sublists.
    fn layout(&mut self) {
        let ctx = self.ctx.clone();
        let cfg = &ctx.cfg;
        let s0 = ctx.server(0);
        let tail = s0.arena.alloc(NewNode::sentinel(Key::Tail, 0));
        let hc = s0.arena.new_counter(0);
        let head = s0.arena.alloc(NewNode {
            start: Some(hc),
            end: Some(hc),
            ..NewNode::sentinel(Key::Head, 0)
        });
        ctx.head.set(head);
        ctx.tail.set(tail);
        let k = cfg.sublists;
        let n = ctx.n_servers();
        let mut keys_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
        let mut prev_st = head;
        for i in 0..k {
            let sid = (i % n) as ServerId;
            let s = ctx.server(sid);
            let a = &s.arena;
            let range = (cfg.variant == Variant::Sorted).then(|| {
                let b = |j: usize| j as u64 * cfg.key_space / k as u64;
                KeyRange {
                    lo: (i > 0).then(|| b(i) - 1),
                    hi: if i + 1 == k { u64::MAX } else { b(i + 1) - 1 },
                }
            });
            let per = cfg.initial_keys / k + usize::from(i < cfg.initial_keys % k);
            let keys: Vec<u64> = match range {
                Some(r) => {
                    let lo = r.lo.map_or(0, |l| l + 1);
                    let hi = r.hi.min(cfg.key_space - 1);
                    let mut all: Vec<u64> = (lo..=hi).collect();
                    all.shuffle(&mut keys_rng);
                    all.truncate(per);
                    all.sort_unstable();
                    all
                }
                None => (0..per).map(|_| keys_rng.gen_range(0..cfg.key_space)).collect(),
            };
            let sc = a.new_counter(0);
            let ec = a.new_counter(0);
            let st = a.alloc(NewNode {
                start: Some(sc),
                end: Some(ec),
                ..NewNode::sentinel(Key::SubTail, sid)
            });
            let sh = a.alloc(NewNode {
                start: Some(sc),
                end: Some(ec),
                ts: s.tick_clock(),
                ..NewNode::sentinel(Key::SubHead, sid)
            });
            let mut last = sh;
            for key in keys {
                let node = a.alloc(NewNode {
                    start: Some(sc),
                    end: Some(ec),
                    ts: s.tick_clock(),
                    ..NewNode::sentinel(Key::App(key), sid)
                });
                a.init_next(last, Some(node));
                last = node;
            }
            a.init_next(last, Some(st));
            let sublist = ctx.new_sublist_id();
            s.registry.borrow_mut().add(RegistryEntry {
                sublist,
                subhead: sh,
                start: sc,
                end: ec,
                offset: 0,
                prev_subtail: prev_st,
                range,
                parent: None,
                busy: false,
            });
            ctx.server(prev_st.sid).arena.init_next(prev_st, Some(sh));
            prev_st = st;
        }
        ctx.server(prev_st.sid).arena.init_next(prev_st, Some(tail));
    }

    pub fn server(&self, sid: ServerId) -> Rc<Server> {
        self.ctx.server(sid)
    }

    pub fn now(&self) -> u64 {
        self.exec.now()
    }

    pub fn polls(&self) -> u64 {
        self.polls
    }

    /// Schedules an extra task; it keeps the run alive until it finishes.
    pub fn spawn(&mut self, f: impl std::future::Future<Output = ()> + 'static) {
        self.ctx.spawn(f, false);
        self.drain();
    }

    fn drain(&mut self) {
        for (f, _) in self.ctx.take_spawned() {
            self.exec.spawn(f);
        }
    }

    fn deliver(&mut self, m: Msg) {
        match m.dst {
            Endpoint::Server(sid) => {
                let s = self.ctx.server(sid);
                match m.reply_to {
                    Some(r) => s.deliver_reply(r, m.body),
                    None => self.ctx.spawn(s.handle(m), false),
                }
            }
            Endpoint::Client(c) => {
                let port = self.ctx.clients.borrow()[c as usize].clone();
                port.inbox.borrow_mut().push_back(m);
            }
        }
    }

    /// Walks the whole list from Head to Tail across servers.
    pub fn global(&self) -> Vec<GlobalNode> {
        let mut out = vec![];
        let mut curr = Some(self.ctx.head.get());
        let limit = self.ctx.n_servers() * self.ctx.cfg.capacity + 8;
        while let Some(id) = curr {
            let s = self.ctx.server(id.sid);
            let a = &s.arena;
            assert!(a.is_valid(id), "global walk reached a freed node");
            let key = a.key(id);
            out.push(GlobalNode {
                id,
                key,
                ident: a.ident(id),
                deleted: a.is_deleted(id),
            });
            assert!(out.len() <= limit, "cycle in the global list");
            if key == Key::Tail {
                break;
            }
            curr = a.next(id);
        }
        out
    }

    /// Sublist ids in global order.
    pub fn sublist_order(&self) -> Vec<u64> {
        self.global()
            .iter()
            .filter(|n| n.key == Key::SubHead)
            .filter_map(|n| self.ctx.server(n.id.sid).registry.borrow().get(n.id).map(|e| e.sublist))
            .collect()
    }

    /// Current (server, subhead) of an active sublist.
    pub fn locate(&self, sublist: u64) -> Option<(ServerId, NodeId)> {
        for s in self.ctx.servers.borrow().iter() {
            for e in s.registry.borrow().entries() {
                if e.sublist == sublist && !s.is_retired_node(e.subhead) {
                    return Some((s.sid, e.subhead));
                }
            }
        }
        None
    }

    fn neighbours_busy(&self, sublist: u64) -> bool {
        let order = self.sublist_order();
        let busy = self.ctx.busy.borrow();
        match order.iter().position(|&x| x == sublist) {
            Some(i) => {
                let lo = i.saturating_sub(1);
                let hi = (i + 1).min(order.len() - 1);
                order[lo..=hi].iter().any(|x| busy.contains(x))
            }
            None => true,
        }
    }

    /// Starts the directive now, or returns it if it has to wait.
    fn fire(&mut self, d: Directive) -> Option<Directive> {
        let (sublist, is_move) = match d.action {
            Action::Split { sublist, .. } => (sublist as u64, false),
            Action::Move { sublist, .. } => (sublist as u64, true),
        };
        if self.ctx.busy.borrow().contains(&sublist) {
            // Mid-move there may be no active copy yet.
            self.ctx.stats.borrow_mut().deferred_directives += 1;
            return Some(d);
        }
        let Some((sid, sh)) = self.locate(sublist) else {
            self.ctx
                .stats
                .borrow_mut()
                .fault(format!("directive `{d}`: no active sublist {sublist}"));
            return None;
        };
        let blocked = if is_move {
            self.neighbours_busy(sublist)
        } else {
            self.ctx.busy.borrow().contains(&sublist)
        };
        if blocked || self.ctx.server(sid).delinking.get() {
            self.ctx.stats.borrow_mut().deferred_directives += 1;
            return Some(d);
        }
        let s = self.ctx.server(sid);
        if let Action::Move { to, .. } = d.action {
            if to == sid {
                return None;
            }
        }
        let Some(e) = am_protocol::try_claim(&s, sh) else {
            self.ctx.stats.borrow_mut().deferred_directives += 1;
            return Some(d);
        };
        match d.action {
            Action::Split { pos, .. } => {
                self.ctx.spawn(
                    async move {
                        am_protocol::split_claimed(s, sh, e, pos).await;
                    },
                    false,
                );
            }
            Action::Move { to, .. } => match self.ctx.cfg.protocol {
                Protocol::Am => self.ctx.spawn(am_protocol::move_claimed(s, sh, e, to), false),
                Protocol::Tr => self.ctx.spawn(tr_protocol::move_claimed(s, sh, e, to), false),
            },
        }
        None
    }

    fn fire_due(&mut self, now: u64) {
        let mut retry = std::mem::take(&mut self.deferred);
        while self.fired < self.script.len() && self.script[self.fired].at <= now {
            retry.push(self.script[self.fired]);
            self.fired += 1;
        }
        for d in retry {
            if let Some(d) = self.fire(d) {
                self.deferred.push(d);
            }
        }
    }

    fn auto_split(&mut self) {
        if !self.ctx.cfg.auto_split || self.ctx.transforms.get() > 0 {
            return;
        }
        let threshold = self.ctx.cfg.split_threshold;
        for s in self.ctx.servers.borrow().iter() {
            let entries: Vec<RegistryEntry> = s.registry.borrow().entries().copied().collect();
            for e in entries {
                if e.busy || s.is_retired_node(e.subhead) || self.ctx.busy.borrow().contains(&e.sublist) {
                    continue;
                }
                let n = am_protocol::app_count(s, e.subhead);
                if n > threshold {
                    let Some(e) = am_protocol::try_claim(s, e.subhead) else { continue };
                    let (s, sh) = (s.clone(), e.subhead);
                    self.ctx.spawn(
                        async move {
                            am_protocol::split_claimed(s, sh, e, n / 2).await;
                        },
                        false,
                    );
                }
            }
        }
    }

    fn checkpoint(&mut self) {
        let q = self.ctx.inflight.get() == 0 && self.ctx.transforms.get() == 0;
        if q && !self.quiescent {
            let mut v = vec![];
            for s in self.ctx.servers.borrow().iter() {
                v.extend(s.counter_violations());
            }
            let order = if self.ctx.cfg.variant == Variant::Sorted {
                crate::verify::suites::order_problems(self)
            } else {
                vec![]
            };
            let mut st = self.ctx.stats.borrow_mut();
            st.checkpoints += 1;
            st.checkpoint_violations.extend(v);
            st.order_violations.extend(order);
        }
        self.quiescent = q;
    }

    fn finished(&self) -> bool {
        self.ctx.active.get() == 0
            && self.ctx.net.borrow().in_flight() == 0
            && self.fired == self.script.len()
            && self.deferred.is_empty()
    }

    /// Runs until every client, handler and transformation is done.
    /// Returns false if the poll budget ran out first.
    pub fn run(&mut self) -> bool {
        let mut last_tick = u64::MAX;
        loop {
            let now = self.exec.now();
            if now != last_tick {
                last_tick = now;
                self.fire_due(now);
                self.auto_split();
            }
            loop {
                let m = self.ctx.net.borrow_mut().pop_due(now);
                match m {
                    Some(m) => self.deliver(m),
                    None => break,
                }
            }
            self.drain();
            if self.exec.has_runnable() {
                if self.polls >= self.ctx.cfg.max_polls {
                    self.ctx.stats.borrow_mut().fault("poll budget exhausted");
                    return false;
                }
                self.exec.step(&mut self.rng);
                self.polls += 1;
                self.drain();
                self.checkpoint();
                continue;
            }
            if self.finished() {
                self.checkpoint();
                return true;
            }
            let mut next = [
                self.exec.next_wake(),
                self.ctx.net.borrow().next_due(),
                self.script.get(self.fired).map(|d| d.at),
                (!self.deferred.is_empty()).then_some(now + 1),
            ]
            .into_iter()
            .flatten()
            .min();
            if let Some(t) = next.as_mut() {
                *t = (*t).max(now + 1);
            }
            match next {
                Some(t) => self.exec.advance_to(t),
                None => {
                    self.ctx
                        .stats
                        .borrow_mut()
                        .fault(format!("stalled with {} tasks alive", self.ctx.active.get()));
                    return false;
                }
            }
        }
    }

    pub fn report(&self) -> Report {
        let st = self.ctx.stats.borrow();
        let mut ops: BTreeMap<String, OpStats> = BTreeMap::new();
        let mut invoked = BTreeMap::new();
        for e in st.history.events() {
            match &e.kind {
                EventKind::Invoke(op) => {
                    invoked.insert(e.op_id, (op.name(), e.tick));
                    ops.entry(op.name().to_string()).or_default().count += 1;
                }
                EventKind::Respond(r) => {
                    let (name, t0) = invoked[&e.op_id];
                    let o = ops.entry(name.to_string()).or_default();
                    o.completed += 1;
                    if matches!(r, crate::verify::history::Ret::Err(_)) {
                        o.failed += 1;
                    }
                    let lat = e.tick - t0;
                    o.total_latency += lat;
                    o.max_latency = o.max_latency.max(lat);
                }
            }
        }
        let gen_trips = self.ctx.servers.borrow().iter().map(|s| s.arena.gen_trips()).sum();
        Report {
            protocol: self.ctx.cfg.protocol,
            variant: self.ctx.cfg.variant,
            seed: self.ctx.cfg.seed,
            ticks: self.exec.now(),
            polls: self.polls,
            messages: self.ctx.net.borrow().sent(),
            trace_lines: self.ctx.trace.borrow().len(),
            ops,
            delegations: st.delegations.clone(),
            moves: st.moves.clone(),
            splits: st.splits.clone(),
            replicates: st.replicates,
            replays: st.replays,
            compensations: st.compensations,
            delete_moved: st.delete_moved,
            checkpoints: st.checkpoints,
            checkpoint_violations: st.checkpoint_violations.clone(),
            post_switch_requests: st.post_switch_requests,
            post_switch_delegated: st.post_switch_delegated,
            lookup_duplicates: st.lookup_duplicates,
            lease_expired: st.lease_expired,
            gen_trips,
            delink_passes: st.delink_passes,
            delinked: st.delinked,
            reclaimed: st.reclaimed,
            deferred_directives: st.deferred_directives,
            sorted_retries: st.sorted_retries,
            faults: st.faults.clone(),
            verdicts: {
                drop(st);
                crate::verify::suites::evaluate(self)
            },
        }
    }

    /// Full trace text including the config header.
    pub fn trace_text(&self) -> String {
        let cfg = serde_json::to_string(&self.ctx.cfg).expect("config serializes");
        self.ctx.trace.borrow().render(&cfg)
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct OpStats {
    pub count: u64,
    pub completed: u64,
    pub failed: u64,
    pub total_latency: u64,
    pub max_latency: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub ok: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub protocol: Protocol,
    pub variant: Variant,
    pub seed: u64,
    pub ticks: u64,
    pub polls: u64,
    pub messages: u64,
    pub trace_lines: usize,
    pub ops: BTreeMap<String, OpStats>,
    pub delegations: BTreeMap<String, u64>,
    pub moves: Vec<MoveRecord>,
    pub splits: Vec<SplitRecord>,
    pub replicates: u64,
    pub replays: u64,
    pub compensations: u64,
    pub delete_moved: u64,
    pub checkpoints: u64,
    pub checkpoint_violations: Vec<String>,
    pub post_switch_requests: u64,
    pub post_switch_delegated: u64,
    pub lookup_duplicates: u64,
    pub lease_expired: u64,
    pub gen_trips: u64,
    pub delink_passes: u64,
    pub delinked: u64,
    pub reclaimed: u64,
    pub deferred_directives: u64,
    pub sorted_retries: u64,
    pub faults: Vec<String>,
    pub verdicts: BTreeMap<String, Verdict>,
}

impl Report {
    pub fn all_ok(&self) -> bool {
        self.faults.is_empty() && self.verdicts.values().all(|v| v.ok)
    }
}

/// Builds a world from `cfg` and runs it to completion.
pub fn simulate(cfg: SimConfig) -> World {
    let mut w = World::new(cfg);
    w.run();
    w
}
