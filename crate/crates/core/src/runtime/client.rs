//! Simulated clients issuing a seeded random workload.

use std::cell::RefCell;
use std::collections::{BTreeMap, VecDeque};
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::Variant;
use super::ctx::Ctx;
use super::message::{Body, ClientId, Endpoint, Msg, RefInfo, Resp, SortedOp};
use crate::core_list::{Ident, ServerId};
use crate::error::ListError;
use crate::exec::{now, sleep, sleep_until, step};
use crate::verify::history::{Op, Ret, Target};

pub struct ClientPort {
    pub id: ClientId,
    pub inbox: RefCell<VecDeque<Msg>>,
}

impl ClientPort {
    pub fn new(id: ClientId) -> Self {
        ClientPort {
            id,
            inbox: RefCell::new(VecDeque::new()),
        }
    }

    fn take(&self, req: u64) -> Option<Resp> {
        let mut inbox = self.inbox.borrow_mut();
        let i = inbox
            .iter()
            .position(|m| matches!(&m.body, Body::Response { req: r, .. } if *r == req))?;
        match inbox.remove(i).map(|m| m.body) {
            Some(Body::Response { resp, .. }) => Some(resp),
            _ => None,
        }
    }
}

struct Client {
    ctx: Rc<Ctx>,
    port: Rc<ClientPort>,
    rng: ChaCha8Rng,
    pool: Vec<RefInfo>,
    next_op: u64,
}

/// Runs one client's workload to completion.
pub async fn run_client(ctx: Rc<Ctx>, port: Rc<ClientPort>) {
    let seed = ctx.cfg.seed ^ (u64::from(port.id) + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut c = Client {
        ctx: ctx.clone(),
        port,
        rng: ChaCha8Rng::seed_from_u64(seed),
        pool: vec![],
        next_op: 0,
    };
    sleep_until(ctx.cfg.start_at).await;
    let n = u64::from(ctx.cfg.clients);
    let mine = ctx.cfg.steps / n + u64::from(u64::from(c.port.id) < ctx.cfg.steps % n);
    for _ in 0..mine {
        let (lo, hi) = ctx.cfg.think;
        let d = c.rng.gen_range(lo..=hi.max(lo));
        if d > 0 {
            sleep(d).await;
        }
        match ctx.cfg.variant {
            Variant::Unordered => c.unordered_op().await,
            Variant::Sorted => c.sorted_op().await,
        }
    }
}

impl Client {
    fn target(&self, r: &RefInfo) -> Target {
        let n = r.r.node();
        if n == self.ctx.head.get() {
            Target::Head
        } else if n == self.ctx.tail.get() {
            Target::Tail
        } else {
            Target::Node(r.ident)
        }
    }

    fn head(&self) -> RefInfo {
        RefInfo {
            r: self.ctx.head.get().with_lease(u64::MAX),
            ident: Ident { sid: 0, ts: 0 },
        }
    }

    fn prune(&mut self) {
        let horizon = now() + self.ctx.cfg.request_timeout;
        self.pool.retain(|r| horizon < r.r.lease);
    }

    fn pick(&mut self, allow_head: bool) -> Option<RefInfo> {
        self.prune();
        if self.pool.is_empty() || (allow_head && self.rng.gen_ratio(1, 5)) {
            return allow_head.then(|| self.head());
        }
        let i = self.rng.gen_range(0..self.pool.len());
        Some(self.pool[i])
    }

    fn remember(&mut self, r: RefInfo) {
        if self.target(&r) == Target::Head {
            return;
        }
        self.pool.push(r);
        if self.pool.len() > 64 {
            self.pool.remove(0);
        }
    }

    fn invoke(&self, op: Op) -> u64 {
        self.ctx
            .stats
            .borrow_mut()
            .history
            .invoke(step(), now(), u32::from(self.port.id), op)
    }

    fn done(&self, op_id: u64, ret: Ret) {
        self.ctx.stats.borrow_mut().history.respond(op_id, step(), now(), ret);
    }

    async fn request(&self, dst: ServerId, body: Body) -> Option<Resp> {
        let kind = body.kind();
        let (id, _) = self
            .ctx
            .send(Endpoint::Client(self.port.id), Endpoint::Server(dst), None, body);
        let deadline = now() + self.ctx.cfg.request_timeout;
        loop {
            if let Some(r) = self.port.take(id) {
                return Some(r);
            }
            if now() >= deadline {
                self.ctx
                    .stats
                    .borrow_mut()
                    .fault(format!("c{}: {kind} to s{dst} timed out", self.port.id));
                return None;
            }
            sleep(1).await;
        }
    }

    /// Sends `body` to every server and gathers all answers.
    async fn broadcast(&self, body: Body) -> Vec<Resp> {
        let n = self.ctx.n_servers() as ServerId;
        let ids: Vec<u64> = (0..n)
            .map(|s| {
                self.ctx
                    .send(Endpoint::Client(self.port.id), Endpoint::Server(s), None, body.clone())
                    .0
            })
            .collect();
        let deadline = now() + self.ctx.cfg.request_timeout;
        let mut got: BTreeMap<u64, Resp> = BTreeMap::new();
        loop {
            for &id in &ids {
                if let std::collections::btree_map::Entry::Vacant(e) = got.entry(id) {
                    if let Some(r) = self.port.take(id) {
                        e.insert(r);
                    }
                }
            }
            if got.len() == ids.len() {
                break;
            }
            if now() >= deadline {
                self.ctx
                    .stats
                    .borrow_mut()
                    .fault(format!("c{}: {} broadcast timed out", self.port.id, body.kind()));
                break;
            }
            sleep(1).await;
        }
        ids.iter().filter_map(|id| got.remove(id)).collect()
    }

    fn writes_allowed(&self) -> bool {
        self.ctx.cfg.write_until.is_none_or(|t| now() < t)
    }

    fn owner(r: &RefInfo) -> ServerId {
        r.r.sid
    }

    async fn unordered_op(&mut self) {
        let mix = self.ctx.cfg.op_mix;
        let writes = self.writes_allowed();
        let (wi, wd) = if writes { (mix.insert, mix.delete) } else { (0, 0) };
        let total = wi + wd + mix.lookup + mix.next;
        if total == 0 {
            return;
        }
        let mut roll = self.rng.gen_range(0..total);
        if roll < wi {
            return self.insert().await;
        }
        roll -= wi;
        if roll < wd {
            return self.delete().await;
        }
        roll -= wd;
        if roll < mix.lookup {
            return self.lookup().await;
        }
        if self.rng.gen_ratio(1, 5) {
            self.get_item().await
        } else {
            self.next().await
        }
    }

    async fn insert(&mut self) {
        let prev = self.pick(true).expect("head is always available");
        let key = self.rng.gen_range(0..self.ctx.cfg.key_space);
        let op_id = self.invoke(Op::InsertAfter(self.target(&prev), key));
        let body = Body::ClientInsertAfter { prev: prev.r, key };
        let ret = match self.request(Self::owner(&prev), body).await {
            Some(Resp::Ref(r)) => {
                self.remember(r);
                Ret::Node(self.target(&r))
            }
            Some(Resp::Fail(e)) => Ret::Err(e),
            Some(other) => return self.unexpected(op_id, other),
            None => return,
        };
        self.done(op_id, ret);
    }

    async fn delete(&mut self) {
        let Some(t) = self.pick(false) else {
            return self.insert().await;
        };
        let op_id = self.invoke(Op::Delete(self.target(&t)));
        let ret = match self.request(Self::owner(&t), Body::ClientDelete { target: t.r }).await {
            Some(Resp::Done) => Ret::Ok,
            Some(Resp::Fail(e)) => Ret::Err(e),
            Some(other) => return self.unexpected(op_id, other),
            None => return,
        };
        self.done(op_id, ret);
    }

    async fn next(&mut self) {
        let prev = self.pick(true).expect("head is always available");
        let op_id = self.invoke(Op::Next(self.target(&prev)));
        let ret = match self.request(Self::owner(&prev), Body::ClientNext { prev: prev.r }).await {
            Some(Resp::Ref(r)) => {
                self.remember(r);
                Ret::Node(self.target(&r))
            }
            Some(Resp::Fail(e)) => Ret::Err(e),
            Some(other) => return self.unexpected(op_id, other),
            None => return,
        };
        self.done(op_id, ret);
    }

    async fn get_item(&mut self) {
        let Some(t) = self.pick(false) else {
            return self.next().await;
        };
        let op_id = self.invoke(Op::GetItem(self.target(&t)));
        let ret = match self.request(Self::owner(&t), Body::ClientGetItem { target: t.r }).await {
            Some(Resp::Item(r, item)) => {
                if item.is_deleted {
                    Ret::Nodes(vec![])
                } else {
                    Ret::Nodes(vec![r.ident])
                }
            }
            Some(Resp::Fail(e)) => Ret::Err(e),
            Some(other) => return self.unexpected(op_id, other),
            None => return,
        };
        self.done(op_id, ret);
    }

    async fn lookup(&mut self) {
        let key = self.rng.gen_range(0..self.ctx.cfg.key_space);
        let op_id = self.invoke(Op::Lookup(key));
        let resps = self.broadcast(Body::ClientLookup { key }).await;
        let mut seen: BTreeMap<Ident, RefInfo> = BTreeMap::new();
        let mut dups = 0;
        for r in resps {
            match r {
                Resp::Refs(refs) => {
                    for x in refs {
                        if seen.insert(x.ident, x).is_some() {
                            dups += 1;
                        }
                    }
                }
                other => return self.unexpected(op_id, other),
            }
        }
        self.ctx.stats.borrow_mut().lookup_duplicates += dups;
        for r in seen.values() {
            self.remember(*r);
        }
        self.done(op_id, Ret::Nodes(seen.into_keys().collect()));
    }

    async fn sorted_op(&mut self) {
        let mix = self.ctx.cfg.op_mix;
        let writes = self.writes_allowed();
        let (wi, wd) = if writes { (mix.insert, mix.delete) } else { (0, 0) };
        let reads = mix.lookup + mix.next;
        let total = wi + wd + reads;
        if total == 0 {
            return;
        }
        let key = self.rng.gen_range(0..self.ctx.cfg.key_space);
        let roll = self.rng.gen_range(0..total);
        let (op, hop) = if roll < wi {
            (SortedOp::Insert(key), Op::SortedInsert(key))
        } else if roll < wi + wd {
            (SortedOp::Delete(key), Op::SortedDelete(key))
        } else {
            (SortedOp::Search(key), Op::SortedSearch(key))
        };
        let op_id = self.invoke(hop);
        let sop = self.next_op;
        self.next_op += 1;
        let resps = self.broadcast(Body::ClientSorted { op, op_id: sop }).await;
        let mut answers: Vec<Ret> = vec![];
        for r in resps {
            let ret = match r {
                Resp::NotOwner => continue,
                Resp::Ref(r) => Ret::Node(self.target(&r)),
                Resp::Refs(refs) => Ret::Nodes(refs.iter().map(|r| r.ident).collect()),
                Resp::Done => Ret::Ok,
                Resp::Fail(e) => Ret::Err(e),
                Resp::Item(..) => return self.unexpected(op_id, r),
            };
            if !answers.contains(&ret) {
                answers.push(ret);
            }
        }
        match answers.len() {
            1 => self.done(op_id, answers.pop().expect("one answer")),
            0 => self
                .ctx
                .stats
                .borrow_mut()
                .fault(format!("c{}: no owner answered {op:?}", self.port.id)),
            _ => self
                .ctx
                .stats
                .borrow_mut()
                .fault(format!("c{}: owners disagree on {op:?}: {answers:?}", self.port.id)),
        }
    }

    fn unexpected(&self, op_id: u64, r: Resp) {
        self.ctx
            .stats
            .borrow_mut()
            .fault(format!("c{}: unexpected response {r:?}", self.port.id));
        self.done(op_id, Ret::Err(ListError::UnknownRef));
    }
}
