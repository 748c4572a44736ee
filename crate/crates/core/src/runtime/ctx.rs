//! Shared state of one simulation: network, statistics, trace and the
//! server table.

use std::cell::{Cell, RefCell};
use std::collections::{BTreeSet, HashMap};
use std::future::Future;
use std::pin::Pin;
use std::rc::Rc;

use super::client::ClientPort;
use super::config::SimConfig;
use super::message::{Body, Endpoint, Msg};
use super::net::SimNet;
use super::server::Server;
use super::stats::Stats;
use super::trace::{digest, Trace};
use crate::core_list::{NodeId, ServerId};
use crate::exec::now;

pub(crate) type BoxFut = Pin<Box<dyn Future<Output = ()>>>;

pub struct Ctx {
    pub cfg: SimConfig,
    pub net: RefCell<SimNet>,
    pub stats: RefCell<Stats>,
    pub trace: RefCell<Trace>,
    pub servers: RefCell<Vec<Rc<Server>>>,
    pub clients: RefCell<Vec<Rc<ClientPort>>>,
    pub head: Cell<NodeId>,
    pub tail: Cell<NodeId>,
    /// Non-daemon tasks still running.
    pub active: Cell<usize>,
    /// Updates whose start counter increment is not yet matched.
    pub inflight: Cell<i64>,
    /// Running split, move or switch operations.
    pub transforms: Cell<usize>,
    /// Sublist ids with a transformation in progress.
    pub busy: RefCell<BTreeSet<u64>>,
    /// Responses per client request.
    pub responses: RefCell<HashMap<(u16, u64), u32>>,
    spawned: RefCell<Vec<(BoxFut, bool)>>,
    next_id: Cell<u64>,
    next_sublist: Cell<u64>,
}

impl Ctx {
    pub fn new(cfg: SimConfig, net: SimNet) -> Self {
        Ctx {
            cfg,
            net: RefCell::new(net),
            stats: RefCell::new(Stats::default()),
            trace: RefCell::new(Trace::default()),
            servers: RefCell::new(vec![]),
            clients: RefCell::new(vec![]),
            head: Cell::new(NodeId { sid: 0, slot: 0, gen: 0 }),
            tail: Cell::new(NodeId { sid: 0, slot: 0, gen: 0 }),
            active: Cell::new(0),
            inflight: Cell::new(0),
            transforms: Cell::new(0),
            busy: RefCell::new(BTreeSet::new()),
            responses: RefCell::new(HashMap::new()),
            spawned: RefCell::new(vec![]),
            next_id: Cell::new(1),
            next_sublist: Cell::new(0),
        }
    }

    pub fn next_id(&self) -> u64 {
        let v = self.next_id.get();
        self.next_id.set(v + 1);
        v
    }

    pub fn new_sublist_id(&self) -> u64 {
        let v = self.next_sublist.get();
        self.next_sublist.set(v + 1);
        v
    }

    pub fn server(&self, sid: ServerId) -> Rc<Server> {
        self.servers.borrow()[sid as usize].clone()
    }

    pub fn n_servers(&self) -> usize {
        self.servers.borrow().len()
    }

    /// Sends a message and records it in the trace. Returns the message id
    /// and its trace line.
    pub fn send(&self, src: Endpoint, dst: Endpoint, reply_to: Option<u64>, body: Body) -> (u64, usize) {
        let id = self.next_id();
        let t = now();
        let line = {
            let mut tr = self.trace.borrow_mut();
            tr.record(t, body.kind(), src, dst, &digest(&body));
            tr.len() - 1
        };
        self.net.borrow_mut().send(
            t,
            Msg {
                id,
                src,
                dst,
                reply_to,
                body,
            },
        );
        (id, line)
    }

    /// Records a local protocol event in the trace.
    pub fn note(&self, kind: &str, at: Endpoint, detail: &str) {
        self.trace.borrow_mut().record(now(), kind, at, at, detail);
    }

    /// Queues a task; the driver moves it into the executor. Daemon tasks
    /// do not keep the run alive.
    pub fn spawn(self: &Rc<Self>, f: impl Future<Output = ()> + 'static, daemon: bool) {
        if daemon {
            self.spawned.borrow_mut().push((Box::pin(f), true));
        } else {
            self.active.set(self.active.get() + 1);
            let me = self.clone();
            self.spawned.borrow_mut().push((
                Box::pin(async move {
                    f.await;
                    me.active.set(me.active.get() - 1);
                }),
                false,
            ));
        }
    }

    pub(crate) fn take_spawned(&self) -> Vec<(BoxFut, bool)> {
        std::mem::take(&mut *self.spawned.borrow_mut())
    }

    pub fn add_inflight(&self, d: i64) {
        self.inflight.set(self.inflight.get() + d);
    }

    pub fn begin_transform(&self, sublists: &[u64]) {
        self.transforms.set(self.transforms.get() + 1);
        self.busy.borrow_mut().extend(sublists.iter().copied());
    }

    pub fn end_transform(&self, sublists: &[u64]) {
        self.transforms.set(self.transforms.get() - 1);
        let mut b = self.busy.borrow_mut();
        for s in sublists {
            b.remove(s);
        }
    }
}
