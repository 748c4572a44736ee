use serde::{Deserialize, Serialize};

use crate::core_list::{Ident, Item, ItemRef, NodeId, ServerId};
use crate::error::ListError;

pub type ReqId = u64;
pub type ClientId = u16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Endpoint {
    Server(ServerId),
    Client(ClientId),
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::Server(s) => write!(f, "s{s}"),
            Endpoint::Client(c) => write!(f, "c{c}"),
        }
    }
}

/// Where a delegated request's response must go.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientInfo {
    pub client: ClientId,
    pub req: ReqId,
    /// Server the client originally contacted.
    pub via: ServerId,
}

/// Key interval `(lo, hi]`; `lo == None` is unbounded below.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRange {
    pub lo: Option<u64>,
    pub hi: u64,
}

impl KeyRange {
    pub fn contains(&self, k: u64) -> bool {
        self.lo.is_none_or(|l| k > l) && k <= self.hi
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SortedOp {
    Insert(u64),
    Search(u64),
    Delete(u64),
}

impl SortedOp {
    pub fn key(self) -> u64 {
        match self {
            SortedOp::Insert(k) | SortedOp::Search(k) | SortedOp::Delete(k) => k,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelinkKind {
    /// Point the subtail at `target` to a new successor.
    SubtailNext(NodeId),
    /// Registry entry for subhead `target` gets a new predecessor subtail.
    PrevSubtail(NodeId),
}

/// A node ref as returned to clients, with its cross-server identity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefInfo {
    pub r: ItemRef,
    pub ident: Ident,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resp {
    Refs(Vec<RefInfo>),
    Ref(RefInfo),
    Item(RefInfo, Item),
    Done,
    Fail(ListError),
    NotOwner,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Body {
    ClientLookup { key: u64 },
    ClientInsertAfter { prev: ItemRef, key: u64 },
    ClientDelete { target: ItemRef },
    ClientNext { prev: ItemRef },
    ClientGetItem { target: ItemRef },
    ClientSorted { op: SortedOp, op_id: u64 },
    DelegateLookup { subhead: NodeId, key: u64 },
    DelegateInsertAfter { prev: NodeId, key: u64, client: ClientInfo },
    DelegateDelete { target: NodeId, client: ClientInfo },
    /// With `inclusive`, `prev` itself is answered if it is live.
    DelegateNext { prev: NodeId, client: ClientInfo, inclusive: bool },
    DelegateGetItem { target: NodeId, client: ClientInfo },
    DelegateSorted { subhead: NodeId, op: SortedOp, op_id: u64, client: ClientInfo },
    Move { session: u64, prev: Option<NodeId>, items: Vec<Item>, range: Option<KeyRange> },
    MoveAck { refs: Vec<NodeId> },
    Switch {
        session: u64,
        subhead: NodeId,
        prev_subtail: NodeId,
        range: Option<KeyRange>,
        sublist: u64,
        /// Sorted operations already applied to the sublist, keyed by
        /// (client, op id), with their key and response.
        done_ops: Vec<((ClientId, u64), u64, Resp)>,
    },
    SwitchAck,
    ReplicateInsertAfter { session: u64, prev: Item, item: Item, old: NodeId, op: Option<(ClientId, ReqId)> },
    ReplicateDelete { session: u64, target: Item, old: NodeId, counted: bool, op: Option<(ClientId, ReqId)> },
    InsertReplay { remote: NodeId, old: NodeId },
    DeleteReplay { old: NodeId, counted: bool },
    DeleteMovedSublist { session: u64, subhead: NodeId },
    DeleteMovedAck { residue: usize },
    Relink { target: NodeId, kind: RelinkKind },
    RelinkAck,
    LookupResult { refs: Vec<RefInfo> },
    Response { req: ReqId, via: ServerId, resp: Resp },
}

impl Body {
    pub fn kind(&self) -> &'static str {
        match self {
            Body::ClientLookup { .. } => "ClientLookup",
            Body::ClientInsertAfter { .. } => "ClientInsertAfter",
            Body::ClientDelete { .. } => "ClientDelete",
            Body::ClientNext { .. } => "ClientNext",
            Body::ClientGetItem { .. } => "ClientGetItem",
            Body::ClientSorted { .. } => "ClientSorted",
            Body::DelegateLookup { .. } => "DelegateLookup",
            Body::DelegateInsertAfter { .. } => "DelegateInsertAfter",
            Body::DelegateDelete { .. } => "DelegateDelete",
            Body::DelegateNext { .. } => "DelegateNext",
            Body::DelegateGetItem { .. } => "DelegateGetItem",
            Body::DelegateSorted { .. } => "DelegateSorted",
            Body::Move { .. } => "Move",
            Body::MoveAck { .. } => "MoveAck",
            Body::Switch { .. } => "Switch",
            Body::SwitchAck => "SwitchAck",
            Body::ReplicateInsertAfter { .. } => "ReplicateInsertAfter",
            Body::ReplicateDelete { .. } => "ReplicateDelete",
            Body::InsertReplay { .. } => "InsertReplay",
            Body::DeleteReplay { .. } => "DeleteReplay",
            Body::DeleteMovedSublist { .. } => "DeleteMovedSublist",
            Body::DeleteMovedAck { .. } => "DeleteMovedAck",
            Body::Relink { .. } => "Relink",
            Body::RelinkAck => "RelinkAck",
            Body::LookupResult { .. } => "LookupResult",
            Body::Response { .. } => "Response",
        }
    }

    /// Messages that travel on a per-channel FIFO regardless of the
    /// reordering setting.
    pub fn is_stream(&self) -> bool {
        matches!(
            self,
            Body::Move { .. } | Body::DeleteMovedSublist { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Msg {
    pub id: u64,
    pub src: Endpoint,
    pub dst: Endpoint,
    /// Set on replies to a request-response call.
    pub reply_to: Option<u64>,
    pub body: Body,
}
