//! Run-time model: stores, monitors with cursor-carrying local types,
//! session queues split into past and future halves, located services,
//! running processes with alternative stacks, and whole configurations.
//!
//! Configurations are kept in a flat normal form: restrictions hoisted to
//! the top, parallel components in a vector sorted by a canonical key, inert
//! components dropped. Equality up to structural congruence is decided by
//! comparing canonical serializations in which restricted names and bound
//! process variables are renamed positionally.

use crate::ident::{KeyName, Label, Location, Participant, SessionName, SharedName, Var};
use crate::process::{
    canonical_process, ChannelRef, Literal, NameExpr, Process, ValueExpr, VarLookup,
};
use crate::types::{Branches, LocalType, ValueType};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("variable {0} already bound in store")]
    DuplicateBinding(Var),
}

/// Variable store of a monitor. Update is defined only for fresh variables;
/// reverse update removes at most one binding.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Default, Serialize, Deserialize)]
pub struct Store(BTreeMap<Var, ValueExpr>);

impl Store {
    pub fn new() -> Store {
        Store(BTreeMap::new())
    }

    pub fn update(&self, x: &Var, v: ValueExpr) -> Result<Store, StoreError> {
        if self.0.contains_key(x) {
            return Err(StoreError::DuplicateBinding(x.clone()));
        }
        let mut m = self.0.clone();
        m.insert(x.clone(), v);
        Ok(Store(m))
    }

    pub fn reverse(&self, x: &Var) -> Store {
        let mut m = self.0.clone();
        m.remove(x);
        Store(m)
    }

    pub fn get(&self, x: &Var) -> Option<&ValueExpr> {
        self.0.get(x)
    }

    pub fn contains(&self, x: &Var) -> bool {
        self.0.contains_key(x)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, &ValueExpr)> {
        self.0.iter()
    }
}

impl VarLookup for Store {
    fn lookup(&self, v: &Var) -> Option<&ValueExpr> {
        self.0.get(v)
    }
}

/// Monitor tag: full while the endpoint takes part in a decoupled rollback.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum Tag {
    Empty,
    Full,
}

/// A committed communication prefix.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum ActionPrefix {
    Send { peer: Participant, payload: ValueType },
    Recv { peer: Participant, payload: ValueType },
}

/// One entry of a monitor's past, left of the cursor.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum LocalFrame {
    Action(ActionPrefix),
    /// Committed internal choice; the discarded alternatives keep their
    /// continuation types for rollback.
    Select {
        peer: Participant,
        chosen: Label,
        others: Branches<LocalType>,
    },
    /// Committed external choice.
    Branch {
        peer: Participant,
        chosen: Label,
        others: Branches<LocalType>,
    },
    /// An application was launched under this key.
    Key(KeyName),
    /// The located process split into two children.
    Split {
        parent: Location,
        left: Location,
        right: Location,
    },
    /// One unfolding of a recursive local type.
    Unfold { rec: LocalType },
}

/// A local type with history: committed frames to the left of the cursor
/// and the remaining protocol to its right.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct HistoryLocal {
    pub frames: Vec<LocalFrame>,
    pub future: LocalType,
}

impl HistoryLocal {
    pub fn start(t: LocalType) -> HistoryLocal {
        HistoryLocal {
            frames: Vec::new(),
            future: t,
        }
    }

    /// Cursor at the very beginning of the protocol.
    pub fn at_start(&self) -> bool {
        self.frames.is_empty()
    }

    /// The head of the future, with any leading recursion unfolded. Returns
    /// the unfold frames that stepping past the head must push.
    pub fn peek(&self) -> (Vec<LocalFrame>, LocalType) {
        let mut pending = Vec::new();
        let mut head = self.future.clone();
        while matches!(head, LocalType::Rec { .. }) {
            let unfolded = head.unfold_once();
            pending.push(LocalFrame::Unfold { rec: head });
            head = unfolded;
        }
        (pending, head)
    }

    /// Moves the cursor past the (already peeked) head, pushing the frames.
    pub fn advance(&self, mut pending: Vec<LocalFrame>, frame: LocalFrame, next: LocalType) -> HistoryLocal {
        let mut frames = self.frames.clone();
        frames.append(&mut pending);
        frames.push(frame);
        HistoryLocal {
            frames,
            future: next,
        }
    }

    /// Pops the last committed frame and re-folds any unfoldings exposed by
    /// the pop, restoring the exact pre-step history.
    pub fn retreat(&self, rebuilt_future: LocalType) -> HistoryLocal {
        let mut frames = self.frames.clone();
        frames.pop();
        let mut future = rebuilt_future;
        while let Some(LocalFrame::Unfold { rec }) = frames.last() {
            debug_assert_eq!(rec.unfold_once(), future, "unfold frame out of sync");
            future = rec.clone();
            frames.pop();
        }
        HistoryLocal { frames, future }
    }

    pub fn last_frame(&self) -> Option<&LocalFrame> {
        self.frames.last()
    }

    /// Number of committed-choice frames, which must mirror the process
    /// stack depth of the monitored endpoint.
    pub fn choice_frames(&self) -> usize {
        self.frames
            .iter()
            .filter(|f| matches!(f, LocalFrame::Select { .. } | LocalFrame::Branch { .. }))
            .count()
    }
}

/// Monitor: one per session endpoint, holding the protocol state, the
/// variables bound so far (in binding order), their values, and the tag.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Monitor {
    pub session: SessionName,
    pub participant: Participant,
    pub history: HistoryLocal,
    pub tracked: Vec<Var>,
    pub store: Store,
    pub tag: Tag,
}

/// Message payloads: evaluated values or labels.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum Payload {
    Value(ValueExpr),
    Label(Label),
}

#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Msg {
    pub from: Participant,
    pub to: Participant,
    pub payload: Payload,
}

/// Session queue split at the star: `past` holds delivered messages (read
/// from the front of `future` and appended here), `future` holds messages
/// still in flight. Messages are never consumed, only moved.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct SessionQueue {
    pub session: SessionName,
    pub past: Vec<Msg>,
    pub future: Vec<Msg>,
}

/// Discarded alternatives of a committed choice, pushed by selection and
/// branching steps and consulted only at the head.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum StackEntry {
    Select {
        chan: ChannelRef,
        branches: Vec<(Label, Process)>,
    },
    Branch {
        chan: ChannelRef,
        branches: Vec<(Label, Process)>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum ServiceKind {
    Request,
    Accept,
}

/// A located service: a request or accept on a shared name, annotated with
/// the role it will play and the local type of that role.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Service {
    pub loc: Location,
    pub kind: ServiceKind,
    pub shared: SharedName,
    pub var: Var,
    pub participant: Participant,
    pub annot: LocalType,
    pub body: Process,
}

/// A running process at a location, tied to the session it was created in.
/// `initiator` records whether this endpoint's service was the requester,
/// so undoing initiation can rebuild the original request.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Running {
    pub loc: Location,
    pub participant: Participant,
    pub session: SessionName,
    pub initiator: bool,
    pub stack: Vec<StackEntry>,
    pub body: Process,
}

/// Memory of a launched application, enabling its reversal.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct RunFun {
    pub key: KeyName,
    pub func: ValueExpr,
    pub arg: NameExpr,
    pub loc: Location,
}

#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum Node {
    Service(Service),
    Running(Running),
    Monitor(Monitor),
    Queue(SessionQueue),
    RunFun(RunFun),
}

/// A name bound by a top-level restriction.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum RtName {
    Session(SessionName),
    Key(KeyName),
    Loc(Location),
}

impl fmt::Display for RtName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RtName::Session(s) => write!(f, "{s}"),
            RtName::Key(k) => write!(f, "{k}"),
            RtName::Loc(l) => write!(f, "{l}"),
        }
    }
}

/// A configuration in normal form: hoisted restrictions plus a sorted
/// vector of parallel components.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Default, Serialize, Deserialize)]
pub struct Configuration {
    pub restricted: Vec<RtName>,
    pub nodes: Vec<Node>,
}

impl Node {
    /// Sort key: kind rank, then location, participant, session.
    fn sort_key(&self) -> (u8, String, String, String) {
        match self {
            Node::Service(s) => (
                0,
                s.loc.to_string(),
                s.participant.to_string(),
                s.shared.to_string(),
            ),
            Node::Running(r) => (
                1,
                r.loc.to_string(),
                r.participant.to_string(),
                r.session.to_string(),
            ),
            Node::Monitor(m) => (
                2,
                String::new(),
                m.participant.to_string(),
                m.session.to_string(),
            ),
            Node::Queue(q) => (3, String::new(), String::new(), q.session.to_string()),
            Node::RunFun(r) => (4, r.loc.to_string(), String::new(), r.key.to_string()),
        }
    }
}

impl Configuration {
    pub fn new(restricted: Vec<RtName>, nodes: Vec<Node>) -> Configuration {
        let mut c = Configuration { restricted, nodes };
        c.normalize();
        c
    }

    /// Restores the normal form: components sorted by their canonical key,
    /// unused restrictions dropped, restriction list deduplicated and
    /// ordered by first use.
    pub fn normalize(&mut self) {
        self.nodes
            .sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        let used = self.used_names();
        let mut seen = BTreeSet::new();
        self.restricted.retain(|n| used.contains(n) && seen.insert(n.clone()));
    }

    fn used_names(&self) -> BTreeSet<RtName> {
        let mut used = BTreeSet::new();
        for n in &self.nodes {
            match n {
                Node::Service(_) => {}
                Node::Running(r) => {
                    used.insert(RtName::Loc(r.loc.clone()));
                    used.insert(RtName::Session(r.session.clone()));
                    collect_process_names(&r.body, &mut used);
                    for e in &r.stack {
                        let (StackEntry::Select { chan, branches }
                        | StackEntry::Branch { chan, branches }) = e;
                        collect_chan_names(chan, &mut used);
                        for (_, p) in branches {
                            collect_process_names(p, &mut used);
                        }
                    }
                }
                Node::Monitor(m) => {
                    used.insert(RtName::Session(m.session.clone()));
                    for f in &m.history.frames {
                        match f {
                            LocalFrame::Key(k) => {
                                used.insert(RtName::Key(k.clone()));
                            }
                            LocalFrame::Split {
                                parent,
                                left,
                                right,
                            } => {
                                used.insert(RtName::Loc(parent.clone()));
                                used.insert(RtName::Loc(left.clone()));
                                used.insert(RtName::Loc(right.clone()));
                            }
                            _ => {}
                        }
                    }
                    for (_, v) in m.store.iter() {
                        collect_value_names(v, &mut used);
                    }
                }
                Node::Queue(q) => {
                    used.insert(RtName::Session(q.session.clone()));
                    for m in q.past.iter().chain(q.future.iter()) {
                        if let Payload::Value(v) = &m.payload {
                            collect_value_names(v, &mut used);
                        }
                    }
                }
                Node::RunFun(r) => {
                    used.insert(RtName::Key(r.key.clone()));
                    used.insert(RtName::Loc(r.loc.clone()));
                    collect_value_names(&r.func, &mut used);
                    if let NameExpr::Endpoint(s, _) = &r.arg {
                        used.insert(RtName::Session(s.clone()));
                    }
                }
            }
        }
        used
    }

    /// Canonical serialization deciding structural congruence: two
    /// configurations are congruent iff their keys are equal. Restricted
    /// names are erased to positional indices assigned in the order the
    /// (name-erased, sorted) components first mention them.
    pub fn canonical_key(&self) -> String {
        let restricted: BTreeSet<RtName> = self.restricted.iter().cloned().collect();
        // first pass: serialize with restricted names fully erased
        let mut erased: Vec<(String, usize)> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (serialize_node(n, &restricted, None), i))
            .collect();
        erased.sort();
        // assign indices by first occurrence in the erased order
        let mut index: BTreeMap<RtName, usize> = BTreeMap::new();
        for (_, i) in &erased {
            for name in node_names_in_order(&self.nodes[*i]) {
                if restricted.contains(&name) && !index.contains_key(&name) {
                    let next = index.len();
                    index.insert(name, next);
                }
            }
        }
        // second pass: serialize with indices, then sort
        let mut parts: Vec<String> = self
            .nodes
            .iter()
            .map(|n| serialize_node(n, &restricted, Some(&index)))
            .collect();
        parts.sort();
        parts.join(" | ")
    }

    /// Hash of the canonical key, stable across runs (FNV-1a).
    pub fn state_hash(&self) -> String {
        let key = self.canonical_key();
        let mut h: u64 = 0xcbf29ce484222325;
        for b in key.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }

    pub fn congruent(&self, other: &Configuration) -> bool {
        self.canonical_key() == other.canonical_key()
    }

    /// A configuration is stable when no synchronization is half done: all
    /// monitor tags empty and every queue's future half empty.
    pub fn is_stable(&self) -> bool {
        self.nodes.iter().all(|n| match n {
            Node::Monitor(m) => m.tag == Tag::Empty,
            Node::Queue(q) => q.future.is_empty(),
            _ => true,
        })
    }

    /// Participants ready to output or select under an empty-tagged monitor
    /// whose cursor faces the matching protocol action.
    pub fn barbs(&self) -> BTreeSet<Participant> {
        let mut out = BTreeSet::new();
        for n in &self.nodes {
            if let Node::Running(r) = n {
                for comp in r.body.components() {
                    let (chan, is_send, is_select) = match &comp {
                        Process::Send { chan, .. } => (chan, true, false),
                        Process::Select { chan, .. } => (chan, false, true),
                        _ => continue,
                    };
                    let ChannelRef::Endpoint(s, p) = chan else {
                        continue;
                    };
                    let Some(m) = self.monitor(s, p) else {
                        continue;
                    };
                    if m.tag != Tag::Empty {
                        continue;
                    }
                    let (_, head) = m.history.peek();
                    let matches = match head {
                        LocalType::Send { .. } => is_send,
                        LocalType::Select { .. } => is_select,
                        _ => false,
                    };
                    if matches {
                        out.insert(p.clone());
                    }
                }
            }
        }
        out
    }

    pub fn monitor(&self, s: &SessionName, p: &Participant) -> Option<&Monitor> {
        self.nodes.iter().find_map(|n| match n {
            Node::Monitor(m) if &m.session == s && &m.participant == p => Some(m),
            _ => None,
        })
    }

    pub fn queue(&self, s: &SessionName) -> Option<&SessionQueue> {
        self.nodes.iter().find_map(|n| match n {
            Node::Queue(q) if &q.session == s => Some(q),
            _ => None,
        })
    }

    /// All session names present in the configuration.
    pub fn sessions(&self) -> BTreeSet<SessionName> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Queue(q) => Some(q.session.clone()),
                Node::Monitor(m) => Some(m.session.clone()),
                Node::Running(r) => Some(r.session.clone()),
                _ => None,
            })
            .collect()
    }

    /// Participants owning a monitor in some session.
    pub fn session_participants(&self) -> BTreeSet<Participant> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Monitor(m) => Some(m.participant.clone()),
                _ => None,
            })
            .collect()
    }
}

/// Messages with different senders and different receivers may be swapped
/// silently; this picks the least representative of that equivalence class
/// (greedily choosing, among the messages movable to the front, the one
/// with the smallest rendering).
pub fn canonical_half(msgs: &[Msg]) -> Vec<Msg> {
    let mut remaining: Vec<Msg> = msgs.to_vec();
    let mut out = Vec::with_capacity(remaining.len());
    while !remaining.is_empty() {
        let mut best: Option<(usize, String)> = None;
        for (i, m) in remaining.iter().enumerate() {
            let movable = remaining[..i]
                .iter()
                .all(|e| e.from != m.from && e.to != m.to);
            if !movable {
                continue;
            }
            let key = format!("{}|{}|{:?}", m.from, m.to, m.payload);
            match &best {
                None => best = Some((i, key)),
                Some((_, bk)) if key < *bk => best = Some((i, key)),
                _ => {}
            }
        }
        let (i, _) = best.expect("the first message is always movable");
        out.push(remaining.remove(i));
    }
    out
}

/// True iff one queue half can be reordered into the other by adjacent
/// swaps of messages with different senders and different receivers.
pub fn queue_halves_equivalent(a: &[Msg], b: &[Msg]) -> bool {
    canonical_half(a) == canonical_half(b)
}

/// Index of the unique message satisfying `pred` that can be moved to the
/// front of the half by silent swaps (none exists when an earlier message
/// shares its sender or receiver).
pub fn movable_to_front(msgs: &[Msg], pred: impl Fn(&Msg) -> bool) -> Option<usize> {
    msgs.iter().enumerate().position(|(i, m)| {
        pred(m)
            && msgs[..i]
                .iter()
                .all(|e| e.from != m.from && e.to != m.to)
    })
}

/// Index of the unique message satisfying `pred` movable to the back.
pub fn movable_to_back(msgs: &[Msg], pred: impl Fn(&Msg) -> bool) -> Option<usize> {
    (0..msgs.len()).rev().find(|&i| {
        let m = &msgs[i];
        pred(m)
            && msgs[i + 1..]
                .iter()
                .all(|e| e.from != m.from && e.to != m.to)
    })
}

/// Participant identities occurring in bodies of abstraction messages
/// addressed to `p` in the queue half `h`.
pub fn roles_in_queue(p: &Participant, h: &[Msg]) -> BTreeSet<Participant> {
    let mut out = BTreeSet::new();
    for m in h {
        if &m.to == p {
            if let Payload::Value(ValueExpr::Abstraction { body, .. }) = &m.payload {
                out.extend(body.participants_mentioned());
            }
        }
    }
    out
}

fn collect_chan_names(c: &ChannelRef, used: &mut BTreeSet<RtName>) {
    if let ChannelRef::Endpoint(s, _) = c {
        used.insert(RtName::Session(s.clone()));
    }
}

fn collect_process_names(p: &Process, used: &mut BTreeSet<RtName>) {
    match p {
        Process::Send { chan, value, cont } => {
            collect_chan_names(chan, used);
            collect_value_names(value, used);
            collect_process_names(cont, used);
        }
        Process::Recv { chan, cont, .. } => {
            collect_chan_names(chan, used);
            collect_process_names(cont, used);
        }
        Process::Select { chan, branches } | Process::Branch { chan, branches } => {
            collect_chan_names(chan, used);
            for (_, b) in branches {
                collect_process_names(b, used);
            }
        }
        Process::Par(a, b) => {
            collect_process_names(a, used);
            collect_process_names(b, used);
        }
        Process::Rec { body, .. } | Process::Restrict { body, .. } => {
            collect_process_names(body, used)
        }
        Process::Apply { func, arg } => {
            collect_value_names(func, used);
            if let NameExpr::Endpoint(s, _) = arg {
                used.insert(RtName::Session(s.clone()));
            }
        }
        Process::PVar(_) | Process::Nil => {}
    }
}

fn collect_value_names(v: &ValueExpr, used: &mut BTreeSet<RtName>) {
    if let ValueExpr::Abstraction { body, .. } = v {
        collect_process_names(body, used);
    }
}

/// Names a node mentions, in serialization order; used for positional
/// renaming of restricted names.
fn node_names_in_order(n: &Node) -> Vec<RtName> {
    let mut out = Vec::new();
    match n {
        Node::Service(_) => {}
        Node::Running(r) => {
            out.push(RtName::Loc(r.loc.clone()));
            out.push(RtName::Session(r.session.clone()));
        }
        Node::Monitor(m) => {
            out.push(RtName::Session(m.session.clone()));
            for f in &m.history.frames {
                match f {
                    LocalFrame::Key(k) => out.push(RtName::Key(k.clone())),
                    LocalFrame::Split {
                        parent,
                        left,
                        right,
                    } => {
                        out.push(RtName::Loc(parent.clone()));
                        out.push(RtName::Loc(left.clone()));
                        out.push(RtName::Loc(right.clone()));
                    }
                    _ => {}
                }
            }
        }
        Node::Queue(q) => out.push(RtName::Session(q.session.clone())),
        Node::RunFun(r) => {
            out.push(RtName::Key(r.key.clone()));
            out.push(RtName::Loc(r.loc.clone()));
        }
    }
    out
}

fn rt_display(
    name: &RtName,
    restricted: &BTreeSet<RtName>,
    index: Option<&BTreeMap<RtName, usize>>,
) -> String {
    if restricted.contains(name) {
        match index {
            None => "#".to_string(),
            Some(ix) => match ix.get(name) {
                Some(i) => format!("#{i}"),
                None => "#?".to_string(),
            },
        }
    } else {
        name.to_string()
    }
}

fn serialize_node(
    n: &Node,
    restricted: &BTreeSet<RtName>,
    index: Option<&BTreeMap<RtName, usize>>,
) -> String {
    let session =
        |s: &SessionName| rt_display(&RtName::Session(s.clone()), restricted, index);
    let locd = |l: &Location| rt_display(&RtName::Loc(l.clone()), restricted, index);
    let keyd = |k: &KeyName| rt_display(&RtName::Key(k.clone()), restricted, index);
    // processes may mention restricted session names in endpoints; erase
    // them through a canonical print of a renamed copy
    let proc = |p: &Process| canonical_process(&rename_sessions(p, restricted, index));
    let value = |v: &ValueExpr| match v {
        ValueExpr::Abstraction { param, body } => {
            let renamed = ValueExpr::Abstraction {
                param: param.clone(),
                body: Box::new(rename_sessions(body, restricted, index)),
            };
            let mut s = String::new();
            s.push_str(&format!("{renamed}"));
            s
        }
        other => other.to_string(),
    };
    match n {
        Node::Service(s) => format!(
            "svc({:?},{},{},{},{},{})",
            s.kind,
            s.loc,
            s.shared,
            s.participant,
            canonical_ltype(&s.annot),
            canonical_process(&s.body)
        ),
        Node::Running(r) => {
            let stack: Vec<String> = r
                .stack
                .iter()
                .map(|e| match e {
                    StackEntry::Select { chan, branches } => format!(
                        "sel({},{})",
                        chan_display(chan, restricted, index),
                        branches_display(branches, restricted, index)
                    ),
                    StackEntry::Branch { chan, branches } => format!(
                        "bra({},{})",
                        chan_display(chan, restricted, index),
                        branches_display(branches, restricted, index)
                    ),
                })
                .collect();
            format!(
                "run({}[{}],{},init={},stack=[{}],{})",
                locd(&r.loc),
                r.participant,
                session(&r.session),
                r.initiator,
                stack.join(";"),
                proc(&r.body)
            )
        }
        Node::Monitor(m) => {
            let frames: Vec<String> = m
                .history
                .frames
                .iter()
                .map(|f| match f {
                    LocalFrame::Action(ActionPrefix::Send { peer, payload }) => {
                        format!("{peer}!<{payload}>")
                    }
                    LocalFrame::Action(ActionPrefix::Recv { peer, payload }) => {
                        format!("{peer}?<{payload}>")
                    }
                    LocalFrame::Select {
                        peer,
                        chosen,
                        others,
                    } => format!("{peer}+[{chosen}|{}]", type_branches(others)),
                    LocalFrame::Branch {
                        peer,
                        chosen,
                        others,
                    } => format!("{peer}&[{chosen}|{}]", type_branches(others)),
                    LocalFrame::Key(k) => format!("key({})", keyd(k)),
                    LocalFrame::Split {
                        parent,
                        left,
                        right,
                    } => format!("split({},{},{})", locd(parent), locd(left), locd(right)),
                    LocalFrame::Unfold { .. } => "unfold".to_string(),
                })
                .collect();
            let store: Vec<String> = m
                .store
                .iter()
                .map(|(k, v)| format!("{k}={}", value(v)))
                .collect();
            format!(
                "mon({}[{}],tag={:?},past=[{}],future={},vars=[{}],store={{{}}})",
                session(&m.session),
                m.participant,
                m.tag,
                frames.join(";"),
                canonical_ltype(&m.history.future),
                m.tracked
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
                store.join(",")
            )
        }
        Node::Queue(q) => {
            let half = |msgs: &[Msg]| {
                canonical_half(msgs)
                    .iter()
                    .map(|m| {
                        format!(
                            "({},{},{})",
                            m.from,
                            m.to,
                            match &m.payload {
                                Payload::Value(v) => value(v),
                                Payload::Label(l) => format!("#{l}"),
                            }
                        )
                    })
                    .collect::<Vec<_>>()
                    .join(",")
            };
            format!(
                "queue({},past=[{}],future=[{}])",
                session(&q.session),
                half(&q.past),
                half(&q.future)
            )
        }
        Node::RunFun(r) => format!(
            "fun({},{}({}),{})",
            keyd(&r.key),
            value(&r.func),
            match &r.arg {
                NameExpr::Endpoint(s, p) => format!("{}[{}]", session(s), p),
                other => other.to_string(),
            },
            locd(&r.loc)
        ),
    }
}

fn chan_display(
    c: &ChannelRef,
    restricted: &BTreeSet<RtName>,
    index: Option<&BTreeMap<RtName, usize>>,
) -> String {
    match c {
        ChannelRef::Endpoint(s, p) => format!(
            "{}[{}]",
            rt_display(&RtName::Session(s.clone()), restricted, index),
            p
        ),
        ChannelRef::Var(v) => v.to_string(),
    }
}

fn branches_display(
    branches: &[(Label, Process)],
    restricted: &BTreeSet<RtName>,
    index: Option<&BTreeMap<RtName, usize>>,
) -> String {
    let mut items: Vec<String> = branches
        .iter()
        .map(|(l, p)| {
            format!(
                "{l}:{}",
                canonical_process(&rename_sessions(p, restricted, index))
            )
        })
        .collect();
    items.sort();
    items.join(",")
}

fn type_branches(bs: &Branches<LocalType>) -> String {
    let mut items: Vec<String> = bs
        .iter()
        .map(|(l, t)| format!("{l}:{}", canonical_ltype(t)))
        .collect();
    items.sort();
    items.join(",")
}

/// Local-type serialization with branch maps sorted by label, so congruence
/// ignores branch order.
pub fn canonical_ltype(t: &LocalType) -> String {
    match t {
        LocalType::Send {
            peer,
            payload,
            cont,
        } => format!("{peer}!<{payload}>.{}", canonical_ltype(cont)),
        LocalType::Recv {
            peer,
            payload,
            cont,
        } => format!("{peer}?<{payload}>.{}", canonical_ltype(cont)),
        LocalType::Select { peer, branches } => {
            format!("{peer}+{{{}}}", type_branches(branches))
        }
        LocalType::Branch { peer, branches } => {
            format!("{peer}&{{{}}}", type_branches(branches))
        }
        LocalType::Rec { var, body } => format!("rec {var}.{}", canonical_ltype(body)),
        LocalType::Var(v) => v.to_string(),
        LocalType::End => "end".to_string(),
    }
}

/// Rewrites restricted session names inside a process to their positional
/// stand-ins so that the canonical print is alpha-insensitive.
fn rename_sessions(
    p: &Process,
    restricted: &BTreeSet<RtName>,
    index: Option<&BTreeMap<RtName, usize>>,
) -> Process {
    let sessions: Vec<SessionName> = restricted
        .iter()
        .filter_map(|n| match n {
            RtName::Session(s) => Some(s.clone()),
            _ => None,
        })
        .collect();
    let mut out = p.clone();
    for s in sessions {
        let stand_in = SessionName::new(rt_display(
            &RtName::Session(s.clone()),
            restricted,
            index,
        ));
        out = replace_session(&out, &s, &stand_in);
    }
    out
}

fn replace_session(p: &Process, from: &SessionName, to: &SessionName) -> Process {
    let chan = |c: &ChannelRef| match c {
        ChannelRef::Endpoint(s, part) if s == from => {
            ChannelRef::Endpoint(to.clone(), part.clone())
        }
        other => other.clone(),
    };
    match p {
        Process::Send {
            chan: c,
            value,
            cont,
        } => Process::Send {
            chan: chan(c),
            value: replace_session_value(value, from, to),
            cont: Box::new(replace_session(cont, from, to)),
        },
        Process::Recv { chan: c, var, cont } => Process::Recv {
            chan: chan(c),
            var: var.clone(),
            cont: Box::new(replace_session(cont, from, to)),
        },
        Process::Select { chan: c, branches } => Process::Select {
            chan: chan(c),
            branches: branches
                .iter()
                .map(|(l, b)| (l.clone(), replace_session(b, from, to)))
                .collect(),
        },
        Process::Branch { chan: c, branches } => Process::Branch {
            chan: chan(c),
            branches: branches
                .iter()
                .map(|(l, b)| (l.clone(), replace_session(b, from, to)))
                .collect(),
        },
        Process::Par(a, b) => Process::Par(
            Box::new(replace_session(a, from, to)),
            Box::new(replace_session(b, from, to)),
        ),
        Process::Rec { var, body } => Process::Rec {
            var: var.clone(),
            body: Box::new(replace_session(body, from, to)),
        },
        Process::Restrict { name, body } => Process::Restrict {
            name: name.clone(),
            body: Box::new(replace_session(body, from, to)),
        },
        Process::Apply { func, arg } => Process::Apply {
            func: replace_session_value(func, from, to),
            arg: match arg {
                NameExpr::Endpoint(s, part) if s == from => {
                    NameExpr::Endpoint(to.clone(), part.clone())
                }
                other => other.clone(),
            },
        },
        Process::PVar(_) | Process::Nil => p.clone(),
    }
}

fn replace_session_value(v: &ValueExpr, from: &SessionName, to: &SessionName) -> ValueExpr {
    match v {
        ValueExpr::Abstraction { param, body } => ValueExpr::Abstraction {
            param: param.clone(),
            body: Box::new(replace_session(body, from, to)),
        },
        other => other.clone(),
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.restricted.is_empty() {
            write!(
                f,
                "(new {})",
                self.restricted
                    .iter()
                    .map(|n| n.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            )?;
            writeln!(f)?;
        }
        if self.nodes.is_empty() {
            return write!(f, "0");
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  {}", display_node(n))?;
        }
        Ok(())
    }
}

/// Human-readable rendering of one component (real names, source order).
pub fn display_node(n: &Node) -> String {
    match n {
        Node::Service(s) => {
            let k = match s.kind {
                ServiceKind::Request => "request",
                ServiceKind::Accept => "accept",
            };
            format!(
                "{}{{ {} {}({}: {}) . {} }}",
                s.loc, k, s.shared, s.var, s.participant, s.body
            )
        }
        Node::Running(r) => {
            let stack = if r.stack.is_empty() {
                "0".to_string()
            } else {
                r.stack
                    .iter()
                    .map(|e| match e {
                        StackEntry::Select { chan, branches } => {
                            let bs: Vec<String> =
                                branches.iter().map(|(l, p)| format!("{l}: {p}")).collect();
                            format!("{chan}+{{{}}}", bs.join(", "))
                        }
                        StackEntry::Branch { chan, branches } => {
                            let bs: Vec<String> =
                                branches.iter().map(|(l, p)| format!("{l}: {p}")).collect();
                            format!("{chan}&{{{}}}", bs.join(", "))
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            format!("{}[{}] << {} ; {} >>", r.loc, r.participant, stack, r.body)
        }
        Node::Monitor(m) => {
            let tag = match m.tag {
                Tag::Empty => "<>",
                Tag::Full => "<#>",
            };
            let mut past = String::new();
            for fjson in &m.history.frames {
                match fjson {
                    LocalFrame::Action(ActionPrefix::Send { peer, payload }) => {
                        past.push_str(&format!("{peer}!<{payload}>."));
                    }
                    LocalFrame::Action(ActionPrefix::Recv { peer, payload }) => {
                        past.push_str(&format!("{peer}?<{payload}>."));
                    }
                    LocalFrame::Select { peer, chosen, .. } => {
                        past.push_str(&format!("{peer}+[{chosen}]."));
                    }
                    LocalFrame::Branch { peer, chosen, .. } => {
                        past.push_str(&format!("{peer}&[{chosen}]."));
                    }
                    LocalFrame::Key(k) => past.push_str(&format!("{k}.")),
                    LocalFrame::Split {
                        parent,
                        left,
                        right,
                    } => past.push_str(&format!("({parent},{left},{right}).")),
                    LocalFrame::Unfold { .. } => {}
                }
            }
            let store: Vec<String> = m
                .store
                .iter()
                .map(|(k, v)| format!("{k} -> {v}"))
                .collect();
            format!(
                "{}[{}]{} |- {}^^ {} ; vars {:?} ; {{{}}}",
                m.session,
                m.participant,
                tag,
                past,
                m.history.future,
                m.tracked.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
                store.join(", ")
            )
        }
        Node::Queue(q) => {
            let half = |msgs: &[Msg]| {
                if msgs.is_empty() {
                    "e".to_string()
                } else {
                    msgs.iter()
                        .map(|m| {
                            format!(
                                "({},{},{})",
                                m.from,
                                m.to,
                                match &m.payload {
                                    Payload::Value(v) => v.to_string(),
                                    Payload::Label(l) => l.to_string(),
                                }
                            )
                        })
                        .collect::<Vec<_>>()
                        .join(" o ")
                }
            };
            format!("{}( {} * {} )", q.session, half(&q.past), half(&q.future))
        }
        Node::RunFun(r) => format!("{}[ {}({}), {} ]", r.key, r.func, r.arg, r.loc),
    }
}

/// Convenience constructor for literal payload values in tests and
/// bundled programs.
pub fn str_lit(s: &str) -> ValueExpr {
    ValueExpr::Lit(Literal::Str(s.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn part(s: &str) -> Participant {
        Participant::new(s)
    }

    #[test]
    fn store_update_and_reverse() {
        let empty = Store::new();
        let s1 = empty
            .update(&Var::new("x"), ValueExpr::Shared(SharedName::new("d")))
            .unwrap();
        let s2 = s1.update(&Var::new("t"), str_lit("Logicomix")).unwrap();
        assert_eq!(s2.len(), 2);
        // duplicate update is an error
        assert_eq!(
            s1.update(&Var::new("x"), str_lit("e")),
            Err(StoreError::DuplicateBinding(Var::new("x")))
        );
        // reverse removes one binding, absent is a no-op
        assert_eq!(s2.reverse(&Var::new("t")), s1);
        assert_eq!(empty.reverse(&Var::new("y")), empty);
        assert_eq!(s1.reverse(&Var::new("x")), empty);
        // reverse of update is the identity
        assert_eq!(
            s1.update(&Var::new("q"), str_lit("v"))
                .unwrap()
                .reverse(&Var::new("q")),
            s1
        );
    }

    #[test]
    fn roles_in_queue_finds_abstraction_participants() {
        let s = SessionName::new("s");
        let thunk_body = Process::send(
            ChannelRef::Endpoint(s.clone(), part("B")),
            str_lit("addr"),
            Process::recv(ChannelRef::Endpoint(s.clone(), part("B")), "d", Process::Nil),
        );
        let h = vec![
            Msg {
                from: part("B"),
                to: part("C"),
                payload: Payload::Value(Process::thunk(thunk_body)),
            },
            Msg {
                from: part("A"),
                to: part("C"),
                payload: Payload::Value(str_lit("plain")),
            },
        ];
        assert_eq!(
            roles_in_queue(&part("C"), &h),
            [part("B")].into_iter().collect()
        );
        assert!(roles_in_queue(&part("p"), &[]).is_empty());
        // no abstractions addressed to A
        assert!(roles_in_queue(&part("A"), &h).is_empty());
    }

    #[test]
    fn normalize_is_idempotent_and_order_insensitive() {
        let q = Node::Queue(SessionQueue {
            session: SessionName::new("s0"),
            past: vec![],
            future: vec![],
        });
        let m = Node::Monitor(Monitor {
            session: SessionName::new("s0"),
            participant: part("A"),
            history: HistoryLocal::start(LocalType::End),
            tracked: vec![],
            store: Store::new(),
            tag: Tag::Empty,
        });
        let c1 = Configuration::new(
            vec![RtName::Session(SessionName::new("s0"))],
            vec![q.clone(), m.clone()],
        );
        let c2 = Configuration::new(
            vec![RtName::Session(SessionName::new("s0"))],
            vec![m, q],
        );
        assert_eq!(c1, c2);
        let mut c3 = c1.clone();
        c3.normalize();
        assert_eq!(c1, c3);
    }

    #[test]
    fn unused_restriction_is_dropped() {
        let c = Configuration::new(vec![RtName::Session(SessionName::new("s9"))], vec![]);
        assert!(c.restricted.is_empty());
        assert_eq!(c.canonical_key(), "");
    }

    #[test]
    fn congruence_is_alpha_insensitive_on_restricted_names() {
        let mk = |sname: &str| {
            let s = SessionName::new(sname);
            Configuration::new(
                vec![RtName::Session(s.clone())],
                vec![
                    Node::Queue(SessionQueue {
                        session: s.clone(),
                        past: vec![],
                        future: vec![],
                    }),
                    Node::Monitor(Monitor {
                        session: s,
                        participant: part("A"),
                        history: HistoryLocal::start(LocalType::End),
                        tracked: vec![],
                        store: Store::new(),
                        tag: Tag::Empty,
                    }),
                ],
            )
        };
        let a = mk("s0");
        let b = mk("s7");
        assert_ne!(a, b);
        assert!(a.congruent(&b));
        // free (unrestricted) names are distinguished
        let mut c = mk("s0");
        c.restricted.clear();
        let mut d = mk("s7");
        d.restricted.clear();
        assert!(!c.congruent(&d));
    }

    #[test]
    fn stability_needs_empty_tags_and_future() {
        let s = SessionName::new("s0");
        let mk = |tag, future: Vec<Msg>| {
            Configuration::new(
                vec![RtName::Session(s.clone())],
                vec![
                    Node::Monitor(Monitor {
                        session: s.clone(),
                        participant: part("A"),
                        history: HistoryLocal::start(LocalType::End),
                        tracked: vec![],
                        store: Store::new(),
                        tag,
                    }),
                    Node::Queue(SessionQueue {
                        session: s.clone(),
                        past: vec![],
                        future,
                    }),
                ],
            )
        };
        assert!(mk(Tag::Empty, vec![]).is_stable());
        assert!(!mk(Tag::Full, vec![]).is_stable());
        let msg = Msg {
            from: part("A"),
            to: part("B"),
            payload: Payload::Value(str_lit("v")),
        };
        assert!(!mk(Tag::Empty, vec![msg]).is_stable());
        // a configuration with no sessions at all is stable
        assert!(Configuration::default().is_stable());
    }

    #[test]
    fn history_advance_and_retreat_roundtrip() {
        let t = LocalType::send(
            "S",
            ValueType::Str,
            LocalType::recv("S", ValueType::Nat, LocalType::End),
        );
        let h0 = HistoryLocal::start(t.clone());
        let (pending, head) = h0.peek();
        assert!(pending.is_empty());
        let LocalType::Send { peer, payload, cont } = head else {
            panic!()
        };
        let h1 = h0.advance(
            pending,
            LocalFrame::Action(ActionPrefix::Send {
                peer: peer.clone(),
                payload: payload.clone(),
            }),
            *cont,
        );
        assert!(!h1.at_start());
        let h0b = h1.retreat(t.clone());
        assert_eq!(h0b, h0);
    }

    #[test]
    fn history_unfolds_recursion_with_frames() {
        let t = LocalType::rec(
            "X",
            LocalType::send(
                "q",
                ValueType::Nat,
                LocalType::Var(crate::ident::TypeVar::new("X")),
            ),
        );
        let h0 = HistoryLocal::start(t.clone());
        let (pending, head) = h0.peek();
        assert_eq!(pending.len(), 1);
        assert!(matches!(head, LocalType::Send { .. }));
        let LocalType::Send { peer, payload, cont } = head else {
            panic!()
        };
        let h1 = h0.advance(
            pending,
            LocalFrame::Action(ActionPrefix::Send {
                peer,
                payload,
            }),
            *cont,
        );
        // retreat rebuilds the folded start exactly
        let rebuilt = LocalType::send(
            "q",
            ValueType::Nat,
            t.clone(),
        );
        let h0b = h1.retreat(rebuilt);
        assert_eq!(h0b, h0);
    }
}
