//! Decoupled reduction over configurations: sends, receives, selections,
//! branchings, applications, and spawns move forward one half-step at a
//! time; rollbacks mark the two endpoints of a committed synchronization and
//! then undo each half separately.
//!
//! All rules operate on the flat normal form, which closes them under
//! parallel composition, restriction, and structural congruence. Redexes
//! are enumerated in a fixed order so that exploration, menus, and dumps
//! are reproducible run to run.

use crate::ident::{KeyName, Label, Location, Participant, SessionName, SharedName, Var};
use crate::process::{eval_value, AppliedArg, ChannelRef, NameExpr, Process, ValueExpr};
use crate::runtime::{
    roles_in_queue, ActionPrefix, Configuration, HistoryLocal, LocalFrame, Monitor, Msg, Node,
    Payload, RtName, RunFun, Running, Service, ServiceKind, SessionQueue, Store, StackEntry, Tag,
};
use crate::types::{project, type_equal_local, GlobalType, LocalType};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use thiserror::Error;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum RuleName {
    Init,
    Out,
    In,
    Sel,
    Bra,
    Beta,
    Spawn,
    RInit,
    RollS,
    RollC,
    ROut,
    RIn,
    RBra,
    RSel,
    RBeta,
    RSpawn,
}

impl RuleName {
    pub fn is_forward(self) -> bool {
        matches!(
            self,
            RuleName::Init
                | RuleName::Out
                | RuleName::In
                | RuleName::Sel
                | RuleName::Bra
                | RuleName::Beta
                | RuleName::Spawn
        )
    }
}

impl fmt::Display for RuleName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RuleName::Init => "init",
            RuleName::Out => "out",
            RuleName::In => "in",
            RuleName::Sel => "sel",
            RuleName::Bra => "bra",
            RuleName::Beta => "beta",
            RuleName::Spawn => "spawn",
            RuleName::RInit => "rInit",
            RuleName::RollS => "rollS",
            RuleName::RollC => "rollC",
            RuleName::ROut => "rOut",
            RuleName::RIn => "rIn",
            RuleName::RBra => "rBra",
            RuleName::RSel => "rSel",
            RuleName::RBeta => "rBeta",
            RuleName::RSpawn => "rSpawn",
        };
        f.write_str(s)
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum Subject {
    Part(Participant),
    Loc(Location),
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subject::Part(p) => write!(f, "{p}"),
            Subject::Loc(l) => write!(f, "{l}"),
        }
    }
}

/// One enabled rule instance. Identity is carried by the rule, session,
/// location, subjects, and label; witness indices record where in the
/// normalized configuration the participating nodes were found.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Redex {
    pub rule: RuleName,
    pub session: Option<SessionName>,
    pub shared: Option<SharedName>,
    pub loc: Option<Location>,
    pub subjects: Vec<Subject>,
    pub label: Option<Label>,
    pub witness: Vec<usize>,
}

impl Redex {
    fn sort_key(&self) -> (u8, String, String, String, String) {
        (
            self.rule as u8,
            self.session
                .as_ref()
                .map(|s| s.to_string())
                .unwrap_or_default(),
            self.loc.as_ref().map(|l| l.to_string()).unwrap_or_default(),
            self.subjects
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
            self.label
                .as_ref()
                .map(|l| l.to_string())
                .unwrap_or_default(),
        )
    }

    /// Compact description, e.g. `out@A` or `sel@B:ok`.
    pub fn describe(&self) -> String {
        let mut s = self.rule.to_string();
        if !self.subjects.is_empty() {
            s.push('@');
            s.push_str(
                &self
                    .subjects
                    .iter()
                    .map(|x| x.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            );
        }
        if let Some(l) = &self.label {
            s.push(':');
            s.push_str(l.as_str());
        }
        s
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StepError {
    #[error("stale redex: {0}")]
    StaleRedex(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExploreError {
    #[error("state budget of {0} states exceeded")]
    StateBudgetExceeded(usize),
}

/// Declared global types a system may initiate sessions against.
#[derive(Clone, Debug, Default)]
pub struct Program {
    pub globals: Vec<(String, GlobalType)>,
}

impl Program {
    pub fn lookup(&self, name: &str) -> Option<&GlobalType> {
        self.globals
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, g)| g)
    }
}

/// The stepping engine: pure functions over configurations, parameterized
/// by the declared global types (session initiation checks them).
pub struct Engine {
    pub program: Program,
}

/// Direction selector for exploration.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Direction {
    Forward,
    Backward,
    Both,
}

impl Engine {
    pub fn new(program: Program) -> Engine {
        Engine { program }
    }

    /// Every enabled forward rule instance, deterministically ordered.
    pub fn enumerate_forward(&self, m: &Configuration) -> Vec<Redex> {
        let mut out = Vec::new();
        self.enumerate_init(m, &mut out);
        for (i, node) in m.nodes.iter().enumerate() {
            let Node::Running(r) = node else { continue };
            let comps = r.body.components();
            if comps.len() >= 2 {
                out.push(Redex {
                    rule: RuleName::Spawn,
                    session: Some(r.session.clone()),
                    shared: None,
                    loc: Some(r.loc.clone()),
                    subjects: vec![
                        Subject::Loc(r.loc.clone()),
                        Subject::Part(r.participant.clone()),
                    ],
                    label: None,
                    witness: vec![i],
                });
                continue;
            }
            let Some(active) = comps.into_iter().next() else {
                continue;
            };
            match &active {
                Process::Send { chan, value, .. } => {
                    let ChannelRef::Endpoint(s, p) = chan else {
                        continue;
                    };
                    let Some((mi, mon)) = self.find_monitor(m, s, p) else {
                        continue;
                    };
                    let Some((qi, queue)) = self.find_queue(m, s) else {
                        continue;
                    };
                    if mon.tag != Tag::Empty || !location_premise(p, r, queue) {
                        continue;
                    }
                    let (_, head) = mon.history.peek();
                    let LocalType::Send { .. } = head else {
                        continue;
                    };
                    if eval_value(value, &mon.store).is_err() {
                        continue;
                    }
                    let LocalType::Send { peer, .. } = head else {
                        unreachable!()
                    };
                    out.push(Redex {
                        rule: RuleName::Out,
                        session: Some(s.clone()),
                        shared: None,
                        loc: Some(r.loc.clone()),
                        subjects: vec![Subject::Part(p.clone()), Subject::Part(peer)],
                        label: None,
                        witness: vec![i, mi, qi],
                    });
                }
                Process::Recv { chan, .. } => {
                    let ChannelRef::Endpoint(s, p) = chan else {
                        continue;
                    };
                    let Some((mi, mon)) = self.find_monitor(m, s, p) else {
                        continue;
                    };
                    let Some((qi, queue)) = self.find_queue(m, s) else {
                        continue;
                    };
                    if mon.tag != Tag::Empty || !location_premise(p, r, queue) {
                        continue;
                    }
                    let (_, head) = mon.history.peek();
                    let LocalType::Recv { peer, .. } = head else {
                        continue;
                    };
                    if movable_to_front(&queue.future, |m| {
                        m.from == peer && &m.to == p && matches!(m.payload, Payload::Value(_))
                    })
                    .is_none()
                    {
                        continue;
                    }
                    out.push(Redex {
                        rule: RuleName::In,
                        session: Some(s.clone()),
                        shared: None,
                        loc: Some(r.loc.clone()),
                        subjects: vec![Subject::Part(p.clone()), Subject::Part(peer)],
                        label: None,
                        witness: vec![i, mi, qi],
                    });
                }
                Process::Select { chan, branches } => {
                    let ChannelRef::Endpoint(s, p) = chan else {
                        continue;
                    };
                    let Some((mi, mon)) = self.find_monitor(m, s, p) else {
                        continue;
                    };
                    let Some((qi, queue)) = self.find_queue(m, s) else {
                        continue;
                    };
                    if mon.tag != Tag::Empty || !location_premise(p, r, queue) {
                        continue;
                    }
                    let (_, head) = mon.history.peek();
                    let LocalType::Select {
                        peer,
                        branches: tbranches,
                    } = head
                    else {
                        continue;
                    };
                    // the protocol's label set must be offered by the process
                    let offered: BTreeSet<&Label> = branches.iter().map(|(l, _)| l).collect();
                    if !tbranches.iter().all(|(l, _)| offered.contains(l)) {
                        continue;
                    }
                    for (w, _) in &tbranches {
                        out.push(Redex {
                            rule: RuleName::Sel,
                            session: Some(s.clone()),
                            shared: None,
                            loc: Some(r.loc.clone()),
                            subjects: vec![Subject::Part(p.clone()), Subject::Part(peer.clone())],
                            label: Some(w.clone()),
                            witness: vec![i, mi, qi],
                        });
                    }
                }
                Process::Branch { chan, branches } => {
                    let ChannelRef::Endpoint(s, p) = chan else {
                        continue;
                    };
                    let Some((mi, mon)) = self.find_monitor(m, s, p) else {
                        continue;
                    };
                    let Some((qi, queue)) = self.find_queue(m, s) else {
                        continue;
                    };
                    if mon.tag != Tag::Empty || !location_premise(p, r, queue) {
                        continue;
                    }
                    let (_, head) = mon.history.peek();
                    let LocalType::Branch {
                        peer,
                        branches: tbranches,
                    } = head
                    else {
                        continue;
                    };
                    let Some(ix) = movable_to_front(&queue.future, |m| {
                        m.from == peer && &m.to == p && matches!(m.payload, Payload::Label(_))
                    }) else {
                        continue;
                    };
                    let Payload::Label(w) = &queue.future[ix].payload else {
                        continue;
                    };
                    // the process must offer the label and no more than the
                    // protocol allows
                    let tset: BTreeSet<&Label> = tbranches.iter().map(|(l, _)| l).collect();
                    if !branches.iter().any(|(l, _)| l == w)
                        || !branches.iter().all(|(l, _)| tset.contains(l))
                    {
                        continue;
                    }
                    out.push(Redex {
                        rule: RuleName::Bra,
                        session: Some(s.clone()),
                        shared: None,
                        loc: Some(r.loc.clone()),
                        subjects: vec![Subject::Part(p.clone()), Subject::Part(peer)],
                        label: Some(w.clone()),
                        witness: vec![i, mi, qi],
                    });
                }
                Process::Apply { func, arg } => {
                    let Some((mi, mon)) =
                        self.find_monitor(m, &r.session, &r.participant)
                    else {
                        continue;
                    };
                    if mon.tag != Tag::Empty {
                        continue;
                    }
                    let Ok(f) = eval_value(func, &mon.store) else {
                        continue;
                    };
                    if !matches!(f, ValueExpr::Abstraction { .. }) {
                        continue;
                    }
                    if let NameExpr::Var(v) = arg {
                        if mon.store.get(v).is_none() {
                            continue;
                        }
                    }
                    out.push(Redex {
                        rule: RuleName::Beta,
                        session: Some(r.session.clone()),
                        shared: None,
                        loc: Some(r.loc.clone()),
                        subjects: vec![
                            Subject::Loc(r.loc.clone()),
                            Subject::Part(r.participant.clone()),
                        ],
                        label: None,
                        witness: vec![i, mi],
                    });
                }
                _ => {}
            }
        }
        out.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        out
    }

    fn enumerate_init(&self, m: &Configuration, out: &mut Vec<Redex>) {
        let mut by_shared: HashMap<&SharedName, Vec<(usize, &Service)>> = HashMap::new();
        for (i, node) in m.nodes.iter().enumerate() {
            if let Node::Service(s) = node {
                by_shared.entry(&s.shared).or_default().push((i, s));
            }
        }
        let mut shareds: Vec<&SharedName> = by_shared.keys().cloned().collect();
        shareds.sort();
        for a in shareds {
            let services = &by_shared[a];
            let requests: Vec<_> = services
                .iter()
                .filter(|(_, s)| s.kind == ServiceKind::Request)
                .collect();
            if requests.len() != 1 {
                continue;
            }
            let participants: BTreeSet<Participant> =
                services.iter().map(|(_, s)| s.participant.clone()).collect();
            if participants.len() != services.len() {
                continue;
            }
            // the declared global type the annotations project from
            let matched = self.program.globals.iter().find(|(_, g)| {
                g.participants() == participants
                    && services.iter().all(|(_, s)| {
                        project(g, &s.participant)
                            .map(|t| type_equal_local(&t, &s.annot))
                            .unwrap_or(false)
                    })
            });
            if matched.is_none() {
                continue;
            }
            let mut witness: Vec<usize> = services.iter().map(|(i, _)| *i).collect();
            witness.sort();
            let mut subjects: Vec<Subject> = services
                .iter()
                .map(|(_, s)| Subject::Loc(s.loc.clone()))
                .collect();
            subjects.sort();
            out.push(Redex {
                rule: RuleName::Init,
                session: None,
                shared: Some(a.clone()),
                loc: None,
                subjects,
                label: None,
                witness,
            });
        }
    }

    /// Every enabled backward rule instance, deterministically ordered.
    pub fn enumerate_backward(&self, m: &Configuration) -> Vec<Redex> {
        let mut out = Vec::new();
        self.enumerate_rinit(m, &mut out);
        self.enumerate_rolls(m, &mut out);
        self.enumerate_undo_halves(m, &mut out);
        self.enumerate_rbeta_rspawn(m, &mut out);
        out.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        out
    }

    fn enumerate_rinit(&self, m: &Configuration, out: &mut Vec<Redex>) {
        for s in m.sessions() {
            let monitors: Vec<&Monitor> = m
                .nodes
                .iter()
                .filter_map(|n| match n {
                    Node::Monitor(mo) if mo.session == s => Some(mo),
                    _ => None,
                })
                .collect();
            let runnings: Vec<(usize, &Running)> = m
                .nodes
                .iter()
                .enumerate()
                .filter_map(|(i, n)| match n {
                    Node::Running(r) if r.session == s => Some((i, r)),
                    _ => None,
                })
                .collect();
            let Some(queue) = m.queue(&s) else { continue };
            if !queue.past.is_empty() || !queue.future.is_empty() {
                continue;
            }
            if monitors.is_empty() || monitors.len() != runnings.len() {
                continue;
            }
            let all_reset = monitors.iter().all(|mo| {
                mo.tag == Tag::Empty
                    && mo.history.at_start()
                    && mo.tracked.len() == 1
                    && mo.store.len() == 1
            });
            if !all_reset {
                continue;
            }
            // every monitored variable is bound to the same shared name
            let mut shared: Option<SharedName> = None;
            let mut ok = true;
            for mo in &monitors {
                match mo.store.get(&mo.tracked[0]) {
                    Some(ValueExpr::Shared(a)) => match &shared {
                        None => shared = Some(a.clone()),
                        Some(b) if b == a => {}
                        _ => {
                            ok = false;
                            break;
                        }
                    },
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok || shared.is_none() {
                continue;
            }
            // participants must pair up, stacks must be empty, exactly one
            // initiator must be present
            let mparts: BTreeSet<&Participant> =
                monitors.iter().map(|mo| &mo.participant).collect();
            let rparts: BTreeSet<&Participant> =
                runnings.iter().map(|(_, r)| &r.participant).collect();
            if mparts != rparts || !runnings.iter().all(|(_, r)| r.stack.is_empty()) {
                continue;
            }
            if runnings.iter().filter(|(_, r)| r.initiator).count() != 1 {
                continue;
            }
            // a declared protocol must cover exactly these participants
            let participants: BTreeSet<Participant> =
                mparts.iter().map(|p| (*p).clone()).collect();
            let matched = self.program.globals.iter().any(|(_, g)| {
                g.participants() == participants
                    && monitors.iter().all(|mo| {
                        project(g, &mo.participant)
                            .map(|t| type_equal_local(&t, &mo.history.future))
                            .unwrap_or(false)
                    })
            });
            if !matched {
                continue;
            }
            let mut subjects: Vec<Subject> = runnings
                .iter()
                .map(|(_, r)| Subject::Loc(r.loc.clone()))
                .collect();
            subjects.sort();
            let mut witness: Vec<usize> = runnings.iter().map(|(i, _)| *i).collect();
            witness.sort();
            out.push(Redex {
                rule: RuleName::RInit,
                session: Some(s.clone()),
                shared,
                loc: None,
                subjects,
                label: None,
                witness,
            });
        }
    }

    fn enumerate_rolls(&self, m: &Configuration, out: &mut Vec<Redex>) {
        for (i, node) in m.nodes.iter().enumerate() {
            let Node::Monitor(mp) = node else { continue };
            if mp.tag != Tag::Empty {
                continue;
            }
            match mp.history.last_frame() {
                // an input committed by p pairs with the matching output
                // committed by the peer
                Some(LocalFrame::Action(ActionPrefix::Recv { peer, payload })) => {
                    let Some((j, mq)) = self.find_monitor(m, &mp.session, peer) else {
                        continue;
                    };
                    if mq.tag != Tag::Empty {
                        continue;
                    }
                    let Some(LocalFrame::Action(ActionPrefix::Send {
                        peer: back,
                        payload: payload2,
                    })) = mq.history.last_frame()
                    else {
                        continue;
                    };
                    if back != &mp.participant
                        || !crate::types::value_type_equal(payload, payload2)
                    {
                        continue;
                    }
                    out.push(Redex {
                        rule: RuleName::RollS,
                        session: Some(mp.session.clone()),
                        shared: None,
                        loc: None,
                        subjects: vec![
                            Subject::Part(mp.participant.clone()),
                            Subject::Part(peer.clone()),
                        ],
                        label: None,
                        witness: vec![i, j],
                    });
                }
                Some(LocalFrame::Branch { peer, chosen, .. }) => {
                    let Some((j, mq)) = self.find_monitor(m, &mp.session, peer) else {
                        continue;
                    };
                    if mq.tag != Tag::Empty {
                        continue;
                    }
                    let Some(LocalFrame::Select {
                        peer: back,
                        chosen: chosen2,
                        ..
                    }) = mq.history.last_frame()
                    else {
                        continue;
                    };
                    if back != &mp.participant || chosen != chosen2 {
                        continue;
                    }
                    out.push(Redex {
                        rule: RuleName::RollC,
                        session: Some(mp.session.clone()),
                        shared: None,
                        loc: None,
                        subjects: vec![
                            Subject::Part(mp.participant.clone()),
                            Subject::Part(peer.clone()),
                        ],
                        label: Some(chosen.clone()),
                        witness: vec![i, j],
                    });
                }
                _ => {}
            }
        }
    }

    fn enumerate_undo_halves(&self, m: &Configuration, out: &mut Vec<Redex>) {
        for (mi, node) in m.nodes.iter().enumerate() {
            let Node::Monitor(mon) = node else { continue };
            if mon.tag != Tag::Full {
                continue;
            }
            let s = &mon.session;
            let p = &mon.participant;
            let Some((qi, queue)) = self.find_queue(m, s) else {
                continue;
            };
            match mon.history.last_frame() {
                Some(LocalFrame::Action(ActionPrefix::Send { peer, .. })) => {
                    if movable_to_front(&queue.future, |msg| {
                        &msg.from == p
                            && &msg.to == peer
                            && matches!(msg.payload, Payload::Value(_))
                    })
                    .is_none()
                    {
                        continue;
                    }
                    for (ri, r) in self.candidate_runnings(m, s, p, queue) {
                        out.push(Redex {
                            rule: RuleName::ROut,
                            session: Some(s.clone()),
                            shared: None,
                            loc: Some(r.loc.clone()),
                            subjects: vec![Subject::Part(p.clone()), Subject::Part(peer.clone())],
                            label: None,
                            witness: vec![ri, mi, qi],
                        });
                    }
                }
                Some(LocalFrame::Action(ActionPrefix::Recv { peer, .. })) => {
                    let Some(y) = mon.tracked.last() else {
                        continue;
                    };
                    let Some(stored) = mon.store.get(y) else {
                        continue;
                    };
                    if movable_to_back(&queue.past, |msg| {
                        &msg.from == peer
                            && &msg.to == p
                            && matches!(&msg.payload, Payload::Value(v) if v == stored)
                    })
                    .is_none()
                    {
                        continue;
                    }
                    for (ri, r) in self.candidate_runnings(m, s, p, queue) {
                        out.push(Redex {
                            rule: RuleName::RIn,
                            session: Some(s.clone()),
                            shared: None,
                            loc: Some(r.loc.clone()),
                            subjects: vec![Subject::Part(p.clone()), Subject::Part(peer.clone())],
                            label: None,
                            witness: vec![ri, mi, qi],
                        });
                    }
                }
                Some(LocalFrame::Select { peer, chosen, .. }) => {
                    if movable_to_front(&queue.future, |msg| {
                        &msg.from == p
                            && &msg.to == peer
                            && matches!(&msg.payload, Payload::Label(l) if l == chosen)
                    })
                    .is_none()
                    {
                        continue;
                    }
                    for (ri, r) in self.candidate_runnings(m, s, p, queue) {
                        let Some(StackEntry::Select { chan, .. }) = r.stack.last() else {
                            continue;
                        };
                        if chan != &ChannelRef::Endpoint(s.clone(), p.clone()) {
                            continue;
                        }
                        out.push(Redex {
                            rule: RuleName::RSel,
                            session: Some(s.clone()),
                            shared: None,
                            loc: Some(r.loc.clone()),
                            subjects: vec![Subject::Part(p.clone()), Subject::Part(peer.clone())],
                            label: Some(chosen.clone()),
                            witness: vec![ri, mi, qi],
                        });
                    }
                }
                Some(LocalFrame::Branch {
                    peer,
                    chosen,
                    others,
                }) => {
                    if movable_to_back(&queue.past, |msg| {
                        &msg.from == peer
                            && &msg.to == p
                            && matches!(&msg.payload, Payload::Label(l) if l == chosen)
                    })
                    .is_none()
                    {
                        continue;
                    }
                    for (ri, r) in self.candidate_runnings(m, s, p, queue) {
                        let Some(StackEntry::Branch { chan, branches }) = r.stack.last() else {
                            continue;
                        };
                        if chan != &ChannelRef::Endpoint(s.clone(), p.clone()) {
                            continue;
                        }
                        // stacked alternatives stay within the protocol's set
                        let tset: BTreeSet<&Label> =
                            others.iter().map(|(l, _)| l).collect();
                        if !branches.iter().all(|(l, _)| tset.contains(l)) {
                            continue;
                        }
                        out.push(Redex {
                            rule: RuleName::RBra,
                            session: Some(s.clone()),
                            shared: None,
                            loc: Some(r.loc.clone()),
                            subjects: vec![Subject::Part(p.clone()), Subject::Part(peer.clone())],
                            label: Some(chosen.clone()),
                            witness: vec![ri, mi, qi],
                        });
                    }
                }
                _ => {}
            }
        }
    }

    fn enumerate_rbeta_rspawn(&self, m: &Configuration, out: &mut Vec<Redex>) {
        for (i, node) in m.nodes.iter().enumerate() {
            match node {
                Node::RunFun(rf) => {
                    let Some((ri, r)) = self.find_running_at(m, &rf.loc) else {
                        continue;
                    };
                    let Some((mi, mon)) =
                        self.find_monitor(m, &r.session, &r.participant)
                    else {
                        continue;
                    };
                    if mon.tag != Tag::Empty {
                        continue;
                    }
                    if !matches!(mon.history.last_frame(), Some(LocalFrame::Key(k)) if k == &rf.key)
                    {
                        continue;
                    }
                    out.push(Redex {
                        rule: RuleName::RBeta,
                        session: Some(r.session.clone()),
                        shared: None,
                        loc: Some(rf.loc.clone()),
                        subjects: vec![
                            Subject::Loc(rf.loc.clone()),
                            Subject::Part(r.participant.clone()),
                        ],
                        label: None,
                        witness: vec![i, ri, mi],
                    });
                }
                Node::Monitor(mon) => {
                    if mon.tag != Tag::Empty {
                        continue;
                    }
                    let Some(LocalFrame::Split {
                        parent,
                        left,
                        right,
                    }) = mon.history.last_frame()
                    else {
                        continue;
                    };
                    let Some((pi, pr)) = self.find_running_at(m, parent) else {
                        continue;
                    };
                    let Some((li, lr)) = self.find_running_at(m, left) else {
                        continue;
                    };
                    let Some((rri, rr)) = self.find_running_at(m, right) else {
                        continue;
                    };
                    if pr.participant != mon.participant || pr.session != mon.session {
                        continue;
                    }
                    if !pr.body.components().is_empty() {
                        continue;
                    }
                    if !lr.stack.is_empty() || !rr.stack.is_empty() {
                        continue;
                    }
                    out.push(Redex {
                        rule: RuleName::RSpawn,
                        session: Some(mon.session.clone()),
                        shared: None,
                        loc: Some(parent.clone()),
                        subjects: vec![
                            Subject::Loc(parent.clone()),
                            Subject::Part(mon.participant.clone()),
                        ],
                        label: None,
                        witness: vec![pi, li, rri, i],
                    });
                }
                _ => {}
            }
        }
    }

    /// Running nodes allowed to act for participant `p` by the location
    /// premise: the location's own participant, or one whose input queue
    /// половина delivered an abstraction mentioning `p`.
    fn candidate_runnings<'a>(
        &self,
        m: &'a Configuration,
        s: &SessionName,
        p: &Participant,
        queue: &SessionQueue,
    ) -> Vec<(usize, &'a Running)> {
        m.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n {
                Node::Running(r) if r.session == *s => {
                    if &r.participant == p
                        || roles_in_queue(&r.participant, &queue.past).contains(p)
                    {
                        Some((i, r))
                    } else {
                        None
                    }
                }
                _ => None,
            })
            .collect()
    }

    fn find_monitor<'a>(
        &self,
        m: &'a Configuration,
        s: &SessionName,
        p: &Participant,
    ) -> Option<(usize, &'a Monitor)> {
        m.nodes.iter().enumerate().find_map(|(i, n)| match n {
            Node::Monitor(mo) if &mo.session == s && &mo.participant == p => Some((i, mo)),
            _ => None,
        })
    }

    fn find_queue<'a>(
        &self,
        m: &'a Configuration,
        s: &SessionName,
    ) -> Option<(usize, &'a SessionQueue)> {
        m.nodes.iter().enumerate().find_map(|(i, n)| match n {
            Node::Queue(q) if &q.session == s => Some((i, q)),
            _ => None,
        })
    }

    fn find_running_at<'a>(
        &self,
        m: &'a Configuration,
        l: &Location,
    ) -> Option<(usize, &'a Running)> {
        m.nodes.iter().enumerate().find_map(|(i, n)| match n {
            Node::Running(r) if &r.loc == l => Some((i, r)),
            _ => None,
        })
    }

    pub fn apply(&self, m: &Configuration, r: &Redex) -> Result<Configuration, StepError> {
        if r.rule.is_forward() {
            self.apply_forward(m, r)
        } else {
            self.apply_backward(m, r)
        }
    }

    pub fn apply_forward(&self, m: &Configuration, r: &Redex) -> Result<Configuration, StepError> {
        // redexes are applied by re-matching against the current
        // configuration; any drift from the enumeration snapshot is stale
        let fresh = self.enumerate_forward(m);
        if !fresh.contains(r) {
            return Err(StepError::StaleRedex(r.describe()));
        }
        let mut c = m.clone();
        match r.rule {
            RuleName::Init => self.do_init(&mut c, r)?,
            RuleName::Out => self.do_out(&mut c, r)?,
            RuleName::In => self.do_in(&mut c, r)?,
            RuleName::Sel => self.do_sel(&mut c, r)?,
            RuleName::Bra => self.do_bra(&mut c, r)?,
            RuleName::Beta => self.do_beta(&mut c, r)?,
            RuleName::Spawn => self.do_spawn(&mut c, r)?,
            _ => return Err(StepError::StaleRedex("not a forward rule".into())),
        }
        c.normalize();
        Ok(c)
    }

    pub fn apply_backward(&self, m: &Configuration, r: &Redex) -> Result<Configuration, StepError> {
        let fresh = self.enumerate_backward(m);
        if !fresh.contains(r) {
            return Err(StepError::StaleRedex(r.describe()));
        }
        let mut c = m.clone();
        match r.rule {
            RuleName::RInit => self.do_rinit(&mut c, r)?,
            RuleName::RollS | RuleName::RollC => self.do_roll(&mut c, r)?,
            RuleName::ROut => self.do_rout(&mut c, r)?,
            RuleName::RIn => self.do_rin(&mut c, r)?,
            RuleName::RSel => self.do_rsel(&mut c, r)?,
            RuleName::RBra => self.do_rbra(&mut c, r)?,
            RuleName::RBeta => self.do_rbeta(&mut c, r)?,
            RuleName::RSpawn => self.do_rspawn(&mut c, r)?,
            _ => return Err(StepError::StaleRedex("not a backward rule".into())),
        }
        c.normalize();
        Ok(c)
    }

    fn do_init(&self, c: &mut Configuration, r: &Redex) -> Result<(), StepError> {
        let shared = r.shared.as_ref().expect("init redex has a shared name");
        let services: Vec<Service> = c
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Service(s) if &s.shared == shared => Some(s.clone()),
                _ => None,
            })
            .collect();
        let session = fresh_session(c);
        c.nodes.retain(|n| !matches!(n, Node::Service(s) if &s.shared == shared));
        for s in &services {
            let body = s
                .body
                .instantiate_endpoint(&s.var, &session, &s.participant);
            c.nodes.push(Node::Running(Running {
                loc: s.loc.clone(),
                participant: s.participant.clone(),
                session: session.clone(),
                initiator: s.kind == ServiceKind::Request,
                stack: Vec::new(),
                body,
            }));
            let store = Store::new()
                .update(&s.var, ValueExpr::Shared(shared.clone()))
                .expect("fresh store update");
            c.nodes.push(Node::Monitor(Monitor {
                session: session.clone(),
                participant: s.participant.clone(),
                history: HistoryLocal::start(s.annot.clone()),
                tracked: vec![s.var.clone()],
                store,
                tag: Tag::Empty,
            }));
        }
        c.nodes.push(Node::Queue(SessionQueue {
            session: session.clone(),
            past: Vec::new(),
            future: Vec::new(),
        }));
        c.restricted.push(RtName::Session(session));
        Ok(())
    }

    fn do_out(&self, c: &mut Configuration, r: &Redex) -> Result<(), StepError> {
        let (s, p) = session_part(r)?;
        let loc = r.loc.clone().expect("out redex has a location");
        let (value, cont) = {
            let run = running_at(c, &loc)?;
            match single_component(&run.body) {
                Some(Process::Send { value, cont, .. }) => (value.clone(), (*cont).clone()),
                _ => return Err(StepError::StaleRedex("no output prefix".into())),
            }
        };
        let evaluated = {
            let mon = monitor_of(c, &s, &p)?;
            eval_value(&value, &mon.store)
                .map_err(|e| StepError::StaleRedex(e.to_string()))?
        };
        let peer = {
            let mon = monitor_of_mut(c, &s, &p)?;
            let (pending, head) = mon.history.peek();
            let LocalType::Send {
                peer,
                payload,
                cont: tcont,
            } = head
            else {
                return Err(StepError::StaleRedex("monitor not at output".into()));
            };
            mon.history = mon.history.advance(
                pending,
                LocalFrame::Action(ActionPrefix::Send {
                    peer: peer.clone(),
                    payload,
                }),
                *tcont,
            );
            peer
        };
        running_at_mut(c, &loc)?.body = cont;
        queue_of_mut(c, &s)?.future.push(Msg {
            from: p,
            to: peer,
            payload: Payload::Value(evaluated),
        });
        Ok(())
    }

    fn do_in(&self, c: &mut Configuration, r: &Redex) -> Result<(), StepError> {
        let (s, p) = session_part(r)?;
        let loc = r.loc.clone().expect("in redex has a location");
        let (var, cont) = {
            let run = running_at(c, &loc)?;
            match single_component(&run.body) {
                Some(Process::Recv { var, cont, .. }) => (var.clone(), (*cont).clone()),
                _ => return Err(StepError::StaleRedex("no input prefix".into())),
            }
        };
        let msg = {
            let q = queue_of_mut(c, &s)?;
            if q.future.is_empty() {
                return Err(StepError::StaleRedex("empty queue".into()));
            }
            let msg = q.future.remove(0);
            q.past.push(msg.clone());
            msg
        };
        let Payload::Value(v) = msg.payload else {
            return Err(StepError::StaleRedex("label at queue head".into()));
        };
        // rename the binder if it would collide in the store, so that
        // repeated inputs of recursive protocols stay defined
        let (var, cont) = {
            let mon = monitor_of(c, &s, &p)?;
            if mon.store.contains(&var) {
                let fresh = fresh_var(&var, &mon.store, &cont);
                let renamed = cont.rename_free_var(&var, &fresh);
                (fresh, renamed)
            } else {
                (var, cont)
            }
        };
        {
            let mon = monitor_of_mut(c, &s, &p)?;
            let (pending, head) = mon.history.peek();
            let LocalType::Recv {
                peer,
                payload,
                cont: tcont,
            } = head
            else {
                return Err(StepError::StaleRedex("monitor not at input".into()));
            };
            mon.history = mon.history.advance(
                pending,
                LocalFrame::Action(ActionPrefix::Recv { peer, payload }),
                *tcont,
            );
            mon.tracked.push(var.clone());
            mon.store = mon
                .store
                .update(&var, v)
                .map_err(|e| StepError::StaleRedex(e.to_string()))?;
        }
        running_at_mut(c, &loc)?.body = cont;
        Ok(())
    }

    fn do_sel(&self, c: &mut Configuration, r: &Redex) -> Result<(), StepError> {
        let (s, p) = session_part(r)?;
        let loc = r.loc.clone().expect("sel redex has a location");
        let w = r.label.clone().expect("sel redex has a label");
        let branches = {
            let run = running_at(c, &loc)?;
            match single_component(&run.body) {
                Some(Process::Select { branches, .. }) => branches,
                _ => return Err(StepError::StaleRedex("no selection".into())),
            }
        };
        let chosen_body = branches
            .iter()
            .find(|(l, _)| l == &w)
            .map(|(_, b)| b.clone())
            .ok_or_else(|| StepError::StaleRedex("label not offered".into()))?;
        let rest: Vec<(Label, Process)> =
            branches.into_iter().filter(|(l, _)| l != &w).collect();
        let peer = {
            let mon = monitor_of_mut(c, &s, &p)?;
            let (pending, head) = mon.history.peek();
            let LocalType::Select {
                peer,
                branches: tbranches,
            } = head
            else {
                return Err(StepError::StaleRedex("monitor not at selection".into()));
            };
            let tcont = tbranches
                .iter()
                .find(|(l, _)| l == &w)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| StepError::StaleRedex("label not in protocol".into()))?;
            let others: Vec<(Label, LocalType)> = tbranches
                .into_iter()
                .filter(|(l, _)| l != &w)
                .collect();
            mon.history = mon.history.advance(
                pending,
                LocalFrame::Select {
                    peer: peer.clone(),
                    chosen: w.clone(),
                    others,
                },
                tcont,
            );
            peer
        };
        {
            let run = running_at_mut(c, &loc)?;
            run.stack.push(StackEntry::Select {
                chan: ChannelRef::Endpoint(s.clone(), p.clone()),
                branches: rest,
            });
            run.body = chosen_body;
        }
        queue_of_mut(c, &s)?.future.push(Msg {
            from: p,
            to: peer,
            payload: Payload::Label(w),
        });
        Ok(())
    }

    fn do_bra(&self, c: &mut Configuration, r: &Redex) -> Result<(), StepError> {
        let (s, p) = session_part(r)?;
        let loc = r.loc.clone().expect("bra redex has a location");
        let w = r.label.clone().expect("bra redex has a label");
        let branches = {
            let run = running_at(c, &loc)?;
            match single_component(&run.body) {
                Some(Process::Branch { branches, .. }) => branches,
                _ => return Err(StepError::StaleRedex("no branching".into())),
            }
        };
        let chosen_body = branches
            .iter()
            .find(|(l, _)| l == &w)
            .map(|(_, b)| b.clone())
            .ok_or_else(|| StepError::StaleRedex("label not offered".into()))?;
        let rest: Vec<(Label, Process)> =
            branches.into_iter().filter(|(l, _)| l != &w).collect();
        {
            let q = queue_of_mut(c, &s)?;
            if q.future.is_empty() {
                return Err(StepError::StaleRedex("empty queue".into()));
            }
            let msg = q.future.remove(0);
            q.past.push(msg);
        }
        {
            let mon = monitor_of_mut(c, &s, &p)?;
            let (pending, head) = mon.history.peek();
            let LocalType::Branch {
                peer,
                branches: tbranches,
            } = head
            else {
                return Err(StepError::StaleRedex("monitor not at branching".into()));
            };
            let tcont = tbranches
                .iter()
                .find(|(l, _)| l == &w)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| StepError::StaleRedex("label not in protocol".into()))?;
            let others: Vec<(Label, LocalType)> = tbranches
                .into_iter()
                .filter(|(l, _)| l != &w)
                .collect();
            mon.history = mon.history.advance(
                pending,
                LocalFrame::Branch {
                    peer,
                    chosen: w.clone(),
                    others,
                },
                tcont,
            );
        }
        {
            let run = running_at_mut(c, &loc)?;
            run.stack.push(StackEntry::Branch {
                chan: ChannelRef::Endpoint(s.clone(), p.clone()),
                branches: rest,
            });
            run.body = chosen_body;
        }
        Ok(())
    }

    fn do_beta(&self, c: &mut Configuration, r: &Redex) -> Result<(), StepError> {
        let loc = r.loc.clone().expect("beta redex has a location");
        let (func, arg, session, participant) = {
            let run = running_at(c, &loc)?;
            match single_component(&run.body) {
                Some(Process::Apply { func, arg }) => (
                    func,
                    arg,
                    run.session.clone(),
                    run.participant.clone(),
                ),
                _ => return Err(StepError::StaleRedex("no application".into())),
            }
        };
        let key = fresh_key(c);
        let (param, abody, evaluated_arg) = {
            let mon = monitor_of(c, &session, &participant)?;
            let f = eval_value(&func, &mon.store)
                .map_err(|e| StepError::StaleRedex(e.to_string()))?;
            let ValueExpr::Abstraction { param, body } = f else {
                return Err(StepError::StaleRedex("not an abstraction".into()));
            };
            let ea = match &arg {
                NameExpr::Var(v) => match mon.store.get(v) {
                    Some(val) => AppliedArg::Value(val.clone()),
                    None => return Err(StepError::StaleRedex("unbound argument".into())),
                },
                NameExpr::Shared(a) => AppliedArg::Shared(a.clone()),
                NameExpr::Endpoint(s2, p2) => AppliedArg::Endpoint(s2.clone(), p2.clone()),
                NameExpr::Star => AppliedArg::Star,
            };
            (param, body, ea)
        };
        {
            let mon = monitor_of_mut(c, &session, &participant)?;
            mon.history.frames.push(LocalFrame::Key(key.clone()));
        }
        running_at_mut(c, &loc)?.body = abody.substitute_arg(&param, &evaluated_arg);
        c.nodes.push(Node::RunFun(RunFun {
            key: key.clone(),
            func,
            arg,
            loc: loc.clone(),
        }));
        c.restricted.push(RtName::Key(key));
        Ok(())
    }

    fn do_spawn(&self, c: &mut Configuration, r: &Redex) -> Result<(), StepError> {
        let loc = r.loc.clone().expect("spawn redex has a location");
        let (comps, session, participant, l1, l2) = {
            let run = running_at(c, &loc)?;
            let comps = run.body.components();
            if comps.len() < 2 {
                return Err(StepError::StaleRedex("nothing to spawn".into()));
            }
            let (l1, l2) = run.loc.split();
            (comps, run.session.clone(), run.participant.clone(), l1, l2)
        };
        let head = comps[0].clone();
        let rest = comps[1..]
            .iter()
            .cloned()
            .reduce(|a, b| Process::Par(Box::new(a), Box::new(b)))
            .expect("at least one trailing component");
        {
            let mon = monitor_of_mut(c, &session, &participant)?;
            mon.history.frames.push(LocalFrame::Split {
                parent: loc.clone(),
                left: l1.clone(),
                right: l2.clone(),
            });
        }
        running_at_mut(c, &loc)?.body = Process::Nil;
        c.nodes.push(Node::Running(Running {
            loc: l1.clone(),
            participant: participant.clone(),
            session: session.clone(),
            initiator: false,
            stack: Vec::new(),
            body: head,
        }));
        c.nodes.push(Node::Running(Running {
            loc: l2.clone(),
            participant,
            session,
            initiator: false,
            stack: Vec::new(),
            body: rest,
        }));
        c.restricted.push(RtName::Loc(l1));
        c.restricted.push(RtName::Loc(l2));
        Ok(())
    }

    fn do_rinit(&self, c: &mut Configuration, r: &Redex) -> Result<(), StepError> {
        let s = r.session.clone().expect("rInit redex has a session");
        let shared = r.shared.clone().expect("rInit redex has a shared name");
        let monitors: Vec<Monitor> = c
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Monitor(mo) if mo.session == s => Some(mo.clone()),
                _ => None,
            })
            .collect();
        let runnings: Vec<Running> = c
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Running(rn) if rn.session == s => Some(rn.clone()),
                _ => None,
            })
            .collect();
        c.nodes.retain(|n| match n {
            Node::Monitor(mo) => mo.session != s,
            Node::Running(rn) => rn.session != s,
            Node::Queue(q) => q.session != s,
            _ => true,
        });
        for run in runnings {
            let mon = monitors
                .iter()
                .find(|mo| mo.participant == run.participant)
                .expect("matching monitor");
            let var = mon.tracked[0].clone();
            let body = endpoints_to_var(&run.body, &s, &var);
            c.nodes.push(Node::Service(Service {
                loc: run.loc,
                kind: if run.initiator {
                    ServiceKind::Request
                } else {
                    ServiceKind::Accept
                },
                shared: shared.clone(),
                var,
                participant: run.participant,
                annot: mon.history.future.clone(),
                body,
            }));
        }
        Ok(())
    }

    fn do_roll(&self, c: &mut Configuration, r: &Redex) -> Result<(), StepError> {
        let s = r.session.clone().expect("roll redex has a session");
        let (Subject::Part(p), Subject::Part(q)) = (&r.subjects[0], &r.subjects[1]) else {
            return Err(StepError::StaleRedex("roll subjects".into()));
        };
        for part in [p, q] {
            let mon = monitor_of_mut(c, &s, part)?;
            if mon.tag != Tag::Empty {
                return Err(StepError::StaleRedex("tag already full".into()));
            }
            mon.tag = Tag::Full;
        }
        Ok(())
    }

    fn do_rout(&self, c: &mut Configuration, r: &Redex) -> Result<(), StepError> {
        let (s, p) = session_part(r)?;
        let loc = r.loc.clone().expect("rOut redex has a location");
        let msg = {
            let q = queue_of_mut(c, &s)?;
            if q.future.is_empty() {
                return Err(StepError::StaleRedex("no message to unsend".into()));
            }
            q.future.remove(0)
        };
        let Payload::Value(v) = msg.payload else {
            return Err(StepError::StaleRedex("label at queue head".into()));
        };
        {
            let mon = monitor_of_mut(c, &s, &p)?;
            let Some(LocalFrame::Action(ActionPrefix::Send { peer, payload })) =
                mon.history.last_frame().cloned()
            else {
                return Err(StepError::StaleRedex("no committed output".into()));
            };
            let rebuilt = LocalType::Send {
                peer,
                payload,
                cont: Box::new(mon.history.future.clone()),
            };
            mon.history = mon.history.retreat(rebuilt);
            mon.tag = Tag::Empty;
        }
        {
            let run = running_at_mut(c, &loc)?;
            run.body = Process::Send {
                chan: ChannelRef::Endpoint(s.clone(), p.clone()),
                value: v,
                cont: Box::new(run.body.clone()),
            };
        }
        Ok(())
    }

    fn do_rin(&self, c: &mut Configuration, r: &Redex) -> Result<(), StepError> {
        let (s, p) = session_part(r)?;
        let loc = r.loc.clone().expect("rIn redex has a location");
        {
            let q = queue_of_mut(c, &s)?;
            let Some(msg) = q.past.pop() else {
                return Err(StepError::StaleRedex("no delivered message".into()));
            };
            q.future.insert(0, msg);
        }
        let y = {
            let mon = monitor_of_mut(c, &s, &p)?;
            let Some(LocalFrame::Action(ActionPrefix::Recv { peer, payload })) =
                mon.history.last_frame().cloned()
            else {
                return Err(StepError::StaleRedex("no committed input".into()));
            };
            let Some(y) = mon.tracked.pop() else {
                return Err(StepError::StaleRedex("no tracked variable".into()));
            };
            mon.store = mon.store.reverse(&y);
            let rebuilt = LocalType::Recv {
                peer,
                payload,
                cont: Box::new(mon.history.future.clone()),
            };
            mon.history = mon.history.retreat(rebuilt);
            mon.tag = Tag::Empty;
            y
        };
        {
            let run = running_at_mut(c, &loc)?;
            run.body = Process::Recv {
                chan: ChannelRef::Endpoint(s.clone(), p.clone()),
                var: y,
                cont: Box::new(run.body.clone()),
            };
        }
        Ok(())
    }

    fn do_rsel(&self, c: &mut Configuration, r: &Redex) -> Result<(), StepError> {
        let (s, p) = session_part(r)?;
        let loc = r.loc.clone().expect("rSel redex has a location");
        let w = r.label.clone().expect("rSel redex has a label");
        {
            let q = queue_of_mut(c, &s)?;
            if q.future.is_empty() {
                return Err(StepError::StaleRedex("no label to unsend".into()));
            }
            q.future.remove(0);
        }
        {
            let mon = monitor_of_mut(c, &s, &p)?;
            let Some(LocalFrame::Select {
                peer,
                chosen,
                others,
            }) = mon.history.last_frame().cloned()
            else {
                return Err(StepError::StaleRedex("no committed selection".into()));
            };
            if chosen != w {
                return Err(StepError::StaleRedex("label mismatch".into()));
            }
            let mut branches = others;
            branches.push((chosen, mon.history.future.clone()));
            let rebuilt = LocalType::Select { peer, branches };
            mon.history = mon.history.retreat(rebuilt);
            mon.tag = Tag::Empty;
        }
        {
            let run = running_at_mut(c, &loc)?;
            let Some(StackEntry::Select { chan, branches }) = run.stack.pop() else {
                return Err(StepError::StaleRedex("no stacked selection".into()));
            };
            let mut branches = branches;
            branches.push((w, run.body.clone()));
            run.body = Process::Select { chan, branches };
        }
        Ok(())
    }

    fn do_rbra(&self, c: &mut Configuration, r: &Redex) -> Result<(), StepError> {
        let (s, p) = session_part(r)?;
        let loc = r.loc.clone().expect("rBra redex has a location");
        let w = r.label.clone().expect("rBra redex has a label");
        {
            let q = queue_of_mut(c, &s)?;
            let Some(msg) = q.past.pop() else {
                return Err(StepError::StaleRedex("no delivered label".into()));
            };
            q.future.insert(0, msg);
        }
        {
            let mon = monitor_of_mut(c, &s, &p)?;
            let Some(LocalFrame::Branch {
                peer,
                chosen,
                others,
            }) = mon.history.last_frame().cloned()
            else {
                return Err(StepError::StaleRedex("no committed branching".into()));
            };
            if chosen != w {
                return Err(StepError::StaleRedex("label mismatch".into()));
            }
            let mut branches = others;
            branches.push((chosen, mon.history.future.clone()));
            let rebuilt = LocalType::Branch { peer, branches };
            mon.history = mon.history.retreat(rebuilt);
            mon.tag = Tag::Empty;
        }
        {
            let run = running_at_mut(c, &loc)?;
            let Some(StackEntry::Branch { chan, branches }) = run.stack.pop() else {
                return Err(StepError::StaleRedex("no stacked branching".into()));
            };
            let mut branches = branches;
            branches.push((w, run.body.clone()));
            run.body = Process::Branch { chan, branches };
        }
        Ok(())
    }

    fn do_rbeta(&self, c: &mut Configuration, r: &Redex) -> Result<(), StepError> {
        let loc = r.loc.clone().expect("rBeta redex has a location");
        let key = {
            let rf = c
                .nodes
                .iter()
                .find_map(|n| match n {
                    Node::RunFun(rf) if rf.loc == loc => Some(rf.clone()),
                    _ => None,
                })
                .ok_or_else(|| StepError::StaleRedex("no running function".into()))?;
            {
                let run = running_at_mut(c, &loc)?;
                run.body = Process::Apply {
                    func: rf.func.clone(),
                    arg: rf.arg.clone(),
                };
            }
            rf.key
        };
        let (session, participant) = {
            let run = running_at(c, &loc)?;
            (run.session.clone(), run.participant.clone())
        };
        {
            let mon = monitor_of_mut(c, &session, &participant)?;
            match mon.history.frames.pop() {
                Some(LocalFrame::Key(k)) if k == key => {}
                _ => return Err(StepError::StaleRedex("key frame mismatch".into())),
            }
        }
        c.nodes
            .retain(|n| !matches!(n, Node::RunFun(rf) if rf.key == key));
        Ok(())
    }

    fn do_rspawn(&self, c: &mut Configuration, r: &Redex) -> Result<(), StepError> {
        let parent = r.loc.clone().expect("rSpawn redex has a location");
        let (session, participant) = {
            let run = running_at(c, &parent)?;
            (run.session.clone(), run.participant.clone())
        };
        let (l1, l2) = {
            let mon = monitor_of_mut(c, &session, &participant)?;
            match mon.history.frames.pop() {
                Some(LocalFrame::Split {
                    parent: p0,
                    left,
                    right,
                }) if p0 == parent => (left, right),
                _ => return Err(StepError::StaleRedex("split frame mismatch".into())),
            }
        };
        let left_body = running_at(c, &l1)?.body.clone();
        let right_body = running_at(c, &l2)?.body.clone();
        c.nodes.retain(|n| {
            !matches!(n, Node::Running(rn) if rn.loc == l1 || rn.loc == l2)
        });
        running_at_mut(c, &parent)?.body =
            Process::Par(Box::new(left_body), Box::new(right_body));
        Ok(())
    }

    /// Breadth-first exploration of the reachable labelled transition
    /// system, states deduplicated by canonical form.
    pub fn step_closure(
        &self,
        m0: &Configuration,
        direction: Direction,
        depth: usize,
        state_budget: usize,
    ) -> Result<Lts, ExploreError> {
        let mut m0 = m0.clone();
        m0.normalize();
        let mut lts = Lts::default();
        let mut index: HashMap<String, usize> = HashMap::new();
        let key0 = m0.canonical_key();
        index.insert(key0.clone(), 0);
        lts.states.push(LtsState::new(0, &m0));
        let mut frontier: VecDeque<(usize, usize)> = VecDeque::new();
        frontier.push_back((0, 0));
        while let Some((id, d)) = frontier.pop_front() {
            if d == depth {
                continue;
            }
            let config = lts.states[id].config.clone();
            let mut redexes = Vec::new();
            if direction != Direction::Backward {
                redexes.extend(self.enumerate_forward(&config));
            }
            if direction != Direction::Forward {
                redexes.extend(self.enumerate_backward(&config));
            }
            for r in redexes {
                let next = self
                    .apply(&config, &r)
                    .expect("enumerated redex applies");
                let key = next.canonical_key();
                let nid = match index.get(&key) {
                    Some(&i) => i,
                    None => {
                        if lts.states.len() >= state_budget {
                            return Err(ExploreError::StateBudgetExceeded(state_budget));
                        }
                        let i = lts.states.len();
                        index.insert(key, i);
                        lts.states.push(LtsState::new(i, &next));
                        frontier.push_back((i, d + 1));
                        i
                    }
                };
                lts.edges.push(LtsEdge {
                    src: id,
                    dst: nid,
                    rule: r.rule,
                    subjects: r.subjects.iter().map(|s| s.to_string()).collect(),
                    label: r.label.as_ref().map(|l| l.to_string()),
                });
            }
        }
        lts.depth = depth;
        Ok(lts)
    }
}

/// One explored state.
#[derive(Clone, Debug)]
pub struct LtsState {
    pub id: usize,
    pub config: Configuration,
    pub key: String,
    pub hash: String,
    pub stable: bool,
    pub barbs: Vec<String>,
}

impl LtsState {
    fn new(id: usize, c: &Configuration) -> LtsState {
        LtsState {
            id,
            key: c.canonical_key(),
            hash: c.state_hash(),
            stable: c.is_stable(),
            barbs: c.barbs().iter().map(|p| p.to_string()).collect(),
            config: c.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LtsEdge {
    pub src: usize,
    pub dst: usize,
    pub rule: RuleName,
    pub subjects: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Clone, Debug, Default)]
pub struct Lts {
    pub states: Vec<LtsState>,
    pub edges: Vec<LtsEdge>,
    pub depth: usize,
}

#[derive(Serialize)]
struct LtsStateJson<'a> {
    id: usize,
    hash: &'a str,
    stable: bool,
    barbs: &'a [String],
}

#[derive(Serialize)]
struct LtsJson<'a> {
    schema: &'static str,
    depth: usize,
    states: Vec<LtsStateJson<'a>>,
    edges: &'a [LtsEdge],
}

impl Lts {
    pub fn to_json(&self) -> String {
        let doc = LtsJson {
            schema: "revchor-lts/1",
            depth: self.depth,
            states: self
                .states
                .iter()
                .map(|s| LtsStateJson {
                    id: s.id,
                    hash: &s.hash,
                    stable: s.stable,
                    barbs: &s.barbs,
                })
                .collect(),
            edges: &self.edges,
        };
        serde_json::to_string_pretty(&doc).expect("serializable")
    }

    pub fn state_id(&self, c: &Configuration) -> Option<usize> {
        let key = c.canonical_key();
        self.states.iter().position(|s| s.key == key)
    }
}

fn session_part(r: &Redex) -> Result<(SessionName, Participant), StepError> {
    let s = r
        .session
        .clone()
        .ok_or_else(|| StepError::StaleRedex("missing session".into()))?;
    match r.subjects.first() {
        Some(Subject::Part(p)) => Ok((s, p.clone())),
        _ => Err(StepError::StaleRedex("missing subject".into())),
    }
}

fn single_component(body: &Process) -> Option<Process> {
    let mut comps = body.components();
    if comps.len() == 1 {
        comps.pop()
    } else {
        None
    }
}

fn location_premise(p: &Participant, r: &Running, queue: &SessionQueue) -> bool {
    &r.participant == p || roles_in_queue(&r.participant, &queue.past).contains(p)
}

fn running_at<'a>(c: &'a Configuration, l: &Location) -> Result<&'a Running, StepError> {
    c.nodes
        .iter()
        .find_map(|n| match n {
            Node::Running(r) if &r.loc == l => Some(r),
            _ => None,
        })
        .ok_or_else(|| StepError::StaleRedex(format!("no running process at {l}")))
}

fn running_at_mut<'a>(c: &'a mut Configuration, l: &Location) -> Result<&'a mut Running, StepError> {
    c.nodes
        .iter_mut()
        .find_map(|n| match n {
            Node::Running(r) if &r.loc == l => Some(r),
            _ => None,
        })
        .ok_or_else(|| StepError::StaleRedex(format!("no running process at {l}")))
}

fn monitor_of<'a>(
    c: &'a Configuration,
    s: &SessionName,
    p: &Participant,
) -> Result<&'a Monitor, StepError> {
    c.monitor(s, p)
        .ok_or_else(|| StepError::StaleRedex(format!("no monitor {s}[{p}]")))
}

fn monitor_of_mut<'a>(
    c: &'a mut Configuration,
    s: &SessionName,
    p: &Participant,
) -> Result<&'a mut Monitor, StepError> {
    c.nodes
        .iter_mut()
        .find_map(|n| match n {
            Node::Monitor(m) if &m.session == s && &m.participant == p => Some(m),
            _ => None,
        })
        .ok_or_else(|| StepError::StaleRedex(format!("no monitor {s}[{p}]")))
}

fn queue_of_mut<'a>(
    c: &'a mut Configuration,
    s: &SessionName,
) -> Result<&'a mut SessionQueue, StepError> {
    c.nodes
        .iter_mut()
        .find_map(|n| match n {
            Node::Queue(q) if &q.session == s => Some(q),
            _ => None,
        })
        .ok_or_else(|| StepError::StaleRedex(format!("no queue {s}")))
}

/// Smallest session name `s0, s1, ...` not occurring in the configuration.
fn fresh_session(c: &Configuration) -> SessionName {
    let used: BTreeSet<SessionName> = c
        .sessions()
        .into_iter()
        .chain(c.restricted.iter().filter_map(|n| match n {
            RtName::Session(s) => Some(s.clone()),
            _ => None,
        }))
        .collect();
    let mut i = 0;
    loop {
        let cand = SessionName::new(format!("s{i}"));
        if !used.contains(&cand) {
            return cand;
        }
        i += 1;
    }
}

/// Smallest key name `k0, k1, ...` not occurring in the configuration.
fn fresh_key(c: &Configuration) -> KeyName {
    let mut used: BTreeSet<KeyName> = BTreeSet::new();
    for n in &c.nodes {
        match n {
            Node::RunFun(rf) => {
                used.insert(rf.key.clone());
            }
            Node::Monitor(m) => {
                for f in &m.history.frames {
                    if let LocalFrame::Key(k) = f {
                        used.insert(k.clone());
                    }
                }
            }
            _ => {}
        }
    }
    for n in &c.restricted {
        if let RtName::Key(k) = n {
            used.insert(k.clone());
        }
    }
    let mut i = 0;
    loop {
        let cand = KeyName::new(format!("k{i}"));
        if !used.contains(&cand) {
            return cand;
        }
        i += 1;
    }
}

/// Variable `y`, or `y%1`, `y%2`, ... avoiding the store and the term.
fn fresh_var(base: &Var, store: &Store, term: &Process) -> Var {
    let free = term.free_vars();
    let mut i = 1;
    loop {
        let cand = Var::new(format!("{base}%{i}"));
        if !store.contains(&cand) && !free.contains(&cand) {
            return cand;
        }
        i += 1;
    }
}

/// Replaces every endpoint of session `s` by the variable `x`; inverse of
/// endpoint instantiation, used when undoing session initiation.
fn endpoints_to_var(p: &Process, s: &SessionName, x: &Var) -> Process {
    let chan = |c: &ChannelRef| match c {
        ChannelRef::Endpoint(s2, _) if s2 == s => ChannelRef::Var(x.clone()),
        other => other.clone(),
    };
    match p {
        Process::Send {
            chan: c,
            value,
            cont,
        } => Process::Send {
            chan: chan(c),
            value: value_endpoints_to_var(value, s, x),
            cont: Box::new(endpoints_to_var(cont, s, x)),
        },
        Process::Recv { chan: c, var, cont } => Process::Recv {
            chan: chan(c),
            var: var.clone(),
            cont: Box::new(endpoints_to_var(cont, s, x)),
        },
        Process::Select { chan: c, branches } => Process::Select {
            chan: chan(c),
            branches: branches
                .iter()
                .map(|(l, b)| (l.clone(), endpoints_to_var(b, s, x)))
                .collect(),
        },
        Process::Branch { chan: c, branches } => Process::Branch {
            chan: chan(c),
            branches: branches
                .iter()
                .map(|(l, b)| (l.clone(), endpoints_to_var(b, s, x)))
                .collect(),
        },
        Process::Par(a, b) => Process::Par(
            Box::new(endpoints_to_var(a, s, x)),
            Box::new(endpoints_to_var(b, s, x)),
        ),
        Process::Rec { var, body } => Process::Rec {
            var: var.clone(),
            body: Box::new(endpoints_to_var(body, s, x)),
        },
        Process::Restrict { name, body } => Process::Restrict {
            name: name.clone(),
            body: Box::new(endpoints_to_var(body, s, x)),
        },
        Process::Apply { func, arg } => Process::Apply {
            func: value_endpoints_to_var(func, s, x),
            arg: match arg {
                NameExpr::Endpoint(s2, _) if s2 == s => NameExpr::Var(x.clone()),
                other => other.clone(),
            },
        },
        Process::PVar(_) | Process::Nil => p.clone(),
    }
}

fn value_endpoints_to_var(v: &ValueExpr, s: &SessionName, x: &Var) -> ValueExpr {
    match v {
        ValueExpr::Abstraction { param, body } => ValueExpr::Abstraction {
            param: param.clone(),
            body: Box::new(endpoints_to_var(body, s, x)),
        },
        other => other.clone(),
    }
}
