//! Atomic semantics: a synchronization (value or label) and its undoing are
//! single steps. Session initiation, application, and spawning are shared
//! with the decoupled semantics.
//!
//! Every atomic step is realized as a literal composition of decoupled
//! steps: a forward synchronization replays the output then the matching
//! input; a backward one marks both endpoints and undoes the two halves.
//! This keeps the rule logic in one place and makes the step-count
//! correspondence between the two semantics hold by construction, where it
//! is then verified by the conformance checks.

use crate::decoupled::{Direction, Engine, ExploreError, Redex, RuleName, StepError, Subject};
use crate::ident::{Label, SessionName};
use crate::runtime::Configuration;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};
use std::fmt;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum AtomicRule {
    Init,
    AC,
    AS,
    Beta,
    Spawn,
    RInit,
    RAC,
    RAS,
    RBeta,
    RSpawn,
}

impl AtomicRule {
    pub fn is_forward(self) -> bool {
        matches!(
            self,
            AtomicRule::Init
                | AtomicRule::AC
                | AtomicRule::AS
                | AtomicRule::Beta
                | AtomicRule::Spawn
        )
    }

    pub fn inverse(self) -> AtomicRule {
        match self {
            AtomicRule::Init => AtomicRule::RInit,
            AtomicRule::AC => AtomicRule::RAC,
            AtomicRule::AS => AtomicRule::RAS,
            AtomicRule::Beta => AtomicRule::RBeta,
            AtomicRule::Spawn => AtomicRule::RSpawn,
            AtomicRule::RInit => AtomicRule::Init,
            AtomicRule::RAC => AtomicRule::AC,
            AtomicRule::RAS => AtomicRule::AS,
            AtomicRule::RBeta => AtomicRule::Beta,
            AtomicRule::RSpawn => AtomicRule::Spawn,
        }
    }
}

impl fmt::Display for AtomicRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AtomicRule::Init => "init",
            AtomicRule::AC => "ac",
            AtomicRule::AS => "as",
            AtomicRule::Beta => "beta",
            AtomicRule::Spawn => "spawn",
            AtomicRule::RInit => "rInit",
            AtomicRule::RAC => "rac",
            AtomicRule::RAS => "ras",
            AtomicRule::RBeta => "rBeta",
            AtomicRule::RSpawn => "rSpawn",
        };
        f.write_str(s)
    }
}

/// One enabled atomic step: the rule plus the decoupled steps realizing it.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct AtomicRedex {
    pub rule: AtomicRule,
    pub session: Option<SessionName>,
    /// The stamp basis: locations for initiation, the two participants for
    /// synchronizations, location and participant for launches and spawns.
    pub subjects: Vec<Subject>,
    pub label: Option<Label>,
    /// Decoupled steps to replay, in order.
    pub plan: Vec<Redex>,
}

impl AtomicRedex {
    /// Identity used when re-finding "the same" step from another state.
    pub fn identity(&self) -> String {
        let locs: Vec<String> = self
            .plan
            .iter()
            .filter_map(|r| r.loc.as_ref().map(|l| l.to_string()))
            .collect();
        format!(
            "{}|{}|{}|{}|{}",
            self.rule,
            self.session
                .as_ref()
                .map(|s| s.to_string())
                .unwrap_or_default(),
            self.subjects
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
            self.label
                .as_ref()
                .map(|l| l.to_string())
                .unwrap_or_default(),
            locs.join(",")
        )
    }

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

    fn sort_key(&self) -> (u8, String) {
        (self.rule as u8, self.identity())
    }
}

/// All enabled atomic steps in the requested direction.
pub fn enumerate_atomic(engine: &Engine, m: &Configuration, dir: Direction) -> Vec<AtomicRedex> {
    let mut out = Vec::new();
    if dir != Direction::Backward {
        enumerate_forward_atomic(engine, m, &mut out);
    }
    if dir != Direction::Forward {
        enumerate_backward_atomic(engine, m, &mut out);
    }
    out.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    out
}

fn enumerate_forward_atomic(engine: &Engine, m: &Configuration, out: &mut Vec<AtomicRedex>) {
    for r in engine.enumerate_forward(m) {
        match r.rule {
            RuleName::Init | RuleName::Beta | RuleName::Spawn => {
                out.push(AtomicRedex {
                    rule: match r.rule {
                        RuleName::Init => AtomicRule::Init,
                        RuleName::Beta => AtomicRule::Beta,
                        _ => AtomicRule::Spawn,
                    },
                    session: r.session.clone(),
                    subjects: r.subjects.clone(),
                    label: None,
                    plan: vec![r],
                });
            }
            RuleName::Out | RuleName::Sel => {
                let session = r.session.clone().expect("communication has a session");
                // the composite only exists when the message lands at the
                // head of the queue, i.e. nothing else is in flight
                if !m
                    .queue(&session)
                    .map(|q| q.future.is_empty())
                    .unwrap_or(false)
                {
                    continue;
                }
                let Ok(m1) = engine.apply_forward(m, &r) else {
                    continue;
                };
                let (want, receiver) = match r.rule {
                    RuleName::Out => (RuleName::In, r.subjects[1].clone()),
                    _ => (RuleName::Bra, r.subjects[1].clone()),
                };
                for second in engine.enumerate_forward(&m1) {
                    if second.rule == want
                        && second.session.as_ref() == Some(&session)
                        && second.subjects.first() == Some(&receiver)
                        && second.label == r.label
                    {
                        out.push(AtomicRedex {
                            rule: if r.rule == RuleName::Out {
                                AtomicRule::AC
                            } else {
                                AtomicRule::AS
                            },
                            session: Some(session.clone()),
                            subjects: vec![r.subjects[0].clone(), r.subjects[1].clone()],
                            label: r.label.clone(),
                            plan: vec![r.clone(), second],
                        });
                    }
                }
            }
            _ => {}
        }
    }
}

fn enumerate_backward_atomic(engine: &Engine, m: &Configuration, out: &mut Vec<AtomicRedex>) {
    for r in engine.enumerate_backward(m) {
        match r.rule {
            RuleName::RInit | RuleName::RBeta | RuleName::RSpawn => {
                out.push(AtomicRedex {
                    rule: match r.rule {
                        RuleName::RInit => AtomicRule::RInit,
                        RuleName::RBeta => AtomicRule::RBeta,
                        _ => AtomicRule::RSpawn,
                    },
                    session: r.session.clone(),
                    subjects: r.subjects.clone(),
                    label: None,
                    plan: vec![r],
                });
            }
            RuleName::RollS | RuleName::RollC => {
                let session = r.session.clone().expect("roll has a session");
                let receiver = r.subjects[0].clone();
                let sender = r.subjects[1].clone();
                let Ok(m1) = engine.apply_backward(m, &r) else {
                    continue;
                };
                let (undo_in, undo_out, rule) = match r.rule {
                    RuleName::RollS => (RuleName::RIn, RuleName::ROut, AtomicRule::RAC),
                    _ => (RuleName::RBra, RuleName::RSel, AtomicRule::RAS),
                };
                for second in engine.enumerate_backward(&m1) {
                    if second.rule != undo_in
                        || second.session.as_ref() != Some(&session)
                        || second.subjects.first() != Some(&receiver)
                    {
                        continue;
                    }
                    let Ok(m2) = engine.apply_backward(&m1, &second) else {
                        continue;
                    };
                    for third in engine.enumerate_backward(&m2) {
                        if third.rule == undo_out
                            && third.session.as_ref() == Some(&session)
                            && third.subjects.first() == Some(&sender)
                        {
                            out.push(AtomicRedex {
                                rule,
                                session: Some(session.clone()),
                                // stamps pair sender and receiver; keep the
                                // forward orientation (sender first)
                                subjects: vec![sender.clone(), receiver.clone()],
                                label: r.label.clone(),
                                plan: vec![r.clone(), second.clone(), third],
                            });
                        }
                    }
                }
            }
            _ => {}
        }
    }
}

/// Replays the decoupled composition of an atomic step.
pub fn apply_atomic(
    engine: &Engine,
    m: &Configuration,
    r: &AtomicRedex,
) -> Result<Configuration, StepError> {
    let mut c = m.clone();
    for step in &r.plan {
        c = engine.apply(&c, step)?;
    }
    Ok(c)
}

/// One explored atomic state.
#[derive(Clone, Debug)]
pub struct AtomicState {
    pub id: usize,
    pub config: Configuration,
    pub key: String,
    pub stable: bool,
}

#[derive(Clone, Debug)]
pub struct AtomicEdge {
    pub src: usize,
    pub dst: usize,
    pub redex: AtomicRedex,
}

#[derive(Clone, Debug, Default)]
pub struct AtomicLts {
    pub states: Vec<AtomicState>,
    pub edges: Vec<AtomicEdge>,
}

impl AtomicLts {
    pub fn state_id(&self, c: &Configuration) -> Option<usize> {
        let key = c.canonical_key();
        self.states.iter().position(|s| s.key == key)
    }
}

/// Breadth-first atomic reachability up to `depth`, states deduplicated by
/// canonical form.
pub fn atomic_closure(
    engine: &Engine,
    m0: &Configuration,
    dir: Direction,
    depth: usize,
    state_budget: usize,
) -> Result<AtomicLts, ExploreError> {
    let mut m0 = m0.clone();
    m0.normalize();
    let mut lts = AtomicLts::default();
    let mut index: HashMap<String, usize> = HashMap::new();
    index.insert(m0.canonical_key(), 0);
    lts.states.push(AtomicState {
        id: 0,
        key: m0.canonical_key(),
        stable: m0.is_stable(),
        config: m0,
    });
    let mut frontier: VecDeque<(usize, usize)> = VecDeque::new();
    frontier.push_back((0, 0));
    while let Some((id, d)) = frontier.pop_front() {
        if d == depth {
            continue;
        }
        let config = lts.states[id].config.clone();
        for r in enumerate_atomic(engine, &config, dir) {
            let next = apply_atomic(engine, &config, &r).expect("enumerated atomic step applies");
            let key = next.canonical_key();
            let nid = match index.get(&key) {
                Some(&i) => i,
                None => {
                    if lts.states.len() >= state_budget {
                        return Err(ExploreError::StateBudgetExceeded(state_budget));
                    }
                    let i = lts.states.len();
                    index.insert(key.clone(), i);
                    lts.states.push(AtomicState {
                        id: i,
                        key,
                        stable: next.is_stable(),
                        config: next,
                    });
                    frontier.push_back((i, d + 1));
                    i
                }
            };
            lts.edges.push(AtomicEdge {
                src: id,
                dst: nid,
                redex: r,
            });
        }
    }
    Ok(lts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{bundled, load};

    fn setup(src: &str) -> (Engine, Configuration) {
        let (_, program, config) = load(src).unwrap();
        (Engine::new(program), config)
    }

    fn step(engine: &Engine, m: &Configuration, rule: AtomicRule) -> Configuration {
        let rs = enumerate_atomic(engine, m, Direction::Both);
        let r = rs
            .iter()
            .find(|r| r.rule == rule)
            .unwrap_or_else(|| panic!("no {rule} step"));
        apply_atomic(engine, m, r).unwrap()
    }

    #[test]
    fn synchronization_is_one_atomic_step() {
        let (engine, m0) = setup(bundled::THREE_BUYER);
        let m1 = step(&engine, &m0, AtomicRule::Init);
        // exactly one forward atomic step at the stable start: the title
        let fwd = enumerate_atomic(&engine, &m1, Direction::Forward);
        assert_eq!(fwd.len(), 1);
        assert_eq!(fwd[0].rule, AtomicRule::AC);
        assert_eq!(fwd[0].plan.len(), 2);
        let m3 = apply_atomic(&engine, &m1, &fwd[0]).unwrap();
        assert!(m3.is_stable());

        // its inverse is the single backward atomic step undoing it
        let bwd = enumerate_atomic(&engine, &m3, Direction::Backward);
        let rac: Vec<&AtomicRedex> = bwd.iter().filter(|r| r.rule == AtomicRule::RAC).collect();
        assert_eq!(rac.len(), 1);
        assert_eq!(rac[0].plan.len(), 3);
        let back = apply_atomic(&engine, &m3, rac[0]).unwrap();
        assert!(back.congruent(&m1));
    }

    #[test]
    fn half_synchronized_state_offers_no_atomic_step_for_that_pair() {
        let (engine, m0) = setup(bundled::THREE_BUYER);
        let m1 = step(&engine, &m0, AtomicRule::Init);
        // take only the decoupled output half
        let out = engine
            .enumerate_forward(&m1)
            .into_iter()
            .find(|r| r.rule == RuleName::Out)
            .unwrap();
        let m2 = engine.apply_forward(&m1, &out).unwrap();
        let steps = enumerate_atomic(&engine, &m2, Direction::Both);
        assert!(
            steps
                .iter()
                .all(|r| !matches!(r.rule, AtomicRule::AC | AtomicRule::RAC)),
            "a half-done synchronization is neither redoable nor undoable atomically: {steps:?}"
        );
    }

    #[test]
    fn labelled_choice_atomic_roundtrip_stacks_both_sides() {
        let (engine, m0) = setup(bundled::BUYER_SELLER);
        let mut m = step(&engine, &m0, AtomicRule::Init);
        m = step(&engine, &m, AtomicRule::AC); // title
        m = step(&engine, &m, AtomicRule::AC); // quote
        let sels = enumerate_atomic(&engine, &m, Direction::Forward);
        assert_eq!(sels.len(), 2, "two selectable labels");
        assert!(sels.iter().all(|r| r.rule == AtomicRule::AS));
        let ok = sels
            .iter()
            .find(|r| r.label.as_ref().unwrap().as_str() == "ok")
            .unwrap();
        let chosen = apply_atomic(&engine, &m, ok).unwrap();
        // both endpoints stacked their discarded alternative
        let stacked = chosen
            .nodes
            .iter()
            .filter(|n| matches!(n, crate::runtime::Node::Running(r) if r.stack.len() == 1))
            .count();
        assert_eq!(stacked, 2);
        // and the atomic undo returns exactly
        let ras = enumerate_atomic(&engine, &chosen, Direction::Backward)
            .into_iter()
            .find(|r| r.rule == AtomicRule::RAS)
            .unwrap();
        let back = apply_atomic(&engine, &chosen, &ras).unwrap();
        assert!(back.congruent(&m));
    }
}
