//! Cursor semantics of global types.
//!
//! A protocol state is a global type with history: a stack of frames
//! recording completed prefixes and committed choices, plus a focus holding
//! the cursor. A directed exchange passes through three states (before the
//! send, in flight, delivered); a choice does the same but remembers the
//! discarded alternatives so they can be reinstated on rollback.
//!
//! Recursion unfolds lazily when the cursor reaches a `rec` binder; the
//! unfolding is recorded as a frame so that backward steps re-fold and the
//! start state is reproduced exactly.

use crate::ident::{Label, Participant, TypeVar};
use crate::types::{swap_neighbors, Branches, GlobalType, ValueType};
use serde::{Deserialize, Serialize};
use std::collections::{HashSet, VecDeque};
use std::fmt;

/// A completed piece of protocol, kept to the left of the cursor.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum GlobalFrame {
    /// A fully delivered exchange `p -> q : <U>`.
    Exchange {
        from: Participant,
        to: Participant,
        payload: ValueType,
    },
    /// A committed choice: the chosen branch continues under the cursor,
    /// the alternatives are retained for rollback.
    Choice {
        from: Participant,
        to: Participant,
        branches: Branches<GlobalType>,
        chosen: Label,
    },
    /// One unfolding of a recursive type; `rec` is the binder that was
    /// unfolded, so a backward step can re-fold to it.
    Unfold { rec: GlobalType },
}

/// Position of the cursor relative to the head of the remaining protocol.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum GlobalFocus {
    /// `^^ G` — everything in `G` is still to come.
    Before(GlobalType),
    /// `p ->^^ q : <U> . G` — the value is in flight.
    MidExchange {
        from: Participant,
        to: Participant,
        payload: ValueType,
        cont: GlobalType,
    },
    /// `p ->^^ q : {...}` — the label `chosen` is in flight.
    MidChoice {
        from: Participant,
        to: Participant,
        branches: Branches<GlobalType>,
        chosen: Label,
    },
}

/// A global type with history: frames to the left of the cursor, focus at it.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct HistoryGlobal {
    pub frames: Vec<GlobalFrame>,
    pub focus: GlobalFocus,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum GlobalRule {
    FVal1,
    FVal2,
    FCho1,
    FCho2,
    BVal1,
    BVal2,
    BCho1,
    BCho2,
}

impl GlobalRule {
    pub fn is_forward(self) -> bool {
        matches!(
            self,
            GlobalRule::FVal1 | GlobalRule::FVal2 | GlobalRule::FCho1 | GlobalRule::FCho2
        )
    }

    /// The rule that undoes this one (and vice versa).
    pub fn inverse(self) -> GlobalRule {
        match self {
            GlobalRule::FVal1 => GlobalRule::BVal1,
            GlobalRule::FVal2 => GlobalRule::BVal2,
            GlobalRule::FCho1 => GlobalRule::BCho1,
            GlobalRule::FCho2 => GlobalRule::BCho2,
            GlobalRule::BVal1 => GlobalRule::FVal1,
            GlobalRule::BVal2 => GlobalRule::FVal2,
            GlobalRule::BCho1 => GlobalRule::FCho1,
            GlobalRule::BCho2 => GlobalRule::FCho2,
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct GlobalLabelled {
    pub rule: GlobalRule,
    pub from: Participant,
    pub to: Participant,
    pub label: Option<Label>,
}

impl fmt::Display for GlobalLabelled {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}({},{}", self.rule, self.from, self.to)?;
        if let Some(l) = &self.label {
            write!(f, ",{l}")?;
        }
        write!(f, ")")
    }
}

impl HistoryGlobal {
    /// The start state `^^ G`.
    pub fn start(g: GlobalType) -> HistoryGlobal {
        HistoryGlobal {
            frames: Vec::new(),
            focus: GlobalFocus::Before(g),
        }
    }

    pub fn at_start(&self) -> bool {
        self.frames.is_empty() && matches!(self.focus, GlobalFocus::Before(_))
    }

    /// All forward successors, each labelled with the rule instance used.
    pub fn forward(&self) -> Vec<(GlobalLabelled, HistoryGlobal)> {
        let mut out = Vec::new();
        match &self.focus {
            GlobalFocus::Before(g) => {
                // unfold recursion lazily until the head is an exchange,
                // choice, or end; each unfolding is recorded as a frame
                let mut frames = self.frames.clone();
                let mut head = g.clone();
                while let GlobalType::Rec { .. } = head {
                    let unfolded = head.unfold_once();
                    frames.push(GlobalFrame::Unfold { rec: head });
                    head = unfolded;
                }
                match head {
                    GlobalType::Exchange {
                        from,
                        to,
                        payload,
                        cont,
                    } => {
                        out.push((
                            GlobalLabelled {
                                rule: GlobalRule::FVal1,
                                from: from.clone(),
                                to: to.clone(),
                                label: None,
                            },
                            HistoryGlobal {
                                frames,
                                focus: GlobalFocus::MidExchange {
                                    from,
                                    to,
                                    payload,
                                    cont: *cont,
                                },
                            },
                        ));
                    }
                    GlobalType::Choice { from, to, branches } => {
                        for (l, _) in &branches {
                            out.push((
                                GlobalLabelled {
                                    rule: GlobalRule::FCho1,
                                    from: from.clone(),
                                    to: to.clone(),
                                    label: Some(l.clone()),
                                },
                                HistoryGlobal {
                                    frames: frames.clone(),
                                    focus: GlobalFocus::MidChoice {
                                        from: from.clone(),
                                        to: to.clone(),
                                        branches: branches.clone(),
                                        chosen: l.clone(),
                                    },
                                },
                            ));
                        }
                    }
                    GlobalType::End | GlobalType::Var(_) => {}
                    GlobalType::Rec { .. } => unreachable!(),
                }
            }
            GlobalFocus::MidExchange {
                from,
                to,
                payload,
                cont,
            } => {
                let mut frames = self.frames.clone();
                frames.push(GlobalFrame::Exchange {
                    from: from.clone(),
                    to: to.clone(),
                    payload: payload.clone(),
                });
                out.push((
                    GlobalLabelled {
                        rule: GlobalRule::FVal2,
                        from: from.clone(),
                        to: to.clone(),
                        label: None,
                    },
                    HistoryGlobal {
                        frames,
                        focus: GlobalFocus::Before(cont.clone()),
                    },
                ));
            }
            GlobalFocus::MidChoice {
                from,
                to,
                branches,
                chosen,
            } => {
                let body = branches
                    .iter()
                    .find(|(l, _)| l == chosen)
                    .map(|(_, g)| g.clone())
                    .expect("chosen label present in branch map");
                let mut frames = self.frames.clone();
                frames.push(GlobalFrame::Choice {
                    from: from.clone(),
                    to: to.clone(),
                    branches: branches.clone(),
                    chosen: chosen.clone(),
                });
                out.push((
                    GlobalLabelled {
                        rule: GlobalRule::FCho2,
                        from: from.clone(),
                        to: to.clone(),
                        label: Some(chosen.clone()),
                    },
                    HistoryGlobal {
                        frames,
                        focus: GlobalFocus::Before(body),
                    },
                ));
            }
        }
        out
    }

    /// All backward predecessors reachable in one step.
    pub fn backward(&self) -> Vec<(GlobalLabelled, HistoryGlobal)> {
        let mut out = Vec::new();
        match &self.focus {
            GlobalFocus::MidExchange {
                from,
                to,
                payload,
                cont,
            } => {
                let focus = GlobalFocus::Before(GlobalType::Exchange {
                    from: from.clone(),
                    to: to.clone(),
                    payload: payload.clone(),
                    cont: Box::new(cont.clone()),
                });
                out.push((
                    GlobalLabelled {
                        rule: GlobalRule::BVal1,
                        from: from.clone(),
                        to: to.clone(),
                        label: None,
                    },
                    refold(self.frames.clone(), focus),
                ));
            }
            GlobalFocus::MidChoice {
                from,
                to,
                branches,
                chosen,
            } => {
                let focus = GlobalFocus::Before(GlobalType::Choice {
                    from: from.clone(),
                    to: to.clone(),
                    branches: branches.clone(),
                });
                out.push((
                    GlobalLabelled {
                        rule: GlobalRule::BCho1,
                        from: from.clone(),
                        to: to.clone(),
                        label: Some(chosen.clone()),
                    },
                    refold(self.frames.clone(), focus),
                ));
            }
            GlobalFocus::Before(g) => match self.frames.last() {
                Some(GlobalFrame::Exchange { from, to, payload }) => {
                    let mut frames = self.frames.clone();
                    frames.pop();
                    out.push((
                        GlobalLabelled {
                            rule: GlobalRule::BVal2,
                            from: from.clone(),
                            to: to.clone(),
                            label: None,
                        },
                        HistoryGlobal {
                            frames,
                            focus: GlobalFocus::MidExchange {
                                from: from.clone(),
                                to: to.clone(),
                                payload: payload.clone(),
                                cont: g.clone(),
                            },
                        },
                    ));
                }
                Some(GlobalFrame::Choice {
                    from,
                    to,
                    branches,
                    chosen,
                }) => {
                    let mut frames = self.frames.clone();
                    frames.pop();
                    out.push((
                        GlobalLabelled {
                            rule: GlobalRule::BCho2,
                            from: from.clone(),
                            to: to.clone(),
                            label: Some(chosen.clone()),
                        },
                        HistoryGlobal {
                            frames,
                            focus: GlobalFocus::MidChoice {
                                from: from.clone(),
                                to: to.clone(),
                                branches: branches.clone(),
                                chosen: chosen.clone(),
                            },
                        },
                    ));
                }
                Some(GlobalFrame::Unfold { .. }) => {
                    debug_assert!(false, "unfold frame directly under a Before focus");
                }
                None => {}
            },
        }
        out
    }

    /// Histories equivalent to this one by swapping independent exchanges
    /// in the still-to-come part of the protocol. Only a cursor-at-rest
    /// focus can be swapped; an in-flight exchange or choice pins the head.
    pub fn swap_neighbors(&self) -> Vec<HistoryGlobal> {
        match &self.focus {
            GlobalFocus::Before(g) => swap_neighbors(g)
                .into_iter()
                .map(|g2| HistoryGlobal {
                    frames: self.frames.clone(),
                    focus: GlobalFocus::Before(g2),
                })
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Bounded closure of `self` under swapping.
    pub fn swap_closure(&self, budget: usize) -> Vec<HistoryGlobal> {
        let mut seen: HashSet<HistoryGlobal> = HashSet::new();
        let mut order = Vec::new();
        let mut queue = VecDeque::new();
        seen.insert(self.clone());
        order.push(self.clone());
        queue.push_back(self.clone());
        while let Some(h) = queue.pop_front() {
            for n in h.swap_neighbors() {
                if seen.len() >= budget {
                    return order;
                }
                if seen.insert(n.clone()) {
                    order.push(n.clone());
                    queue.push_back(n);
                }
            }
        }
        order
    }
}

/// Re-folds recursion after a backward step: while the top frame is an
/// unfolding whose expansion matches the focus, pop it and restore the
/// folded binder.
fn refold(mut frames: Vec<GlobalFrame>, mut focus: GlobalFocus) -> HistoryGlobal {
    loop {
        match (frames.last(), &focus) {
            (Some(GlobalFrame::Unfold { rec }), GlobalFocus::Before(g)) => {
                debug_assert_eq!(rec.unfold_once(), *g, "unfold frame out of sync");
                let rec = rec.clone();
                frames.pop();
                focus = GlobalFocus::Before(rec);
            }
            _ => break,
        }
    }
    HistoryGlobal { frames, focus }
}

/// Breadth-first set of states reachable from `^^ g` within `depth` steps,
/// following forward and backward transitions.
pub fn reachable(g: &GlobalType, depth: usize) -> Vec<HistoryGlobal> {
    let start = HistoryGlobal::start(g.clone());
    let mut seen: HashSet<HistoryGlobal> = HashSet::new();
    let mut order = Vec::new();
    let mut frontier = VecDeque::new();
    seen.insert(start.clone());
    order.push(start.clone());
    frontier.push_back((start, 0usize));
    while let Some((h, d)) = frontier.pop_front() {
        if d == depth {
            continue;
        }
        for (_, next) in h.forward().into_iter().chain(h.backward()) {
            if seen.insert(next.clone()) {
                order.push(next.clone());
                frontier.push_back((next, d + 1));
            }
        }
    }
    order
}

impl fmt::Display for HistoryGlobal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for fr in &self.frames {
            match fr {
                GlobalFrame::Exchange { from, to, payload } => {
                    write!(f, "{from} -> {to} : <{payload}> . ")?;
                }
                GlobalFrame::Choice {
                    from, to, chosen, ..
                } => {
                    write!(f, "{from} -> {to} : [{chosen}] . ")?;
                }
                GlobalFrame::Unfold { .. } => {}
            }
        }
        match &self.focus {
            GlobalFocus::Before(g) => write!(f, "^^ {g}"),
            GlobalFocus::MidExchange {
                from,
                to,
                payload,
                cont,
            } => write!(f, "{from} ->^^ {to} : <{payload}> . {cont}"),
            GlobalFocus::MidChoice {
                from,
                to,
                branches,
                chosen,
            } => {
                write!(f, "{from} ->^^ {to} : {{ ")?;
                for (i, (l, g)) in branches.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    if l == chosen {
                        write!(f, "[{l}]: {g}")?;
                    } else {
                        write!(f, "{l}: {g}")?;
                    }
                }
                write!(f, " }}")
            }
        }
    }
}

/// Picks a recursion-variable name not already taken.
pub fn fresh_type_var(base: &str, taken: &HashSet<TypeVar>) -> TypeVar {
    let mut i = 0;
    loop {
        let cand = if i == 0 {
            TypeVar::new(base)
        } else {
            TypeVar::new(format!("{base}{i}"))
        };
        if !taken.contains(&cand) {
            return cand;
        }
        i += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exchange(from: &str, to: &str, cont: GlobalType) -> GlobalType {
        GlobalType::exchange(from, to, ValueType::Nat, cont)
    }

    #[test]
    fn value_exchange_three_states() {
        let g = exchange("A", "S", GlobalType::End);
        let h0 = HistoryGlobal::start(g);
        let f = h0.forward();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].0.rule, GlobalRule::FVal1);
        let h1 = f[0].1.clone();
        assert!(matches!(h1.focus, GlobalFocus::MidExchange { .. }));
        let f2 = h1.forward();
        assert_eq!(f2.len(), 1);
        assert_eq!(f2[0].0.rule, GlobalRule::FVal2);
        let h2 = f2[0].1.clone();
        // cursor at end: no further forward steps
        assert!(h2.forward().is_empty());
        // and the mid state goes back to the start
        let b = h1.backward();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].0.rule, GlobalRule::BVal1);
        assert_eq!(b[0].1, h0);
    }

    #[test]
    fn finished_state_has_no_forward_steps() {
        let h = HistoryGlobal::start(GlobalType::End);
        assert!(h.forward().is_empty());
        assert!(h.backward().is_empty());
    }

    #[test]
    fn choice_yields_one_successor_per_label() {
        let g = GlobalType::choice(
            "p",
            "q",
            vec![
                (Label::new("l1"), GlobalType::End),
                (Label::new("l2"), GlobalType::End),
            ],
        );
        let h = HistoryGlobal::start(g);
        let f = h.forward();
        assert_eq!(f.len(), 2);
        assert!(f.iter().all(|(l, _)| l.rule == GlobalRule::FCho1));
        let labels: Vec<_> = f.iter().map(|(l, _)| l.label.clone().unwrap()).collect();
        assert_eq!(labels, vec![Label::new("l1"), Label::new("l2")]);
        // committing one branch and stepping back re-assembles the choice
        let mid = f[0].1.clone();
        let committed = mid.forward()[0].1.clone();
        let back = committed.backward();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].0.rule, GlobalRule::BCho2);
        assert_eq!(back[0].1, mid);
    }

    #[test]
    fn backward_of_start_is_empty() {
        let g = exchange("p", "q", GlobalType::End);
        assert!(HistoryGlobal::start(g).backward().is_empty());
    }

    #[test]
    fn reachable_counts_small_protocol() {
        // p -> q : <nat> . end has exactly the three cursor states
        let g = exchange("p", "q", GlobalType::End);
        let states = reachable(&g, 2);
        assert_eq!(states.len(), 3);
        // hand enumeration oracle for a two-exchange protocol at depth 4:
        // ^^a.b, a-mid, a.^^b, a.b-mid, a.b.^^end
        let g2 = exchange("p", "q", exchange("q", "r", GlobalType::End));
        let states2 = reachable(&g2, 4);
        assert_eq!(states2.len(), 5);
    }

    #[test]
    fn recursion_unfolds_and_refolds_exactly() {
        let g = GlobalType::rec("X", exchange("p", "q", GlobalType::Var(TypeVar::new("X"))));
        let h0 = HistoryGlobal::start(g);
        let f = h0.forward();
        assert_eq!(f.len(), 1);
        let mid = f[0].1.clone();
        // the unfolding is recorded
        assert!(matches!(
            mid.frames.last(),
            Some(GlobalFrame::Unfold { .. })
        ));
        // and undone exactly on the way back
        let back = mid.backward();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].1, h0);
        // a second loop iteration adds more frames and still reverses cleanly
        let after = mid.forward()[0].1.clone();
        let mid2 = after.forward()[0].1.clone();
        assert_eq!(mid2.backward()[0].1, after);
    }

    #[test]
    fn loop_property_exhaustive_at_small_depth() {
        let g = GlobalType::choice(
            "p",
            "q",
            vec![
                (Label::new("go"), exchange("q", "r", GlobalType::End)),
                (Label::new("stop"), GlobalType::End),
            ],
        );
        for h in reachable(&g, 6) {
            for (lab, next) in h.forward() {
                let found = next.backward().into_iter().any(|(bl, prev)| {
                    bl.rule == lab.rule.inverse()
                        && bl.from == lab.from
                        && bl.to == lab.to
                        && bl.label == lab.label
                        && prev == h
                });
                assert!(found, "no inverse for {lab} from {h}");
            }
            for (lab, prev) in h.backward() {
                let found = prev.forward().into_iter().any(|(fl, next)| {
                    fl.rule == lab.rule.inverse()
                        && fl.from == lab.from
                        && fl.to == lab.to
                        && fl.label == lab.label
                        && next == h
                });
                assert!(found, "no inverse for {lab} from {h}");
            }
        }
    }

    #[test]
    fn mid_focus_has_no_swaps() {
        let g = exchange("a", "b", exchange("c", "d", GlobalType::End));
        let h = HistoryGlobal::start(g);
        assert_eq!(h.swap_neighbors().len(), 1);
        let mid = h.forward()[0].1.clone();
        assert!(mid.swap_neighbors().is_empty());
    }
}
