//! Transitions with stamps, concurrency and conflict, residuals, traces,
//! trace equivalence, and the executable causal-consistency checks over the
//! atomic semantics.
//!
//! Two coinitial transitions conflict when their stamps intersect;
//! otherwise they are concurrent and commute to a common state. Trace
//! equivalence is generated by swapping adjacent concurrent steps and
//! cancelling adjacent inverse steps; both generators preserve endpoints
//! and never lengthen a trace, so the equivalence class explored from a
//! trace is finite and two traces are equivalent exactly when their
//! classes intersect.

use crate::atomic::{apply_atomic, atomic_closure, enumerate_atomic, AtomicRedex, AtomicRule};
use crate::decoupled::{Direction, Engine, Subject};
use crate::runtime::Configuration;
use serde::Serialize;
use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CausalError {
    #[error("transitions are not coinitial")]
    NotCoinitial,
    #[error("residual missing: no step {0} at the target of the first transition")]
    ResidualMissing(String),
    #[error("rewrite budget of {0} exhausted")]
    BudgetExhausted(usize),
    #[error("rearranging stuck at an opposing pair: {0}")]
    RearrangeStuck(String),
}

/// One atomic step between two configurations.
#[derive(Clone, Debug)]
pub struct Transition {
    pub source: Configuration,
    pub source_key: String,
    pub target: Configuration,
    pub target_key: String,
    pub redex: AtomicRedex,
}

impl Transition {
    pub fn make(engine: &Engine, source: &Configuration, redex: AtomicRedex) -> Transition {
        let target = apply_atomic(engine, source, &redex).expect("enabled step applies");
        Transition {
            source_key: source.canonical_key(),
            target_key: target.canonical_key(),
            source: source.clone(),
            target,
            redex,
        }
    }

    /// The set of locations and participants the step touches.
    pub fn stamp(&self) -> BTreeSet<Subject> {
        self.redex.subjects.iter().cloned().collect()
    }

    pub fn is_forward(&self) -> bool {
        self.redex.rule.is_forward()
    }

    /// Identity of the inverse step.
    pub fn inverse_identity(&self) -> String {
        let mut inv = self.redex.clone();
        inv.rule = inv.rule.inverse();
        // plans of a step and its undoing touch the same locations, but in
        // arbitrary order; identity sorts them to be orientation-free
        AtomicRedex {
            rule: inv.rule,
            session: inv.session,
            subjects: inv.subjects,
            label: inv.label,
            plan: inv.plan,
        }
        .identity()
    }
}

/// Two coinitial transitions are concurrent iff their stamps are disjoint.
pub fn concurrent(t1: &Transition, t2: &Transition) -> Result<bool, CausalError> {
    if t1.source_key != t2.source_key {
        return Err(CausalError::NotCoinitial);
    }
    Ok(t1.stamp().is_disjoint(&t2.stamp()))
}

/// The residual of `t2` after `t1`: the step with `t2`'s identity enabled
/// at the target of `t1`. Its absence falsifies the commutation property
/// and is reported as an error.
pub fn residual(
    engine: &Engine,
    t2: &Transition,
    t1: &Transition,
) -> Result<Transition, CausalError> {
    if !concurrent(t1, t2)? {
        return Err(CausalError::ResidualMissing(format!(
            "{} conflicts with {}",
            t2.redex.describe(),
            t1.redex.describe()
        )));
    }
    let want = t2.redex.identity();
    let found = enumerate_atomic(engine, &t1.target, Direction::Both)
        .into_iter()
        .find(|r| r.identity() == want)
        .ok_or_else(|| CausalError::ResidualMissing(t2.redex.describe()))?;
    Ok(Transition::make(engine, &t1.target, found))
}

/// A sequence of composable transitions.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    pub start_key: String,
    pub steps: Vec<Transition>,
}

impl Trace {
    pub fn empty(m: &Configuration) -> Trace {
        Trace {
            start_key: m.canonical_key(),
            steps: Vec::new(),
        }
    }

    pub fn target_key(&self) -> &str {
        self.steps
            .last()
            .map(|t| t.target_key.as_str())
            .unwrap_or(&self.start_key)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_forward_only(&self) -> bool {
        self.steps.iter().all(|t| t.is_forward())
    }

    pub fn is_backward_only(&self) -> bool {
        self.steps.iter().all(|t| !t.is_forward())
    }

    /// Canonical encoding: start state plus the step identities.
    pub fn encoding(&self) -> String {
        let mut s = self.start_key.clone();
        for t in &self.steps {
            s.push(';');
            s.push_str(&t.redex.identity());
        }
        s
    }

    pub fn describe(&self) -> String {
        self.steps
            .iter()
            .map(|t| t.redex.describe())
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// All single-step rewrites of a trace under the two generators.
fn rewrite_neighbors(engine: &Engine, r: &Trace) -> Vec<Trace> {
    let mut out = Vec::new();
    for i in 0..r.steps.len() {
        // cancellation of adjacent inverse steps
        if i + 1 < r.steps.len() {
            let u = &r.steps[i];
            let v = &r.steps[i + 1];
            if v.redex.identity() == u.inverse_identity() && v.target_key == u.source_key {
                let mut steps = r.steps.clone();
                steps.drain(i..=i + 1);
                out.push(Trace {
                    start_key: r.start_key.clone(),
                    steps,
                });
            }
            // swap of adjacent concurrent steps: the second step must
            // already be enabled before the first, with a disjoint stamp
            if u.stamp().is_disjoint(&v.stamp()) {
                let before = &u.source;
                let v_at_before = enumerate_atomic(engine, before, Direction::Both)
                    .into_iter()
                    .find(|c| c.identity() == v.redex.identity());
                if let Some(v_redex) = v_at_before {
                    let v_first = Transition::make(engine, before, v_redex);
                    if let Ok(u_after) = residual(engine, u, &v_first) {
                        if u_after.target_key == v.target_key {
                            let mut steps = r.steps.clone();
                            steps[i] = v_first;
                            steps[i + 1] = u_after;
                            out.push(Trace {
                                start_key: r.start_key.clone(),
                                steps,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

/// The equivalence class of `r` under swap and cancellation, capped at
/// `budget` distinct traces. Returns the class and whether it is complete.
fn trace_class(
    engine: &Engine,
    r: &Trace,
    budget: usize,
) -> (HashSet<String>, Vec<Trace>, bool) {
    let mut seen: HashSet<String> = HashSet::new();
    let mut items = Vec::new();
    let mut queue = VecDeque::new();
    seen.insert(r.encoding());
    items.push(r.clone());
    queue.push_back(r.clone());
    let mut complete = true;
    while let Some(t) = queue.pop_front() {
        for n in rewrite_neighbors(engine, &t) {
            if seen.len() >= budget {
                complete = false;
                continue;
            }
            if seen.insert(n.encoding()) {
                items.push(n.clone());
                queue.push_back(n);
            }
        }
    }
    (seen, items, complete)
}

/// Decides trace equivalence by intersecting the two rewrite classes.
pub fn trace_equivalent(
    engine: &Engine,
    r1: &Trace,
    r2: &Trace,
    budget: usize,
) -> Result<bool, CausalError> {
    if r1.start_key != r2.start_key {
        return Err(CausalError::NotCoinitial);
    }
    let (c1, _, complete1) = trace_class(engine, r1, budget);
    if c1.contains(&r2.encoding()) {
        return Ok(true);
    }
    let (c2, _, complete2) = trace_class(engine, r2, budget);
    if c2.iter().any(|e| c1.contains(e)) {
        return Ok(true);
    }
    if complete1 && complete2 {
        Ok(false)
    } else {
        Err(CausalError::BudgetExhausted(budget))
    }
}

/// Rewrites a trace into a backward-only prefix followed by a forward-only
/// suffix, by repeatedly cancelling or commuting the earliest
/// forward-then-backward pair.
pub fn rearrange(engine: &Engine, r: &Trace, budget: usize) -> Result<(Trace, Trace), CausalError> {
    let mut cur = r.clone();
    let mut fuel = budget;
    loop {
        let pos = cur
            .steps
            .windows(2)
            .position(|w| w[0].is_forward() && !w[1].is_forward());
        let Some(i) = pos else { break };
        if fuel == 0 {
            return Err(CausalError::BudgetExhausted(budget));
        }
        fuel -= 1;
        let u = cur.steps[i].clone();
        let v = cur.steps[i + 1].clone();
        if v.redex.identity() == u.inverse_identity() && v.target_key == u.source_key {
            cur.steps.drain(i..=i + 1);
            continue;
        }
        // commute the backward step to the left of the forward one
        let enabled = enumerate_atomic(engine, &u.source, Direction::Both)
            .into_iter()
            .find(|c| c.identity() == v.redex.identity());
        let swapped = (|| {
            let v_redex = enabled?;
            let v_first = Transition::make(engine, &u.source, v_redex);
            if !u.stamp().is_disjoint(&v.stamp()) {
                return None;
            }
            let u_after = residual(engine, &u, &v_first).ok()?;
            (u_after.target_key == v.target_key).then_some((v_first, u_after))
        })();
        match swapped {
            Some((v_first, u_after)) => {
                cur.steps[i] = v_first;
                cur.steps[i + 1] = u_after;
            }
            None => {
                return Err(CausalError::RearrangeStuck(format!(
                    "{} ; {}",
                    u.redex.describe(),
                    v.redex.describe()
                )))
            }
        }
    }
    let split = cur
        .steps
        .iter()
        .position(|t| t.is_forward())
        .unwrap_or(cur.steps.len());
    let backward = Trace {
        start_key: cur.start_key.clone(),
        steps: cur.steps[..split].to_vec(),
    };
    let forward = Trace {
        start_key: backward.target_key().to_string(),
        steps: cur.steps[split..].to_vec(),
    };
    debug_assert!(backward.is_backward_only());
    debug_assert!(forward.is_forward_only());
    Ok((backward, forward))
}

/// Every transition's stamp has the shape its rule prescribes.
pub fn stamp_well_formed(t: &Transition) -> bool {
    let parts = t
        .redex
        .subjects
        .iter()
        .filter(|s| matches!(s, Subject::Part(_)))
        .count();
    let locs = t.redex.subjects.len() - parts;
    match t.redex.rule {
        AtomicRule::Init | AtomicRule::RInit => parts == 0 && locs >= 1,
        AtomicRule::AC | AtomicRule::AS | AtomicRule::RAC | AtomicRule::RAS => {
            parts == 2 && locs == 0
        }
        AtomicRule::Beta | AtomicRule::Spawn | AtomicRule::RBeta | AtomicRule::RSpawn => {
            parts == 1 && locs == 1
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CausalReport {
    pub traces: usize,
    pub pairs_checked: usize,
    pub cofinal_pairs: usize,
    pub equivalent_and_cofinal: usize,
    pub violations: Vec<String>,
}

/// Enumerates all coinitial trace pairs from `m0` up to `maxlen` steps and
/// checks that equivalence and cofinality coincide. Both rewrite generators
/// preserve endpoints, so equivalence of non-cofinal pairs is impossible by
/// construction; the substantive direction checked exhaustively is that
/// every cofinal pair is equivalent.
pub fn check_causal_consistency(
    engine: &Engine,
    m0: &Configuration,
    maxlen: usize,
    budget: usize,
) -> Result<CausalReport, CausalError> {
    let mut traces: Vec<Trace> = Vec::new();
    let mut stack = vec![Trace::empty(m0)];
    let mut m0n = m0.clone();
    m0n.normalize();
    let mut state_cache: HashMap<String, Configuration> = HashMap::new();
    state_cache.insert(m0n.canonical_key(), m0n.clone());
    while let Some(t) = stack.pop() {
        traces.push(t.clone());
        if t.len() == maxlen {
            continue;
        }
        let at = t
            .steps
            .last()
            .map(|s| s.target.clone())
            .unwrap_or_else(|| m0n.clone());
        for r in enumerate_atomic(engine, &at, Direction::Both) {
            let step = Transition::make(engine, &at, r);
            let mut next = t.clone();
            next.steps.push(step);
            stack.push(next);
        }
    }
    let mut report = CausalReport {
        traces: traces.len(),
        pairs_checked: 0,
        cofinal_pairs: 0,
        equivalent_and_cofinal: 0,
        violations: Vec::new(),
    };
    for i in 0..traces.len() {
        for j in (i + 1)..traces.len() {
            report.pairs_checked += 1;
            let cofinal = traces[i].target_key() == traces[j].target_key();
            if !cofinal {
                continue;
            }
            report.cofinal_pairs += 1;
            match trace_equivalent(engine, &traces[i], &traces[j], budget) {
                Ok(true) => report.equivalent_and_cofinal += 1,
                Ok(false) => report.violations.push(format!(
                    "cofinal but inequivalent: [{}] vs [{}]",
                    traces[i].describe(),
                    traces[j].describe()
                )),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SquareReport {
    pub states: usize,
    pub concurrent_pairs: usize,
    pub violations: Vec<String>,
}

/// For every reachable state and every coinitial pair of concurrent atomic
/// steps, both residuals must exist and close the diamond.
pub fn check_square(
    engine: &Engine,
    m0: &Configuration,
    depth: usize,
    state_budget: usize,
) -> Result<SquareReport, crate::decoupled::ExploreError> {
    let lts = atomic_closure(engine, m0, Direction::Both, depth, state_budget)?;
    let mut report = SquareReport {
        states: lts.states.len(),
        concurrent_pairs: 0,
        violations: Vec::new(),
    };
    for st in &lts.states {
        let redexes = enumerate_atomic(engine, &st.config, Direction::Both);
        for i in 0..redexes.len() {
            for j in (i + 1)..redexes.len() {
                let t1 = Transition::make(engine, &st.config, redexes[i].clone());
                let t2 = Transition::make(engine, &st.config, redexes[j].clone());
                if !concurrent(&t1, &t2).expect("coinitial by construction") {
                    continue;
                }
                report.concurrent_pairs += 1;
                if !stamp_well_formed(&t1) || !stamp_well_formed(&t2) {
                    report.violations.push(format!(
                        "malformed stamp in {} or {}",
                        t1.redex.describe(),
                        t2.redex.describe()
                    ));
                    continue;
                }
                match (residual(engine, &t2, &t1), residual(engine, &t1, &t2)) {
                    (Ok(a), Ok(b)) => {
                        if a.target_key != b.target_key {
                            report.violations.push(format!(
                                "diamond does not close for {} / {} at state {}",
                                t1.redex.describe(),
                                t2.redex.describe(),
                                st.id
                            ));
                        }
                    }
                    (r1, r2) => {
                        let missing = [r1.err(), r2.err()]
                            .into_iter()
                            .flatten()
                            .map(|e| e.to_string())
                            .collect::<Vec<_>>()
                            .join(" / ");
                        report
                            .violations
                            .push(format!("missing residual: {missing}"));
                    }
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{bundled, load};

    fn setup(src: &str) -> (Engine, Configuration) {
        let (_, program, config) = load(src).unwrap();
        (Engine::new(program), config)
    }

    fn post_init(engine: &Engine, m0: &Configuration) -> Configuration {
        let r = enumerate_atomic(engine, m0, Direction::Forward)
            .into_iter()
            .find(|r| r.rule == AtomicRule::Init)
            .unwrap();
        apply_atomic(engine, m0, &r).unwrap()
    }

    #[test]
    fn disjoint_stamps_are_concurrent() {
        let (engine, m0) = setup(bundled::FOUR_PARTY);
        let m1 = post_init(&engine, &m0);
        let steps = enumerate_atomic(&engine, &m1, Direction::Forward);
        let acs: Vec<_> = steps.iter().filter(|r| r.rule == AtomicRule::AC).collect();
        assert_eq!(acs.len(), 2, "two independent exchanges enabled");
        let t1 = Transition::make(&engine, &m1, acs[0].clone());
        let t2 = Transition::make(&engine, &m1, acs[1].clone());
        assert!(concurrent(&t1, &t2).unwrap());
        // residuals exist and close the diamond
        let r21 = residual(&engine, &t2, &t1).unwrap();
        let r12 = residual(&engine, &t1, &t2).unwrap();
        assert_eq!(r21.target_key, r12.target_key);
    }

    #[test]
    fn shared_participant_conflicts() {
        let (engine, m0) = setup(bundled::BUYER_SELLER);
        let m1 = post_init(&engine, &m0);
        // the only forward step (title) and its own inverse share stamps
        let fwd = enumerate_atomic(&engine, &m1, Direction::Forward);
        let t = Transition::make(&engine, &m1, fwd[0].clone());
        let back = enumerate_atomic(&engine, &m1, Direction::Backward);
        let rinit = Transition::make(&engine, &m1, back[0].clone());
        // different stamps kinds: {B,S} vs {l1,l2}; locations and
        // participants never collide, so these are concurrent only if the
        // stamp sets are disjoint
        let con = concurrent(&t, &rinit).unwrap();
        assert_eq!(
            con,
            t.stamp().is_disjoint(&rinit.stamp())
        );
        // not coinitial is an error
        let m3 = t.target.clone();
        let fwd3 = enumerate_atomic(&engine, &m3, Direction::Forward);
        let t3 = Transition::make(&engine, &m3, fwd3[0].clone());
        assert_eq!(concurrent(&t, &t3), Err(CausalError::NotCoinitial));
    }

    #[test]
    fn cancellation_makes_roundtrip_equivalent_to_empty() {
        let (engine, m0) = setup(bundled::BUYER_SELLER);
        let m1 = post_init(&engine, &m0);
        let fwd = enumerate_atomic(&engine, &m1, Direction::Forward);
        let t = Transition::make(&engine, &m1, fwd[0].clone());
        let back = enumerate_atomic(&engine, &t.target, Direction::Backward)
            .into_iter()
            .find(|r| r.identity() == t.inverse_identity())
            .unwrap();
        let tb = Transition::make(&engine, &t.target, back);
        let roundtrip = Trace {
            start_key: m1.canonical_key(),
            steps: vec![t, tb],
        };
        let empty = Trace::empty(&m1);
        assert!(trace_equivalent(&engine, &roundtrip, &empty, 1000).unwrap());
        assert!(trace_equivalent(&engine, &empty, &empty, 10).unwrap());
    }

    #[test]
    fn swapping_independent_exchanges_is_equivalence() {
        let (engine, m0) = setup(bundled::FOUR_PARTY);
        let m1 = post_init(&engine, &m0);
        let steps = enumerate_atomic(&engine, &m1, Direction::Forward);
        let acs: Vec<_> = steps
            .iter()
            .filter(|r| r.rule == AtomicRule::AC)
            .cloned()
            .collect();
        let t1 = Transition::make(&engine, &m1, acs[0].clone());
        let t2_after = residual(
            &engine,
            &Transition::make(&engine, &m1, acs[1].clone()),
            &t1,
        )
        .unwrap();
        let order_a = Trace {
            start_key: m1.canonical_key(),
            steps: vec![t1.clone(), t2_after],
        };
        let t2 = Transition::make(&engine, &m1, acs[1].clone());
        let t1_after = residual(&engine, &t1, &t2).unwrap();
        let order_b = Trace {
            start_key: m1.canonical_key(),
            steps: vec![t2, t1_after],
        };
        assert!(trace_equivalent(&engine, &order_a, &order_b, 1000).unwrap());
    }

    #[test]
    fn rearrange_examples() {
        let (engine, m0) = setup(bundled::BUYER_SELLER);
        let m1 = post_init(&engine, &m0);
        // forward-only trace rearranges to itself
        let fwd = enumerate_atomic(&engine, &m1, Direction::Forward);
        let t = Transition::make(&engine, &m1, fwd[0].clone());
        let r = Trace {
            start_key: m1.canonical_key(),
            steps: vec![t.clone()],
        };
        let (b, f) = rearrange(&engine, &r, 100).unwrap();
        assert!(b.is_empty());
        assert_eq!(f.len(), 1);
        // an immediate undo cancels to nothing
        let back = enumerate_atomic(&engine, &t.target, Direction::Backward)
            .into_iter()
            .find(|c| c.identity() == t.inverse_identity())
            .unwrap();
        let tb = Transition::make(&engine, &t.target, back);
        let r2 = Trace {
            start_key: m1.canonical_key(),
            steps: vec![t.clone(), tb],
        };
        let (b2, f2) = rearrange(&engine, &r2, 100).unwrap();
        assert!(b2.is_empty());
        assert!(f2.is_empty());
        // undo-then-redo across an independent pair: forward, its undo,
        // then another forward leaves a single forward step
        let (engine4, n0) = setup(bundled::FOUR_PARTY);
        let n1 = post_init(&engine4, &n0);
        let steps = enumerate_atomic(&engine4, &n1, Direction::Forward);
        let acs: Vec<_> = steps
            .iter()
            .filter(|r| r.rule == AtomicRule::AC)
            .cloned()
            .collect();
        let u = Transition::make(&engine4, &n1, acs[0].clone());
        let u_undo_redex = enumerate_atomic(&engine4, &u.target, Direction::Backward)
            .into_iter()
            .find(|c| c.identity() == u.inverse_identity())
            .unwrap();
        let u_undo = Transition::make(&engine4, &u.target, u_undo_redex);
        let w_redex = enumerate_atomic(&engine4, &u_undo.target, Direction::Forward)
            .into_iter()
            .find(|c| c.identity() == acs[1].identity())
            .unwrap();
        let w = Transition::make(&engine4, &u_undo.target, w_redex);
        let zig = Trace {
            start_key: n1.canonical_key(),
            steps: vec![u, u_undo, w],
        };
        let (b3, f3) = rearrange(&engine4, &zig, 1000).unwrap();
        assert!(b3.is_empty());
        assert_eq!(f3.len(), 1);
    }

    #[test]
    fn causal_consistency_zero_length_is_trivial() {
        let (engine, m0) = setup(bundled::BUYER_SELLER);
        let report = check_causal_consistency(&engine, &m0, 0, 1000).unwrap();
        assert_eq!(report.traces, 1);
        assert!(report.violations.is_empty());
    }
}
