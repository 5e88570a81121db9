//! Golden traces through the three-buyer and buyer-seller systems: the
//! forward synchronization of the first exchange, its decoupled rollback,
//! and the code-mobility steps.

use revchor::decoupled::{Direction, Engine, Redex, RuleName, Subject};
use revchor::ident::{Participant, SharedName, Var};
use revchor::process::{Literal, ValueExpr};
use revchor::runtime::{Configuration, Node, Payload, Tag};
use revchor::surface::{bundled, load};

fn engine_and_initial(src: &str) -> (Engine, Configuration) {
    let (_, program, config) = load(src).unwrap();
    (Engine::new(program), config)
}

/// Finds the unique redex with the given rule and (optional) first subject.
fn pick(redexes: &[Redex], rule: RuleName, subject: Option<&str>) -> Redex {
    let matches: Vec<&Redex> = redexes
        .iter()
        .filter(|r| {
            r.rule == rule
                && match subject {
                    None => true,
                    Some(s) => matches!(r.subjects.first(), Some(Subject::Part(p)) if p.as_str() == s)
                        || matches!(r.subjects.first(), Some(Subject::Loc(l)) if l.as_str() == s),
                }
        })
        .collect();
    assert_eq!(
        matches.len(),
        1,
        "expected exactly one {rule} redex for {subject:?}, got {}",
        matches.len()
    );
    matches[0].clone()
}

fn forward(engine: &Engine, m: &Configuration, rule: RuleName, subject: Option<&str>) -> Configuration {
    let r = pick(&engine.enumerate_forward(m), rule, subject);
    engine.apply_forward(m, &r).unwrap()
}

fn backward(engine: &Engine, m: &Configuration, rule: RuleName, subject: Option<&str>) -> Configuration {
    let r = pick(&engine.enumerate_backward(m), rule, subject);
    engine.apply_backward(m, &r).unwrap()
}

#[test]
fn three_buyer_first_exchange_and_rollback() {
    let (engine, m0) = engine_and_initial(bundled::THREE_BUYER);

    // the only option at the start is to initiate the session
    let fwd0 = engine.enumerate_forward(&m0);
    assert_eq!(fwd0.len(), 1);
    assert_eq!(fwd0[0].rule, RuleName::Init);
    assert!(engine.enumerate_backward(&m0).is_empty());
    let m1 = engine.apply_forward(&m0, &fwd0[0]).unwrap();

    // one forward option (the title output) and one backward (undo init)
    let fwd1 = engine.enumerate_forward(&m1);
    assert_eq!(fwd1.len(), 1, "redexes: {fwd1:?}");
    assert_eq!(fwd1[0].rule, RuleName::Out);
    let bwd1 = engine.enumerate_backward(&m1);
    assert_eq!(bwd1.len(), 1);
    assert_eq!(bwd1[0].rule, RuleName::RInit);
    assert_eq!(m1.barbs().iter().map(|p| p.as_str()).collect::<Vec<_>>(), ["A"]);
    assert!(m1.is_stable());

    // undoing initiation restores the original services exactly
    let back_to_start = engine.apply_backward(&m1, &bwd1[0]).unwrap();
    assert!(back_to_start.congruent(&m0));
    assert_eq!(back_to_start, m0);

    // title flows from A into the queue, then into S's store
    let m2 = forward(&engine, &m1, RuleName::Out, Some("A"));
    assert!(!m2.is_stable());
    {
        let s = m2.sessions().into_iter().next().unwrap();
        let q = m2.queue(&s).unwrap();
        assert!(q.past.is_empty());
        assert_eq!(q.future.len(), 1);
        assert_eq!(q.future[0].from, Participant::new("A"));
        assert_eq!(q.future[0].to, Participant::new("S"));
        assert_eq!(
            q.future[0].payload,
            Payload::Value(ValueExpr::Lit(Literal::Str("Logicomix".into())))
        );
    }
    // a freshly sent but undelivered message cannot be rolled back
    assert!(engine.enumerate_backward(&m2).is_empty());

    let m3 = forward(&engine, &m2, RuleName::In, Some("S"));
    assert!(m3.is_stable());
    {
        let s = m3.sessions().into_iter().next().unwrap();
        let q = m3.queue(&s).unwrap();
        assert_eq!(q.past.len(), 1);
        assert!(q.future.is_empty());
        let mon = m3.monitor(&s, &Participant::new("S")).unwrap();
        assert_eq!(mon.tracked, vec![Var::new("x"), Var::new("t")]);
        assert_eq!(
            mon.store.get(&Var::new("x")),
            Some(&ValueExpr::Shared(SharedName::new("d")))
        );
        assert_eq!(
            mon.store.get(&Var::new("t")),
            Some(&ValueExpr::Lit(Literal::Str("Logicomix".into())))
        );
    }

    // rollback: mark both endpoints, undo the input, undo the output
    let bwd3 = engine.enumerate_backward(&m3);
    assert!(bwd3.iter().any(|r| r.rule == RuleName::RollS));
    let m4 = backward(&engine, &m3, RuleName::RollS, Some("S"));
    {
        let s = m4.sessions().into_iter().next().unwrap();
        assert_eq!(m4.monitor(&s, &Participant::new("S")).unwrap().tag, Tag::Full);
        assert_eq!(m4.monitor(&s, &Participant::new("A")).unwrap().tag, Tag::Full);
        // marked endpoints stop contributing barbs
        assert!(m4.barbs().is_empty());
        assert!(!m4.is_stable());
    }

    let m5 = backward(&engine, &m4, RuleName::RIn, Some("S"));
    {
        let s = m5.sessions().into_iter().next().unwrap();
        let q = m5.queue(&s).unwrap();
        assert!(q.past.is_empty());
        assert_eq!(q.future.len(), 1);
        let mon = m5.monitor(&s, &Participant::new("S")).unwrap();
        assert_eq!(mon.tracked, vec![Var::new("x")]);
        assert!(!mon.store.contains(&Var::new("t")));
        assert_eq!(mon.tag, Tag::Empty);
    }

    let m6 = backward(&engine, &m5, RuleName::ROut, Some("A"));
    assert!(m6.congruent(&m1), "rolled-back state differs from m1");
    assert_eq!(m6, m1);
}

/// Drives the three-buyer system to the point where the mobile code has
/// been delivered, then checks the application fires and reverses.
#[test]
fn three_buyer_code_mobility() {
    let (engine, m0) = engine_and_initial(bundled::THREE_BUYER);
    let mut m = forward(&engine, &m0, RuleName::Init, None);
    // title
    m = forward(&engine, &m, RuleName::Out, Some("A"));
    m = forward(&engine, &m, RuleName::In, Some("S"));
    // prices to A and B
    m = forward(&engine, &m, RuleName::Out, Some("S"));
    m = forward(&engine, &m, RuleName::Out, Some("S"));
    m = forward(&engine, &m, RuleName::In, Some("A"));
    m = forward(&engine, &m, RuleName::In, Some("B"));
    // share to B
    m = forward(&engine, &m, RuleName::Out, Some("A"));
    m = forward(&engine, &m, RuleName::In, Some("B"));
    // confirmations to A and S
    m = forward(&engine, &m, RuleName::Out, Some("B"));
    m = forward(&engine, &m, RuleName::Out, Some("B"));
    m = forward(&engine, &m, RuleName::In, Some("A"));
    m = forward(&engine, &m, RuleName::In, Some("S"));
    // share and code to C
    m = forward(&engine, &m, RuleName::Out, Some("B"));
    m = forward(&engine, &m, RuleName::In, Some("C"));
    m = forward(&engine, &m, RuleName::Out, Some("B"));
    let m8 = forward(&engine, &m, RuleName::In, Some("C"));

    // the delivered thunk makes the application the next step at C's site
    let fwd = engine.enumerate_forward(&m8);
    let beta = pick(&fwd, RuleName::Beta, Some("l4"));
    let m9 = engine.apply_forward(&m8, &beta).unwrap();
    assert!(m9
        .nodes
        .iter()
        .any(|n| matches!(n, Node::RunFun(rf) if rf.loc.as_str() == "l4")));

    // undoing the application restores the redex exactly
    let rbeta = pick(&engine.enumerate_backward(&m9), RuleName::RBeta, Some("l4"));
    let m8b = engine.apply_backward(&m9, &rbeta).unwrap();
    assert!(m8b.congruent(&m8));

    // after the application, C's location acts for B: the address output
    // is enabled at l4 on B's endpoint
    let fwd9 = engine.enumerate_forward(&m9);
    let out_b = pick(&fwd9, RuleName::Out, Some("B"));
    assert_eq!(out_b.loc.as_ref().unwrap().as_str(), "l4");
    let m10 = engine.apply_forward(&m9, &out_b).unwrap();
    // the address then reaches S
    let m11 = forward(&engine, &m10, RuleName::In, Some("S"));
    // date back to B's protocol, running at C's location
    let m12 = forward(&engine, &m11, RuleName::Out, Some("S"));
    let m13 = forward(&engine, &m12, RuleName::In, Some("B"));
    assert!(m13.is_stable());
    // the whole protocol has run: every monitor's future is `end`
    for n in &m13.nodes {
        if let Node::Monitor(mo) = n {
            assert_eq!(mo.history.future, revchor::types::LocalType::End);
        }
    }
}

#[test]
fn buyer_seller_choice_and_rollback() {
    let (engine, m0) = engine_and_initial(bundled::BUYER_SELLER);
    let mut m = forward(&engine, &m0, RuleName::Init, None);
    m = forward(&engine, &m, RuleName::Out, Some("B"));
    m = forward(&engine, &m, RuleName::In, Some("S"));
    m = forward(&engine, &m, RuleName::Out, Some("S"));
    m = forward(&engine, &m, RuleName::In, Some("B"));
    // two selectable labels: ok and quit
    let fwd = engine.enumerate_forward(&m);
    let sels: Vec<&Redex> = fwd.iter().filter(|r| r.rule == RuleName::Sel).collect();
    assert_eq!(sels.len(), 2);
    let ok = sels
        .iter()
        .find(|r| r.label.as_ref().unwrap().as_str() == "ok")
        .unwrap();
    let m_sel = engine.apply_forward(&m, ok).unwrap();
    // the discarded alternative lives on the stack
    let run_b = m_sel
        .nodes
        .iter()
        .find_map(|n| match n {
            Node::Running(r) if r.participant.as_str() == "B" => Some(r),
            _ => None,
        })
        .unwrap();
    assert_eq!(run_b.stack.len(), 1);

    let m_bra = forward(&engine, &m_sel, RuleName::Bra, Some("S"));
    let run_s = m_bra
        .nodes
        .iter()
        .find_map(|n| match n {
            Node::Running(r) if r.participant.as_str() == "S" => Some(r),
            _ => None,
        })
        .unwrap();
    assert_eq!(run_s.stack.len(), 1);

    // roll the committed choice back: mark, undo branch, undo select
    let m_marked = backward(&engine, &m_bra, RuleName::RollC, Some("S"));
    let m_unbra = backward(&engine, &m_marked, RuleName::RBra, Some("S"));
    let m_unsel = backward(&engine, &m_unbra, RuleName::RSel, Some("B"));
    assert!(m_unsel.congruent(&m));
}

#[test]
fn closure_counts_and_oracle() {
    let (engine, m0) = engine_and_initial(bundled::THREE_BUYER);
    // one forward step reachable from the service soup: the initiation
    let lts = engine.step_closure(&m0, Direction::Forward, 1, 10_000).unwrap();
    assert_eq!(lts.states.len(), 2);
    // depth zero explores nothing
    let lts0 = engine.step_closure(&m0, Direction::Both, 0, 10_000).unwrap();
    assert_eq!(lts0.states.len(), 1);

    // buyer-seller, both directions: an independent depth-bounded
    // enumerator without frontier dedup must see the same state set
    let (engine, m0) = engine_and_initial(bundled::BUYER_SELLER);
    let depth = 6;
    let lts = engine
        .step_closure(&m0, Direction::Both, depth, 100_000)
        .unwrap();
    use std::collections::BTreeSet;
    fn naive(
        engine: &Engine,
        m: &Configuration,
        depth: usize,
        acc: &mut BTreeSet<String>,
    ) {
        acc.insert(m.canonical_key());
        if depth == 0 {
            return;
        }
        let mut redexes = engine.enumerate_forward(m);
        redexes.extend(engine.enumerate_backward(m));
        for r in redexes {
            let next = engine.apply(m, &r).unwrap();
            naive(engine, &next, depth - 1, acc);
        }
    }
    let mut seen = BTreeSet::new();
    naive(&engine, &m0, depth, &mut seen);
    let bfs: BTreeSet<String> = lts.states.iter().map(|s| s.key.clone()).collect();
    assert_eq!(bfs, seen);
}
