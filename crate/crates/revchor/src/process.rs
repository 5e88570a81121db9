//! Process terms, values, and the substitutions the semantics needs.
//!
//! Processes communicate on channels that are either variables (in source
//! programs) or session endpoints `s[p]` (after initiation). Received values
//! are not substituted into the continuation: they live in the monitor store
//! and are resolved at use time by [`eval_value`]. The substitutions applied
//! to process terms are endpoint instantiation at session start, argument
//! instantiation at application, and recursion unfolding.

use crate::ident::{Label, Participant, ProcVar, SessionName, SharedName, Var};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum ChannelRef {
    Var(Var),
    Endpoint(SessionName, Participant),
}

/// First-order constants.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum Literal {
    Bool(bool),
    Nat(u64),
    Str(String),
}

#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum ValueExpr {
    Shared(SharedName),
    Lit(Literal),
    /// Name abstraction; a thunk is an abstraction whose parameter does not
    /// occur in the body.
    Abstraction { param: Var, body: Box<Process> },
    Var(Var),
}

/// Argument position of an application: a name or the dummy name `*`.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum NameExpr {
    Var(Var),
    Shared(SharedName),
    Endpoint(SessionName, Participant),
    Star,
}

#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum Process {
    Send {
        chan: ChannelRef,
        value: ValueExpr,
        cont: Box<Process>,
    },
    Recv {
        chan: ChannelRef,
        var: Var,
        cont: Box<Process>,
    },
    Select {
        chan: ChannelRef,
        branches: Vec<(Label, Process)>,
    },
    Branch {
        chan: ChannelRef,
        branches: Vec<(Label, Process)>,
    },
    Par(Box<Process>, Box<Process>),
    Rec {
        var: ProcVar,
        body: Box<Process>,
    },
    PVar(ProcVar),
    Apply {
        func: ValueExpr,
        arg: NameExpr,
    },
    Restrict {
        name: SharedName,
        body: Box<Process>,
    },
    Nil,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("unbound variable {0}")]
    UnboundVariable(Var),
}

/// What an application argument (or a substituted name) can stand for.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum AppliedArg {
    Var(Var),
    Endpoint(SessionName, Participant),
    Shared(SharedName),
    Star,
    Value(ValueExpr),
}

impl AppliedArg {
    fn as_name_expr(&self) -> Option<NameExpr> {
        match self {
            AppliedArg::Var(v) => Some(NameExpr::Var(v.clone())),
            AppliedArg::Endpoint(s, p) => Some(NameExpr::Endpoint(s.clone(), p.clone())),
            AppliedArg::Shared(a) => Some(NameExpr::Shared(a.clone())),
            AppliedArg::Star => Some(NameExpr::Star),
            AppliedArg::Value(ValueExpr::Shared(a)) => Some(NameExpr::Shared(a.clone())),
            AppliedArg::Value(ValueExpr::Var(v)) => Some(NameExpr::Var(v.clone())),
            AppliedArg::Value(_) => None,
        }
    }

    fn as_channel(&self) -> Option<ChannelRef> {
        match self {
            AppliedArg::Var(v) => Some(ChannelRef::Var(v.clone())),
            AppliedArg::Endpoint(s, p) => Some(ChannelRef::Endpoint(s.clone(), p.clone())),
            _ => None,
        }
    }

    fn as_value(&self) -> Option<ValueExpr> {
        match self {
            AppliedArg::Value(v) => Some(v.clone()),
            AppliedArg::Shared(a) => Some(ValueExpr::Shared(a.clone())),
            AppliedArg::Var(v) => Some(ValueExpr::Var(v.clone())),
            _ => None,
        }
    }
}

impl Process {
    pub fn send(chan: ChannelRef, value: ValueExpr, cont: Process) -> Process {
        Process::Send {
            chan,
            value,
            cont: Box::new(cont),
        }
    }

    pub fn recv(chan: ChannelRef, var: impl Into<Var>, cont: Process) -> Process {
        Process::Recv {
            chan,
            var: var.into(),
            cont: Box::new(cont),
        }
    }

    /// Thunk literal `{{ P }}`: an abstraction with an unused parameter.
    pub fn thunk(body: Process) -> ValueExpr {
        ValueExpr::Abstraction {
            param: Var::new("_"),
            body: Box::new(body),
        }
    }

    /// Replaces the variable `x` by a session endpoint wherever a name can
    /// stand (channels, application arguments, inside carried abstractions).
    pub fn instantiate_endpoint(
        &self,
        x: &Var,
        session: &SessionName,
        role: &Participant,
    ) -> Process {
        self.substitute_arg(x, &AppliedArg::Endpoint(session.clone(), role.clone()))
    }

    /// Capture-respecting substitution of a name or value for a variable.
    /// Positions that cannot hold the replacement are left untouched, so an
    /// ill-typed application simply leaves a stuck term.
    pub fn substitute_arg(&self, x: &Var, arg: &AppliedArg) -> Process {
        let chan = |c: &ChannelRef| match c {
            ChannelRef::Var(v) if v == x => arg.as_channel().unwrap_or_else(|| c.clone()),
            other => other.clone(),
        };
        match self {
            Process::Send {
                chan: c,
                value,
                cont,
            } => Process::Send {
                chan: chan(c),
                value: value.substitute_arg(x, arg),
                cont: Box::new(cont.substitute_arg(x, arg)),
            },
            Process::Recv { chan: c, var, cont } => {
                let c = chan(c);
                if var == x {
                    Process::Recv {
                        chan: c,
                        var: var.clone(),
                        cont: cont.clone(),
                    }
                } else {
                    Process::Recv {
                        chan: c,
                        var: var.clone(),
                        cont: Box::new(cont.substitute_arg(x, arg)),
                    }
                }
            }
            Process::Select { chan: c, branches } => Process::Select {
                chan: chan(c),
                branches: branches
                    .iter()
                    .map(|(l, p)| (l.clone(), p.substitute_arg(x, arg)))
                    .collect(),
            },
            Process::Branch { chan: c, branches } => Process::Branch {
                chan: chan(c),
                branches: branches
                    .iter()
                    .map(|(l, p)| (l.clone(), p.substitute_arg(x, arg)))
                    .collect(),
            },
            Process::Par(a, b) => Process::Par(
                Box::new(a.substitute_arg(x, arg)),
                Box::new(b.substitute_arg(x, arg)),
            ),
            Process::Rec { var, body } => Process::Rec {
                var: var.clone(),
                body: Box::new(body.substitute_arg(x, arg)),
            },
            Process::Restrict { name, body } => Process::Restrict {
                name: name.clone(),
                body: Box::new(body.substitute_arg(x, arg)),
            },
            Process::Apply { func, arg: a } => Process::Apply {
                func: func.substitute_arg(x, arg),
                arg: match a {
                    NameExpr::Var(v) if v == x => arg.as_name_expr().unwrap_or_else(|| a.clone()),
                    other => other.clone(),
                },
            },
            Process::PVar(_) | Process::Nil => self.clone(),
        }
    }

    /// Unfolds `rec X. P` one level: `P { rec X. P / X }`.
    pub fn unfold_rec(var: &ProcVar, body: &Process) -> Process {
        let whole = Process::Rec {
            var: var.clone(),
            body: Box::new(body.clone()),
        };
        body.subst_pvar(var, &whole)
    }

    fn subst_pvar(&self, var: &ProcVar, with: &Process) -> Process {
        match self {
            Process::Send { chan, value, cont } => Process::Send {
                chan: chan.clone(),
                value: value.clone(),
                cont: Box::new(cont.subst_pvar(var, with)),
            },
            Process::Recv { chan, var: v, cont } => Process::Recv {
                chan: chan.clone(),
                var: v.clone(),
                cont: Box::new(cont.subst_pvar(var, with)),
            },
            Process::Select { chan, branches } => Process::Select {
                chan: chan.clone(),
                branches: branches
                    .iter()
                    .map(|(l, p)| (l.clone(), p.subst_pvar(var, with)))
                    .collect(),
            },
            Process::Branch { chan, branches } => Process::Branch {
                chan: chan.clone(),
                branches: branches
                    .iter()
                    .map(|(l, p)| (l.clone(), p.subst_pvar(var, with)))
                    .collect(),
            },
            Process::Par(a, b) => Process::Par(
                Box::new(a.subst_pvar(var, with)),
                Box::new(b.subst_pvar(var, with)),
            ),
            Process::Rec { var: v, body } if v != var => Process::Rec {
                var: v.clone(),
                body: Box::new(body.subst_pvar(var, with)),
            },
            Process::Rec { .. } => self.clone(),
            Process::PVar(v) if v == var => with.clone(),
            Process::Restrict { name, body } => Process::Restrict {
                name: name.clone(),
                body: Box::new(body.subst_pvar(var, with)),
            },
            Process::PVar(_) | Process::Apply { .. } | Process::Nil => self.clone(),
        }
    }

    /// Renames a free value variable, respecting shadowing. Used to pick a
    /// fresh binder before an input when the old name would collide in the
    /// store. The new name must not occur free in the term.
    pub fn rename_free_var(&self, from: &Var, to: &Var) -> Process {
        self.substitute_arg(from, &AppliedArg::Var(to.clone()))
    }

    /// Free value variables.
    pub fn free_vars(&self) -> BTreeSet<Var> {
        let mut acc = BTreeSet::new();
        self.fv(&mut Vec::new(), &mut acc);
        acc
    }

    fn fv(&self, bound: &mut Vec<Var>, acc: &mut BTreeSet<Var>) {
        let chan_fv = |c: &ChannelRef, bound: &[Var], acc: &mut BTreeSet<Var>| {
            if let ChannelRef::Var(v) = c {
                if !bound.contains(v) {
                    acc.insert(v.clone());
                }
            }
        };
        match self {
            Process::Send { chan, value, cont } => {
                chan_fv(chan, bound, acc);
                value.fv(bound, acc);
                cont.fv(bound, acc);
            }
            Process::Recv { chan, var, cont } => {
                chan_fv(chan, bound, acc);
                bound.push(var.clone());
                cont.fv(bound, acc);
                bound.pop();
            }
            Process::Select { chan, branches } | Process::Branch { chan, branches } => {
                chan_fv(chan, bound, acc);
                for (_, p) in branches {
                    p.fv(bound, acc);
                }
            }
            Process::Par(a, b) => {
                a.fv(bound, acc);
                b.fv(bound, acc);
            }
            Process::Rec { body, .. } | Process::Restrict { body, .. } => body.fv(bound, acc),
            Process::Apply { func, arg } => {
                func.fv(bound, acc);
                if let NameExpr::Var(v) = arg {
                    if !bound.contains(v) {
                        acc.insert(v.clone());
                    }
                }
            }
            Process::PVar(_) | Process::Nil => {}
        }
    }

    /// Participant identities occurring in endpoint references, including
    /// inside carried abstractions.
    pub fn participants_mentioned(&self) -> BTreeSet<Participant> {
        let mut acc = BTreeSet::new();
        self.pm(&mut acc);
        acc
    }

    fn pm(&self, acc: &mut BTreeSet<Participant>) {
        let chan_pm = |c: &ChannelRef, acc: &mut BTreeSet<Participant>| {
            if let ChannelRef::Endpoint(_, p) = c {
                acc.insert(p.clone());
            }
        };
        match self {
            Process::Send { chan, value, cont } => {
                chan_pm(chan, acc);
                value.pm(acc);
                cont.pm(acc);
            }
            Process::Recv { chan, cont, .. } => {
                chan_pm(chan, acc);
                cont.pm(acc);
            }
            Process::Select { chan, branches } | Process::Branch { chan, branches } => {
                chan_pm(chan, acc);
                for (_, p) in branches {
                    p.pm(acc);
                }
            }
            Process::Par(a, b) => {
                a.pm(acc);
                b.pm(acc);
            }
            Process::Rec { body, .. } | Process::Restrict { body, .. } => body.pm(acc),
            Process::Apply { func, arg } => {
                func.pm(acc);
                if let NameExpr::Endpoint(_, p) = arg {
                    acc.insert(p.clone());
                }
            }
            Process::PVar(_) | Process::Nil => {}
        }
    }

    /// Splits into top-level parallel components, dropping inert `0`s and
    /// unfolding top-level recursion so a prefix is exposed when one exists.
    pub fn components(&self) -> Vec<Process> {
        let mut out = Vec::new();
        self.flatten(&mut out);
        out
    }

    fn flatten(&self, out: &mut Vec<Process>) {
        match self {
            Process::Par(a, b) => {
                a.flatten(out);
                b.flatten(out);
            }
            Process::Nil => {}
            Process::Rec { var, body } => Process::unfold_rec(var, body).flatten(out),
            other => out.push(other.clone()),
        }
    }
}

impl ValueExpr {
    fn substitute_arg(&self, x: &Var, arg: &AppliedArg) -> ValueExpr {
        match self {
            ValueExpr::Var(v) if v == x => arg.as_value().unwrap_or_else(|| self.clone()),
            ValueExpr::Abstraction { param, body } if param != x => ValueExpr::Abstraction {
                param: param.clone(),
                body: Box::new(body.substitute_arg(x, arg)),
            },
            other => other.clone(),
        }
    }

    fn fv(&self, bound: &mut Vec<Var>, acc: &mut BTreeSet<Var>) {
        match self {
            ValueExpr::Var(v) => {
                if !bound.contains(v) {
                    acc.insert(v.clone());
                }
            }
            ValueExpr::Abstraction { param, body } => {
                bound.push(param.clone());
                body.fv(bound, acc);
                bound.pop();
            }
            ValueExpr::Shared(_) | ValueExpr::Lit(_) => {}
        }
    }

    fn pm(&self, acc: &mut BTreeSet<Participant>) {
        if let ValueExpr::Abstraction { body, .. } = self {
            body.pm(acc);
        }
    }

    pub fn free_vars(&self) -> BTreeSet<Var> {
        let mut acc = BTreeSet::new();
        self.fv(&mut Vec::new(), &mut acc);
        acc
    }
}

/// Store lookup interface used by evaluation; implemented by the monitor
/// store in the runtime module.
pub trait VarLookup {
    fn lookup(&self, v: &Var) -> Option<&ValueExpr>;
}

/// Evaluates a value under a store: constants and names evaluate to
/// themselves, variables are resolved, and bindings are applied inside
/// abstraction bodies (so a sent closure is self-contained).
pub fn eval_value(v: &ValueExpr, store: &dyn VarLookup) -> Result<ValueExpr, EvalError> {
    match v {
        ValueExpr::Shared(_) | ValueExpr::Lit(_) => Ok(v.clone()),
        ValueExpr::Var(x) => store
            .lookup(x)
            .cloned()
            .ok_or_else(|| EvalError::UnboundVariable(x.clone())),
        ValueExpr::Abstraction { param, body } => {
            let mut closed = (**body).clone();
            for x in body.free_vars() {
                if x == *param {
                    continue;
                }
                if let Some(val) = store.lookup(&x) {
                    closed = closed.substitute_arg(&x, &AppliedArg::Value(val.clone()));
                }
            }
            Ok(ValueExpr::Abstraction {
                param: param.clone(),
                body: Box::new(closed),
            })
        }
    }
}

impl fmt::Display for ChannelRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelRef::Var(v) => write!(f, "{v}"),
            ChannelRef::Endpoint(s, p) => write!(f, "{s}[{p}]"),
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Bool(b) => write!(f, "{b}"),
            Literal::Nat(n) => write!(f, "{n}"),
            Literal::Str(s) => write!(f, "'{s}'"),
        }
    }
}

impl fmt::Display for ValueExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueExpr::Shared(a) => write!(f, "{a}"),
            ValueExpr::Lit(l) => write!(f, "{l}"),
            ValueExpr::Abstraction { param, body } => {
                if param.as_str() == "_" {
                    write!(f, "{{{{ {body} }}}}")
                } else {
                    write!(f, "fn({param}){{ {body} }}")
                }
            }
            ValueExpr::Var(v) => write!(f, "{v}"),
        }
    }
}

impl fmt::Display for NameExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NameExpr::Var(v) => write!(f, "{v}"),
            NameExpr::Shared(a) => write!(f, "{a}"),
            NameExpr::Endpoint(s, p) => write!(f, "{s}[{p}]"),
            NameExpr::Star => write!(f, "*"),
        }
    }
}

impl fmt::Display for Process {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Process::Send { chan, value, cont } => write!(f, "{chan}!<{value}>.{cont}"),
            Process::Recv { chan, var, cont } => write!(f, "{chan}?({var}).{cont}"),
            Process::Select { chan, branches } => {
                write!(f, "{chan}+{{")?;
                for (i, (l, p)) in branches.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{l}: {p}")?;
                }
                write!(f, "}}")
            }
            Process::Branch { chan, branches } => {
                write!(f, "{chan}&{{")?;
                for (i, (l, p)) in branches.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{l}: {p}")?;
                }
                write!(f, "}}")
            }
            Process::Par(a, b) => write!(f, "({a} | {b})"),
            Process::Rec { var, body } => write!(f, "rec {var}.{body}"),
            Process::PVar(v) => write!(f, "{v}"),
            Process::Apply { func, arg } => write!(f, "{func}({arg})"),
            Process::Restrict { name, body } => write!(f, "new {name}.{body}"),
            Process::Nil => write!(f, "0"),
        }
    }
}

/// Canonical serialization with bound names renamed positionally and
/// parallel components flattened, filtered of `0`s, and sorted, so that
/// alpha-equivalent terms print identically. Free names print as-is.
pub fn canonical_process(p: &Process) -> String {
    let mut out = String::new();
    let mut vars: Vec<(Var, String)> = Vec::new();
    let mut pvars: Vec<(ProcVar, String)> = Vec::new();
    canon(p, &mut vars, &mut pvars, &mut out);
    out
}

fn canon_lookup_var(v: &Var, vars: &[(Var, String)]) -> String {
    vars.iter()
        .rev()
        .find(|(b, _)| b == v)
        .map(|(_, n)| n.clone())
        .unwrap_or_else(|| v.to_string())
}

fn canon_chan(c: &ChannelRef, vars: &[(Var, String)], out: &mut String) {
    match c {
        ChannelRef::Var(v) => out.push_str(&canon_lookup_var(v, vars)),
        ChannelRef::Endpoint(s, p) => {
            out.push_str(s.as_str());
            out.push('[');
            out.push_str(p.as_str());
            out.push(']');
        }
    }
}

fn canon_value(
    v: &ValueExpr,
    vars: &mut Vec<(Var, String)>,
    pvars: &mut Vec<(ProcVar, String)>,
    out: &mut String,
) {
    match v {
        ValueExpr::Shared(a) => out.push_str(a.as_str()),
        ValueExpr::Lit(l) => out.push_str(&l.to_string()),
        ValueExpr::Var(x) => out.push_str(&canon_lookup_var(x, vars)),
        ValueExpr::Abstraction { param, body } => {
            let n = format!("%v{}", vars.len());
            out.push_str("abs(");
            out.push_str(&n);
            out.push_str("){");
            vars.push((param.clone(), n));
            canon(body, vars, pvars, out);
            vars.pop();
            out.push('}');
        }
    }
}

fn canon(
    p: &Process,
    vars: &mut Vec<(Var, String)>,
    pvars: &mut Vec<(ProcVar, String)>,
    out: &mut String,
) {
    match p {
        Process::Send { chan, value, cont } => {
            canon_chan(chan, vars, out);
            out.push_str("!<");
            canon_value(value, vars, pvars, out);
            out.push_str(">.");
            canon(cont, vars, pvars, out);
        }
        Process::Recv { chan, var, cont } => {
            canon_chan(chan, vars, out);
            let n = format!("%v{}", vars.len());
            out.push_str("?(");
            out.push_str(&n);
            out.push_str(").");
            vars.push((var.clone(), n));
            canon(cont, vars, pvars, out);
            vars.pop();
        }
        Process::Select { chan, branches } | Process::Branch { chan, branches } => {
            canon_chan(chan, vars, out);
            out.push_str(if matches!(p, Process::Select { .. }) {
                "+{"
            } else {
                "&{"
            });
            let mut items: Vec<(String, String)> = branches
                .iter()
                .map(|(l, b)| {
                    let mut s = String::new();
                    canon(b, vars, pvars, &mut s);
                    (l.to_string(), s)
                })
                .collect();
            items.sort();
            for (i, (l, b)) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(l);
                out.push(':');
                out.push_str(b);
            }
            out.push('}');
        }
        Process::Par(_, _) => {
            let mut leaves: Vec<Process> = Vec::new();
            flatten_syntactic(p, &mut leaves);
            let mut parts: Vec<String> = leaves
                .iter()
                .map(|l| {
                    let mut s = String::new();
                    canon(l, vars, pvars, &mut s);
                    s
                })
                .filter(|s| s != "0")
                .collect();
            parts.sort();
            match parts.len() {
                0 => out.push('0'),
                1 => out.push_str(&parts[0]),
                _ => {
                    out.push('(');
                    out.push_str(&parts.join("|"));
                    out.push(')');
                }
            }
        }
        Process::Rec { var, body } => {
            let n = format!("%r{}", pvars.len());
            out.push_str("rec ");
            out.push_str(&n);
            out.push('.');
            pvars.push((var.clone(), n));
            canon(body, vars, pvars, out);
            pvars.pop();
        }
        Process::PVar(v) => out.push_str(
            &pvars
                .iter()
                .rev()
                .find(|(b, _)| b == v)
                .map(|(_, n)| n.clone())
                .unwrap_or_else(|| v.to_string()),
        ),
        Process::Apply { func, arg } => {
            canon_value(func, vars, pvars, out);
            out.push('(');
            match arg {
                NameExpr::Var(v) => out.push_str(&canon_lookup_var(v, vars)),
                other => out.push_str(&other.to_string()),
            }
            out.push(')');
        }
        Process::Restrict { name, body } => {
            out.push_str("new ");
            out.push_str(name.as_str());
            out.push('.');
            canon(body, vars, pvars, out);
        }
        Process::Nil => out.push('0'),
    }
}

/// Purely syntactic parallel flattening (no recursion unfolding).
fn flatten_syntactic(p: &Process, out: &mut Vec<Process>) {
    match p {
        Process::Par(a, b) => {
            flatten_syntactic(a, out);
            flatten_syntactic(b, out);
        }
        other => out.push(other.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    struct MapStore(HashMap<Var, ValueExpr>);

    impl VarLookup for MapStore {
        fn lookup(&self, v: &Var) -> Option<&ValueExpr> {
            self.0.get(v)
        }
    }

    fn lit(s: &str) -> ValueExpr {
        ValueExpr::Lit(Literal::Str(s.into()))
    }

    #[test]
    fn eval_constant_is_identity() {
        let store = MapStore(HashMap::new());
        assert_eq!(
            eval_value(&lit("Logicomix"), &store).unwrap(),
            lit("Logicomix")
        );
    }

    #[test]
    fn eval_unbound_variable_errors() {
        let store = MapStore(HashMap::new());
        assert_eq!(
            eval_value(&ValueExpr::Var(Var::new("x")), &store),
            Err(EvalError::UnboundVariable(Var::new("x")))
        );
    }

    #[test]
    fn eval_resolves_thunk_from_store() {
        let thunk = Process::thunk(Process::Nil);
        let mut m = HashMap::new();
        m.insert(Var::new("code"), thunk.clone());
        let store = MapStore(m);
        assert_eq!(
            eval_value(&ValueExpr::Var(Var::new("code")), &store).unwrap(),
            thunk
        );
    }

    #[test]
    fn eval_closes_abstraction_bodies() {
        let body = Process::send(
            ChannelRef::Endpoint(SessionName::new("s"), Participant::new("B")),
            ValueExpr::Var(Var::new("addr")),
            Process::Nil,
        );
        let v = ValueExpr::Abstraction {
            param: Var::new("_"),
            body: Box::new(body),
        };
        let mut m = HashMap::new();
        m.insert(Var::new("addr"), lit("Lucca"));
        let store = MapStore(m);
        let closed = eval_value(&v, &store).unwrap();
        match closed {
            ValueExpr::Abstraction { body, .. } => match *body {
                Process::Send { value, .. } => assert_eq!(value, lit("Lucca")),
                _ => panic!("unexpected body"),
            },
            _ => panic!("not an abstraction"),
        }
    }

    #[test]
    fn endpoint_instantiation_hits_channels_and_args() {
        let s = SessionName::new("s0");
        let b = Participant::new("B");
        let p = Process::recv(
            ChannelRef::Var(Var::new("z")),
            "p",
            Process::Apply {
                func: ValueExpr::Var(Var::new("code")),
                arg: NameExpr::Var(Var::new("z")),
            },
        );
        let inst = p.instantiate_endpoint(&Var::new("z"), &s, &b);
        match inst {
            Process::Recv { chan, cont, .. } => {
                assert_eq!(chan, ChannelRef::Endpoint(s.clone(), b.clone()));
                match *cont {
                    Process::Apply { arg, .. } => {
                        assert_eq!(arg, NameExpr::Endpoint(s, b));
                    }
                    _ => panic!(),
                }
            }
            _ => panic!(),
        }
    }

    #[test]
    fn input_binder_shadows_substitution() {
        let s = SessionName::new("s0");
        let b = Participant::new("B");
        // z?(x). x!<1>.0 — the inner x is bound, not the session variable
        let p = Process::recv(
            ChannelRef::Var(Var::new("z")),
            "x",
            Process::send(
                ChannelRef::Var(Var::new("x")),
                ValueExpr::Lit(Literal::Nat(1)),
                Process::Nil,
            ),
        );
        let inst = p.instantiate_endpoint(&Var::new("x"), &s, &b);
        assert_eq!(inst, p, "bound occurrences must not be substituted");
    }

    #[test]
    fn canonical_print_is_alpha_insensitive() {
        let mk = |v: &str| {
            Process::recv(
                ChannelRef::Var(Var::new("c")),
                v,
                Process::send(
                    ChannelRef::Var(Var::new("c")),
                    ValueExpr::Var(Var::new(v)),
                    Process::Nil,
                ),
            )
        };
        assert_eq!(canonical_process(&mk("x")), canonical_process(&mk("y")));
        let free_x = Process::send(
            ChannelRef::Var(Var::new("c")),
            ValueExpr::Var(Var::new("x")),
            Process::Nil,
        );
        let free_y = Process::send(
            ChannelRef::Var(Var::new("c")),
            ValueExpr::Var(Var::new("y")),
            Process::Nil,
        );
        assert_ne!(canonical_process(&free_x), canonical_process(&free_y));
    }

    #[test]
    fn canonical_print_normalizes_parallel() {
        let a = Process::send(
            ChannelRef::Var(Var::new("c")),
            ValueExpr::Lit(Literal::Nat(1)),
            Process::Nil,
        );
        let b = Process::send(
            ChannelRef::Var(Var::new("d")),
            ValueExpr::Lit(Literal::Nat(2)),
            Process::Nil,
        );
        let left = Process::Par(Box::new(a.clone()), Box::new(b.clone()));
        let right = Process::Par(Box::new(b), Box::new(a.clone()));
        assert_eq!(canonical_process(&left), canonical_process(&right));
        let with_nil = Process::Par(Box::new(a.clone()), Box::new(Process::Nil));
        assert_eq!(canonical_process(&with_nil), canonical_process(&a));
    }

    #[test]
    fn components_unfold_and_drop_nil() {
        let p = Process::Par(
            Box::new(Process::Nil),
            Box::new(Process::Rec {
                var: ProcVar::new("X"),
                body: Box::new(Process::send(
                    ChannelRef::Var(Var::new("c")),
                    lit("v"),
                    Process::PVar(ProcVar::new("X")),
                )),
            }),
        );
        let comps = p.components();
        assert_eq!(comps.len(), 1);
        assert!(matches!(comps[0], Process::Send { .. }));
    }
}
