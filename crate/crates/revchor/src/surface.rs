//! Concrete syntax: parser, printer, elaboration into an executable system,
//! and the bundled example programs.
//!
//! A source unit declares named global types and one system of located
//! roles. Each role names the protocol and participant it implements, its
//! location, whether it requests or accepts the service, the shared name,
//! the session variable, and the process body:
//!
//! ```text
//! global Ping = A -> B : <nat> . end
//!
//! system {
//!   role A : Ping at l1 request a (x) { x!<1>. 0 }
//!   role B : Ping at l2 accept  a (y) { y?(v). 0 }
//! }
//! ```
//!
//! Grammar sketch (see the project README for the full listing):
//!
//! ```text
//! gtype  ::= P -> P : <vtype> . gtype | P -> P : { l: gtype, ... }
//!          | rec X . gtype | var X | X | end
//! vtype  ::= bool | nat | str | thunk | fun ( ltype )
//! ltype  ::= P ! <vtype> . ltype | P ? <vtype> . ltype
//!          | P + { l: ltype, ... } | P & { l: ltype, ... }
//!          | rec X . ltype | var X | X | end
//! proc   ::= seq ( '|' seq )*
//! seq    ::= chan ! <value> . seq | chan ? ( x ) . seq
//!          | chan + { l: proc, ... } | chan & { l: proc, ... }
//!          | rec X . seq | value ( arg ) | ( proc ) | 0 | X
//! value  ::= 'text' | nat | true | false | {{ proc }} | fn ( x ) { proc } | x
//! arg    ::= x | *
//! ```

use crate::decoupled::Program;
use crate::ident::{Label, Location, Participant, ProcVar, SharedName, TypeVar, Var};
use crate::process::{ChannelRef, Literal, NameExpr, Process, ValueExpr};
use crate::runtime::{Configuration, Node, Service, ServiceKind};
use crate::types::{project, GlobalType, LocalType, ValueType};
use std::fmt;
use thiserror::Error;

/// A parsed role declaration.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct RoleDecl {
    pub participant: Participant,
    pub global: String,
    pub loc: Location,
    pub kind: ServiceKind,
    pub shared: SharedName,
    pub var: Var,
    pub body: Process,
}

/// A parsed source unit: named global types plus one system declaration.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct SourceUnit {
    pub globals: Vec<(String, GlobalType)>,
    pub roles: Vec<RoleDecl>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("{line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("no system declared")]
    NoSystem,
    #[error("{0}")]
    Resolve(String),
}

// ---------------------------------------------------------------- lexer --

#[derive(Clone, PartialEq, Eq, Debug)]
enum Tok {
    Ident(String),
    Nat(u64),
    Str(String),
    Arrow,     // ->
    Colon,     // :
    Lt,        // <
    Gt,        // >
    LBrace,    // {
    RBrace,    // }
    LLBrace,   // {{
    RRBrace,   // }}
    LParen,    // (
    RParen,    // )
    Dot,       // .
    Comma,     // ,
    Bang,      // !
    Query,     // ?
    Plus,      // +
    Amp,       // &
    Pipe,      // |
    Eq,        // =
    Star,      // *
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "identifier '{s}'"),
            Tok::Nat(n) => write!(f, "number {n}"),
            Tok::Str(s) => write!(f, "string '{s}'"),
            Tok::Arrow => write!(f, "'->'"),
            Tok::Colon => write!(f, "':'"),
            Tok::Lt => write!(f, "'<'"),
            Tok::Gt => write!(f, "'>'"),
            Tok::LBrace => write!(f, "'{{'"),
            Tok::RBrace => write!(f, "'}}'"),
            Tok::LLBrace => write!(f, "'{{{{'"),
            Tok::RRBrace => write!(f, "'}}}}'"),
            Tok::LParen => write!(f, "'('"),
            Tok::RParen => write!(f, "')'"),
            Tok::Dot => write!(f, "'.'"),
            Tok::Comma => write!(f, "','"),
            Tok::Bang => write!(f, "'!'"),
            Tok::Query => write!(f, "'?'"),
            Tok::Plus => write!(f, "'+'"),
            Tok::Amp => write!(f, "'&'"),
            Tok::Pipe => write!(f, "'|'"),
            Tok::Eq => write!(f, "'='"),
            Tok::Star => write!(f, "'*'"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

type Spanned = (Tok, usize, usize);

fn lex(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut lx = Lexer {
        src: src.as_bytes(),
        pos: 0,
        line: 1,
        col: 1,
    };
    let mut out = Vec::new();
    loop {
        lx.skip_ws_and_comments();
        let (line, col) = (lx.line, lx.col);
        if lx.pos >= lx.src.len() {
            out.push((Tok::Eof, line, col));
            return Ok(out);
        }
        let c = lx.src[lx.pos] as char;
        let tok = match c {
            '-' => {
                if lx.peek(1) == Some('>') {
                    lx.bump(2);
                    Tok::Arrow
                } else {
                    return Err(lx.err("expected '->'"));
                }
            }
            ':' => lx.one(Tok::Colon),
            '<' => lx.one(Tok::Lt),
            '>' => lx.one(Tok::Gt),
            '{' => {
                if lx.peek(1) == Some('{') {
                    lx.bump(2);
                    Tok::LLBrace
                } else {
                    lx.one(Tok::LBrace)
                }
            }
            '}' => {
                if lx.peek(1) == Some('}') {
                    lx.bump(2);
                    Tok::RRBrace
                } else {
                    lx.one(Tok::RBrace)
                }
            }
            '(' => lx.one(Tok::LParen),
            ')' => lx.one(Tok::RParen),
            '.' => lx.one(Tok::Dot),
            ',' => lx.one(Tok::Comma),
            '!' => lx.one(Tok::Bang),
            '?' => lx.one(Tok::Query),
            '+' => lx.one(Tok::Plus),
            '&' => lx.one(Tok::Amp),
            '|' => lx.one(Tok::Pipe),
            '=' => lx.one(Tok::Eq),
            '*' => lx.one(Tok::Star),
            '\'' => {
                lx.bump(1);
                let start = lx.pos;
                while lx.pos < lx.src.len() && lx.src[lx.pos] != b'\'' {
                    if lx.src[lx.pos] == b'\n' {
                        return Err(lx.err("unterminated string"));
                    }
                    lx.bump(1);
                }
                if lx.pos >= lx.src.len() {
                    return Err(lx.err("unterminated string"));
                }
                let s = String::from_utf8_lossy(&lx.src[start..lx.pos]).into_owned();
                lx.bump(1);
                Tok::Str(s)
            }
            c if c.is_ascii_digit() => {
                let start = lx.pos;
                while lx.pos < lx.src.len() && (lx.src[lx.pos] as char).is_ascii_digit() {
                    lx.bump(1);
                }
                let n: u64 = std::str::from_utf8(&lx.src[start..lx.pos])
                    .unwrap()
                    .parse()
                    .map_err(|_| lx.err("number too large"))?;
                Tok::Nat(n)
            }
            c if c.is_ascii_alphabetic() => {
                let start = lx.pos;
                while lx.pos < lx.src.len()
                    && (lx.src[lx.pos] as char).is_ascii_alphanumeric()
                {
                    lx.bump(1);
                }
                Tok::Ident(String::from_utf8_lossy(&lx.src[start..lx.pos]).into_owned())
            }
            other => return Err(lx.err(&format!("unexpected character '{other}'"))),
        };
        out.push((tok, line, col));
    }
}

impl<'a> Lexer<'a> {
    fn peek(&self, ahead: usize) -> Option<char> {
        self.src.get(self.pos + ahead).map(|b| *b as char)
    }

    fn bump(&mut self, n: usize) {
        for _ in 0..n {
            if self.pos < self.src.len() {
                if self.src[self.pos] == b'\n' {
                    self.line += 1;
                    self.col = 1;
                } else {
                    self.col += 1;
                }
                self.pos += 1;
            }
        }
    }

    fn one(&mut self, t: Tok) -> Tok {
        self.bump(1);
        t
    }

    fn skip_ws_and_comments(&mut self) {
        loop {
            while self.pos < self.src.len() && (self.src[self.pos] as char).is_ascii_whitespace()
            {
                self.bump(1);
            }
            if self.pos + 1 < self.src.len()
                && self.src[self.pos] == b'/'
                && self.src[self.pos + 1] == b'/'
            {
                while self.pos < self.src.len() && self.src[self.pos] != b'\n' {
                    self.bump(1);
                }
            } else {
                return;
            }
        }
    }

    fn err(&self, msg: &str) -> ParseError {
        ParseError::Syntax {
            line: self.line,
            col: self.col,
            msg: msg.to_string(),
        }
    }
}

// --------------------------------------------------------------- parser --

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

const KEYWORDS: &[&str] = &[
    "global", "system", "role", "at", "request", "accept", "rec", "var", "end", "bool", "nat",
    "str", "thunk", "fun", "fn", "true", "false",
];

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek2(&self) -> &Tok {
        &self.toks[(self.pos + 1).min(self.toks.len() - 1)].0
    }

    fn next(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        let (_, line, col) = &self.toks[self.pos];
        ParseError::Syntax {
            line: *line,
            col: *col,
            msg: msg.into(),
        }
    }

    fn expect(&mut self, t: Tok) -> Result<(), ParseError> {
        if self.peek() == &t {
            self.next();
            Ok(())
        } else {
            Err(self.err(format!("expected {t}, found {}", self.peek())))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                if KEYWORDS.contains(&s.as_str()) {
                    return Err(self.err(format!("keyword '{s}' cannot be used as {what}")));
                }
                self.next();
                Ok(s)
            }
            other => Err(self.err(format!("expected {what}, found {other}"))),
        }
    }

    fn keyword(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Tok::Ident(s) if s == kw) {
            self.next();
            true
        } else {
            false
        }
    }

    fn unit(&mut self) -> Result<SourceUnit, ParseError> {
        let mut unit = SourceUnit::default();
        let mut has_system = false;
        loop {
            if self.keyword("global") {
                let name = self.ident("a global type name")?;
                self.expect(Tok::Eq)?;
                let g = self.gtype()?;
                unit.globals.push((name, g));
            } else if self.keyword("system") {
                self.expect(Tok::LBrace)?;
                while !matches!(self.peek(), Tok::RBrace) {
                    unit.roles.push(self.role()?);
                }
                self.expect(Tok::RBrace)?;
                has_system = true;
            } else if matches!(self.peek(), Tok::Eof) {
                break;
            } else {
                return Err(self.err(format!(
                    "expected 'global' or 'system', found {}",
                    self.peek()
                )));
            }
        }
        if !has_system || unit.roles.is_empty() {
            return Err(ParseError::NoSystem);
        }
        Ok(unit)
    }

    fn role(&mut self) -> Result<RoleDecl, ParseError> {
        if !self.keyword("role") {
            return Err(self.err(format!("expected 'role', found {}", self.peek())));
        }
        let participant = Participant::new(self.ident("a participant")?);
        self.expect(Tok::Colon)?;
        let global = self.ident("a global type name")?;
        if !self.keyword("at") {
            return Err(self.err("expected 'at'"));
        }
        let loc = Location::new(self.ident("a location")?);
        let kind = if self.keyword("request") {
            ServiceKind::Request
        } else if self.keyword("accept") {
            ServiceKind::Accept
        } else {
            return Err(self.err("expected 'request' or 'accept'"));
        };
        let shared = SharedName::new(self.ident("a shared name")?);
        self.expect(Tok::LParen)?;
        let var = Var::new(self.ident("a session variable")?);
        self.expect(Tok::RParen)?;
        self.expect(Tok::LBrace)?;
        let body = self.proc()?;
        self.expect(Tok::RBrace)?;
        Ok(RoleDecl {
            participant,
            global,
            loc,
            kind,
            shared,
            var,
            body,
        })
    }

    fn gtype(&mut self) -> Result<GlobalType, ParseError> {
        if self.keyword("end") {
            return Ok(GlobalType::End);
        }
        if self.keyword("rec") {
            let v = TypeVar::new(self.ident("a type variable")?);
            self.expect(Tok::Dot)?;
            let body = self.gtype()?;
            return Ok(GlobalType::Rec {
                var: v,
                body: Box::new(body),
            });
        }
        if self.keyword("var") {
            let v = TypeVar::new(self.ident("a type variable")?);
            return Ok(GlobalType::Var(v));
        }
        let first = self.ident("a participant or type variable")?;
        if !matches!(self.peek(), Tok::Arrow) {
            return Ok(GlobalType::Var(TypeVar::new(first)));
        }
        self.expect(Tok::Arrow)?;
        let to = Participant::new(self.ident("a participant")?);
        self.expect(Tok::Colon)?;
        match self.peek() {
            Tok::Lt => {
                self.next();
                let payload = self.vtype()?;
                self.expect(Tok::Gt)?;
                self.expect(Tok::Dot)?;
                let cont = self.gtype()?;
                Ok(GlobalType::Exchange {
                    from: Participant::new(first),
                    to,
                    payload,
                    cont: Box::new(cont),
                })
            }
            Tok::LBrace => {
                self.next();
                let mut branches = Vec::new();
                loop {
                    let l = Label::new(self.ident("a label")?);
                    self.expect(Tok::Colon)?;
                    let g = self.gtype()?;
                    branches.push((l, g));
                    if matches!(self.peek(), Tok::Comma) {
                        self.next();
                    } else {
                        break;
                    }
                }
                self.expect(Tok::RBrace)?;
                Ok(GlobalType::Choice {
                    from: Participant::new(first),
                    to,
                    branches,
                })
            }
            other => Err(self.err(format!("expected '<' or '{{', found {other}"))),
        }
    }

    fn vtype(&mut self) -> Result<ValueType, ParseError> {
        if self.keyword("bool") {
            Ok(ValueType::Bool)
        } else if self.keyword("nat") {
            Ok(ValueType::Nat)
        } else if self.keyword("str") {
            Ok(ValueType::Str)
        } else if self.keyword("thunk") {
            Ok(ValueType::thunk())
        } else if self.keyword("fun") {
            self.expect(Tok::LParen)?;
            let t = self.ltype()?;
            self.expect(Tok::RParen)?;
            Ok(ValueType::Arrow(Box::new(t)))
        } else {
            Err(self.err(format!(
                "expected a payload type, found {}",
                self.peek()
            )))
        }
    }

    fn ltype(&mut self) -> Result<LocalType, ParseError> {
        if self.keyword("end") {
            return Ok(LocalType::End);
        }
        if self.keyword("rec") {
            let v = TypeVar::new(self.ident("a type variable")?);
            self.expect(Tok::Dot)?;
            let body = self.ltype()?;
            return Ok(LocalType::Rec {
                var: v,
                body: Box::new(body),
            });
        }
        if self.keyword("var") {
            let v = TypeVar::new(self.ident("a type variable")?);
            return Ok(LocalType::Var(v));
        }
        let first = self.ident("a participant or type variable")?;
        let peer = Participant::new(first.clone());
        match self.peek().clone() {
            Tok::Bang | Tok::Query => {
                let is_send = matches!(self.peek(), Tok::Bang);
                self.next();
                self.expect(Tok::Lt)?;
                let payload = self.vtype()?;
                self.expect(Tok::Gt)?;
                self.expect(Tok::Dot)?;
                let cont = Box::new(self.ltype()?);
                Ok(if is_send {
                    LocalType::Send {
                        peer,
                        payload,
                        cont,
                    }
                } else {
                    LocalType::Recv {
                        peer,
                        payload,
                        cont,
                    }
                })
            }
            Tok::Plus | Tok::Amp => {
                let is_select = matches!(self.peek(), Tok::Plus);
                self.next();
                self.expect(Tok::LBrace)?;
                let mut branches = Vec::new();
                loop {
                    let l = Label::new(self.ident("a label")?);
                    self.expect(Tok::Colon)?;
                    let t = self.ltype()?;
                    branches.push((l, t));
                    if matches!(self.peek(), Tok::Comma) {
                        self.next();
                    } else {
                        break;
                    }
                }
                self.expect(Tok::RBrace)?;
                Ok(if is_select {
                    LocalType::Select { peer, branches }
                } else {
                    LocalType::Branch { peer, branches }
                })
            }
            _ => Ok(LocalType::Var(TypeVar::new(first))),
        }
    }

    fn proc(&mut self) -> Result<Process, ParseError> {
        let mut parts = vec![self.seq()?];
        while matches!(self.peek(), Tok::Pipe) {
            self.next();
            parts.push(self.seq()?);
        }
        Ok(parts
            .into_iter()
            .reduce(|a, b| Process::Par(Box::new(a), Box::new(b)))
            .expect("at least one component"))
    }

    fn seq(&mut self) -> Result<Process, ParseError> {
        match self.peek().clone() {
            Tok::Nat(0) => {
                self.next();
                Ok(Process::Nil)
            }
            Tok::LParen => {
                self.next();
                let p = self.proc()?;
                self.expect(Tok::RParen)?;
                Ok(p)
            }
            Tok::LLBrace => {
                // thunk literal in subject position: must be applied
                let v = self.value()?;
                self.apply_tail(v)
            }
            Tok::Ident(w) if w == "rec" => {
                self.next();
                let v = ProcVar::new(self.ident("a process variable")?);
                self.expect(Tok::Dot)?;
                let body = self.seq()?;
                Ok(Process::Rec {
                    var: v,
                    body: Box::new(body),
                })
            }
            Tok::Ident(w) if w == "fn" => {
                let v = self.value()?;
                self.apply_tail(v)
            }
            Tok::Ident(name) => {
                if KEYWORDS.contains(&name.as_str()) {
                    return Err(self.err(format!("keyword '{name}' cannot start a process")));
                }
                match self.peek2().clone() {
                    Tok::Bang => {
                        self.next();
                        self.next();
                        self.expect(Tok::Lt)?;
                        let value = self.value()?;
                        self.expect(Tok::Gt)?;
                        self.expect(Tok::Dot)?;
                        let cont = self.seq()?;
                        Ok(Process::Send {
                            chan: ChannelRef::Var(Var::new(name)),
                            value,
                            cont: Box::new(cont),
                        })
                    }
                    Tok::Query => {
                        self.next();
                        self.next();
                        self.expect(Tok::LParen)?;
                        let v = Var::new(self.ident("a variable")?);
                        self.expect(Tok::RParen)?;
                        self.expect(Tok::Dot)?;
                        let cont = self.seq()?;
                        Ok(Process::Recv {
                            chan: ChannelRef::Var(Var::new(name)),
                            var: v,
                            cont: Box::new(cont),
                        })
                    }
                    Tok::Plus | Tok::Amp => {
                        self.next();
                        let is_select = matches!(self.peek(), Tok::Plus);
                        self.next();
                        self.expect(Tok::LBrace)?;
                        let mut branches = Vec::new();
                        loop {
                            let l = Label::new(self.ident("a label")?);
                            self.expect(Tok::Colon)?;
                            let p = self.proc()?;
                            branches.push((l, p));
                            if matches!(self.peek(), Tok::Comma) {
                                self.next();
                            } else {
                                break;
                            }
                        }
                        self.expect(Tok::RBrace)?;
                        let chan = ChannelRef::Var(Var::new(name));
                        Ok(if is_select {
                            Process::Select { chan, branches }
                        } else {
                            Process::Branch { chan, branches }
                        })
                    }
                    Tok::LParen => {
                        self.next();
                        self.apply_tail(ValueExpr::Var(Var::new(name)))
                    }
                    _ => {
                        self.next();
                        Ok(Process::PVar(ProcVar::new(name)))
                    }
                }
            }
            other => Err(self.err(format!("expected a process, found {other}"))),
        }
    }

    fn apply_tail(&mut self, func: ValueExpr) -> Result<Process, ParseError> {
        self.expect(Tok::LParen)?;
        let arg = match self.peek().clone() {
            Tok::Star => {
                self.next();
                NameExpr::Star
            }
            Tok::Ident(_) => NameExpr::Var(Var::new(self.ident("an argument name")?)),
            other => return Err(self.err(format!("expected an argument, found {other}"))),
        };
        self.expect(Tok::RParen)?;
        Ok(Process::Apply { func, arg })
    }

    fn value(&mut self) -> Result<ValueExpr, ParseError> {
        match self.peek().clone() {
            Tok::Str(s) => {
                self.next();
                Ok(ValueExpr::Lit(Literal::Str(s)))
            }
            Tok::Nat(n) => {
                self.next();
                Ok(ValueExpr::Lit(Literal::Nat(n)))
            }
            Tok::Ident(w) if w == "true" => {
                self.next();
                Ok(ValueExpr::Lit(Literal::Bool(true)))
            }
            Tok::Ident(w) if w == "false" => {
                self.next();
                Ok(ValueExpr::Lit(Literal::Bool(false)))
            }
            Tok::LLBrace => {
                self.next();
                let body = self.proc()?;
                self.expect(Tok::RRBrace)?;
                Ok(Process::thunk(body))
            }
            Tok::Ident(w) if w == "fn" => {
                self.next();
                self.expect(Tok::LParen)?;
                let param = Var::new(self.ident("a parameter")?);
                self.expect(Tok::RParen)?;
                self.expect(Tok::LBrace)?;
                let body = self.proc()?;
                self.expect(Tok::RBrace)?;
                Ok(ValueExpr::Abstraction {
                    param,
                    body: Box::new(body),
                })
            }
            Tok::Ident(_) => Ok(ValueExpr::Var(Var::new(self.ident("a variable")?))),
            other => Err(self.err(format!("expected a value, found {other}"))),
        }
    }
}

/// Parses a source unit.
pub fn parse(src: &str) -> Result<SourceUnit, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0 };
    let unit = p.unit()?;
    if !matches!(p.peek(), Tok::Eof) {
        return Err(p.err("trailing input"));
    }
    Ok(unit)
}

/// Resolves a parsed unit into the declared protocols and the initial
/// configuration of located services.
pub fn elaborate(unit: &SourceUnit) -> Result<(Program, Configuration), ParseError> {
    for (name, g) in &unit.globals {
        g.check_well_formed()
            .map_err(|e| ParseError::Resolve(format!("global {name}: {e}")))?;
    }
    let program = Program {
        globals: unit.globals.clone(),
    };
    let mut nodes = Vec::new();
    let mut seen_locs = Vec::new();
    for role in &unit.roles {
        let Some(g) = program.lookup(&role.global) else {
            return Err(ParseError::Resolve(format!(
                "role {} refers to undeclared global type {}",
                role.participant, role.global
            )));
        };
        if !g.participants().contains(&role.participant) {
            return Err(ParseError::Resolve(format!(
                "participant {} does not occur in {}",
                role.participant, role.global
            )));
        }
        let annot = project(g, &role.participant)
            .map_err(|e| ParseError::Resolve(format!("role {}: {e}", role.participant)))?;
        if seen_locs.contains(&role.loc) {
            return Err(ParseError::Resolve(format!(
                "location {} declared twice",
                role.loc
            )));
        }
        seen_locs.push(role.loc.clone());
        nodes.push(Node::Service(Service {
            loc: role.loc.clone(),
            kind: role.kind,
            shared: role.shared.clone(),
            var: role.var.clone(),
            participant: role.participant.clone(),
            annot,
            body: role.body.clone(),
        }));
    }
    // one request per shared name
    let mut shared_requests: Vec<&SharedName> = Vec::new();
    for role in &unit.roles {
        if role.kind == ServiceKind::Request {
            if shared_requests.contains(&&role.shared) {
                return Err(ParseError::Resolve(format!(
                    "shared name {} has more than one request",
                    role.shared
                )));
            }
            shared_requests.push(&role.shared);
        }
    }
    Ok((program, Configuration::new(Vec::new(), nodes)))
}

/// Parses and elaborates in one go.
pub fn load(src: &str) -> Result<(SourceUnit, Program, Configuration), ParseError> {
    let unit = parse(src)?;
    let (program, config) = elaborate(&unit)?;
    Ok((unit, program, config))
}

// -------------------------------------------------------------- printer --

fn print_vtype(t: &ValueType) -> String {
    match t {
        ValueType::Bool => "bool".into(),
        ValueType::Nat => "nat".into(),
        ValueType::Str => "str".into(),
        ValueType::Arrow(inner) if **inner == LocalType::End => "thunk".into(),
        ValueType::Arrow(inner) => format!("fun({})", print_ltype(inner)),
    }
}

pub fn print_ltype(t: &LocalType) -> String {
    match t {
        LocalType::Send {
            peer,
            payload,
            cont,
        } => format!("{peer} ! <{}> . {}", print_vtype(payload), print_ltype(cont)),
        LocalType::Recv {
            peer,
            payload,
            cont,
        } => format!("{peer} ? <{}> . {}", print_vtype(payload), print_ltype(cont)),
        LocalType::Select { peer, branches } => {
            let bs: Vec<String> = branches
                .iter()
                .map(|(l, t)| format!("{l}: {}", print_ltype(t)))
                .collect();
            format!("{peer} + {{ {} }}", bs.join(", "))
        }
        LocalType::Branch { peer, branches } => {
            let bs: Vec<String> = branches
                .iter()
                .map(|(l, t)| format!("{l}: {}", print_ltype(t)))
                .collect();
            format!("{peer} & {{ {} }}", bs.join(", "))
        }
        LocalType::Rec { var, body } => format!("rec {var} . {}", print_ltype(body)),
        LocalType::Var(v) => v.to_string(),
        LocalType::End => "end".into(),
    }
}

pub fn print_gtype(g: &GlobalType) -> String {
    match g {
        GlobalType::Exchange {
            from,
            to,
            payload,
            cont,
        } => format!(
            "{from} -> {to} : <{}> . {}",
            print_vtype(payload),
            print_gtype(cont)
        ),
        GlobalType::Choice { from, to, branches } => {
            let bs: Vec<String> = branches
                .iter()
                .map(|(l, g)| format!("{l}: {}", print_gtype(g)))
                .collect();
            format!("{from} -> {to} : {{ {} }}", bs.join(", "))
        }
        GlobalType::Rec { var, body } => format!("rec {var} . {}", print_gtype(body)),
        GlobalType::Var(v) => v.to_string(),
        GlobalType::End => "end".into(),
    }
}

fn print_value(v: &ValueExpr) -> String {
    match v {
        ValueExpr::Shared(a) => a.to_string(),
        ValueExpr::Lit(Literal::Str(s)) => format!("'{s}'"),
        ValueExpr::Lit(Literal::Nat(n)) => n.to_string(),
        ValueExpr::Lit(Literal::Bool(b)) => b.to_string(),
        ValueExpr::Var(x) => x.to_string(),
        ValueExpr::Abstraction { param, body } => {
            if param.as_str() == "_" {
                format!("{{{{ {} }}}}", print_proc(body))
            } else {
                format!("fn({param}){{ {} }}", print_proc(body))
            }
        }
    }
}

pub fn print_proc(p: &Process) -> String {
    match p {
        Process::Send { chan, value, cont } => {
            format!("{chan}!<{}>. {}", print_value(value), print_proc(cont))
        }
        Process::Recv { chan, var, cont } => format!("{chan}?({var}). {}", print_proc(cont)),
        Process::Select { chan, branches } => {
            let bs: Vec<String> = branches
                .iter()
                .map(|(l, b)| format!("{l}: {}", print_proc(b)))
                .collect();
            format!("{chan}+{{ {} }}", bs.join(", "))
        }
        Process::Branch { chan, branches } => {
            let bs: Vec<String> = branches
                .iter()
                .map(|(l, b)| format!("{l}: {}", print_proc(b)))
                .collect();
            format!("{chan}&{{ {} }}", bs.join(", "))
        }
        Process::Par(a, b) => format!("({} | {})", print_proc(a), print_proc(b)),
        Process::Rec { var, body } => format!("rec {var}. {}", print_proc(body)),
        Process::PVar(v) => v.to_string(),
        Process::Apply { func, arg } => format!("{}({arg})", print_value(func)),
        Process::Restrict { name, body } => format!("new {name}. {}", print_proc(body)),
        Process::Nil => "0".into(),
    }
}

/// Prints a source unit back to parseable text.
pub fn print_unit(unit: &SourceUnit) -> String {
    let mut out = String::new();
    for (name, g) in &unit.globals {
        out.push_str(&format!("global {name} =\n  {}\n\n", print_gtype(g)));
    }
    out.push_str("system {\n");
    for r in &unit.roles {
        let kind = match r.kind {
            ServiceKind::Request => "request",
            ServiceKind::Accept => "accept",
        };
        out.push_str(&format!(
            "  role {} : {} at {} {} {} ({}) {{\n    {}\n  }}\n",
            r.participant,
            r.global,
            r.loc,
            kind,
            r.shared,
            r.var,
            print_proc(&r.body)
        ));
    }
    out.push_str("}\n");
    out
}

// ------------------------------------------------------------- bundled --

/// Bundled example programs, addressable from the CLI as `@name`.
pub mod bundled {
    pub const THREE_BUYER: &str = include_str!("../programs/three_buyer.rchor");
    pub const BUYER_SELLER: &str = include_str!("../programs/buyer_seller.rchor");
    pub const THREE_BUYER_FO: &str = include_str!("../programs/three_buyer_fo.rchor");
    pub const FOUR_PARTY: &str = include_str!("../programs/four_party.rchor");

    pub const ALL: &[(&str, &str)] = &[
        ("three_buyer", THREE_BUYER),
        ("buyer_seller", BUYER_SELLER),
        ("three_buyer_fo", THREE_BUYER_FO),
        ("four_party", FOUR_PARTY),
    ];

    pub fn by_name(name: &str) -> Option<&'static str> {
        ALL.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{type_equal_local, ValueType};

    #[test]
    fn empty_file_has_no_system() {
        assert_eq!(parse(""), Err(ParseError::NoSystem));
    }

    #[test]
    fn syntax_error_carries_position() {
        let err = parse("global G = A -> 7").unwrap_err();
        match err {
            ParseError::Syntax { line, col, .. } => {
                assert_eq!(line, 1);
                assert!(col > 1);
            }
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn three_buyer_parses_and_projects() {
        let (unit, _, config) = load(bundled::THREE_BUYER).unwrap();
        assert_eq!(unit.roles.len(), 4);
        let g = &unit.globals[0].1;
        let parts = g.participants();
        assert_eq!(parts.len(), 4);
        // the third buyer's view: receive a share, then code, then end
        let c = project(g, &Participant::new("C")).unwrap();
        let expected = LocalType::recv(
            "B",
            ValueType::Nat,
            LocalType::recv("B", ValueType::thunk(), LocalType::End),
        );
        assert!(type_equal_local(&c, &expected));
        assert_eq!(config.nodes.len(), 4);
    }

    #[test]
    fn buyer_seller_has_two_roles_one_choice() {
        let (unit, _, _) = load(bundled::BUYER_SELLER).unwrap();
        assert_eq!(unit.roles.len(), 2);
        fn count_choices(g: &GlobalType) -> usize {
            match g {
                GlobalType::Choice { branches, .. } => {
                    1 + branches.iter().map(|(_, b)| count_choices(b)).sum::<usize>()
                }
                GlobalType::Exchange { cont, .. } => count_choices(cont),
                GlobalType::Rec { body, .. } => count_choices(body),
                _ => 0,
            }
        }
        assert_eq!(count_choices(&unit.globals[0].1), 1);
    }

    #[test]
    fn print_parse_roundtrip_on_bundled() {
        for (name, src) in bundled::ALL {
            let unit = parse(src).unwrap_or_else(|e| panic!("{name}: {e}"));
            let printed = print_unit(&unit);
            let reparsed =
                parse(&printed).unwrap_or_else(|e| panic!("{name} reprint: {e}\n{printed}"));
            assert_eq!(unit, reparsed, "round trip failed for {name}");
        }
    }

    #[test]
    fn duplicate_request_rejected() {
        let src = "
global G = A -> B : <nat> . end
system {
  role A : G at l1 request a (x) { x!<1>. 0 }
  role B : G at l2 request a (y) { y?(v). 0 }
}";
        let unit = parse(src).unwrap();
        assert!(matches!(elaborate(&unit), Err(ParseError::Resolve(_))));
    }

    #[test]
    fn undeclared_global_rejected() {
        let src = "
system {
  role A : Nope at l1 request a (x) { 0 }
}";
        // parses fine, fails to resolve
        let unit = parse(src).unwrap();
        assert!(matches!(elaborate(&unit), Err(ParseError::Resolve(_))));
    }
}
