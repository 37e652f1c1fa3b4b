//! The labeled toy language shared by every analysis.
//!
//! A program is a list of declarations (inputs, the core API table,
//! application callbacks) followed by a statement block. Every statement
//! carries a [`Label`] that is unique within the program and doubles as the
//! allocation-site name for `new()` statements.

mod parse;
pub(crate) mod print;
mod validate;

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

pub use parse::{parse_program, parse_with_lines, ParseError};
pub use print::print_program;
pub use validate::{validate_program, ValidProgram, ValidationReport, Violation, ViolationKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(pub u32);

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

impl std::str::FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.strip_prefix('L')
            .unwrap_or(s)
            .parse()
            .map(Label)
            .map_err(|_| format!("bad label `{s}`"))
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u32),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(n) => Ok(Label(n)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand {
    Var(String),
    Nil,
    Int(i64),
    Str(String),
}

impl Operand {
    pub fn var(&self) -> Option<&str> {
        match self {
            Operand::Var(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Eq,
    Ne,
    Lt,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Expr {
    Atom(Operand),
    Not(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn vars(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Atom(o) => out.extend(o.var()),
            Expr::Not(e) => e.collect_vars(out),
            Expr::Bin(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }
}

/// Capability tags attached to I/O operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cap {
    FsWrite,
    NetWrite,
    OsState,
    Syscall,
    Exec,
}

impl Cap {
    pub const ALL: [Cap; 5] = [Cap::FsWrite, Cap::NetWrite, Cap::OsState, Cap::Syscall, Cap::Exec];

    pub fn name(self) -> &'static str {
        match self {
            Cap::FsWrite => "fs_write",
            Cap::NetWrite => "net_write",
            Cap::OsState => "os_state",
            Cap::Syscall => "syscall",
            Cap::Exec => "exec",
        }
    }

    pub fn from_name(s: &str) -> Option<Cap> {
        Cap::ALL.into_iter().find(|c| c.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Stmt {
    pub label: Label,
    pub kind: StmtKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StmtKind {
    Skip,
    /// `x := new()`
    HeapAlloc { x: String },
    /// `x := *e`
    HeapRead { x: String, e: String },
    /// `*x := e`
    HeapWrite { x: String, e: Operand },
    /// `c := core_alloc(args)`
    CoreAlloc { c: String, args: Vec<Operand> },
    /// `rets := core_call k on c (args)`
    CoreCall { k: usize, c: String, args: Vec<Operand>, rets: Vec<String> },
    /// `fork(captured) { body }`
    Fork { captured: Vec<String>, body: Vec<Stmt> },
    /// `[ret :=] io "op" (args) caps[..]`
    IoCall { op: String, args: Vec<Operand>, caps: Vec<Cap>, ret: Option<String> },
    Branch { cond: Expr, then_b: Vec<Stmt>, else_b: Vec<Stmt> },
    /// `while (cond) bound n { body }`; the bound caps iterations at run time.
    Loop { cond: Expr, bound: u32, body: Vec<Stmt> },
    Assign { x: String, e: Expr },
}

impl Stmt {
    /// Variables this statement defines (not counting nested blocks).
    pub fn defs(&self) -> Vec<&str> {
        match &self.kind {
            StmtKind::HeapAlloc { x } | StmtKind::HeapRead { x, .. } | StmtKind::Assign { x, .. } => vec![x],
            StmtKind::CoreAlloc { c, .. } => vec![c],
            StmtKind::CoreCall { rets, .. } => rets.iter().map(|s| s.as_str()).collect(),
            StmtKind::IoCall { ret, .. } => ret.iter().map(|s| s.as_str()).collect(),
            _ => Vec::new(),
        }
    }

    /// Variables this statement reads (not counting nested blocks).
    pub fn uses(&self) -> Vec<&str> {
        fn ops(v: &[Operand]) -> impl Iterator<Item = &str> {
            v.iter().filter_map(|o| o.var())
        }
        match &self.kind {
            StmtKind::Skip | StmtKind::HeapAlloc { .. } => Vec::new(),
            StmtKind::HeapRead { e, .. } => vec![e],
            StmtKind::HeapWrite { x, e } => std::iter::once(x.as_str()).chain(e.var()).collect(),
            StmtKind::CoreAlloc { args, .. } => ops(args).collect(),
            StmtKind::CoreCall { c, args, .. } => std::iter::once(c.as_str()).chain(ops(args)).collect(),
            StmtKind::Fork { captured, .. } => captured.iter().map(|s| s.as_str()).collect(),
            StmtKind::IoCall { args, .. } => ops(args).collect(),
            StmtKind::Branch { cond, .. } | StmtKind::Loop { cond, .. } => cond.vars(),
            StmtKind::Assign { e, .. } => e.vars(),
        }
    }

    pub fn children(&self) -> Vec<&[Stmt]> {
        match &self.kind {
            StmtKind::Fork { body, .. } | StmtKind::Loop { body, .. } => vec![body],
            StmtKind::Branch { then_b, else_b, .. } => vec![then_b, else_b],
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Input {
    pub label: Label,
    pub name: String,
    pub secret: bool,
    pub value: Option<Operand>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiKind {
    Ctor,
    Call,
    Vin,
    Vout,
}

impl ApiKind {
    pub fn name(self) -> &'static str {
        match self {
            ApiKind::Ctor => "ctor",
            ApiKind::Call => "call",
            ApiKind::Vin => "vin",
            ApiKind::Vout => "vout",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoreApi {
    pub k: usize,
    pub name: String,
    pub kind: ApiKind,
}

/// Application code the core may invoke. Callbacks never run in the
/// interpreter; they exist so that invocations of the core from inside them
/// can be rejected statically.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Callback {
    pub label: Label,
    pub name: String,
    pub params: Vec<String>,
    pub body: Vec<Stmt>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Program {
    pub inputs: Vec<Input>,
    pub apis: Vec<CoreApi>,
    pub callbacks: Vec<Callback>,
    pub body: Vec<Stmt>,
}

impl Program {
    pub fn api(&self, k: usize) -> Option<&CoreApi> {
        self.apis.iter().find(|a| a.k == k)
    }

    pub fn api_by_name(&self, name: &str) -> Option<&CoreApi> {
        self.apis.iter().find(|a| a.name == name)
    }

    /// Every statement in textual order, including callback and nested bodies.
    pub fn all_stmts(&self) -> Vec<&Stmt> {
        let mut out = Vec::new();
        for cb in &self.callbacks {
            walk(&cb.body, &mut out);
        }
        walk(&self.body, &mut out);
        out.sort_by_key(|s| s.label);
        out
    }

    pub fn stmt(&self, l: Label) -> Option<&Stmt> {
        self.all_stmts().into_iter().find(|s| s.label == l)
    }

    /// All labels, including inputs and callbacks, in ascending order.
    pub fn labels(&self) -> Vec<Label> {
        let mut out: Vec<Label> = self.inputs.iter().map(|i| i.label).collect();
        out.extend(self.callbacks.iter().map(|c| c.label));
        out.extend(self.all_stmts().iter().map(|s| s.label));
        out.sort();
        out
    }

    /// Labels of statements that sit inside a callback body.
    pub fn callback_labels(&self) -> Vec<Label> {
        let mut out = Vec::new();
        for cb in &self.callbacks {
            walk(&cb.body, &mut out);
        }
        out.into_iter().map(|s| s.label).collect()
    }

    /// Stable fingerprint used to detect analysis results computed on a
    /// different program.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        print_program(self).hash(&mut h);
        h.finish()
    }

    /// Total number of statements (nested included).
    pub fn size(&self) -> usize {
        self.all_stmts().len()
    }
}

fn walk<'a>(block: &'a [Stmt], out: &mut Vec<&'a Stmt>) {
    for s in block {
        out.push(s);
        for c in s.children() {
            walk(c, out);
        }
    }
}

/// Depth-first visit of a block with a flag telling whether the statement
/// runs in a forked thread.
pub fn visit_stmts<'a>(block: &'a [Stmt], in_fork: bool, f: &mut impl FnMut(&'a Stmt, bool)) {
    for s in block {
        f(s, in_fork);
        let child_fork = in_fork || matches!(s.kind, StmtKind::Fork { .. });
        for c in s.children() {
            visit_stmts(c, child_fork, f);
        }
    }
}
