//! Ghost-state instrumentation.
//!
//! Every statement becomes a unit: an optional run-time decision whether
//! the accessed location is thread-local, ghost operations before and after
//! the original statement, and for forks a prologue run by the child. Ghost
//! operations name program variables; the interpreter resolves them to
//! addresses, so `reach` is computed on the concrete heap.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::lang::{print_program, Callback, Label, Operand, Program, Stmt, StmtKind, ValidProgram};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GhostSet {
    /// Thread-local application heap.
    Slh,
    /// Thread-local Core instances.
    Sih,
    /// Shared heap, reached through the global pointer.
    Sgh,
}

impl GhostSet {
    pub fn name(self) -> &'static str {
        match self {
            GhostSet::Slh => "slh",
            GhostSet::Sih => "sih",
            GhostSet::Sgh => "*sgh",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GhostOp {
    /// `set := set ∪ {vars}`, ignoring non-addresses.
    Add(GhostSet, Vec<String>),
    /// `set := set \ {vars}`; fails if an address is missing.
    Remove(GhostSet, Vec<String>),
    /// `R := reach(vars) ∩ slh`, scoped to the unit.
    Snapshot(Vec<String>),
    RemoveSnap(GhostSet),
    /// `set := set ∪ R ∪ {vars}`.
    AddSnap(GhostSet, Vec<String>),
    /// Fresh role identifier, recorded in `*used`.
    PickRid,
    /// `slh := ∅; sih := ∅`.
    Reset,
}

/// Which branch of the locality decision an operation belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Guard {
    Always,
    Local,
    Shared,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardedOp {
    pub guard: Guard,
    pub op: GhostOp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IStmt {
    pub label: Label,
    /// The original statement with nested blocks emptied.
    pub shell: StmtKind,
    /// Variable whose membership in `slh` selects the local or shared branch.
    pub decide: Option<String>,
    /// The shared branch runs as an atomic block.
    pub shared_atomic: bool,
    pub pre: Vec<GuardedOp>,
    pub post: Vec<GuardedOp>,
    pub blocks: Vec<Vec<IStmt>>,
    /// Run first by a forked child.
    pub child_prologue: Vec<GhostOp>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ICallback {
    pub label: Label,
    pub name: String,
    pub params: Vec<String>,
    pub body: Vec<IStmt>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentedProgram {
    /// Declarations of the original program, bodies excluded.
    pub decls: Program,
    pub callbacks: Vec<ICallback>,
    pub body: Vec<IStmt>,
}

fn vars(ops: &[Operand]) -> Vec<String> {
    ops.iter().filter_map(|o| o.var()).map(str::to_string).collect()
}

fn always(op: GhostOp) -> GuardedOp {
    GuardedOp { guard: Guard::Always, op }
}

pub fn instrument(p: &ValidProgram) -> InstrumentedProgram {
    let decls = Program { inputs: p.inputs.clone(), apis: p.apis.clone(), callbacks: Vec::new(), body: Vec::new() };
    let callbacks = p
        .callbacks
        .iter()
        .map(|cb| ICallback { label: cb.label, name: cb.name.clone(), params: cb.params.clone(), body: block(&cb.body) })
        .collect();
    InstrumentedProgram { decls, callbacks, body: block(&p.body) }
}

fn block(b: &[Stmt]) -> Vec<IStmt> {
    b.iter().map(unit).collect()
}

fn unit(s: &Stmt) -> IStmt {
    use GhostOp::*;
    use GhostSet::*;
    let mut u = IStmt {
        label: s.label,
        shell: shell(&s.kind),
        decide: None,
        shared_atomic: false,
        pre: Vec::new(),
        post: Vec::new(),
        blocks: s.children().into_iter().map(block).collect(),
        child_prologue: Vec::new(),
    };
    let local = |op| GuardedOp { guard: Guard::Local, op };
    let shared = |op| GuardedOp { guard: Guard::Shared, op };
    match &s.kind {
        StmtKind::HeapAlloc { x } => u.post.push(always(Add(Slh, vec![x.clone()]))),
        StmtKind::HeapRead { e, .. } => {
            u.decide = Some(e.clone());
            u.shared_atomic = true;
            u.pre = vec![local(Remove(Slh, vec![e.clone()])), shared(Remove(Sgh, vec![e.clone()]))];
            u.post = vec![local(Add(Slh, vec![e.clone()])), shared(Add(Sgh, vec![e.clone()]))];
        }
        StmtKind::HeapWrite { x, e } => {
            u.decide = Some(x.clone());
            u.shared_atomic = true;
            u.pre = vec![
                local(Remove(Slh, vec![x.clone()])),
                shared(Remove(Sgh, vec![x.clone()])),
                shared(Snapshot(vars(std::slice::from_ref(e)))),
                shared(RemoveSnap(Slh)),
            ];
            u.post = vec![local(Add(Slh, vec![x.clone()])), shared(AddSnap(Sgh, vec![x.clone()]))];
        }
        StmtKind::CoreAlloc { c, args } => {
            u.pre = vec![always(PickRid), always(Remove(Slh, vars(args)))];
            u.post = vec![always(Add(Slh, vars(args))), always(Add(Sih, vec![c.clone()]))];
        }
        StmtKind::CoreCall { c, args, rets, .. } => {
            u.pre = vec![always(Remove(Sih, vec![c.clone()])), always(Remove(Slh, vars(args)))];
            let mut back = vars(args);
            back.extend(rets.iter().cloned());
            u.post = vec![always(Add(Slh, back)), always(Add(Sih, vec![c.clone()]))];
        }
        StmtKind::Fork { captured, .. } => {
            u.pre = vec![always(Snapshot(captured.clone())), always(RemoveSnap(Slh)), always(AddSnap(Sgh, Vec::new()))];
            u.child_prologue = vec![Reset];
        }
        _ => {}
    }
    u
}

fn shell(k: &StmtKind) -> StmtKind {
    match k {
        StmtKind::Fork { captured, .. } => StmtKind::Fork { captured: captured.clone(), body: Vec::new() },
        StmtKind::Branch { cond, .. } => {
            StmtKind::Branch { cond: cond.clone(), then_b: Vec::new(), else_b: Vec::new() }
        }
        StmtKind::Loop { cond, bound, .. } => StmtKind::Loop { cond: cond.clone(), bound: *bound, body: Vec::new() },
        other => other.clone(),
    }
}

impl IStmt {
    /// The original statement, ghost code erased.
    pub fn strip(&self) -> Stmt {
        let mut blocks = self.blocks.iter().map(|b| b.iter().map(IStmt::strip).collect::<Vec<_>>());
        let kind = match &self.shell {
            StmtKind::Fork { captured, .. } => {
                StmtKind::Fork { captured: captured.clone(), body: blocks.next().unwrap_or_default() }
            }
            StmtKind::Branch { cond, .. } => StmtKind::Branch {
                cond: cond.clone(),
                then_b: blocks.next().unwrap_or_default(),
                else_b: blocks.next().unwrap_or_default(),
            },
            StmtKind::Loop { cond, bound, .. } => {
                StmtKind::Loop { cond: cond.clone(), bound: *bound, body: blocks.next().unwrap_or_default() }
            }
            other => other.clone(),
        };
        Stmt { label: self.label, kind }
    }

    pub fn ghost_ops(&self) -> impl Iterator<Item = &GhostOp> {
        self.pre.iter().chain(&self.post).map(|g| &g.op).chain(&self.child_prologue)
    }
}

impl InstrumentedProgram {
    pub fn strip(&self) -> Program {
        let mut p = self.decls.clone();
        p.callbacks = self
            .callbacks
            .iter()
            .map(|cb| Callback {
                label: cb.label,
                name: cb.name.clone(),
                params: cb.params.clone(),
                body: cb.body.iter().map(IStmt::strip).collect(),
            })
            .collect();
        p.body = self.body.iter().map(IStmt::strip).collect();
        p
    }

    /// Printed in the program syntax; ghost code sits on `//@` lines, so the
    /// output parses back to the original program.
    pub fn print(&self) -> String {
        let mut out = String::new();
        out.push_str(&print_program(&self.decls));
        out.push_str("//@ *sgh := {}; *used := {}; slh := {}; sih := {}\n");
        for cb in &self.callbacks {
            let _ = writeln!(out, "{}: callback {}({}) {{", cb.label, cb.name, cb.params.join(", "));
            print_block(&cb.body, 1, &mut out);
            out.push_str("}\n");
        }
        print_block(&self.body, 0, &mut out);
        out
    }
}

fn names(v: &[String]) -> String {
    format!("{{{}}}", v.join(", "))
}

fn op_text(op: &GhostOp) -> String {
    match op {
        GhostOp::Add(s, v) => format!("{0} := {0} ∪ {1}", s.name(), names(v)),
        GhostOp::Remove(s, v) => format!("{0} := {0} \\ {1}", s.name(), names(v)),
        GhostOp::Snapshot(v) => format!("R := reach({}) ∩ slh", v.join(", ")),
        GhostOp::RemoveSnap(s) => format!("{0} := {0} \\ R", s.name()),
        GhostOp::AddSnap(s, v) if v.is_empty() => format!("{0} := {0} ∪ R", s.name()),
        GhostOp::AddSnap(s, v) => format!("{0} := {0} ∪ R ∪ {1}", s.name(), names(v)),
        GhostOp::PickRid => "atomic { rid := fresh(*used); *used := *used ∪ {rid} }".into(),
        GhostOp::Reset => "slh := {}; sih := {}".into(),
    }
}

fn print_ops(ops: &[GuardedOp], pad: &str, out: &mut String) {
    for g in ops {
        let prefix = match g.guard {
            Guard::Always => "",
            Guard::Local => "[local] ",
            Guard::Shared => "[shared] ",
        };
        let _ = writeln!(out, "{pad}//@ {prefix}{}", op_text(&g.op));
    }
}

fn print_block(b: &[IStmt], depth: usize, out: &mut String) {
    let pad = "  ".repeat(depth);
    for u in b {
        if let Some(x) = &u.decide {
            let _ = writeln!(out, "{pad}//@ local := {x} ∈ slh");
            if u.shared_atomic {
                let _ = writeln!(out, "{pad}//@ [shared] atomic {{");
            }
        }
        print_ops(&u.pre, &pad, out);
        let head = crate::lang::print::head(&u.shell);
        let _ = write!(out, "{pad}{}: {head}", u.label);
        match &u.shell {
            StmtKind::Fork { .. } | StmtKind::Loop { .. } => {
                out.push_str(" {\n");
                for op in &u.child_prologue {
                    let _ = writeln!(out, "{pad}  //@ {}", op_text(op));
                }
                print_block(&u.blocks[0], depth + 1, out);
                let _ = writeln!(out, "{pad}}}");
            }
            StmtKind::Branch { .. } => {
                out.push_str(" {\n");
                print_block(&u.blocks[0], depth + 1, out);
                if u.blocks[1].is_empty() {
                    let _ = writeln!(out, "{pad}}}");
                } else {
                    let _ = writeln!(out, "{pad}}} else {{");
                    print_block(&u.blocks[1], depth + 1, out);
                    let _ = writeln!(out, "{pad}}}");
                }
            }
            _ => out.push('\n'),
        }
        print_ops(&u.post, &pad, out);
        if u.shared_atomic {
            let _ = writeln!(out, "{pad}//@ [shared] }}");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_program;

    fn ip(src: &str) -> (ValidProgram, InstrumentedProgram) {
        let p = ValidProgram::new(parse_program(src).unwrap()).unwrap();
        let i = instrument(&p);
        (p, i)
    }

    #[test]
    fn skip_is_unchanged() {
        let (_, i) = ip("L1: skip");
        assert!(i.body[0].ghost_ops().next().is_none());
        assert!(i.body[0].decide.is_none());
    }

    #[test]
    fn allocation_adds_to_local_set() {
        let (_, i) = ip("L1: x := new()");
        assert!(i.body[0].pre.is_empty());
        assert_eq!(i.body[0].post, vec![always(GhostOp::Add(GhostSet::Slh, vec!["x".into()]))]);
    }

    #[test]
    fn fork_moves_reach_to_shared_and_resets_child() {
        let (_, i) = ip("L1: x := new()\nL2: fork(x) {\nL3: skip\n}");
        let f = &i.body[1];
        assert_eq!(f.pre[0].op, GhostOp::Snapshot(vec!["x".into()]));
        assert_eq!(f.pre[1].op, GhostOp::RemoveSnap(GhostSet::Slh));
        assert_eq!(f.pre[2].op, GhostOp::AddSnap(GhostSet::Sgh, vec![]));
        assert_eq!(f.child_prologue, vec![GhostOp::Reset]);
    }

    #[test]
    fn erasure_and_printed_form_round_trip() {
        let src = "L0: input k secret\ncore_api 0 f call\nL1: callback cb(z) {\nL2: skip\n}\nL3: x := new()\nL4: *x := k\nL5: c := core_alloc(x)\nL6: r := core_call 0 on c (x)\nL7: fork(x) {\nL8: v := *x\n}\nL9: if (k == 1) {\nL10: skip\n} else {\nL11: skip\n}\nL12: while (k < 3) bound 2 {\nL13: skip\n}";
        let (p, i) = ip(src);
        assert_eq!(&i.strip(), p.program());
        let printed = i.print();
        assert!(printed.contains("//@"));
        assert_eq!(parse_program(&printed).unwrap(), *p.program());
    }
}
