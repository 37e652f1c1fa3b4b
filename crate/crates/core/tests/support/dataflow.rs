//! Random straight-line dataflow programs and a naive taint closure to
//! compare the analysis against.

use std::collections::BTreeSet;

use coresplit::lang::{Cap, Operand, StmtKind};
use coresplit::{Label, PtsMap, ValidProgram};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Gen {
    rng: ChaCha8Rng,
    out: Vec<String>,
    label: u32,
    fresh: u32,
    vars: Vec<String>,
    ptrs: Vec<String>,
    left: usize,
}

impl Gen {
    fn line(&mut self, depth: usize, text: String) {
        self.out.push(format!("{}L{}: {text}", "  ".repeat(depth), self.label));
        self.label += 1;
        self.left -= 1;
    }

    fn def(&mut self) -> String {
        self.fresh += 1;
        format!("x{}", self.fresh)
    }

    fn any(&mut self) -> String {
        self.vars.choose(&mut self.rng).unwrap().clone()
    }

    fn ptr(&mut self) -> Option<String> {
        self.ptrs.choose(&mut self.rng).cloned()
    }

    /// A statement that defines nothing, so it may sit inside a block.
    fn effect(&mut self, depth: usize, pool: &[String]) {
        let v = pool.choose(&mut self.rng).unwrap().clone();
        let target = pool.iter().filter(|x| self.ptrs.contains(x)).collect::<Vec<_>>().choose(&mut self.rng).map(|s| s.to_string());
        match target {
            Some(p) if self.rng.gen_bool(0.5) => self.line(depth, format!("*{p} := {v}")),
            _ => self.line(depth, format!("io \"out\" ({v}) caps[fs_write]")),
        }
    }

    fn stmt(&mut self) {
        match self.rng.gen_range(0..10) {
            0 => {
                let x = self.def();
                self.line(0, format!("{x} := new()"));
                self.vars.push(x.clone());
                self.ptrs.push(x);
            }
            1 => {
                let (x, v) = (self.def(), self.any());
                self.line(0, format!("{x} := {v}"));
                if self.ptrs.contains(&v) {
                    self.ptrs.push(x.clone());
                }
                self.vars.push(x);
            }
            2 => {
                let (x, a, b) = (self.def(), self.any(), self.any());
                self.line(0, format!("{x} := {a} + {b}"));
                self.vars.push(x);
            }
            3 => match self.ptr() {
                Some(p) => {
                    let v = self.any();
                    self.line(0, format!("*{p} := {v}"));
                }
                None => self.line(0, "skip".into()),
            },
            4 => match self.ptr() {
                Some(p) => {
                    let x = self.def();
                    self.line(0, format!("{x} := *{p}"));
                    self.vars.push(x.clone());
                    self.ptrs.push(x);
                }
                None => self.line(0, "skip".into()),
            },
            5 => {
                let v = self.any();
                self.line(0, format!("io \"out\" ({v}) caps[fs_write]"));
            }
            6 => {
                let (x, v) = (self.def(), self.any());
                self.line(0, format!("{x} := io \"peek\" ({v}) caps[os_state]"));
                self.vars.push(x);
            }
            7 if self.left >= 3 => {
                let c = self.any();
                let pool = self.vars.clone();
                self.line(0, format!("if ({c} == 1) {{"));
                self.effect(1, &pool);
                self.out.push("} else {".into());
                self.effect(1, &pool);
                self.out.push("}".into());
            }
            8 if self.left >= 2 => {
                let c = self.any();
                let pool = self.vars.clone();
                self.line(0, format!("while ({c} < 3) bound 2 {{"));
                self.effect(1, &pool);
                self.out.push("}".into());
            }
            9 if self.left >= 2 => {
                let (a, b) = (self.any(), self.any());
                let pool: Vec<String> = if a == b { vec![a] } else { vec![a, b] };
                self.line(0, format!("fork({}) {{", pool.join(", ")));
                self.effect(1, &pool);
                self.out.push("}".into());
            }
            _ => self.line(0, "skip".into()),
        }
    }
}

/// A program of at most `max` statements over a secret input `s` (label 0)
/// and a public input `t`. Sinks are `fs_write` calls.
pub fn random_program(seed: u64, max: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let left = rng.gen_range(1..=max);
    let mut g = Gen {
        rng,
        out: vec!["L0: input s secret".into(), "L1: input t".into()],
        label: 2,
        fresh: 0,
        vars: vec!["s".into(), "t".into()],
        ptrs: Vec::new(),
        left,
    };
    while g.left > 0 {
        g.stmt();
    }
    g.out.join("\n")
}

/// Sink statements reached by secret data and branch conditions that read
/// it, by iterating the transfer rules over all statements to a fixpoint.
pub fn brute_force(p: &ValidProgram, m: &PtsMap, sinks: &[Cap]) -> (BTreeSet<Label>, BTreeSet<Label>) {
    let mut vars: BTreeSet<String> = p.inputs.iter().filter(|i| i.secret).map(|i| i.name.clone()).collect();
    let mut cells = BTreeSet::new();
    let stmts = p.all_stmts();
    loop {
        let before = (vars.len(), cells.len());
        let deep = |o: &Operand, vars: &BTreeSet<String>, cells: &BTreeSet<_>| match o.var() {
            Some(v) => vars.contains(v) || m.reach(m.var(v).iter().copied()).iter().any(|s| cells.contains(s)),
            None => false,
        };
        for s in &stmts {
            match &s.kind {
                StmtKind::Assign { x, e } => {
                    if e.vars().iter().any(|v| vars.contains(*v)) {
                        vars.insert(x.clone());
                    }
                }
                StmtKind::HeapRead { x, e } => {
                    if m.var(e).iter().any(|a| cells.contains(a)) {
                        vars.insert(x.clone());
                    }
                }
                StmtKind::HeapWrite { x, e } => {
                    if e.var().is_some_and(|v| vars.contains(v)) {
                        cells.extend(m.var(x).iter().copied());
                    }
                }
                StmtKind::IoCall { args, ret: Some(r), .. } => {
                    if args.iter().any(|a| deep(a, &vars, &cells)) {
                        vars.insert(r.clone());
                    }
                }
                StmtKind::IoCall { ret: None, .. }
                | StmtKind::HeapAlloc { .. }
                | StmtKind::Skip
                | StmtKind::Fork { .. }
                | StmtKind::Branch { .. }
                | StmtKind::Loop { .. } => {}
                other => panic!("outside the generated fragment: {other:?}"),
            }
        }
        if (vars.len(), cells.len()) == before {
            break;
        }
    }
    let mut flagged = BTreeSet::new();
    let mut conds = BTreeSet::new();
    for s in &stmts {
        match &s.kind {
            StmtKind::IoCall { args, caps, .. } if caps.iter().any(|c| sinks.contains(c)) => {
                let hit = args.iter().any(|a| match a.var() {
                    Some(v) => vars.contains(v) || m.reach(m.var(v).iter().copied()).iter().any(|c| cells.contains(c)),
                    None => false,
                });
                if hit {
                    flagged.insert(s.label);
                }
            }
            StmtKind::Branch { cond, .. } | StmtKind::Loop { cond, .. } if cond.vars().iter().any(|v| vars.contains(*v)) => {
                conds.insert(s.label);
            }
            _ => {}
        }
    }
    (flagged, conds)
}
