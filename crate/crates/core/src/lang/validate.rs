use std::collections::{BTreeMap, BTreeSet};
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use super::*;
use crate::points_to;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationKind {
    DuplicateLabel,
    Ssa,
    UseBeforeDef,
    Capture,
    Shallow,
    CoreTable,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub label: Label,
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for v in &self.violations {
            writeln!(f, "{} {:?}: {}", v.label, v.kind, v.message)?;
        }
        Ok(())
    }
}

/// A program that passed [`validate_program`]. Analyses only accept this
/// type, so unvalidated input is rejected before any pass runs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidProgram {
    program: Program,
    fingerprint: u64,
}

impl ValidProgram {
    pub fn new(program: Program) -> Result<Self, ValidationReport> {
        let report = validate_program(&program);
        if report.is_ok() {
            let fingerprint = program.fingerprint();
            Ok(ValidProgram { program, fingerprint })
        } else {
            Err(report)
        }
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn into_program(self) -> Program {
        self.program
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

impl Deref for ValidProgram {
    type Target = Program;
    fn deref(&self) -> &Program {
        &self.program
    }
}

pub fn validate_program(p: &Program) -> ValidationReport {
    let mut v = Vec::new();

    let mut seen = BTreeSet::new();
    let mut all_labels: Vec<Label> = p.inputs.iter().map(|i| i.label).collect();
    all_labels.extend(p.callbacks.iter().map(|c| c.label));
    all_labels.extend(p.all_stmts().iter().map(|s| s.label));
    for l in all_labels {
        if !seen.insert(l) {
            v.push(Violation { label: l, kind: ViolationKind::DuplicateLabel, message: format!("label {l} is not unique") });
        }
    }

    let mut defs: BTreeMap<String, Label> = BTreeMap::new();
    let mut def = |name: &'_ str, l: Label, v: &mut Vec<Violation>| {
        if let Some(first) = defs.get(name) {
            v.push(Violation {
                label: l,
                kind: ViolationKind::Ssa,
                message: format!("`{name}` already defined at {first}"),
            });
        }
        defs.insert(name.to_string(), l);
    };
    for i in &p.inputs {
        def(&i.name, i.label, &mut v);
    }
    for cb in &p.callbacks {
        for prm in &cb.params {
            def(prm, cb.label, &mut v);
        }
    }
    for s in p.all_stmts() {
        for d in s.defs() {
            def(d, s.label, &mut v);
        }
    }

    let mut visible: BTreeSet<String> = p.inputs.iter().map(|i| i.name.clone()).collect();
    scope_block(&p.body, &mut visible, &BTreeSet::new(), &mut v);
    for cb in &p.callbacks {
        let mut vis: BTreeSet<String> = cb.params.iter().cloned().collect();
        scope_block(&cb.body, &mut vis, &BTreeSet::new(), &mut v);
    }

    let mut ks: Vec<usize> = p.apis.iter().map(|a| a.k).collect();
    ks.sort();
    if ks.iter().enumerate().any(|(i, k)| i != *k) {
        v.push(Violation {
            label: Label(0),
            kind: ViolationKind::CoreTable,
            message: "core api indices must be dense from 0".into(),
        });
    }

    let pts = points_to::solve(p);
    for s in p.all_stmts() {
        let args = match &s.kind {
            StmtKind::CoreAlloc { args, .. } => args,
            StmtKind::CoreCall { k, args, .. } => {
                if p.api(*k).is_none() {
                    v.push(Violation {
                        label: s.label,
                        kind: ViolationKind::CoreTable,
                        message: format!("core api {k} is not declared"),
                    });
                }
                args
            }
            _ => continue,
        };
        for a in args.iter().filter_map(|a| a.var()) {
            let deep: Vec<String> = pts
                .var(a)
                .iter()
                .filter(|site| !pts.contents(site).is_empty())
                .map(|site| site.to_string())
                .collect();
            if !deep.is_empty() {
                v.push(Violation {
                    label: s.label,
                    kind: ViolationKind::Shallow,
                    message: format!("argument `{a}` may point to cells holding pointers ({})", deep.join(", ")),
                });
            }
        }
    }

    v.sort();
    v.dedup();
    ValidationReport { violations: v }
}

fn scope_block(block: &[Stmt], visible: &mut BTreeSet<String>, outer: &BTreeSet<String>, v: &mut Vec<Violation>) {
    for s in block {
        for u in s.uses() {
            if visible.contains(u) {
                continue;
            }
            if outer.contains(u) {
                v.push(Violation {
                    label: s.label,
                    kind: ViolationKind::Capture,
                    message: format!("forked code reads `{u}` without capturing it"),
                });
            } else {
                v.push(Violation {
                    label: s.label,
                    kind: ViolationKind::UseBeforeDef,
                    message: format!("`{u}` used before definition"),
                });
            }
        }
        match &s.kind {
            StmtKind::Fork { captured, body } => {
                let mut child: BTreeSet<String> = captured.iter().cloned().collect();
                let mut child_outer = outer.clone();
                child_outer.extend(visible.iter().cloned());
                scope_block(body, &mut child, &child_outer, v);
            }
            StmtKind::Branch { then_b, else_b, .. } => {
                scope_block(then_b, visible, outer, v);
                scope_block(else_b, visible, outer, v);
            }
            StmtKind::Loop { body, .. } => scope_block(body, visible, outer, v),
            _ => {}
        }
        for d in s.defs() {
            visible.insert(d.to_string());
        }
    }
}
