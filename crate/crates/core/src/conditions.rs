//! Per-statement judgments that make the instrumented program's ghost
//! operations succeed, reported as C1..C8 diagnostics.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::escape::{EscapeMap, Point};
use crate::lang::{ApiKind, Label, Operand, Stmt, StmtKind, ValidProgram, ValidationReport, ViolationKind};
use crate::passthrough::PassMap;
use crate::points_to::{PtsMap, Site};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rule {
    C1,
    C2,
    C3,
    C4,
    C5,
    C6,
    C7,
    C8,
    #[serde(rename = "OMEGA-READ")]
    OmegaRead,
    #[serde(rename = "OMEGA-WRITE")]
    OmegaWrite,
    #[serde(rename = "OMEGA-COREALLOC")]
    OmegaCoreAlloc,
    #[serde(rename = "OMEGA-CORECALL")]
    OmegaCoreCall,
    #[serde(rename = "SHALLOW")]
    Shallow,
    #[serde(rename = "CAPTURE")]
    Capture,
}

impl Rule {
    pub const ALL: [Rule; 14] = [
        Rule::C1,
        Rule::C2,
        Rule::C3,
        Rule::C4,
        Rule::C5,
        Rule::C6,
        Rule::C7,
        Rule::C8,
        Rule::OmegaRead,
        Rule::OmegaWrite,
        Rule::OmegaCoreAlloc,
        Rule::OmegaCoreCall,
        Rule::Shallow,
        Rule::Capture,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rule::C1 => "C1",
            Rule::C2 => "C2",
            Rule::C3 => "C3",
            Rule::C4 => "C4",
            Rule::C5 => "C5",
            Rule::C6 => "C6",
            Rule::C7 => "C7",
            Rule::C8 => "C8",
            Rule::OmegaRead => "OMEGA-READ",
            Rule::OmegaWrite => "OMEGA-WRITE",
            Rule::OmegaCoreAlloc => "OMEGA-COREALLOC",
            Rule::OmegaCoreCall => "OMEGA-CORECALL",
            Rule::Shallow => "SHALLOW",
            Rule::Capture => "CAPTURE",
        }
    }

    pub fn from_name(s: &str) -> Option<Rule> {
        Rule::ALL.into_iter().find(|r| r.name() == s)
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Diagnostic {
    pub label: Label,
    pub rule: Rule,
    pub severity: Severity,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{} {sev}[{}]: {}", self.label, self.rule, self.message)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("analysis facts were computed for a different program")]
pub struct StaleFacts;

/// SHALLOW and CAPTURE violations from validation, as diagnostics. Other
/// validation failures have no rule and are returned unchanged.
pub fn validation_diagnostics(r: &ValidationReport) -> (Vec<Diagnostic>, ValidationReport) {
    let mut ds = Vec::new();
    let mut rest = ValidationReport::default();
    for v in &r.violations {
        let rule = match v.kind {
            ViolationKind::Shallow => Rule::Shallow,
            ViolationKind::Capture => Rule::Capture,
            _ => {
                rest.violations.push(v.clone());
                continue;
            }
        };
        ds.push(Diagnostic { label: v.label, rule, severity: Severity::Error, message: v.message.clone() });
    }
    ds.sort();
    (ds, rest)
}

pub fn check_conditions(
    p: &ValidProgram,
    pts: &PtsMap,
    esc: &EscapeMap,
    pass: &PassMap,
) -> Result<Vec<Diagnostic>, StaleFacts> {
    let f = p.fingerprint();
    if pts.fingerprint() != f || esc.fingerprint() != f || pass.fingerprint() != f {
        return Err(StaleFacts);
    }
    let mut c = Checker { p, pts, esc, pass, out: Vec::new() };
    for s in p.all_stmts() {
        c.stmt(s);
    }
    for s in p.all_stmts() {
        if let StmtKind::Fork { captured, body } = &s.kind {
            let cap = crate::escape::captured_sites(pts, captured);
            if let Some(inst) = cap.iter().find(|x| matches!(x, Site::CoreInst(_))) {
                c.fork_body(body, *inst, s.label);
            }
        }
    }
    for cb in &p.callbacks {
        c.callback(&cb.body, &cb.name);
    }
    let mut out = c.out;
    out.sort();
    out.dedup_by(|a, b| a.label == b.label && a.rule == b.rule);
    Ok(out)
}

struct Checker<'a> {
    p: &'a ValidProgram,
    pts: &'a PtsMap,
    esc: &'a EscapeMap,
    pass: &'a PassMap,
    out: Vec<Diagnostic>,
}

impl Checker<'_> {
    fn emit(&mut self, label: Label, rule: Rule, message: String) {
        self.out.push(Diagnostic { label, rule, severity: Severity::Error, message });
    }

    fn stmt(&mut self, s: &Stmt) {
        let l = s.label;
        let before = self.out.len();
        match &s.kind {
            StmtKind::HeapRead { e, .. } => {
                for site in self.not_app_managed(e) {
                    self.emit(l, Rule::C8, format!("reads Core instance state {site} through `{e}`"));
                }
                if self.out.len() > before {
                    self.emit(l, Rule::OmegaRead, "read permission not held by the application".into());
                }
            }
            StmtKind::HeapWrite { x, .. } => {
                for site in self.not_app_managed(x) {
                    self.emit(l, Rule::C2, format!("writes Core instance state {site} through `{x}`"));
                }
                if self.out.len() > before {
                    self.emit(l, Rule::OmegaWrite, "write permission not held by the application".into());
                }
            }
            StmtKind::CoreAlloc { args, .. } => {
                self.args(l, args);
                if self.out.len() > before {
                    self.emit(l, Rule::OmegaCoreAlloc, "Core constructor precondition not established".into());
                }
            }
            StmtKind::CoreCall { k, c, args, rets } => {
                self.args(l, args);
                let api = self.p.api(*k).expect("validated");
                if api.kind == ApiKind::Ctor {
                    self.emit(l, Rule::C3, format!("constructor `{}` invoked on an existing instance", api.name));
                }
                let recv = self.pts.var(c);
                if recv.is_empty() {
                    self.emit(l, Rule::C1, format!("receiver `{c}` is not a Core instance"));
                }
                for &site in recv {
                    if !matches!(site, Site::CoreInst(_)) {
                        self.emit(l, Rule::C1, format!("receiver `{c}` may be {site}, not a Core instance"));
                    } else if !self.pass.pt_core(site, Point::pre(l)) {
                        self.emit(l, Rule::C1, format!("Core instance {site} may have been exposed before this call"));
                    }
                }
                if !self.esc.is_local(self.pts, c, Point::pre(l)) {
                    self.emit(l, Rule::C4, format!("Core instance `{c}` may be shared with another thread"));
                }
                for r in rets {
                    if !self.esc.is_local(self.pts, r, Point::post(l)) {
                        self.emit(l, Rule::C6, format!("returned `{r}` may not be thread-local"));
                    }
                }
                if self.out.len() > before {
                    self.emit(l, Rule::OmegaCoreCall, format!("precondition of `{}` not established", api.name));
                }
            }
            _ => {}
        }
    }

    fn args(&mut self, l: Label, args: &[Operand]) {
        let vars: Vec<&str> = args.iter().filter_map(|a| a.var()).collect();
        for (i, a) in vars.iter().enumerate() {
            for b in &vars[i + 1..] {
                if !self.pts.var(a).is_disjoint(self.pts.var(b)) {
                    self.emit(l, Rule::C7, format!("arguments `{a}` and `{b}` may alias"));
                }
            }
        }
        for a in vars {
            if !self.esc.is_local(self.pts, a, Point::post(l)) {
                self.emit(l, Rule::C6, format!("argument `{a}` may not be thread-local"));
            }
            for site in self.not_app_managed(a) {
                self.emit(l, Rule::C3, format!("argument `{a}` may be Core instance {site}"));
            }
        }
    }

    fn not_app_managed(&self, x: &str) -> Vec<Site> {
        self.pts.var(x).iter().copied().filter(|s| !self.pass.app_managed(*s)).collect()
    }

    fn fork_body(&mut self, body: &[Stmt], inst: Site, fork: Label) {
        let mut calls = BTreeSet::new();
        crate::lang::visit_stmts(body, true, &mut |s, _| {
            if matches!(s.kind, StmtKind::CoreCall { .. }) {
                calls.insert(s.label);
            }
        });
        for l in calls {
            self.emit(l, Rule::C4, format!("Core instance {inst} captured by the fork at {fork} is used in another thread"));
        }
    }

    fn callback(&mut self, body: &[Stmt], name: &str) {
        let mut hits = BTreeSet::new();
        crate::lang::visit_stmts(body, false, &mut |s, _| {
            if matches!(s.kind, StmtKind::CoreAlloc { .. } | StmtKind::CoreCall { .. }) {
                hits.insert(s.label);
            }
        });
        for l in hits {
            self.emit(l, Rule::C5, format!("callback `{name}` invokes the Core"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::escape::compute_escape;
    use crate::lang::parse_program;
    use crate::passthrough::compute_passthrough;
    use crate::points_to::compute_points_to;

    fn rules(src: &str) -> Vec<(u32, Rule)> {
        let p = ValidProgram::new(parse_program(src).unwrap()).unwrap();
        let m = compute_points_to(&p);
        let e = compute_escape(&p, &m);
        let pm = compute_passthrough(&p, &m);
        check_conditions(&p, &m, &e, &pm).unwrap().into_iter().map(|d| (d.label.0, d.rule)).collect()
    }

    const HEAD: &str = "core_api 0 f call\ncore_api 1 mk ctor\n";

    #[test]
    fn clean_call_has_no_diagnostics() {
        let src = format!("{HEAD}L1: a := new()\nL2: c := core_alloc(a)\nL3: b := new()\nL4: r := core_call 0 on c (b)\nL5: v := *r");
        assert!(rules(&src).is_empty());
    }

    #[test]
    fn write_through_alias_to_instance() {
        let src = format!("{HEAD}L1: c := core_alloc()\nL2: d := c\nL3: *d := 1");
        assert_eq!(rules(&src), vec![(3, Rule::C2), (3, Rule::OmegaWrite)]);
    }

    #[test]
    fn read_of_instance() {
        let src = format!("{HEAD}L1: c := core_alloc()\nL2: v := *c");
        assert_eq!(rules(&src), vec![(2, Rule::C8), (2, Rule::OmegaRead)]);
    }

    #[test]
    fn same_argument_twice() {
        let src = format!("{HEAD}L1: c := core_alloc()\nL2: a := new()\nL3: core_call 0 on c (a, a)");
        assert_eq!(rules(&src), vec![(3, Rule::C7), (3, Rule::OmegaCoreCall)]);
    }

    #[test]
    fn captured_instance() {
        let src = format!("{HEAD}L1: c := core_alloc()\nL2: fork(c) {{\nL3: core_call 0 on c ()\n}}");
        let r = rules(&src);
        assert!(r.contains(&(3, Rule::C4)), "{r:?}");
    }

    #[test]
    fn callback_invoking_core() {
        let src = format!("{HEAD}L1: callback cb(x) {{\nL2: d := core_alloc()\n}}\nL3: skip");
        assert!(rules(&src).contains(&(2, Rule::C5)));
    }

    #[test]
    fn instance_as_argument_and_ctor_call() {
        let src = format!("{HEAD}L1: c := core_alloc()\nL2: d := core_alloc()\nL3: core_call 0 on c (d)\nL4: core_call 1 on c ()");
        let r = rules(&src);
        assert!(r.contains(&(3, Rule::C3)));
        assert!(r.contains(&(4, Rule::C3)));
    }

    #[test]
    fn escaped_argument() {
        let src = format!("{HEAD}L1: c := core_alloc()\nL2: a := new()\nL3: fork(a) {{\nL4: skip\n}}\nL5: core_call 0 on c (a)");
        assert!(rules(&src).contains(&(5, Rule::C6)));
    }

    #[test]
    fn app_allocation_as_receiver() {
        let src = format!("{HEAD}L1: a := new()\nL2: core_call 0 on a ()");
        assert!(rules(&src).contains(&(2, Rule::C1)));
    }

    #[test]
    fn rule_names_round_trip() {
        for r in Rule::ALL {
            assert_eq!(Rule::from_name(r.name()), Some(r));
            assert_eq!(serde_json::to_string(&r).unwrap(), format!("\"{}\"", r.name()));
        }
    }
}
