//! Pass-through classification of allocation sites.
//!
//! A core-instance site keeps `pt_core` at a point as long as the only way
//! the application can have observed it is the `core_alloc` return value:
//! storing it into the heap, handing it to the core as an ordinary argument
//! or capturing it in a fork all revoke the flag from that point on.
//! Core-call return sites always carry `pt_ret`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::escape::Point;
use crate::lang::{Label, Program, Stmt, StmtKind, ValidProgram};
use crate::points_to::{PtsMap, Site, SiteSet};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassMap {
    leaked: BTreeMap<Label, [SiteSet; 2]>,
    global_leaked: SiteSet,
    sites: SiteSet,
    fingerprint: u64,
}

impl PassMap {
    pub fn pt_core(&self, site: Site, p: Point) -> bool {
        matches!(site, Site::CoreInst(_)) && !self.leaked_at(p).contains(&site)
    }

    pub fn pt_ret(&self, site: Site) -> bool {
        matches!(site, Site::CoreRet(..))
    }

    /// Allocated by the application or handed out by a core call.
    pub fn app_managed(&self, site: Site) -> bool {
        matches!(site, Site::Alloc(_)) || self.pt_ret(site)
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn sites(&self) -> &SiteSet {
        &self.sites
    }

    fn leaked_at(&self, p: Point) -> &SiteSet {
        match self.leaked.get(&p.label) {
            Some(s) => &s[p.pos as usize],
            None => &self.global_leaked,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let m: BTreeMap<String, serde_json::Value> = self
            .sites
            .iter()
            .map(|&s| {
                let kind = match s {
                    Site::Alloc(_) => "application",
                    Site::CoreInst(_) => "core_instance",
                    Site::CoreRet(..) => "core_return",
                };
                let lost: Vec<String> = self
                    .leaked
                    .iter()
                    .filter(|(_, sets)| sets[1].contains(&s) && !sets[0].contains(&s))
                    .map(|(l, _)| l.to_string())
                    .collect();
                let v = serde_json::json!({
                    "kind": kind,
                    "pt_core": matches!(s, Site::CoreInst(_)) && !self.global_leaked.contains(&s),
                    "pt_core_revoked_at": lost,
                    "pt_ret": self.pt_ret(s),
                    "app_managed": self.app_managed(s),
                });
                (s.to_string(), v)
            })
            .collect();
        serde_json::to_value(m).expect("plain map")
    }
}

pub fn compute_passthrough(p: &ValidProgram, m: &PtsMap) -> PassMap {
    let mut out = PassMap { fingerprint: p.fingerprint(), ..Default::default() };
    out.sites = all_sites(p, m);
    out.global_leaked = SiteSet::new();
    for s in p.all_stmts() {
        out.global_leaked.extend(leaks(s, m));
    }
    let global = out.global_leaked.clone();
    let mut state = SiteSet::new();
    main_block(&p.body, m, &global, &mut state, &mut out);
    for cb in &p.callbacks {
        shared(&cb.body, &global, &mut out);
        out.leaked.insert(cb.label, [global.clone(), global.clone()]);
    }
    out
}

fn all_sites(p: &Program, m: &PtsMap) -> SiteSet {
    let mut s: SiteSet = m.vars().flat_map(|(_, v)| v.iter().copied()).collect();
    for st in p.all_stmts() {
        match &st.kind {
            StmtKind::HeapAlloc { .. } => {
                s.insert(Site::Alloc(st.label));
            }
            StmtKind::CoreAlloc { .. } => {
                s.insert(Site::CoreInst(st.label));
            }
            StmtKind::CoreCall { rets, .. } => s.extend((0..rets.len()).map(|i| Site::CoreRet(st.label, i))),
            _ => {}
        }
    }
    s
}

/// Core-instance sites that a statement exposes through a second path.
fn leaks(s: &Stmt, m: &PtsMap) -> SiteSet {
    let core = |set: &SiteSet| set.iter().copied().filter(|x| matches!(x, Site::CoreInst(_))).collect::<SiteSet>();
    match &s.kind {
        StmtKind::HeapWrite { e, .. } => core(m.operand(e)),
        StmtKind::CoreAlloc { args, .. } | StmtKind::CoreCall { args, .. } => {
            args.iter().flat_map(|a| core(m.operand(a))).collect()
        }
        StmtKind::Fork { captured, .. } => core(&m.reach(captured.iter().flat_map(|x| m.var(x).iter().copied()))),
        _ => SiteSet::new(),
    }
}

fn main_block(block: &[Stmt], m: &PtsMap, global: &SiteSet, state: &mut SiteSet, out: &mut PassMap) {
    for s in block {
        let pre = state.clone();
        state.extend(leaks(s, m));
        match &s.kind {
            StmtKind::Fork { body, .. } => shared(body, global, out),
            StmtKind::Branch { then_b, else_b, .. } => {
                let mut t = state.clone();
                main_block(then_b, m, global, &mut t, out);
                let mut e = state.clone();
                main_block(else_b, m, global, &mut e, out);
                state.extend(t);
                state.extend(e);
            }
            StmtKind::Loop { body, .. } => {
                let mut head = state.clone();
                loop {
                    let mut after = head.clone();
                    main_block(body, m, global, &mut after, out);
                    let before = head.len();
                    head.extend(after);
                    if head.len() == before {
                        break;
                    }
                }
                out.leaked.insert(s.label, [head.clone(), head.clone()]);
                *state = head;
                continue;
            }
            _ => {}
        }
        out.leaked.insert(s.label, [pre, state.clone()]);
    }
}

fn shared(block: &[Stmt], global: &SiteSet, out: &mut PassMap) {
    for s in block {
        out.leaked.insert(s.label, [global.clone(), global.clone()]);
        for c in s.children() {
            shared(c, global, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_program;
    use crate::points_to::compute_points_to;

    fn run(src: &str) -> PassMap {
        let p = ValidProgram::new(parse_program(src).unwrap()).unwrap();
        let m = compute_points_to(&p);
        compute_passthrough(&p, &m)
    }

    #[test]
    fn fresh_instance_is_passed_through() {
        let pm = run("core_api 0 f call\nL1: c := core_alloc()\nL2: core_call 0 on c ()");
        assert!(pm.pt_core(Site::CoreInst(Label(1)), Point::pre(Label(2))));
        assert!(!pm.app_managed(Site::CoreInst(Label(1))));
    }

    #[test]
    fn application_allocation_is_app_managed() {
        let pm = run("L1: x := new()");
        assert!(pm.app_managed(Site::Alloc(Label(1))));
        assert!(!pm.pt_core(Site::Alloc(Label(1)), Point::post(Label(1))));
        assert!(!pm.pt_ret(Site::Alloc(Label(1))));
    }

    #[test]
    fn storing_instance_in_heap_revokes_pt_core() {
        let pm = run("core_api 0 f call\nL1: c := core_alloc()\nL2: g := new()\nL3: *g := c\nL4: d := *g\nL5: core_call 0 on d ()");
        let site = Site::CoreInst(Label(1));
        assert!(pm.pt_core(site, Point::pre(Label(3))));
        assert!(!pm.pt_core(site, Point::pre(Label(5))));
    }

    #[test]
    fn returns_are_app_managed() {
        let pm = run("core_api 0 f call\nL1: c := core_alloc()\nL2: r := core_call 0 on c ()");
        let site = Site::CoreRet(Label(2), 0);
        assert!(pm.pt_ret(site) && pm.app_managed(site));
    }
}
