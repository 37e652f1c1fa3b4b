//! Andersen-style may-point-to analysis over allocation sites.
//!
//! Flow- and context-insensitive, field-insensitive. Heap cells are
//! abstracted by the label of the statement that allocated them. Core
//! instances and values returned by core calls get synthetic summary sites,
//! because the core's own heap is opaque to the application.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::lang::{Expr, Label, Operand, Program, StmtKind, ValidProgram};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Site {
    /// Application allocation `x := new()`.
    Alloc(Label),
    /// Core instance produced by `core_alloc` at this label.
    CoreInst(Label),
    /// Cell handed out through return slot `i` of the core call at this label.
    CoreRet(Label, usize),
}

impl Site {
    pub fn label(self) -> Label {
        match self {
            Site::Alloc(l) | Site::CoreInst(l) | Site::CoreRet(l, _) => l,
        }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Site::Alloc(l) => write!(f, "{l}"),
            Site::CoreInst(l) => write!(f, "{l}.core"),
            Site::CoreRet(l, i) => write!(f, "{l}.ret{i}"),
        }
    }
}

impl FromStr for Site {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("bad site `{s}`");
        let (head, tail) = match s.split_once('.') {
            Some((h, t)) => (h, Some(t)),
            None => (s, None),
        };
        let l = Label(head.strip_prefix('L').and_then(|n| n.parse().ok()).ok_or_else(bad)?);
        match tail {
            None => Ok(Site::Alloc(l)),
            Some("core") => Ok(Site::CoreInst(l)),
            Some(t) => Ok(Site::CoreRet(l, t.strip_prefix("ret").and_then(|n| n.parse().ok()).ok_or_else(bad)?)),
        }
    }
}

impl Serialize for Site {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Site {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub type SiteSet = BTreeSet<Site>;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PtsMap {
    vars: BTreeMap<String, SiteSet>,
    cells: BTreeMap<Site, SiteSet>,
    fingerprint: u64,
}

static EMPTY: SiteSet = BTreeSet::new();

impl PtsMap {
    pub fn var(&self, x: &str) -> &SiteSet {
        self.vars.get(x).unwrap_or(&EMPTY)
    }

    pub fn operand(&self, o: &Operand) -> &SiteSet {
        match o.var() {
            Some(x) => self.var(x),
            None => &EMPTY,
        }
    }

    /// Sites that may be stored in cells allocated at `site`.
    pub fn contents(&self, site: &Site) -> &SiteSet {
        self.cells.get(site).unwrap_or(&EMPTY)
    }

    pub fn vars(&self) -> impl Iterator<Item = (&String, &SiteSet)> {
        self.vars.iter()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&Site, &SiteSet)> {
        self.cells.iter()
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Every site reachable from `roots` by following cell contents.
    pub fn reach(&self, roots: impl IntoIterator<Item = Site>) -> SiteSet {
        let mut seen = SiteSet::new();
        let mut stack: Vec<Site> = roots.into_iter().collect();
        while let Some(s) = stack.pop() {
            if seen.insert(s) {
                stack.extend(self.contents(&s).iter().copied());
            }
        }
        seen
    }

    /// Drops one site from a variable's set. Only meant for injecting
    /// unsoundness in checker self-tests.
    pub fn weaken(&mut self, x: &str, site: Site) {
        if let Some(s) = self.vars.get_mut(x) {
            s.remove(&site);
        }
    }

    /// Variable → sorted site names.
    pub fn to_json(&self) -> serde_json::Value {
        let m: BTreeMap<&String, Vec<String>> =
            self.vars.iter().map(|(k, v)| (k, v.iter().map(|s| s.to_string()).collect())).collect();
        serde_json::to_value(m).expect("plain map")
    }
}

pub fn compute_points_to(p: &ValidProgram) -> PtsMap {
    let mut m = solve(p.program());
    m.fingerprint = p.fingerprint();
    m
}

/// The constraint solver itself. Total on any parsed program, so the
/// validator can use it for the shallowness check.
pub(crate) fn solve(p: &Program) -> PtsMap {
    enum C<'a> {
        Base(&'a str, Site),
        Copy(&'a str, &'a str),
        Load(&'a str, &'a str),
        Store(&'a str, &'a str),
    }
    let mut cs = Vec::new();
    for s in p.all_stmts() {
        match &s.kind {
            StmtKind::HeapAlloc { x } => cs.push(C::Base(x, Site::Alloc(s.label))),
            StmtKind::Assign { x, e: Expr::Atom(Operand::Var(y)) } => cs.push(C::Copy(x, y)),
            StmtKind::HeapRead { x, e } => cs.push(C::Load(x, e)),
            StmtKind::HeapWrite { x, e: Operand::Var(e) } => cs.push(C::Store(x, e)),
            StmtKind::CoreAlloc { c, .. } => cs.push(C::Base(c, Site::CoreInst(s.label))),
            StmtKind::CoreCall { rets, .. } => {
                for (i, r) in rets.iter().enumerate() {
                    cs.push(C::Base(r, Site::CoreRet(s.label, i)));
                }
            }
            _ => {}
        }
    }
    let mut m = PtsMap::default();
    let mut changed = true;
    while changed {
        changed = false;
        for c in &cs {
            match c {
                C::Base(x, site) => {
                    changed |= m.vars.entry(x.to_string()).or_default().insert(*site);
                }
                C::Copy(x, y) => {
                    let src = m.var(y).clone();
                    changed |= union(m.vars.entry(x.to_string()).or_default(), &src);
                }
                C::Load(x, e) => {
                    let mut src = SiteSet::new();
                    for a in m.var(e) {
                        src.extend(m.contents(a).iter().copied());
                    }
                    changed |= union(m.vars.entry(x.to_string()).or_default(), &src);
                }
                C::Store(x, e) => {
                    let src = m.var(e).clone();
                    let targets: Vec<Site> = m.var(x).iter().copied().collect();
                    for a in targets {
                        changed |= union(m.cells.entry(a).or_default(), &src);
                    }
                }
            }
        }
    }
    m
}

fn union(dst: &mut SiteSet, src: &SiteSet) -> bool {
    let before = dst.len();
    dst.extend(src.iter().copied());
    dst.len() != before
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairVerdict {
    pub i: usize,
    pub j: usize,
    pub disjoint: bool,
}

/// Pairwise disjointness of argument points-to sets. A pair is disjoint iff
/// the sets do not intersect; anything else is a potential alias.
pub fn disjoint_args(m: &PtsMap, args: &[&str]) -> Vec<PairVerdict> {
    let mut out = Vec::new();
    for i in 0..args.len() {
        for j in i + 1..args.len() {
            let disjoint = m.var(args[i]).is_disjoint(m.var(args[j]));
            out.push(PairVerdict { i, j, disjoint });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_program;

    fn pts(src: &str) -> PtsMap {
        compute_points_to(&ValidProgram::new(parse_program(src).unwrap()).unwrap())
    }

    fn names(m: &PtsMap, x: &str) -> Vec<String> {
        m.var(x).iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn separate_allocations() {
        let m = pts("L1: x := new()\nL2: y := new()");
        assert_eq!(names(&m, "x"), ["L1"]);
        assert_eq!(names(&m, "y"), ["L2"]);
    }

    #[test]
    fn copy_propagates() {
        let m = pts("L1: x := new()\nL2: y := x");
        assert_eq!(names(&m, "y"), ["L1"]);
    }

    #[test]
    fn store_then_load() {
        let m = pts("L1: p := new()\nL2: q := new()\nL3: *p := q\nL4: r := *p");
        assert!(m.var("r").is_superset(m.var("q")));
        assert_eq!(names(&m, "r"), ["L2"]);
    }

    #[test]
    fn core_summary_sites() {
        let m = pts("core_api 0 f call\nL1: c := core_alloc()\nL2: a, b := core_call 0 on c ()");
        assert_eq!(names(&m, "c"), ["L1.core"]);
        assert_eq!(names(&m, "a"), ["L2.ret0"]);
        assert_eq!(names(&m, "b"), ["L2.ret1"]);
    }

    #[test]
    fn disjointness_verdicts() {
        let m = pts("L1: x := new()\nL2: y := new()\nL3: p := new()\nL4: *p := x\nL5: u := *p\nL6: v := x");
        assert!(!disjoint_args(&m, &["x", "x"])[0].disjoint);
        assert!(disjoint_args(&m, &["x", "y"])[0].disjoint);
        assert!(!disjoint_args(&m, &["u", "v"])[0].disjoint);
    }

    #[test]
    fn site_names_round_trip() {
        for s in [Site::Alloc(Label(3)), Site::CoreInst(Label(7)), Site::CoreRet(Label(2), 1)] {
            assert_eq!(s.to_string().parse::<Site>().unwrap(), s);
        }
    }

    #[test]
    fn json_dump_is_sorted() {
        let m = pts("L2: y := new()\nL1: x := new()\nL3: z := y");
        assert_eq!(m.to_json().to_string(), r#"{"x":["L1"],"y":["L2"],"z":["L2"]}"#);
    }
}
