//! Flow-sensitive thread-escape analysis on allocation sites.
//!
//! The main thread is analysed along its control flow: a set of escaped
//! sites grows at forks (everything reachable from the captured variables,
//! plus whatever the child may publish) and at stores into already escaped
//! cells. Code running in forked threads or callbacks uses the
//! flow-insensitive escape set of the whole program.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::lang::{Label, Program, Stmt, StmtKind, ValidProgram};
use crate::points_to::{PtsMap, Site, SiteSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pos {
    Pre,
    Post,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Point {
    pub label: Label,
    pub pos: Pos,
}

impl Point {
    pub fn pre(label: Label) -> Self {
        Point { label, pos: Pos::Pre }
    }

    pub fn post(label: Label) -> Self {
        Point { label, pos: Pos::Post }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscapeMap {
    points: BTreeMap<Label, [SiteSet; 2]>,
    global: SiteSet,
    fingerprint: u64,
}

static NONE: SiteSet = SiteSet::new();

impl EscapeMap {
    pub fn escaped(&self, p: Point) -> &SiteSet {
        match self.points.get(&p.label) {
            Some(sets) => &sets[p.pos as usize],
            None => &self.global,
        }
    }

    /// Sites that escape anywhere in the program.
    pub fn global(&self) -> &SiteSet {
        &self.global
    }

    /// `local(x, p)`: no site `x` may point to has escaped at `p`.
    pub fn is_local(&self, pts: &PtsMap, x: &str, p: Point) -> bool {
        pts.var(x).is_disjoint(self.escaped(p))
    }

    pub fn site_local(&self, site: Site, p: Point) -> bool {
        !self.escaped(p).contains(&site)
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Pretends `site` never escapes. Only meant for checker self-tests.
    pub fn force_local(&mut self, site: Site) {
        for sets in self.points.values_mut() {
            sets[0].remove(&site);
            sets[1].remove(&site);
        }
        self.global.remove(&site);
    }

    pub fn to_json(&self, pts: &PtsMap) -> serde_json::Value {
        let names = |s: &SiteSet| s.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let verdicts = |s: &SiteSet| {
            pts.vars()
                .filter(|(_, v)| !v.is_empty())
                .map(|(k, v)| (k.clone(), if v.is_disjoint(s) { "local" } else { "may-escape" }))
                .collect::<BTreeMap<_, _>>()
        };
        let m: BTreeMap<String, serde_json::Value> = self
            .points
            .iter()
            .map(|(l, [pre, post])| {
                (
                    l.to_string(),
                    serde_json::json!({
                        "pre": names(pre),
                        "post": names(post),
                        "local_pre": verdicts(pre),
                        "local_post": verdicts(post),
                    }),
                )
            })
            .collect();
        serde_json::to_value(m).expect("plain map")
    }

    fn record(&mut self, l: Label, pre: &SiteSet, post: &SiteSet) {
        self.points.insert(l, [pre.clone(), post.clone()]);
    }
}

pub fn compute_escape(p: &ValidProgram, m: &PtsMap) -> EscapeMap {
    let global = global_escapes(p, m);
    let mut out = EscapeMap { global: global.clone(), fingerprint: p.fingerprint(), ..Default::default() };
    let mut st = Flow::default();
    forked_stores(&p.body, m, &mut st.heap);
    for cb in &p.callbacks {
        foreign_stores(&cb.body, m, &mut st.heap);
    }
    main_block(&p.body, m, &global, &mut st, &mut out);
    for cb in &p.callbacks {
        out.record(cb.label, &global, &global);
        shared_block(&cb.body, &global, &mut out);
    }
    for i in &p.inputs {
        out.record(i.label, &NONE, &NONE);
    }
    out
}

pub(crate) fn captured_sites(m: &PtsMap, captured: &[String]) -> SiteSet {
    m.reach(captured.iter().flat_map(|x| m.var(x).iter().copied()))
}

fn global_escapes(p: &Program, m: &PtsMap) -> SiteSet {
    let stmts = p.all_stmts();
    let mut esc = SiteSet::new();
    for s in &stmts {
        if let StmtKind::Fork { captured, .. } = &s.kind {
            esc.extend(captured_sites(m, captured));
        }
    }
    loop {
        let before = esc.len();
        for s in &stmts {
            if let StmtKind::HeapWrite { x, e } = &s.kind {
                if !m.var(x).is_disjoint(&esc) {
                    esc.extend(m.reach(m.operand(e).iter().copied()));
                }
            }
        }
        esc = m.reach(esc);
        if esc.len() == before {
            return esc;
        }
    }
}

/// What a forked body may publish while running concurrently with its parent.
fn child_escapes(body: &[Stmt], m: &PtsMap, global: &SiteSet, acc: &mut SiteSet) {
    for s in body {
        match &s.kind {
            StmtKind::HeapWrite { x, e } if !m.var(x).is_disjoint(global) => {
                acc.extend(m.reach(m.operand(e).iter().copied()));
            }
            StmtKind::Fork { captured, .. } => acc.extend(captured_sites(m, captured)),
            _ => {}
        }
        for c in s.children() {
            child_escapes(c, m, global, acc);
        }
    }
}

/// Cell contents the main thread may observe at a point: its own stores so
/// far plus every store made by other threads or callbacks at any time.
type Heap = BTreeMap<Site, SiteSet>;

fn foreign_stores(block: &[Stmt], m: &PtsMap, heap: &mut Heap) {
    for s in block {
        if let StmtKind::HeapWrite { x, e } = &s.kind {
            store(m, x, e, heap);
        }
        for c in s.children() {
            foreign_stores(c, m, heap);
        }
    }
}

fn forked_stores(block: &[Stmt], m: &PtsMap, heap: &mut Heap) {
    for s in block {
        match &s.kind {
            StmtKind::Fork { body, .. } => foreign_stores(body, m, heap),
            _ => s.children().into_iter().for_each(|c| forked_stores(c, m, heap)),
        }
    }
}

fn store(m: &PtsMap, x: &str, e: &crate::lang::Operand, heap: &mut Heap) {
    for &a in m.var(x) {
        heap.entry(a).or_default().extend(m.operand(e).iter().copied());
    }
}

fn reach(heap: &Heap, roots: impl IntoIterator<Item = Site>) -> SiteSet {
    let mut seen = SiteSet::new();
    let mut stack: Vec<Site> = roots.into_iter().collect();
    while let Some(s) = stack.pop() {
        if seen.insert(s) {
            stack.extend(heap.get(&s).into_iter().flatten().copied());
        }
    }
    seen
}

#[derive(Clone, Default, PartialEq)]
struct Flow {
    escaped: SiteSet,
    heap: Heap,
}

impl Flow {
    fn join(&mut self, other: Flow) {
        self.escaped.extend(other.escaped);
        for (k, v) in other.heap {
            self.heap.entry(k).or_default().extend(v);
        }
    }
}

fn main_block(block: &[Stmt], m: &PtsMap, global: &SiteSet, st: &mut Flow, out: &mut EscapeMap) {
    for s in block {
        let pre = st.escaped.clone();
        match &s.kind {
            StmtKind::HeapWrite { x, e } => {
                store(m, x, e, &mut st.heap);
                if !m.var(x).is_disjoint(&st.escaped) {
                    let add = reach(&st.heap, m.operand(e).iter().copied());
                    st.escaped.extend(add);
                }
            }
            StmtKind::Fork { captured, body } => {
                let add = reach(&st.heap, captured.iter().flat_map(|x| m.var(x).iter().copied()));
                st.escaped.extend(add);
                child_escapes(body, m, global, &mut st.escaped);
                shared_block(body, global, out);
            }
            StmtKind::Branch { then_b, else_b, .. } => {
                let mut t = st.clone();
                main_block(then_b, m, global, &mut t, out);
                let mut e = st.clone();
                main_block(else_b, m, global, &mut e, out);
                st.join(t);
                st.join(e);
            }
            StmtKind::Loop { body, .. } => {
                let mut head = st.clone();
                loop {
                    let mut after = head.clone();
                    main_block(body, m, global, &mut after, out);
                    let before = head.clone();
                    head.join(after);
                    if head == before {
                        break;
                    }
                }
                out.record(s.label, &head.escaped, &head.escaped);
                *st = head;
                continue;
            }
            _ => {}
        }
        st.escaped = reach(&st.heap, std::mem::take(&mut st.escaped));
        out.record(s.label, &pre, &st.escaped);
    }
}

fn shared_block(block: &[Stmt], global: &SiteSet, out: &mut EscapeMap) {
    for s in block {
        out.record(s.label, global, global);
        for c in s.children() {
            shared_block(c, global, out);
        }
    }
}
