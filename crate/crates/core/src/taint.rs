//! Whole-program taint analysis for I/O independence.
//!
//! Taint lives on variables and on abstract heap cells (one per allocation
//! site). Propagation is flow-insensitive: the analysis builds a dataflow
//! graph once and asks which sink arguments and branch conditions are
//! reachable from a source.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::{ApiKind, Cap, Label, Operand, Stmt, StmtKind, ValidProgram};
use crate::points_to::{PtsMap, Site};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sanitizer {
    pub op: String,
    /// Return slot of the virtual-output call whose value is declassified.
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaintConfig {
    /// Core API or I/O op names whose results are secret (key generation).
    pub source_ops: Vec<String>,
    /// Treat every input declared `secret` as a source.
    pub secret_inputs: bool,
    /// Further inputs to treat as sources, by name.
    pub source_inputs: Vec<String>,
    pub sinks: Vec<Cap>,
    pub sanitizers: Vec<Sanitizer>,
    pub allow_branches: Vec<Label>,
    /// Do not carry taint into forked threads.
    pub ignore_fork_taint: bool,
}

impl Default for TaintConfig {
    fn default() -> Self {
        TaintConfig {
            source_ops: Vec::new(),
            secret_inputs: true,
            source_inputs: Vec::new(),
            sinks: Cap::ALL.to_vec(),
            sanitizers: Vec::new(),
            allow_branches: Vec::new(),
            ignore_fork_taint: false,
        }
    }
}

impl TaintConfig {
    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    fn sanitized(&self, op: &str, i: usize) -> bool {
        self.sanitizers.iter().any(|s| s.op == op && s.index == i)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaintError {
    #[error("unknown source op `{0}`")]
    UnknownSourceOp(String),
    #[error("unknown source input `{0}`")]
    UnknownInput(String),
    #[error("sanitizer `{0}` is not a declared virtual I/O op")]
    BadSanitizer(String),
    #[error("points-to facts were computed for a different program")]
    Stale,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Flow {
    pub source: Label,
    pub sink: Label,
    pub path: Vec<Label>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaintReport {
    pub flows: Vec<Flow>,
    pub branch_violations: Vec<Label>,
    pub pass: bool,
}

/// Thread context of a node. `None` is shared by all code unless forked
/// threads are kept apart.
pub type Ctx = Option<Label>;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Node {
    Var(Ctx, String),
    Cell(Ctx, Site),
    SinkArg(Label, usize),
    Cond(Label),
}

/// Dataflow graph with labelled edges. Edge labels are the statements that
/// induce them.
#[derive(Clone, Debug, Default)]
pub struct DataflowGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<(usize, usize, Label)>,
    pub sources: Vec<(usize, Label)>,
    index: BTreeMap<Node, usize>,
}

impl DataflowGraph {
    fn node(&mut self, n: Node) -> usize {
        if let Some(&i) = self.index.get(&n) {
            return i;
        }
        self.nodes.push(n.clone());
        self.index.insert(n, self.nodes.len() - 1);
        self.nodes.len() - 1
    }

    fn edge(&mut self, from: Node, to: Node, l: Label) {
        let (a, b) = (self.node(from), self.node(to));
        self.edges.push((a, b, l));
    }

    pub fn lookup(&self, n: &Node) -> Option<usize> {
        self.index.get(n).copied()
    }

    /// Sink and condition nodes with the label of their statement.
    pub fn targets(&self) -> impl Iterator<Item = (usize, &Node)> {
        self.nodes.iter().enumerate().filter(|(_, n)| matches!(n, Node::SinkArg(..) | Node::Cond(_)))
    }
}

pub fn check_config(p: &ValidProgram, cfg: &TaintConfig) -> Result<(), TaintError> {
    let io_ops: BTreeSet<&str> = p
        .all_stmts()
        .into_iter()
        .filter_map(|s| match &s.kind {
            StmtKind::IoCall { op, .. } => Some(op.as_str()),
            _ => None,
        })
        .collect();
    for op in &cfg.source_ops {
        if p.api_by_name(op).is_none() && !io_ops.contains(op.as_str()) {
            return Err(TaintError::UnknownSourceOp(op.clone()));
        }
    }
    for i in &cfg.source_inputs {
        if !p.inputs.iter().any(|x| &x.name == i) {
            return Err(TaintError::UnknownInput(i.clone()));
        }
    }
    for s in &cfg.sanitizers {
        match p.api_by_name(&s.op) {
            Some(a) if matches!(a.kind, ApiKind::Vout | ApiKind::Vin) => {}
            _ => return Err(TaintError::BadSanitizer(s.op.clone())),
        }
    }
    Ok(())
}

pub fn dataflow_graph(p: &ValidProgram, cfg: &TaintConfig, m: &PtsMap) -> Result<DataflowGraph, TaintError> {
    check_config(p, cfg)?;
    let mut b = Builder { p, cfg, m, g: DataflowGraph::default() };
    for i in &p.inputs {
        if (cfg.secret_inputs && i.secret) || cfg.source_inputs.contains(&i.name) {
            let n = b.g.node(Node::Var(None, i.name.clone()));
            b.g.sources.push((n, i.label));
        }
    }
    b.block(&p.body, None);
    for cb in &p.callbacks {
        let ctx = if cfg.ignore_fork_taint { Some(cb.label) } else { None };
        b.block(&cb.body, ctx);
    }
    Ok(b.g)
}

struct Builder<'a> {
    p: &'a ValidProgram,
    cfg: &'a TaintConfig,
    m: &'a PtsMap,
    g: DataflowGraph,
}

impl Builder<'_> {
    /// The variable node together with every cell reachable through it.
    fn deep(&self, ctx: Ctx, o: &Operand) -> Vec<Node> {
        let Some(v) = o.var() else { return Vec::new() };
        let mut out = vec![Node::Var(ctx, v.to_string())];
        out.extend(self.m.reach(self.m.var(v).iter().copied()).into_iter().map(|s| Node::Cell(ctx, s)));
        out
    }

    fn block(&mut self, block: &[Stmt], ctx: Ctx) {
        for s in block {
            self.stmt(s, ctx);
        }
    }

    fn stmt(&mut self, s: &Stmt, ctx: Ctx) {
        let l = s.label;
        let var = |x: &str| Node::Var(ctx, x.to_string());
        match &s.kind {
            StmtKind::Skip | StmtKind::HeapAlloc { .. } => {}
            StmtKind::Assign { x, e } => {
                for v in e.vars() {
                    self.g.edge(var(v), var(x), l);
                }
            }
            StmtKind::HeapRead { x, e } => {
                for &a in self.m.var(e) {
                    self.g.edge(Node::Cell(ctx, a), var(x), l);
                }
            }
            StmtKind::HeapWrite { x, e } => {
                if let Some(v) = e.var() {
                    for &a in self.m.var(x) {
                        self.g.edge(var(v), Node::Cell(ctx, a), l);
                    }
                }
            }
            StmtKind::CoreAlloc { args, .. } => {
                let inst = Node::Cell(ctx, Site::CoreInst(l));
                for a in args {
                    for n in self.deep(ctx, a) {
                        self.g.edge(n, inst.clone(), l);
                    }
                }
            }
            StmtKind::CoreCall { k, c, args, rets } => {
                let api = self.p.api(*k).expect("validated").name.clone();
                let mut ins: Vec<Node> = args.iter().flat_map(|a| self.deep(ctx, a)).collect();
                for &inst in self.m.var(c) {
                    for n in &ins {
                        self.g.edge(n.clone(), Node::Cell(ctx, inst), l);
                    }
                }
                ins.extend(self.deep(ctx, &Operand::Var(c.clone())));
                let source = self.cfg.source_ops.contains(&api);
                for (i, r) in rets.iter().enumerate() {
                    if self.cfg.sanitized(&api, i) {
                        continue;
                    }
                    let outs = [var(r), Node::Cell(ctx, Site::CoreRet(l, i))];
                    for o in outs {
                        for n in &ins {
                            self.g.edge(n.clone(), o.clone(), l);
                        }
                        if source {
                            let id = self.g.node(o);
                            self.g.sources.push((id, l));
                        }
                    }
                }
            }
            StmtKind::IoCall { op, args, caps, ret } => {
                let sink = caps.iter().any(|c| self.cfg.sinks.contains(c));
                for (j, a) in args.iter().enumerate() {
                    for n in self.deep(ctx, a) {
                        if sink {
                            self.g.edge(n.clone(), Node::SinkArg(l, j), l);
                        }
                        if let Some(r) = ret {
                            self.g.edge(n, var(r), l);
                        }
                    }
                }
                if let Some(r) = ret {
                    if self.cfg.source_ops.contains(op) {
                        let id = self.g.node(var(r));
                        self.g.sources.push((id, l));
                    }
                }
            }
            StmtKind::Fork { body, .. } => {
                let child = if self.cfg.ignore_fork_taint { Some(l) } else { ctx };
                self.block(body, child);
            }
            StmtKind::Branch { cond, then_b, else_b } => {
                for v in cond.vars() {
                    self.g.edge(var(v), Node::Cond(l), l);
                }
                self.block(then_b, ctx);
                self.block(else_b, ctx);
            }
            StmtKind::Loop { cond, body, .. } => {
                for v in cond.vars() {
                    self.g.edge(var(v), Node::Cond(l), l);
                }
                self.block(body, ctx);
            }
        }
    }
}

pub fn compute_taint(p: &ValidProgram, cfg: &TaintConfig, m: &PtsMap) -> Result<TaintReport, TaintError> {
    if m.fingerprint() != p.fingerprint() {
        return Err(TaintError::Stale);
    }
    let g = dataflow_graph(p, cfg, m)?;
    let mut succ: Vec<Vec<(usize, Label)>> = vec![Vec::new(); g.nodes.len()];
    for &(a, b, l) in &g.edges {
        succ[a].push((b, l));
    }
    let mut by_label: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for &(n, l) in &g.sources {
        by_label.entry(l).or_default().push(n);
    }

    let mut flows = Vec::new();
    let mut tainted_conds = BTreeSet::new();
    for (&src, starts) in &by_label {
        let mut parent: Vec<Option<(usize, Label)>> = vec![None; g.nodes.len()];
        let mut seen = vec![false; g.nodes.len()];
        let mut q = VecDeque::new();
        for &s in starts {
            seen[s] = true;
            q.push_back(s);
        }
        while let Some(n) = q.pop_front() {
            for &(t, l) in &succ[n] {
                if !seen[t] {
                    seen[t] = true;
                    parent[t] = Some((n, l));
                    q.push_back(t);
                }
            }
        }
        let mut best: BTreeMap<Label, Vec<Label>> = BTreeMap::new();
        for (i, n) in g.targets() {
            if !seen[i] {
                continue;
            }
            match n {
                Node::Cond(l) => {
                    tainted_conds.insert(*l);
                }
                Node::SinkArg(l, _) => {
                    let path = witness(src, i, &parent);
                    let slot = best.entry(*l).or_insert_with(|| path.clone());
                    if path.len() < slot.len() {
                        *slot = path;
                    }
                }
                _ => {}
            }
        }
        flows.extend(best.into_iter().map(|(sink, path)| Flow { source: src, sink, path }));
    }
    flows.sort();
    let branch_violations: Vec<Label> =
        tainted_conds.into_iter().filter(|l| !cfg.allow_branches.contains(l)).collect();
    let pass = flows.is_empty() && branch_violations.is_empty();
    Ok(TaintReport { flows, branch_violations, pass })
}

fn witness(src: Label, mut n: usize, parent: &[Option<(usize, Label)>]) -> Vec<Label> {
    let mut rev = Vec::new();
    while let Some((prev, l)) = parent[n] {
        rev.push(l);
        n = prev;
    }
    rev.push(src);
    rev.reverse();
    rev.dedup();
    rev
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_program;
    use crate::points_to::compute_points_to;

    fn run(src: &str, cfg: &TaintConfig) -> Result<TaintReport, TaintError> {
        let p = ValidProgram::new(parse_program(src).unwrap()).unwrap();
        let m = compute_points_to(&p);
        compute_taint(&p, cfg, &m)
    }

    #[test]
    fn constant_string_to_printf_passes() {
        let r = run("L0: input k secret\nL1: io \"printf\" (\"hi\") caps[fs_write]", &TaintConfig::default()).unwrap();
        assert!(r.pass);
    }

    #[test]
    fn secret_through_heap_reaches_sink() {
        let src = "L0: input k secret\nL1: a := new()\nL2: *a := k\nL3: io \"printf\" (a) caps[fs_write]";
        let r = run(src, &TaintConfig::default()).unwrap();
        assert_eq!(r.flows, vec![Flow { source: Label(0), sink: Label(3), path: vec![Label(0), Label(2), Label(3)] }]);
        assert!(!r.pass);
    }

    #[test]
    fn non_sink_caps_are_ignored() {
        let src = "L0: input k secret\nL1: io \"log\" (k) caps[fs_write]";
        let cfg = TaintConfig { sinks: vec![Cap::NetWrite], ..Default::default() };
        assert!(run(src, &cfg).unwrap().pass);
    }

    #[test]
    fn tainted_branch_needs_allow_list() {
        let src = "L0: input k secret\nL1: if (k == 1) {\nL2: skip\n}";
        let r = run(src, &TaintConfig::default()).unwrap();
        assert_eq!(r.branch_violations, vec![Label(1)]);
        let cfg = TaintConfig { allow_branches: vec![Label(1)], ..Default::default() };
        assert!(run(src, &cfg).unwrap().pass);
    }

    #[test]
    fn sanitized_output_can_be_sent() {
        let src = "L0: input k secret\ncore_api 0 produce vout\nL1: a := new()\nL2: *a := k\nL3: c := core_alloc(a)\nL4: m := core_call 0 on c ()\nL5: io \"send\" (m) caps[net_write]";
        assert!(!run(src, &TaintConfig::default()).unwrap().pass);
        let cfg = TaintConfig { sanitizers: vec![Sanitizer { op: "produce".into(), index: 0 }], ..Default::default() };
        assert!(run(src, &cfg).unwrap().pass);
    }

    #[test]
    fn key_generation_is_a_source() {
        let src = "core_api 0 keygen call\nL1: c := core_alloc()\nL2: kk := core_call 0 on c ()\nL3: io \"printf\" (kk) caps[fs_write]";
        let cfg = TaintConfig { source_ops: vec!["keygen".into()], ..Default::default() };
        let r = run(src, &cfg).unwrap();
        assert_eq!(r.flows.len(), 1);
        assert_eq!(r.flows[0].source, Label(2));
    }

    #[test]
    fn fork_switch_stops_cross_thread_taint() {
        let src = "L0: input k secret\nL1: a := new()\nL2: *a := k\nL3: fork(a) {\nL4: io \"printf\" (a) caps[fs_write]\n}";
        assert!(!run(src, &TaintConfig::default()).unwrap().pass);
        let cfg = TaintConfig { ignore_fork_taint: true, ..Default::default() };
        assert!(run(src, &cfg).unwrap().pass);
    }

    #[test]
    fn unknown_ops_are_rejected() {
        let cfg = TaintConfig { source_ops: vec!["nope".into()], ..Default::default() };
        assert_eq!(run("L1: skip", &cfg), Err(TaintError::UnknownSourceOp("nope".into())));
        let cfg = TaintConfig { sanitizers: vec![Sanitizer { op: "nope".into(), index: 0 }], ..Default::default() };
        assert_eq!(run("L1: skip", &cfg), Err(TaintError::BadSanitizer("nope".into())));
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = TaintConfig {
            sinks: vec![Cap::FsWrite],
            allow_branches: vec![Label(4)],
            sanitizers: vec![Sanitizer { op: "out".into(), index: 0 }],
            ..Default::default()
        };
        let s = serde_json::to_string(&cfg).unwrap();
        assert!(s.contains("\"L4\""));
        assert_eq!(TaintConfig::from_json(&s).unwrap(), cfg);
    }
}
