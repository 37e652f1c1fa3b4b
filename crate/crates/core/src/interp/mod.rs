//! Concrete interpreter for instrumented programs.
//!
//! One scheduling step runs one whole instrumentation unit of one thread:
//! the locality decision, the ghost operations before the statement, the
//! statement itself and the ghost operations after it. Core bodies are
//! scripted by a [`Contract`] and run atomically. The machine records a
//! trace of heap accesses, Core events, I/O and, on request, per-step
//! observations for cross-checking the static analyses.

pub mod contract;
pub mod crosscheck;
pub mod explore;
pub mod races;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::escape::Point;
use crate::ghost::{GhostOp, GhostSet, Guard, GuardedOp, IStmt, InstrumentedProgram};
use crate::lang::{BinOp, Cap, Expr, Label, Operand, StmtKind};
use crate::msr::{Subst, Term};
use crate::points_to::Site;
use crate::taint::TaintConfig;

pub use contract::{Contract, Dir};
pub use crosscheck::{crosscheck_static, Check, CrossViolation, Statics};
pub use explore::{explore, ExploreReport, FailureClass, FailureKind};
pub use races::{detect_races, Race};

pub type Addr = usize;
pub type Tid = usize;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "t", content = "v", rename_all = "lowercase")]
pub enum Value {
    Nil,
    Int(i64),
    Str(String),
    Addr(Addr),
    Msg(Term),
}

impl Value {
    pub fn addr(&self) -> Option<Addr> {
        match self {
            Value::Addr(a) => Some(*a),
            _ => None,
        }
    }

    fn truthy(&self) -> bool {
        !matches!(self, Value::Nil | Value::Int(0))
    }
}

/// A value with its shadow bit: set when it may depend on a secret.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub value: Value,
    pub secret: bool,
}

impl Slot {
    fn public(value: Value) -> Slot {
        Slot { value, secret: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    App,
    Core,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub slot: Slot,
    pub site: Site,
    pub component: Component,
}

impl Cell {
    pub fn app_managed(&self) -> bool {
        matches!(self.site, Site::Alloc(_) | Site::CoreRet(..))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Instance {
    rid: u32,
    bind: Subst,
    secret: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub tid: Tid,
    pub point: Point,
    /// This thread's variables holding addresses.
    pub vars: BTreeMap<String, Addr>,
    pub sites: BTreeMap<Addr, Site>,
    /// Threads that can (or could) reach each address.
    pub access: BTreeMap<Addr, BTreeSet<Tid>>,
    pub slh: BTreeSet<Addr>,
    pub sih: BTreeSet<Addr>,
    pub sgh: BTreeSet<Addr>,
    /// Union of every ghost set of every thread.
    pub all_ghost: BTreeSet<Addr>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Step { tid: Tid, label: Label },
    Access { tid: Tid, label: Label, addr: Addr, write: bool, atomic: bool, clock: Vec<u32> },
    Fork { tid: Tid, label: Label, child: Tid },
    CoreAlloc { tid: Tid, label: Label, rid: u32, addr: Addr, bind: Subst },
    CoreCall { tid: Tid, label: Label, rid: Option<u32>, api: String },
    CoreIo { tid: Tid, label: Label, rid: u32, dir: Dir, term: Term, ret: Option<usize> },
    Io { tid: Tid, label: Label, op: String, caps: Vec<Cap>, args: Vec<Value>, secret_args: Vec<bool>, sink: bool },
    Requirement { tid: Tid, label: Label, message: String },
    Observe(Box<Observation>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Running,
    Done,
    Crash { tid: Tid, label: Label, message: String },
    GhostFailure { tid: Tid, label: Label, message: String },
    StepBound,
    ThreadBound { label: Label },
}

impl Outcome {
    pub fn is_final(&self) -> bool {
        !matches!(self, Outcome::Running)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    pub max_steps: usize,
    pub max_threads: usize,
    pub observe: bool,
    pub taint: TaintConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { max_steps: 10_000, max_threads: 8, observe: false, taint: TaintConfig::default() }
    }
}

#[derive(Clone, Debug)]
struct Frame<'p> {
    block: &'p [IStmt],
    pc: usize,
    /// Loop statement owning this frame and the iterations started so far.
    looping: Option<(&'p IStmt, u32)>,
}

#[derive(Clone, Debug)]
struct Thread<'p> {
    env: BTreeMap<String, Slot>,
    frames: Vec<Frame<'p>>,
    slh: BTreeSet<Addr>,
    sih: BTreeSet<Addr>,
    clock: Vec<u32>,
    access: BTreeSet<Addr>,
}

#[derive(Clone, Debug)]
pub struct Machine<'p> {
    ip: &'p InstrumentedProgram,
    contract: &'p Contract,
    cfg: &'p RunConfig,
    heap: Vec<Cell>,
    instances: BTreeMap<Addr, Instance>,
    threads: Vec<Thread<'p>>,
    sgh: BTreeSet<Addr>,
    used: BTreeSet<u32>,
    pub trace: Vec<Event>,
    pub outcome: Outcome,
    pub schedule: Vec<Tid>,
}

struct Failure {
    ghost: bool,
    message: String,
}

fn ghost_fail(message: String) -> Failure {
    Failure { ghost: true, message }
}

fn crash(message: String) -> Failure {
    Failure { ghost: false, message }
}

#[derive(Default)]
struct UnitState {
    local: bool,
    snap: BTreeSet<Addr>,
    rid: Option<u32>,
}

impl<'p> Machine<'p> {
    pub fn new(ip: &'p InstrumentedProgram, contract: &'p Contract, cfg: &'p RunConfig) -> Self {
        let env = ip
            .decls
            .inputs
            .iter()
            .map(|i| {
                let value = match &i.value {
                    Some(Operand::Int(n)) => Value::Int(*n),
                    Some(Operand::Str(s)) => Value::Str(s.clone()),
                    Some(_) => Value::Nil,
                    None => Value::Str(i.name.clone()),
                };
                let secret = (cfg.taint.secret_inputs && i.secret) || cfg.taint.source_inputs.contains(&i.name);
                (i.name.clone(), Slot { value, secret })
            })
            .collect();
        let main = Thread {
            env,
            frames: vec![Frame { block: &ip.body, pc: 0, looping: None }],
            slh: BTreeSet::new(),
            sih: BTreeSet::new(),
            clock: vec![1],
            access: BTreeSet::new(),
        };
        let mut m = Machine {
            ip,
            contract,
            cfg,
            heap: Vec::new(),
            instances: BTreeMap::new(),
            threads: vec![main],
            sgh: BTreeSet::new(),
            used: BTreeSet::new(),
            trace: Vec::new(),
            outcome: Outcome::Running,
            schedule: Vec::new(),
        };
        m.settle(0);
        if m.runnable().is_empty() {
            m.outcome = Outcome::Done;
        }
        m
    }

    pub fn runnable(&self) -> Vec<Tid> {
        (0..self.threads.len()).filter(|&t| !self.threads[t].frames.is_empty()).collect()
    }

    pub fn heap(&self) -> &[Cell] {
        &self.heap
    }

    pub fn thread_count(&self) -> usize {
        self.threads.len()
    }

    pub fn steps(&self) -> usize {
        self.schedule.len()
    }

    /// Ghost sets of a thread and the shared set, for inspection.
    pub fn ghost(&self, t: Tid) -> (&BTreeSet<Addr>, &BTreeSet<Addr>, &BTreeSet<Addr>) {
        (&self.threads[t].slh, &self.threads[t].sih, &self.sgh)
    }

    fn current(&self, t: Tid) -> &'p IStmt {
        let f = self.threads[t].frames.last().expect("runnable");
        &f.block[f.pc]
    }

    /// Runs one unit of thread `t`.
    pub fn step(&mut self, t: Tid) {
        assert!(!self.outcome.is_final(), "machine already stopped");
        if self.schedule.len() >= self.cfg.max_steps {
            self.outcome = Outcome::StepBound;
            return;
        }
        let u = self.current(t);
        self.threads[t].frames.last_mut().expect("runnable").pc += 1;
        self.schedule.push(t);
        let th = &mut self.threads[t];
        th.clock[t] += 1;
        self.trace.push(Event::Step { tid: t, label: u.label });
        if self.cfg.observe {
            self.observe(t, Point::pre(u.label));
        }
        if let Err(f) = self.unit(t, u) {
            self.outcome = if f.ghost {
                Outcome::GhostFailure { tid: t, label: u.label, message: f.message }
            } else {
                Outcome::Crash { tid: t, label: u.label, message: f.message }
            };
            return;
        }
        if self.outcome.is_final() {
            return;
        }
        self.settle(t);
        self.update_access();
        self.post_requirements(t, u);
        if let Err(msg) = self.check_accounting() {
            self.outcome = Outcome::GhostFailure { tid: t, label: u.label, message: msg };
            return;
        }
        if self.cfg.observe {
            self.observe(t, Point::post(u.label));
        }
        if self.runnable().is_empty() {
            self.outcome = Outcome::Done;
        }
    }

    fn unit(&mut self, t: Tid, u: &'p IStmt) -> Result<(), Failure> {
        let mut st = UnitState::default();
        if let Some(x) = &u.decide {
            st.local = self.addr_of(t, x).is_some_and(|a| self.threads[t].slh.contains(&a));
        }
        self.ghost_ops(t, &u.pre, &mut st)?;
        self.action(t, u, &mut st)?;
        self.ghost_ops(t, &u.post, &mut st)
    }

    fn addr_of(&self, t: Tid, x: &str) -> Option<Addr> {
        self.threads[t].env.get(x).and_then(|s| s.value.addr())
    }

    fn addrs(&self, t: Tid, vars: &[String]) -> Vec<Addr> {
        vars.iter().filter_map(|x| self.addr_of(t, x)).collect()
    }

    fn set_mut(&mut self, t: Tid, s: GhostSet) -> &mut BTreeSet<Addr> {
        match s {
            GhostSet::Slh => &mut self.threads[t].slh,
            GhostSet::Sih => &mut self.threads[t].sih,
            GhostSet::Sgh => &mut self.sgh,
        }
    }

    fn ghost_ops(&mut self, t: Tid, ops: &[GuardedOp], st: &mut UnitState) -> Result<(), Failure> {
        for g in ops {
            let on = match g.guard {
                Guard::Always => true,
                Guard::Local => st.local,
                Guard::Shared => !st.local,
            };
            if on {
                self.ghost_op(t, &g.op, st)?;
            }
        }
        Ok(())
    }

    fn ghost_op(&mut self, t: Tid, op: &GhostOp, st: &mut UnitState) -> Result<(), Failure> {
        match op {
            GhostOp::Add(s, vars) => {
                let a = self.addrs(t, vars);
                self.set_mut(t, *s).extend(a);
            }
            GhostOp::Remove(s, vars) => {
                let held: Vec<(&String, Addr)> =
                    vars.iter().filter_map(|x| self.addr_of(t, x).map(|a| (x, a))).collect();
                for (x, a) in held {
                    if !self.set_mut(t, *s).remove(&a) {
                        return Err(ghost_fail(format!("`{x}` (address {a}) is not in {}", s.name())));
                    }
                }
            }
            GhostOp::Snapshot(vars) => {
                let roots = self.addrs(t, vars);
                let slh = &self.threads[t].slh;
                st.snap = self.reach(roots).into_iter().filter(|a| slh.contains(a)).collect();
            }
            GhostOp::RemoveSnap(s) => {
                let snap = st.snap.clone();
                let set = self.set_mut(t, *s);
                for a in snap {
                    set.remove(&a);
                }
            }
            GhostOp::AddSnap(s, vars) => {
                let mut add = st.snap.clone();
                add.extend(self.addrs(t, vars));
                self.set_mut(t, *s).extend(add);
            }
            GhostOp::PickRid => {
                let rid = (0u32..).find(|r| !self.used.contains(r)).expect("unbounded");
                self.used.insert(rid);
                st.rid = Some(rid);
            }
            GhostOp::Reset => {
                self.threads[t].slh.clear();
                self.threads[t].sih.clear();
            }
        }
        Ok(())
    }

    pub fn reach(&self, roots: impl IntoIterator<Item = Addr>) -> BTreeSet<Addr> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<Addr> = roots.into_iter().collect();
        while let Some(a) = stack.pop() {
            if seen.insert(a) {
                if let Some(n) = self.heap[a].slot.value.addr() {
                    stack.push(n);
                }
            }
        }
        seen
    }

    fn operand(&self, t: Tid, o: &Operand) -> Slot {
        match o {
            Operand::Var(x) => self.threads[t].env.get(x).cloned().unwrap_or(Slot::public(Value::Nil)),
            Operand::Nil => Slot::public(Value::Nil),
            Operand::Int(n) => Slot::public(Value::Int(*n)),
            Operand::Str(s) => Slot::public(Value::Str(s.clone())),
        }
    }

    fn eval(&self, t: Tid, e: &Expr) -> Slot {
        match e {
            Expr::Atom(o) => self.operand(t, o),
            Expr::Not(e) => {
                let s = self.eval(t, e);
                Slot { value: Value::Int(!s.value.truthy() as i64), secret: s.secret }
            }
            Expr::Bin(op, a, b) => {
                let (a, b) = (self.eval(t, a), self.eval(t, b));
                let value = match (op, &a.value, &b.value) {
                    (BinOp::Add, Value::Int(x), Value::Int(y)) => Value::Int(x.wrapping_add(*y)),
                    (BinOp::Sub, Value::Int(x), Value::Int(y)) => Value::Int(x.wrapping_sub(*y)),
                    (BinOp::Mul, Value::Int(x), Value::Int(y)) => Value::Int(x.wrapping_mul(*y)),
                    (BinOp::Lt, Value::Int(x), Value::Int(y)) => Value::Int((x < y) as i64),
                    (BinOp::Eq, x, y) => Value::Int((x == y) as i64),
                    (BinOp::Ne, x, y) => Value::Int((x != y) as i64),
                    _ => Value::Nil,
                };
                Slot { value, secret: a.secret || b.secret }
            }
        }
    }

    /// Shadow bit of a value together with everything reachable from it.
    fn deep_secret(&self, s: &Slot) -> bool {
        s.secret || self.reach(s.value.addr()).into_iter().any(|a| self.heap[a].slot.secret)
    }

    fn alloc(&mut self, slot: Slot, site: Site, component: Component) -> Addr {
        self.heap.push(Cell { slot, site, component });
        self.heap.len() - 1
    }

    fn access(&mut self, t: Tid, label: Label, addr: Addr, write: bool, atomic: bool) {
        let clock = self.threads[t].clock.clone();
        self.trace.push(Event::Access { tid: t, label, addr, write, atomic, clock });
    }

    fn require(&mut self, t: Tid, label: Label, message: String) {
        self.trace.push(Event::Requirement { tid: t, label, message });
    }

    fn deref(&self, t: Tid, x: &str) -> Result<Addr, Failure> {
        self.addr_of(t, x).ok_or_else(|| crash(format!("`{x}` does not hold an address")))
    }

    fn to_term(&self, v: &Value) -> Term {
        match v {
            Value::Nil => Term::pub_("nil"),
            Value::Int(n) => Term::Pub(n.to_string()),
            Value::Str(s) => Term::Pub(s.clone()),
            Value::Addr(a) => Term::Pub(format!("@{a}")),
            Value::Msg(t) => t.clone(),
        }
    }

    /// Bindings for `argN` and `*argN`; records the Core's reads.
    fn arg_env(&mut self, t: Tid, label: Label, args: &[Slot]) -> Subst {
        let mut env = Subst::new();
        for (i, s) in args.iter().enumerate() {
            env.insert(format!("arg{i}"), self.to_term(&s.value));
            let inner = match s.value.addr() {
                Some(a) => {
                    self.access(t, label, a, false, true);
                    self.to_term(&self.heap[a].slot.value.clone())
                }
                None => Term::pub_("nil"),
            };
            env.insert(format!("*arg{i}"), inner);
        }
        env
    }

    fn eval_term(term: &Term, env: &Subst, rid: u32) -> Result<Term, Failure> {
        let t = contract::freshen(term, rid).subst(env).normalize();
        if !t.is_ground() {
            return Err(crash(format!("contract term `{term}` has unbound names")));
        }
        Ok(t)
    }

    fn action(&mut self, t: Tid, u: &'p IStmt, st: &mut UnitState) -> Result<(), Failure> {
        let l = u.label;
        match &u.shell {
            StmtKind::Skip => {}
            StmtKind::HeapAlloc { x } => {
                let a = self.alloc(Slot::public(Value::Nil), Site::Alloc(l), Component::App);
                self.threads[t].env.insert(x.clone(), Slot::public(Value::Addr(a)));
            }
            StmtKind::HeapRead { x, e } => {
                let a = self.deref(t, e)?;
                if !self.heap[a].app_managed() {
                    self.require(t, l, format!("read of Core-managed cell {}", self.heap[a].site));
                }
                self.access(t, l, a, false, false);
                let s = self.heap[a].slot.clone();
                self.threads[t].env.insert(x.clone(), s);
            }
            StmtKind::HeapWrite { x, e } => {
                let a = self.deref(t, x)?;
                if !self.heap[a].app_managed() {
                    self.require(t, l, format!("write to Core-managed cell {}", self.heap[a].site));
                }
                self.access(t, l, a, true, false);
                self.heap[a].slot = self.operand(t, e);
            }
            StmtKind::Assign { x, e } => {
                let s = self.eval(t, e);
                self.threads[t].env.insert(x.clone(), s);
            }
            StmtKind::CoreAlloc { c, args } => {
                let rid = match st.rid {
                    Some(r) => r,
                    None => {
                        self.ghost_op(t, &GhostOp::PickRid, st)?;
                        st.rid.expect("picked")
                    }
                };
                let slots: Vec<Slot> = args.iter().map(|a| self.operand(t, a)).collect();
                self.arg_requirements(t, l, &slots);
                let secret = slots.iter().any(|s| self.deep_secret(s));
                let env = self.arg_env(t, l, &slots);
                let mut bind = Subst::new();
                for (name, term) in &self.contract.ctor.bind {
                    bind.insert(name.clone(), Self::eval_term(term, &env, rid)?);
                }
                let a = self.alloc(Slot::public(Value::Nil), Site::CoreInst(l), Component::Core);
                self.access(t, l, a, true, true);
                let mut full = bind.clone();
                full.extend(env);
                for ev in &self.contract.ctor.events {
                    let term = match &ev.term {
                        Some(x) => Self::eval_term(x, &full, rid)?,
                        None => return Err(crash("constructor events need a term".into())),
                    };
                    self.trace.push(Event::CoreIo { tid: t, label: l, rid, dir: ev.dir, term, ret: None });
                }
                self.trace.push(Event::CoreAlloc { tid: t, label: l, rid, addr: a, bind: bind.clone() });
                self.instances.insert(a, Instance { rid, bind, secret });
                self.threads[t].env.insert(c.clone(), Slot::public(Value::Addr(a)));
            }
            StmtKind::CoreCall { k, c, args, rets } => self.core_call(t, l, *k, c, args, rets)?,
            StmtKind::Fork { captured, .. } => {
                if self.threads.len() >= self.cfg.max_threads {
                    self.outcome = Outcome::ThreadBound { label: l };
                    return Ok(());
                }
                let child = self.threads.len();
                let env = captured.iter().map(|x| (x.clone(), self.operand(t, &Operand::Var(x.clone())))).collect();
                let mut clock = self.threads[t].clock.clone();
                clock.resize(child + 1, 0);
                clock[child] = 1;
                self.threads[t].clock[t] += 1;
                self.threads.push(Thread {
                    env,
                    frames: vec![Frame { block: &u.blocks[0], pc: 0, looping: None }],
                    slh: BTreeSet::new(),
                    sih: BTreeSet::new(),
                    clock,
                    access: BTreeSet::new(),
                });
                for th in &mut self.threads {
                    th.clock.resize(child + 1, 0);
                }
                self.trace.push(Event::Fork { tid: t, label: l, child });
                let mut cst = UnitState::default();
                for op in &u.child_prologue {
                    self.ghost_op(child, op, &mut cst)?;
                }
                self.settle(child);
            }
            StmtKind::IoCall { op, args, caps, ret } => {
                let slots: Vec<Slot> = args.iter().map(|a| self.operand(t, a)).collect();
                let secret_args: Vec<bool> = slots.iter().map(|s| self.deep_secret(s)).collect();
                let sink = caps.iter().any(|c| self.cfg.taint.sinks.contains(c));
                if let Some(r) = ret {
                    let secret = self.cfg.taint.source_ops.contains(op) || secret_args.iter().any(|b| *b);
                    let value = Value::Str(format!("{op}#{}", self.schedule.len()));
                    self.threads[t].env.insert(r.clone(), Slot { value, secret });
                }
                self.trace.push(Event::Io {
                    tid: t,
                    label: l,
                    op: op.clone(),
                    caps: caps.clone(),
                    args: slots.into_iter().map(|s| s.value).collect(),
                    secret_args,
                    sink,
                });
            }
            StmtKind::Branch { cond, .. } => {
                let b = if self.eval(t, cond).value.truthy() { 0 } else { 1 };
                self.threads[t].frames.push(Frame { block: &u.blocks[b], pc: 0, looping: None });
            }
            StmtKind::Loop { cond, bound, .. } => {
                if *bound > 0 && self.eval(t, cond).value.truthy() {
                    self.threads[t].frames.push(Frame { block: &u.blocks[0], pc: 0, looping: Some((u, 1)) });
                }
            }
        }
        Ok(())
    }

    fn arg_requirements(&mut self, t: Tid, l: Label, slots: &[Slot]) {
        for s in slots {
            if let Some(a) = s.value.addr() {
                if !self.heap[a].app_managed() {
                    self.require(t, l, format!("Core argument {} is not application-managed", self.heap[a].site));
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn core_call(
        &mut self,
        t: Tid,
        l: Label,
        k: usize,
        c: &str,
        args: &[Operand],
        rets: &[String],
    ) -> Result<(), Failure> {
        let api = self.ip.decls.api(k).map(|a| a.name.clone()).unwrap_or_default();
        let slots: Vec<Slot> = args.iter().map(|a| self.operand(t, a)).collect();
        self.arg_requirements(t, l, &slots);
        let recv = self.operand(t, &Operand::Var(c.to_string())).value;
        let inst_addr = match recv {
            Value::Addr(a) => {
                if self.heap[a].app_managed() {
                    self.require(t, l, format!("Core receiver {} is application-managed", self.heap[a].site));
                }
                Some(a)
            }
            _ => None,
        };
        let Some(a) = inst_addr else {
            // a nil instance makes the Core return immediately
            self.trace.push(Event::CoreCall { tid: t, label: l, rid: None, api });
            for r in rets {
                self.threads[t].env.insert(r.clone(), Slot::public(Value::Nil));
            }
            return Ok(());
        };
        let inst = self.instances.get(&a).cloned().ok_or_else(|| crash(format!("`{c}` is not a Core instance")))?;
        let args_secret = slots.iter().any(|s| self.deep_secret(s));
        let mut env = self.arg_env(t, l, &slots);
        self.access(t, l, a, true, true);
        self.trace.push(Event::CoreCall { tid: t, label: l, rid: Some(inst.rid), api: api.clone() });
        env.extend(inst.bind.clone());
        let spec = self.contract.api(&api).cloned().unwrap_or_default();
        let mut ret_terms = Vec::new();
        for r in &spec.rets {
            ret_terms.push(Self::eval_term(r, &env, inst.rid)?);
        }
        for ev in &spec.events {
            let term = match (&ev.term, ev.ret) {
                (Some(x), _) => Self::eval_term(x, &env, inst.rid)?,
                (None, Some(i)) => ret_terms.get(i).cloned().ok_or_else(|| crash(format!("no return slot {i}")))?,
                (None, None) => return Err(crash("event without a term".into())),
            };
            self.trace.push(Event::CoreIo { tid: t, label: l, rid: inst.rid, dir: ev.dir, term, ret: ev.ret });
        }
        let taint = &self.cfg.taint;
        let flowing = inst.secret || args_secret || taint.source_ops.contains(&api);
        for (i, r) in rets.iter().enumerate() {
            let sanitized = taint.sanitizers.iter().any(|s| s.op == api && s.index == i);
            let secret = flowing && !sanitized;
            let value = ret_terms.get(i).cloned().map(Value::Msg).unwrap_or(Value::Nil);
            let cell = self.alloc(Slot { value, secret }, Site::CoreRet(l, i), Component::App);
            self.threads[t].env.insert(r.clone(), Slot { value: Value::Addr(cell), secret });
        }
        if args_secret {
            self.instances.get_mut(&a).expect("present").secret = true;
        }
        Ok(())
    }

    /// Pops finished blocks and re-enters loops whose condition still holds.
    fn settle(&mut self, t: Tid) {
        loop {
            let th = &self.threads[t];
            let Some(f) = th.frames.last() else { return };
            if f.pc < f.block.len() {
                return;
            }
            if let Some((u, iters)) = f.looping {
                if let StmtKind::Loop { cond, bound, .. } = &u.shell {
                    if iters < *bound && self.eval(t, cond).value.truthy() {
                        let f = self.threads[t].frames.last_mut().expect("present");
                        f.pc = 0;
                        f.looping = Some((u, iters + 1));
                        continue;
                    }
                }
            }
            self.threads[t].frames.pop();
        }
    }

    fn update_access(&mut self) {
        for t in 0..self.threads.len() {
            let roots: Vec<Addr> = self.threads[t].env.values().filter_map(|s| s.value.addr()).collect();
            let r = self.reach(roots);
            self.threads[t].access.extend(r);
        }
    }

    fn only_accessible_by(&self, a: Addr, t: Tid) -> bool {
        self.threads.iter().enumerate().all(|(u, th)| u == t || !th.access.contains(&a))
    }

    fn post_requirements(&mut self, t: Tid, u: &IStmt) {
        let (args, rets): (&[Operand], &[String]) = match &u.shell {
            StmtKind::CoreAlloc { args, .. } => (args, &[]),
            StmtKind::CoreCall { args, rets, .. } => (args, rets),
            _ => return,
        };
        let mut msgs = Vec::new();
        for a in args.iter().filter_map(|o| o.var()) {
            if let Some(addr) = self.addr_of(t, a) {
                if !self.only_accessible_by(addr, t) {
                    msgs.push(format!("Core argument `{a}` is not thread-local after the call"));
                }
            }
        }
        for r in rets {
            if let Some(addr) = self.addr_of(t, r) {
                if !self.only_accessible_by(addr, t) {
                    msgs.push(format!("Core return `{r}` is not thread-local"));
                }
            }
        }
        for m in msgs {
            self.require(t, u.label, m);
        }
    }

    /// Ghost sets are pairwise disjoint, hold only addresses, and classify
    /// cells consistently with their provenance.
    fn check_accounting(&self) -> Result<(), String> {
        let mut owner: BTreeMap<Addr, String> = BTreeMap::new();
        let mut claim = |a: Addr, who: String| -> Result<(), String> {
            if let Some(prev) = owner.insert(a, who.clone()) {
                return Err(format!("address {a} is in both {prev} and {who}"));
            }
            Ok(())
        };
        for (t, th) in self.threads.iter().enumerate() {
            for &a in &th.slh {
                claim(a, format!("slh[{t}]"))?;
                if !self.heap[a].app_managed() {
                    return Err(format!("slh[{t}] holds Core-managed cell {a}"));
                }
            }
            for &a in &th.sih {
                claim(a, format!("sih[{t}]"))?;
                if !self.instances.contains_key(&a) {
                    return Err(format!("sih[{t}] holds non-instance {a}"));
                }
            }
        }
        for &a in &self.sgh {
            claim(a, "*sgh".into())?;
            if !self.heap[a].app_managed() {
                return Err(format!("*sgh holds Core-managed cell {a}"));
            }
        }
        Ok(())
    }

    fn observe(&mut self, t: Tid, point: Point) {
        let th = &self.threads[t];
        let vars = th.env.iter().filter_map(|(k, s)| s.value.addr().map(|a| (k.clone(), a))).collect();
        let mut access: BTreeMap<Addr, BTreeSet<Tid>> = BTreeMap::new();
        for (u, o) in self.threads.iter().enumerate() {
            for &a in &o.access {
                access.entry(a).or_default().insert(u);
            }
        }
        let mut all_ghost: BTreeSet<Addr> = self.sgh.clone();
        for o in &self.threads {
            all_ghost.extend(&o.slh);
            all_ghost.extend(&o.sih);
        }
        let obs = Observation {
            tid: t,
            point,
            vars,
            sites: self.heap.iter().enumerate().map(|(a, c)| (a, c.site)).collect(),
            access,
            slh: th.slh.clone(),
            sih: th.sih.clone(),
            sgh: self.sgh.clone(),
            all_ghost,
        };
        self.trace.push(Event::Observe(Box::new(obs)));
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunResult {
    pub outcome: Outcome,
    pub schedule: Vec<Tid>,
    pub trace: Vec<Event>,
}

/// Runs to completion under a seeded random scheduler.
pub fn run(ip: &InstrumentedProgram, contract: &Contract, cfg: &RunConfig, seed: u64) -> RunResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Machine::new(ip, contract, cfg);
    while !m.outcome.is_final() {
        let ready = m.runnable();
        let t = ready[rng.gen_range(0..ready.len())];
        m.step(t);
    }
    RunResult { outcome: m.outcome, schedule: m.schedule, trace: m.trace }
}

/// Runs a fixed schedule; stops early if it names a thread that cannot run.
pub fn replay(ip: &InstrumentedProgram, contract: &Contract, cfg: &RunConfig, schedule: &[Tid]) -> RunResult {
    let mut m = Machine::new(ip, contract, cfg);
    for &t in schedule {
        if m.outcome.is_final() || !m.runnable().contains(&t) {
            break;
        }
        m.step(t);
    }
    RunResult { outcome: m.outcome, schedule: m.schedule, trace: m.trace }
}

/// What one Core instance was created with and the protocol events it
/// emitted, in order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CoreRun {
    /// The `core_alloc` statement that created the instance.
    pub label: Label,
    pub bind: Subst,
    pub events: Vec<(Dir, Term)>,
}

/// Protocol events of each Core instance, in trace order.
pub fn core_traces(trace: &[Event]) -> BTreeMap<u32, CoreRun> {
    let mut out: BTreeMap<u32, CoreRun> = BTreeMap::new();
    for e in trace {
        match e {
            Event::CoreAlloc { rid, label, bind, .. } => {
                out.insert(*rid, CoreRun { label: *label, bind: bind.clone(), events: Vec::new() });
            }
            Event::CoreIo { rid, dir, term, .. } => {
                if let Some(run) = out.get_mut(rid) {
                    run.events.push((*dir, term.clone()));
                }
            }
            _ => {}
        }
    }
    out
}

/// Sink I/O whose arguments depend on a secret.
pub fn secret_sinks(trace: &[Event]) -> Vec<Label> {
    trace
        .iter()
        .filter_map(|e| match e {
            Event::Io { label, secret_args, sink: true, .. } if secret_args.iter().any(|b| *b) => Some(*label),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ghost::instrument;
    use crate::lang::{parse_program, ValidProgram};

    fn go(src: &str, schedule_seed: u64) -> RunResult {
        let p = ValidProgram::new(parse_program(src).unwrap()).unwrap();
        let ip = instrument(&p);
        run(&ip, &Contract::default(), &RunConfig::default(), schedule_seed)
    }

    #[test]
    fn straight_line_program_finishes() {
        let r = go("L1: x := new()\nL2: *x := 5\nL3: y := *x\nL4: z := y + 1", 0);
        assert_eq!(r.outcome, Outcome::Done);
        assert_eq!(r.schedule, vec![0, 0, 0, 0]);
    }

    #[test]
    fn aliased_core_arguments_fail_at_second_removal() {
        let r = go("core_api 0 f call\nL1: c := core_alloc()\nL2: a := new()\nL3: core_call 0 on c (a, a)", 0);
        match r.outcome {
            Outcome::GhostFailure { label, message, .. } => {
                assert_eq!(label, Label(3));
                assert!(message.contains("slh"), "{message}");
            }
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn writing_core_cell_fails() {
        let r = go("core_api 0 f call\nL1: c := core_alloc()\nL2: *c := 1", 0);
        assert!(matches!(r.outcome, Outcome::GhostFailure { .. }));
    }

    #[test]
    fn nil_dereference_crashes() {
        let r = go("L1: x := nil\nL2: y := *x", 0);
        assert!(matches!(r.outcome, Outcome::Crash { .. }));
    }

    #[test]
    fn loop_respects_bound() {
        let r = go("L1: i := 0\nL2: while (i < 10) bound 3 {\nL3: skip\n}", 0);
        assert_eq!(r.outcome, Outcome::Done);
        assert_eq!(r.schedule.len(), 2 + 3);
    }

    #[test]
    fn same_seed_same_trace() {
        let src = "L1: x := new()\nL2: fork(x) {\nL3: v := *x\n}\nL4: fork() {\nL5: skip\n}\nL6: skip";
        assert_eq!(go(src, 9), go(src, 9));
    }

    #[test]
    fn shadow_bits_follow_the_heap() {
        let r = go("L0: input k secret\nL1: a := new()\nL2: *a := k\nL3: io \"printf\" (a) caps[fs_write]", 0);
        assert_eq!(secret_sinks(&r.trace), vec![Label(3)]);
    }
}
