//! Refinement of Core I/O traces against a role's I/O automaton.
//!
//! Each Core instance runs the automaton once. Virtual inputs and outputs at
//! the Core boundary count as network inputs and outputs. Values bound while
//! matching one transition flow to later ones only through the state fact
//! arguments, plus the per-instance initial bindings.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::interp::{CoreRun, Dir};
use crate::msr::{IoAutomaton, Subst, Term, Transition};

/// Protocol events per Core instance, in schedule order.
pub type CoreTrace = BTreeMap<u32, CoreRun>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub index: usize,
    pub event: String,
    pub expected: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RidVerdict {
    pub rid: u32,
    pub events: usize,
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mismatch: Option<Mismatch>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RefinementReport {
    pub role: String,
    pub instances: Vec<RidVerdict>,
}

impl RefinementReport {
    pub fn accepted(&self) -> bool {
        self.instances.iter().all(|v| v.accepted)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RefineError {
    #[error("instance {rid}, event {index}: `{term}` is not a ground message")]
    Alphabet { rid: u32, index: usize, term: String },
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Config {
    At { state: String, args: Vec<Term> },
    Mid { tr: usize, pos: usize, bind: Subst },
}

/// Substitutes until no bound variable is left; initial arguments may
/// themselves be variables bound later in the run.
fn resolve(t: &Term, b: &Subst) -> Term {
    let mut cur = t.subst(b);
    for _ in 0..8 {
        let next = cur.subst(b);
        if next == cur {
            break;
        }
        cur = next;
    }
    cur.normalize()
}

fn event_text(dir: Dir, t: &Term) -> String {
    format!("{} {t}", dir.name())
}

struct Runner<'a> {
    a: &'a IoAutomaton,
    env: Subst,
}

impl Runner<'_> {
    fn enter(&self, t: &Transition, args: &[Term]) -> Option<Subst> {
        if t.from_args.len() != args.len() {
            return None;
        }
        let mut b = self.env.clone();
        t.from_args.iter().zip(args).all(|(p, v)| p.subst(&b).normalize().matches(v, &mut b)).then_some(b)
    }

    /// Finishes transition `tr` if all its events were seen; otherwise keeps
    /// it pending.
    fn settle(&self, tr: usize, pos: usize, b: Subst, out: &mut BTreeSet<Config>) {
        let t = &self.a.transitions[tr];
        if pos < t.events.len() {
            out.insert(Config::Mid { tr, pos, bind: b });
            return;
        }
        let holds = t.guards.iter().all(|(l, r)| {
            let (l, r) = (l.subst(&b).normalize(), r.subst(&b).normalize());
            !(l.is_ground() && r.is_ground()) || l == r
        });
        if holds {
            out.insert(Config::At { state: t.to.clone(), args: t.to_args.iter().map(|x| resolve(x, &b)).collect() });
        }
    }

    /// Follows transitions without events, up to a fixed number of rounds.
    fn closure(&self, mut set: BTreeSet<Config>) -> BTreeSet<Config> {
        for _ in 0..32 {
            let mut next = set.clone();
            for c in &set {
                if let Config::At { state, args } = c {
                    for (i, t) in self.a.transitions.iter().enumerate() {
                        if &t.from == state && t.events.is_empty() {
                            if let Some(b) = self.enter(t, args) {
                                self.settle(i, 0, b, &mut next);
                            }
                        }
                    }
                }
            }
            if next == set {
                break;
            }
            set = next;
        }
        set
    }

    fn step(&self, set: &BTreeSet<Config>, dir: Dir, msg: &Term) -> BTreeSet<Config> {
        let mut out = BTreeSet::new();
        let try_event = |tr: usize, pos: usize, mut b: Subst, out: &mut BTreeSet<Config>| {
            let e = &self.a.transitions[tr].events[pos];
            if e.dir == dir.as_network() && e.pattern.subst(&b).normalize().matches(msg, &mut b) {
                self.settle(tr, pos + 1, b, out);
            }
        };
        for c in set {
            match c {
                Config::At { state, args } => {
                    for (i, t) in self.a.transitions.iter().enumerate() {
                        if &t.from == state && !t.events.is_empty() {
                            if let Some(b) = self.enter(t, args) {
                                try_event(i, 0, b, &mut out);
                            }
                        }
                    }
                }
                Config::Mid { tr, pos, bind } => try_event(*tr, *pos, bind.clone(), &mut out),
            }
        }
        self.closure(out)
    }

    fn expected(&self, set: &BTreeSet<Config>) -> Vec<String> {
        let mut v = BTreeSet::new();
        for c in set {
            match c {
                Config::At { state, args } => {
                    for t in self.a.transitions.iter().filter(|t| &t.from == state && !t.events.is_empty()) {
                        if let Some(b) = self.enter(t, args) {
                            let e = &t.events[0];
                            v.insert(format!("{}: {}", t.rule, event_text(e.dir, &e.pattern.subst(&b).normalize())));
                        }
                    }
                }
                Config::Mid { tr, pos, bind } => {
                    let t = &self.a.transitions[*tr];
                    let e = &t.events[*pos];
                    v.insert(format!("{}: {}", t.rule, event_text(e.dir, &e.pattern.subst(bind).normalize())));
                }
            }
        }
        v.into_iter().collect()
    }
}

/// Runs the automaton over one instance's events. `init` binds names the
/// instance starts with; a name `n` also binds the sorted variables `~n` and
/// `$n`.
pub fn check_instance(a: &IoAutomaton, rid: u32, events: &[(Dir, Term)], init: &Subst) -> Result<RidVerdict, RefineError> {
    for (index, (_, t)) in events.iter().enumerate() {
        if !t.is_ground() {
            return Err(RefineError::Alphabet { rid, index, term: t.to_string() });
        }
    }
    let mut env = Subst::new();
    for (k, v) in init {
        let bare = k.trim_start_matches(['~', '$']);
        for name in [bare.to_string(), format!("~{bare}"), format!("${bare}")] {
            env.entry(name).or_insert_with(|| v.clone());
        }
    }
    let run = Runner { a, env };
    let start: BTreeSet<Config> = a
        .initial
        .iter()
        .map(|i| Config::At { state: i.state.clone(), args: i.args.iter().map(|x| x.subst(&run.env).normalize()).collect() })
        .collect();
    let mut set = run.closure(start);
    for (index, (dir, msg)) in events.iter().enumerate() {
        let next = run.step(&set, *dir, msg);
        if next.is_empty() {
            let mismatch = Mismatch { index, event: event_text(*dir, msg), expected: run.expected(&set) };
            return Ok(RidVerdict { rid, events: events.len(), accepted: false, mismatch: Some(mismatch) });
        }
        set = next;
    }
    Ok(RidVerdict { rid, events: events.len(), accepted: true, mismatch: None })
}

/// Checks every instance of `trace` against `a`, starting each from the
/// names its constructor bound.
pub fn check_refinement(trace: &CoreTrace, a: &IoAutomaton) -> Result<RefinementReport, RefineError> {
    let instances = trace
        .iter()
        .map(|(rid, run)| check_instance(a, *rid, &run.events, &run.bind))
        .collect::<Result<_, _>>()?;
    Ok(RefinementReport { role: a.role.clone(), instances })
}
