//! Exhaustive exploration of thread interleavings.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::crosscheck::{crosscheck_static, CrossViolation, Statics};
use super::races::detect_races;
use super::{core_traces, Contract, CoreRun, Event, Machine, Outcome, RunConfig, Tid};
use crate::ghost::InstrumentedProgram;
use crate::lang::Label;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureKind {
    Ghost,
    Crash,
    Requirement,
    Race,
    Crosscheck,
    Leak,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FailureClass {
    pub kind: FailureKind,
    pub label: Label,
    pub detail: String,
    /// Shortest schedule found that exhibits the failure.
    pub witness: Vec<Tid>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreReport {
    pub runs: usize,
    /// Machine steps taken over the whole search, shared prefixes included once.
    pub steps: usize,
    /// Most threads alive in any run.
    pub threads: usize,
    /// Some schedule was cut short by a bound, or the run budget ran out.
    pub truncated: bool,
    pub outcomes: BTreeMap<String, usize>,
    pub failures: Vec<FailureClass>,
    pub cross: Vec<CrossViolation>,
    /// Distinct per-instance Core I/O traces over all runs.
    pub core_traces: BTreeSet<CoreRun>,
}

impl ExploreReport {
    pub fn has(&self, kind: FailureKind) -> bool {
        self.failures.iter().any(|f| f.kind == kind)
    }

    pub fn labels(&self, kind: FailureKind) -> BTreeSet<Label> {
        self.failures.iter().filter(|f| f.kind == kind).map(|f| f.label).collect()
    }
}

#[derive(Default)]
struct Collector {
    report: ExploreReport,
    classes: BTreeMap<(FailureKind, Label), FailureClass>,
    cross: BTreeMap<(super::Check, crate::escape::Point, String), CrossViolation>,
}

impl Collector {
    fn fail(&mut self, kind: FailureKind, label: Label, detail: String, witness: &[Tid]) {
        let e = self.classes.entry((kind, label)).or_insert_with(|| FailureClass {
            kind,
            label,
            detail: detail.clone(),
            witness: witness.to_vec(),
        });
        if witness.len() < e.witness.len() {
            e.detail = detail;
            e.witness = witness.to_vec();
        }
    }

    fn scan_observations(&mut self, st: Option<&Statics>, m: &mut Machine) {
        if let Some(st) = st {
            for e in &m.trace {
                if let Event::Observe(o) = e {
                    for v in crosscheck_static(st, o) {
                        let key = (v.check, v.point, v.message.clone());
                        if !self.cross.contains_key(&key) {
                            self.fail(FailureKind::Crosscheck, v.point.label, v.message.clone(), &m.schedule);
                            self.cross.insert(key, v);
                        }
                    }
                }
            }
        }
        m.trace.retain(|e| !matches!(e, Event::Observe(_)));
    }

    fn leaf(&mut self, m: &Machine) {
        let r = &mut self.report;
        r.runs += 1;
        r.threads = r.threads.max(m.threads.len());
        let name = match &m.outcome {
            Outcome::Done => "done",
            Outcome::Crash { .. } => "crash",
            Outcome::GhostFailure { .. } => "ghost_failure",
            Outcome::StepBound => "step_bound",
            Outcome::ThreadBound { .. } => "thread_bound",
            Outcome::Running => "running",
        };
        *r.outcomes.entry(name.to_string()).or_default() += 1;
        r.truncated |= matches!(m.outcome, Outcome::StepBound | Outcome::ThreadBound { .. });
        r.core_traces.extend(core_traces(&m.trace).into_values());
        let s = &m.schedule;
        match &m.outcome {
            Outcome::Crash { label, message, .. } => self.fail(FailureKind::Crash, *label, message.clone(), s),
            Outcome::GhostFailure { label, message, .. } => {
                self.fail(FailureKind::Ghost, *label, message.clone(), s)
            }
            _ => {}
        }
        for e in &m.trace {
            match e {
                Event::Requirement { label, message, .. } => {
                    self.fail(FailureKind::Requirement, *label, message.clone(), s)
                }
                Event::Io { label, secret_args, sink: true, op, .. } if secret_args.iter().any(|b| *b) => {
                    self.fail(FailureKind::Leak, *label, format!("secret reaches `{op}`"), s)
                }
                _ => {}
            }
        }
        for race in detect_races(&m.trace) {
            let (a, b) = (race.first.label.min(race.second.label), race.first.label.max(race.second.label));
            self.fail(FailureKind::Race, b, format!("{a} and {b} on address {}", race.addr), s);
        }
    }
}

/// Runs every interleaving up to `max_runs` complete schedules. With
/// `statics`, every intermediate state is checked against the static facts.
pub fn explore(
    ip: &InstrumentedProgram,
    contract: &Contract,
    cfg: &RunConfig,
    statics: Option<&Statics>,
    max_runs: usize,
) -> ExploreReport {
    let cfg = RunConfig { observe: statics.is_some(), ..cfg.clone() };
    let mut col = Collector::default();
    let mut root = Machine::new(ip, contract, &cfg);
    col.scan_observations(statics, &mut root);
    let mut stack = vec![root];
    while let Some(m) = stack.pop() {
        if m.outcome.is_final() {
            col.leaf(&m);
            continue;
        }
        if col.report.runs + stack.len() >= max_runs {
            col.report.truncated = true;
            break;
        }
        for &t in m.runnable().iter().rev() {
            let mut n = m.clone();
            n.step(t);
            col.report.steps += 1;
            col.scan_observations(statics, &mut n);
            stack.push(n);
        }
    }
    let mut report = col.report;
    report.failures = col.classes.into_values().collect();
    report.cross = col.cross.into_values().collect();
    report
}
