//! Concrete traces with protocol-independent components and their replay
//! against the plain attacker.
//!
//! In the concrete system each instance may run an independent component
//! that derives terms on its own (`ind(rid, x)`) and talks to the
//! environment through `out_ind`/`in_ind`. Renaming those facts to `K`
//! merges the component into the attacker; every concrete step then maps to
//! at most one abstract step.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::explore::{match_premises, ExplicitStep};
use super::model::{apply_rule, Builtin, Fact, Model, Rule, State};
use super::term::{Subst, Term};

/// Maps component facts onto attacker knowledge.
pub fn rename_fact(f: &Fact) -> Fact {
    match (f.name.as_str(), f.args.as_slice()) {
        ("ind", [_, x]) | ("out_ind", [x]) | ("in_ind", [x]) => Fact::new("K", vec![x.clone()]),
        _ => f.clone(),
    }
}

pub fn rename_state(s: &State) -> State {
    let mut out = State::new();
    for (f, n) in s.facts() {
        for _ in 0..n {
            out.insert(rename_fact(f));
        }
    }
    out
}

/// The abstract counterpart of a concrete step; `None` stands for no step.
pub fn abstract_step(step: &ExplicitStep) -> Option<ExplicitStep> {
    let to = |b: Builtin| Some(ExplicitStep { rule: b.name(), binding: step.binding.clone() });
    match Builtin::from_name(&step.rule) {
        Some(Builtin::IndOut | Builtin::IndIn | Builtin::Collect | Builtin::Deliver) => None,
        Some(Builtin::IndPub) => to(Builtin::Pub),
        Some(Builtin::IndFr) => to(Builtin::Fr),
        Some(Builtin::IndApp(f)) => to(Builtin::App(f)),
        _ => Some(step.clone()),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SimFailure {
    pub index: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SimReport {
    pub steps: usize,
    pub abstract_steps: Vec<ExplicitStep>,
    pub failure: Option<SimFailure>,
}

impl SimReport {
    pub fn ok(&self) -> bool {
        self.failure.is_none()
    }
}

/// Replays a concrete trace step by step and checks that the renamed
/// concrete state equals the abstract state after every step, and that both
/// sides emit the same actions.
pub fn simulate_independent(model: &Model, trace: &[ExplicitStep]) -> SimReport {
    let mut conc = State::new();
    let mut abs = State::new();
    let mut abstract_steps = Vec::new();
    let fail = |index: usize, reason: String, abstract_steps: Vec<ExplicitStep>| SimReport {
        steps: trace.len(),
        abstract_steps,
        failure: Some(SimFailure { index, reason }),
    };
    for (i, step) in trace.iter().enumerate() {
        let Some(rule) = model.rule(&step.rule) else {
            return fail(i, format!("unknown rule `{}`", step.rule), abstract_steps);
        };
        let done = match apply_rule(&conc, &rule, &step.binding) {
            Ok(d) => d,
            Err(e) => return fail(i, format!("concrete step does not apply: {e}"), abstract_steps),
        };
        conc = done.state;
        let mut abs_actions = Vec::new();
        if let Some(a) = abstract_step(step) {
            let r = model.rule(&a.rule).expect("abstract rules exist");
            match apply_rule(&abs, &r, &a.binding) {
                Ok(d) => {
                    abs = d.state;
                    abs_actions = d.actions;
                }
                Err(e) => return fail(i, format!("abstract {} does not apply: {e}", a.rule), abstract_steps),
            }
            abstract_steps.push(a);
        }
        if done.actions != abs_actions {
            return fail(i, "actions differ".into(), abstract_steps);
        }
        if rename_state(&conc) != abs {
            return fail(i, "states are not related".into(), abstract_steps);
        }
    }
    SimReport { steps: trace.len(), abstract_steps, failure: None }
}

fn mint(taken: &BTreeSet<Term>, make: impl Fn(usize) -> Term) -> Term {
    (0..).map(make).find(|t| !taken.contains(t)).expect("unbounded")
}

/// Every applicable instance of `r` in `s`. Variables not bound by premises
/// take existing names or one new name of the right sort; an instance id
/// may also be new.
pub fn rule_instances(model: &Model, r: &Rule, s: &State) -> Vec<ExplicitStep> {
    let mut taken = s.names();
    taken.extend(model.pubs.iter().cloned());
    let mut out = Vec::new();
    for b in match_premises(&r.premises, s, &Subst::new()) {
        let free: Vec<String> = r.vars().into_iter().filter(|v| !b.contains_key(v)).collect::<BTreeSet<_>>().into_iter().collect();
        let mut partial = vec![b];
        for v in &free {
            let pool: Vec<Term> = if v.starts_with('~') {
                vec![mint(&taken, |k| Term::Fresh(format!("n{k}")))]
            } else if v.starts_with('$') || v == "rid" {
                let mut p: Vec<Term> = if v == "rid" {
                    s.facts().filter(|(f, _)| f.name == "ind").map(|(f, _)| f.args[0].clone()).collect()
                } else {
                    taken.iter().filter(|t| matches!(t, Term::Pub(_))).cloned().collect()
                };
                p.push(mint(&taken, |k| Term::pub_(&format!("q{k}"))));
                p.sort();
                p.dedup();
                p
            } else {
                continue;
            };
            partial = partial
                .into_iter()
                .flat_map(|b| {
                    pool.iter().map(move |t| {
                        let mut nb = b.clone();
                        nb.insert(v.clone(), t.clone());
                        nb
                    })
                })
                .collect();
        }
        for b in partial {
            if apply_rule(s, r, &b).is_ok() {
                out.push(ExplicitStep { rule: r.name.clone(), binding: b });
            }
        }
    }
    out
}

/// A random concrete trace of at most `depth` steps over role rules, the
/// attacker rules and the independent-component rules. Each step first
/// picks an enabled rule uniformly, then one of its instances.
pub fn random_trace(model: &Model, depth: usize, seed: u64) -> Vec<ExplicitStep> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rules = model.all_rules();
    let mut s = State::new();
    let mut trace = Vec::new();
    for _ in 0..depth {
        let mut order: Vec<&Rule> = rules.iter().collect();
        order.shuffle(&mut rng);
        let Some(choices) = order.into_iter().map(|r| rule_instances(model, r, &s)).find(|v| !v.is_empty()) else {
            break;
        };
        let step = choices.choose(&mut rng).expect("non-empty").clone();
        let r = model.rule(&step.rule).expect("rule");
        s = apply_rule(&s, &r, &step.binding).expect("enabled").state;
        trace.push(step);
    }
    trace
}
