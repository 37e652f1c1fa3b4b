//! I/O automata extracted from the rules of one role.
//!
//! A role's rules must form a chain over its state facts (`Role_i`): every
//! rule consumes at most one and produces at most one of them. States are
//! the state fact names plus `start` (before any rule) and `done` (after a
//! rule that produces no state fact). A transition carries the rule's inputs
//! and outputs in order: inputs first, then outputs.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use super::model::{Fact, Model, Rule};
use super::term::Term;
use crate::interp::Dir;

pub const START: &str = "start";
pub const DONE: &str = "done";

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IoEvent {
    pub dir: Dir,
    pub pattern: Term,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Transition {
    pub rule: String,
    pub from: String,
    pub to: String,
    /// Argument patterns of the consumed state fact.
    pub from_args: Vec<Term>,
    /// Arguments of the produced state fact.
    pub to_args: Vec<Term>,
    pub events: Vec<IoEvent>,
    /// `Eq` restrictions of the rule, checked once the transition completes.
    pub guards: Vec<(Term, Term)>,
}

/// A state the environment creates, with the arguments it is created with.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Initial {
    pub state: String,
    pub args: Vec<Term>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IoAutomaton {
    pub role: String,
    pub states: Vec<String>,
    pub initial: Vec<Initial>,
    pub transitions: Vec<Transition>,
}

impl IoAutomaton {
    pub fn outgoing<'a>(&'a self, state: &'a str) -> impl Iterator<Item = &'a Transition> + 'a {
        self.transitions.iter().filter(move |t| t.from == state)
    }

    /// States with a transition back to themselves.
    pub fn loops(&self) -> BTreeSet<&str> {
        self.transitions.iter().filter(|t| t.from == t.to).map(|t| t.from.as_str()).collect()
    }

    pub fn directions(&self) -> BTreeSet<Dir> {
        self.transitions.iter().flat_map(|t| t.events.iter().map(|e| e.dir)).collect()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IoSpecError {
    #[error("rule `{rule}` consumes {n} state facts of role `{role}`")]
    Premises { role: String, rule: String, n: usize },
    #[error("rule `{rule}` produces {n} state facts of role `{role}`")]
    Conclusions { role: String, rule: String, n: usize },
}

fn is_state(role: &str, f: &Fact) -> bool {
    !f.persistent() && f.name.strip_prefix(role).is_some_and(|rest| rest.starts_with('_'))
}

/// Builds the automaton of `role` from `model`.
pub fn role_iospec(model: &Model, role: &str) -> Result<IoAutomaton, IoSpecError> {
    let rules: Vec<&Rule> = model.rules.iter().filter(|r| r.role() == role).collect();
    let mut states = vec![START.to_string()];
    let mut transitions = Vec::new();
    let add = |s: &str, states: &mut Vec<String>| {
        if !states.iter().any(|x| x == s) {
            states.push(s.to_string());
        }
    };
    for r in &rules {
        let pre: Vec<&Fact> = r.premises.iter().filter(|f| is_state(role, f)).collect();
        let post: Vec<&Fact> = r.conclusions.iter().filter(|f| is_state(role, f)).collect();
        if pre.len() > 1 {
            return Err(IoSpecError::Premises { role: role.into(), rule: r.name.clone(), n: pre.len() });
        }
        if post.len() > 1 {
            return Err(IoSpecError::Conclusions { role: role.into(), rule: r.name.clone(), n: post.len() });
        }
        let (from, from_args) = pre.first().map_or((START.to_string(), vec![]), |f| (f.name.clone(), f.args.clone()));
        let (to, to_args) = post.first().map_or((DONE.to_string(), vec![]), |f| (f.name.clone(), f.args.clone()));
        add(&from, &mut states);
        add(&to, &mut states);
        let mut events: Vec<IoEvent> = r
            .premises
            .iter()
            .filter(|f| f.name == "In")
            .map(|f| IoEvent { dir: Dir::In, pattern: f.args[0].clone() })
            .collect();
        events.extend(
            r.conclusions.iter().filter(|f| f.name == "Out").map(|f| IoEvent { dir: Dir::Out, pattern: f.args[0].clone() }),
        );
        let guards = r
            .actions
            .iter()
            .filter(|a| a.name == "Eq" && a.args.len() == 2)
            .map(|a| (a.args[0].clone(), a.args[1].clone()))
            .collect();
        transitions.push(Transition { rule: r.name.clone(), from, to, from_args, to_args, events, guards });
    }
    let mut initial: Vec<Initial> = model
        .rules
        .iter()
        .filter(|r| r.role() != role)
        .flat_map(|r| r.conclusions.iter().filter(|f| is_state(role, f)))
        .map(|f| Initial { state: f.name.clone(), args: f.args.clone() })
        .collect();
    if transitions.iter().any(|t| t.from == START) || initial.is_empty() {
        initial.insert(0, Initial { state: START.into(), args: vec![] });
    }
    for i in &initial {
        add(&i.state, &mut states);
    }
    Ok(IoAutomaton { role: role.into(), states, initial, transitions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msr::parse_model;

    #[test]
    fn mac_alice_has_two_loops() {
        let m = parse_model(include_str!("../../corpus/models/mac.msr")).unwrap();
        let a = role_iospec(&m, "Alice").unwrap();
        assert_eq!(a.initial, vec![Initial { state: "Alice_1".into(), args: m.rules[0].conclusions[0].args.clone() }]);
        assert_eq!(a.loops(), BTreeSet::from(["Alice_1"]));
        assert_eq!(a.outgoing("Alice_1").count(), 2);
        let send = &a.transitions[0];
        assert_eq!(send.events.len(), 2);
        assert_eq!(send.events[1].pattern.to_string(), "<msg, sign(msg, psk)>");
    }

    #[test]
    fn empty_role_has_only_the_start_state() {
        let a = role_iospec(&parse_model("").unwrap(), "Nobody").unwrap();
        assert_eq!(a.states, vec![START.to_string()]);
        assert!(a.transitions.is_empty());
    }

    #[test]
    fn initiator_has_three_phases() {
        let m = parse_model(include_str!("../../corpus/models/signed_dh.msr")).unwrap();
        let a = role_iospec(&m, "Init").unwrap();
        let chain: Vec<(&str, &str)> = a.transitions.iter().map(|t| (t.from.as_str(), t.to.as_str())).collect();
        assert_eq!(chain, [(START, "Init_1"), ("Init_1", "Init_2"), ("Init_2", "Init_2"), ("Init_2", "Init_2")]);
        assert_eq!(a.transitions[0].events[0].dir, Dir::Out);
        assert_eq!(a.transitions[1].events[0].dir, Dir::In);
        assert_eq!(a.transitions[1].guards.len(), 1);
    }

    #[test]
    fn branching_state_facts_are_rejected() {
        let m = parse_model("rule R_1: [ Fr(~x) ] --> [ R_a(~x), R_b(~x) ]").unwrap();
        assert!(matches!(role_iospec(&m, "R"), Err(IoSpecError::Conclusions { n: 2, .. })));
    }
}
