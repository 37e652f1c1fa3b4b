//! Multiset rewriting with a symbolic attacker.

pub mod explore;
pub mod iospec;
pub mod model;
pub mod sim;
pub mod term;

pub use model::{apply_rule, parse_model, Applied, ApplyError, Builtin, Fact, Model, ModelError, Rule, State};
pub use term::{parse_term, Fun, Subst, Term, TermError};
pub use explore::{expand_witness, explore_traces, replay_steps, ExplicitStep, Knowledge, Query, Verdict, WitnessStep};
pub use sim::{abstract_step, random_trace, rename_state, rule_instances, simulate_independent, SimFailure, SimReport};
pub use iospec::{role_iospec, Initial, IoAutomaton, IoEvent, IoSpecError, Transition};
