//! Scripted Core behaviour.
//!
//! A contract says what a Core body does when the application invokes it:
//! which names the constructor binds, which protocol events each API emits
//! and what it returns. Terms may mention `argN` (the argument value),
//! `*argN` (the contents of the cell it points to), names bound by the
//! constructor and fresh names, which are made unique per instance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::msr::Term;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dir {
    /// Network input.
    In,
    /// Network output.
    Out,
    /// Data handed from the application to the Core.
    Vin,
    /// Data handed from the Core to the application.
    Vout,
}

impl Dir {
    pub fn name(self) -> &'static str {
        match self {
            Dir::In => "in",
            Dir::Out => "out",
            Dir::Vin => "vin",
            Dir::Vout => "vout",
        }
    }

    /// The network direction the event stands for in a role specification.
    pub fn as_network(self) -> Dir {
        match self {
            Dir::Vin => Dir::In,
            Dir::Vout => Dir::Out,
            d => d,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSpec {
    pub dir: Dir,
    /// Omitted when `ret` names the return slot carrying the payload.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub term: Option<Term>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ret: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CtorSpec {
    pub bind: BTreeMap<String, Term>,
    pub events: Vec<EventSpec>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApiSpec {
    pub events: Vec<EventSpec>,
    pub rets: Vec<Term>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Contract {
    pub name: String,
    pub ctor: CtorSpec,
    pub apis: BTreeMap<String, ApiSpec>,
}

impl Contract {
    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn api(&self, name: &str) -> Option<&ApiSpec> {
        self.apis.get(name)
    }
}

/// Replaces fresh names by per-instance ones.
pub fn freshen(t: &Term, rid: u32) -> Term {
    match t {
        Term::Fresh(n) => Term::Fresh(format!("{n}_{rid}")),
        Term::App(f, a) => Term::App(*f, a.iter().map(|x| freshen(x, rid)).collect()),
        other => other.clone(),
    }
}
