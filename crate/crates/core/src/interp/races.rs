//! Happens-before race detection over recorded heap accesses.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Addr, Event, Tid};
use crate::lang::Label;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RaceEnd {
    pub tid: Tid,
    pub label: Label,
    pub write: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Race {
    pub addr: Addr,
    pub first: RaceEnd,
    pub second: RaceEnd,
}

struct Access<'a> {
    tid: Tid,
    label: Label,
    addr: Addr,
    write: bool,
    atomic: bool,
    clock: &'a [u32],
}

fn before(a: &Access, b: &Access) -> bool {
    a.clock.get(a.tid).copied().unwrap_or(0) <= b.clock.get(a.tid).copied().unwrap_or(0)
}

/// Pairs of conflicting accesses unordered by fork edges. Two accesses made
/// atomically by Core bodies never race with each other.
pub fn detect_races(trace: &[Event]) -> Vec<Race> {
    let acc: Vec<Access> = trace
        .iter()
        .filter_map(|e| match e {
            Event::Access { tid, label, addr, write, atomic, clock } => Some(Access {
                tid: *tid,
                label: *label,
                addr: *addr,
                write: *write,
                atomic: *atomic,
                clock,
            }),
            _ => None,
        })
        .collect();
    let mut out = BTreeSet::new();
    for (i, a) in acc.iter().enumerate() {
        for b in &acc[i + 1..] {
            if a.tid == b.tid || a.addr != b.addr || !(a.write || b.write) || (a.atomic && b.atomic) {
                continue;
            }
            if !before(a, b) {
                out.insert(Race {
                    addr: a.addr,
                    first: RaceEnd { tid: a.tid, label: a.label, write: a.write },
                    second: RaceEnd { tid: b.tid, label: b.label, write: b.write },
                });
            }
        }
    }
    out.into_iter().collect()
}
