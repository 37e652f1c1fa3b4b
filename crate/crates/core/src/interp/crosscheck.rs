//! Dynamic validation of the static heap facts against observed states.

use serde::{Deserialize, Serialize};

use super::{Addr, Observation, Tid};
use crate::escape::{EscapeMap, Point};
use crate::lang::ValidProgram;
use crate::passthrough::{compute_passthrough, PassMap};
use crate::points_to::{compute_points_to, PtsMap, Site};
use crate::compute_escape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    /// The site of every address a variable holds is in its points-to set.
    PointsTo,
    /// A variable judged local is reachable by its thread alone.
    Local,
    /// Ghost membership matches who can reach an application cell.
    Ghost,
    /// A local handle to a Core instance is in the thread's instance set.
    Instance,
    /// Cells nobody can reach hold no ghost permission.
    Unreachable,
}

impl Check {
    pub fn name(self) -> &'static str {
        match self {
            Check::PointsTo => "points-to",
            Check::Local => "local",
            Check::Ghost => "ghost",
            Check::Instance => "instance",
            Check::Unreachable => "unreachable",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CrossViolation {
    pub check: Check,
    pub tid: Tid,
    pub point: Point,
    pub addr: Addr,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct Statics {
    pub pts: PtsMap,
    pub esc: EscapeMap,
    pub pass: PassMap,
}

impl Statics {
    pub fn compute(p: &ValidProgram) -> Statics {
        let pts = compute_points_to(p);
        let esc = compute_escape(p, &pts);
        let pass = compute_passthrough(p, &pts);
        Statics { pts, esc, pass }
    }
}

fn site_name(obs: &Observation, a: Addr) -> String {
    obs.sites.get(&a).map(Site::to_string).unwrap_or_else(|| format!("@{a}"))
}

/// Checks one observed state against the static facts.
pub fn crosscheck_static(st: &Statics, obs: &Observation) -> Vec<CrossViolation> {
    let mut out = Vec::new();
    let t = obs.tid;
    let p = obs.point;
    let mut bad = |check: Check, addr: Addr, message: String| {
        out.push(CrossViolation { check, tid: t, point: p, addr, message });
    };
    let only_t = |a: Addr| obs.access.get(&a).is_some_and(|s| s.len() == 1 && s.contains(&t));
    for (x, &a) in &obs.vars {
        let site = obs.sites[&a];
        let pts = st.pts.var(x);
        if !pts.contains(&site) {
            bad(Check::PointsTo, a, format!("`{x}` holds {site}, not in its points-to set"));
        }
        if pts.is_empty() {
            continue;
        }
        let local = st.esc.is_local(&st.pts, x, p);
        if local && !only_t(a) {
            bad(Check::Local, a, format!("`{x}` is judged local but {site} is reachable by other threads"));
        }
        if local && pts.iter().all(|s| st.pass.pt_core(*s, p)) && !obs.sih.contains(&a) {
            bad(Check::Instance, a, format!("local instance handle `{x}` is missing from sih"));
        }
    }
    for (&a, who) in &obs.access {
        if !who.contains(&t) || !matches!(obs.sites[&a], Site::Alloc(_) | Site::CoreRet(..)) {
            continue;
        }
        let in_slh = obs.slh.contains(&a);
        let in_sgh = obs.sgh.contains(&a);
        if only_t(a) != in_slh {
            bad(Check::Ghost, a, format!("{}: exclusive={} but in slh={in_slh}", site_name(obs, a), only_t(a)));
        }
        if (who.len() > 1) != in_sgh {
            bad(Check::Ghost, a, format!("{}: shared={} but in sgh={in_sgh}", site_name(obs, a), who.len() > 1));
        }
    }
    for &a in &obs.all_ghost {
        if !obs.access.contains_key(&a) {
            bad(Check::Unreachable, a, format!("unreachable {} holds a permission", site_name(obs, a)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ghost::instrument;
    use crate::interp::{replay, Contract, Event, RunConfig};
    use crate::lang::{parse_program, Label};

    fn check(src: &str, schedule: &[Tid], tweak: impl FnOnce(&mut Statics)) -> Vec<CrossViolation> {
        let p = ValidProgram::new(parse_program(src).unwrap()).unwrap();
        let mut st = Statics::compute(&p);
        tweak(&mut st);
        let cfg = RunConfig { observe: true, ..RunConfig::default() };
        let r = replay(&instrument(&p), &Contract::default(), &cfg, schedule);
        r.trace
            .iter()
            .filter_map(|e| match e {
                Event::Observe(o) => Some(crosscheck_static(&st, o)),
                _ => None,
            })
            .flatten()
            .collect()
    }

    const SRC: &str = "core_api 0 f call\nL1: c := core_alloc()\nL2: x := new()\nL3: y := new()\n\
                       L4: fork(x) {\nL5: v := *x\n}\nL6: core_call 0 on c (y)";

    #[test]
    fn sound_facts_pass() {
        assert_eq!(check(SRC, &[0, 0, 0, 0, 1, 0], |_| {}), vec![]);
        assert_eq!(check(SRC, &[0, 0, 0, 0, 0, 1], |_| {}), vec![]);
    }

    #[test]
    fn weakened_points_to_is_caught() {
        let v = check(SRC, &[0, 0, 0, 0, 1, 0], |st| st.pts.weaken("y", Site::Alloc(Label(3))));
        assert!(v.iter().any(|v| v.check == Check::PointsTo), "{v:?}");
    }

    #[test]
    fn forced_locality_is_caught() {
        let v = check(SRC, &[0, 0, 0, 0, 1, 0], |st| st.esc.force_local(Site::Alloc(Label(2))));
        assert!(v.iter().any(|v| v.check == Check::Local), "{v:?}");
    }
}
