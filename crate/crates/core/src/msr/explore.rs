//! Bounded search for attacks.
//!
//! The search advances by role-rule applications. Sent messages go straight
//! into attacker knowledge and a role input is enabled whenever the attacker
//! can derive the message, so one search step stands for a role step plus
//! the attacker steps it needs. Inputs with unconstrained parts are drawn
//! from the known messages and known atomic names. Witnesses expand back
//! into explicit rule sequences that [`apply_rule`] validates.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::{apply_rule, ApplyError, Builtin, Fact, Model, Rule, State};
use super::term::{Fun, Subst, Term};

/// Messages the attacker can obtain by decomposition.
#[derive(Clone, Debug, Default)]
pub struct Knowledge {
    known: BTreeSet<Term>,
}

impl Knowledge {
    pub fn new<'a>(terms: impl IntoIterator<Item = &'a Term>) -> Knowledge {
        let mut k = Knowledge { known: terms.into_iter().cloned().collect() };
        loop {
            let mut new = Vec::new();
            for t in &k.known {
                match t {
                    Term::App(Fun::Pair, a) => new.extend(a.iter().cloned()),
                    Term::App(Fun::Senc, a) if k.derivable(&a[1]) => new.push(a[0].clone()),
                    Term::App(Fun::Aenc, a) => {
                        if let Term::App(Fun::Pk, sk) = &a[1] {
                            if k.derivable(&sk[0]) {
                                new.push(a[0].clone());
                            }
                        }
                    }
                    _ => {}
                }
            }
            new.retain(|t| !k.known.contains(t));
            if new.is_empty() {
                return k;
            }
            k.known.extend(new);
        }
    }

    pub fn derivable(&self, t: &Term) -> bool {
        self.known.contains(t)
            || match t {
                Term::Pub(_) => true,
                Term::App(_, a) => a.iter().all(|x| self.derivable(x)),
                _ => false,
            }
    }

    pub fn terms(&self) -> impl Iterator<Item = &Term> {
        self.known.iter()
    }

    pub fn atoms(&self) -> impl Iterator<Item = &Term> {
        self.known.iter().filter(|t| matches!(t, Term::Pub(_) | Term::Fresh(_)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Query {
    /// No `Secret(x)` is ever followed by attacker knowledge of `x`,
    /// unless some `Corrupt` action happened.
    Secrecy,
    /// Every `Commit(..)` is matched by a distinct `Running(..)` with the
    /// same arguments, unless one of them was corrupted.
    Agreement,
}

impl std::str::FromStr for Query {
    type Err = String;
    fn from_str(s: &str) -> Result<Query, String> {
        match s {
            "secrecy" => Ok(Query::Secrecy),
            "agreement" => Ok(Query::Agreement),
            _ => Err(format!("unknown query `{s}` (expected secrecy or agreement)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WitnessStep {
    pub rule: String,
    pub binding: Subst,
    /// Messages the attacker injected for the rule's inputs.
    pub inputs: Vec<Term>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub query: Query,
    pub bound: usize,
    pub attack: bool,
    pub states: usize,
    pub violation: Option<String>,
    pub witness: Vec<WitnessStep>,
}

impl Verdict {
    pub fn summary(&self) -> String {
        match &self.violation {
            Some(v) => format!("attack found at depth {}: {v}", self.witness.len()),
            None => "no attack within bound".to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct Node {
    state: State,
    acts: BTreeMap<Fact, usize>,
    /// Set once a step outside the setup rules has been taken.
    started: bool,
}

fn mint_fresh(base: &str, taken: &BTreeSet<Term>) -> Term {
    (0..).map(|k| Term::Fresh(format!("{base}{k}"))).find(|t| !taken.contains(t)).expect("unbounded")
}

fn mint_pub(taken: &BTreeSet<Term>) -> Term {
    (0..).map(|k| Term::Pub(format!("p{k}"))).find(|t| !taken.contains(t)).expect("unbounded")
}

/// All ways to match `pats` against facts of `s`, extending `sub`.
pub fn match_premises(pats: &[Fact], s: &State, sub: &Subst) -> Vec<Subst> {
    let Some((first, rest)) = pats.split_first() else {
        return vec![sub.clone()];
    };
    let mut out = Vec::new();
    for (f, _) in s.facts() {
        let mut b = sub.clone();
        if first.matches(f, &mut b) {
            out.extend(match_premises(rest, s, &b));
        }
    }
    out
}

fn unbound(t: &Term, b: &Subst) -> Vec<String> {
    let mut vs = Vec::new();
    t.vars(&mut vs);
    vs.retain(|v| !b.contains_key(v));
    vs
}

/// Bindings for the free variables of an input pattern. Pairs are matched
/// component-wise since the attacker can build any pair of derivable terms.
/// A variable standing for the whole input ranges over atoms only; nested
/// ones also range over the analysed knowledge.
fn input_candidates(pat: &Term, b: &Subst, know: &Knowledge, pool: &[Term], acts: &[Fact], top: bool) -> Vec<Subst> {
    let pat = pat.subst(b);
    if pat.is_ground() {
        return vec![b.clone()];
    }
    match &pat {
        Term::Var(v) if top => assignments(std::slice::from_ref(v), pool, b),
        Term::Var(v) if signature_for(v, b, acts).is_some() => {
            let mut nb = b.clone();
            nb.insert(v.clone(), signature_for(v, b, acts).expect("checked"));
            vec![nb]
        }
        Term::Var(v) => {
            let mut terms: Vec<Term> = pool.to_vec();
            terms.extend(know.terms().cloned());
            terms.sort();
            terms.dedup();
            assignments(std::slice::from_ref(v), &terms, b)
        }
        Term::App(Fun::Pair, a) => input_candidates(&a[0], b, know, pool, acts, false)
            .iter()
            .flat_map(|b1| input_candidates(&a[1], b1, know, pool, acts, false))
            .collect(),
        _ => {
            let mut cands = Vec::new();
            for u in know.terms() {
                let mut nb = b.clone();
                if pat.matches(u, &mut nb) {
                    cands.push(nb);
                }
            }
            let free = unbound(&pat, b);
            if free.len() <= 3 {
                cands.extend(assignments(&free, pool, b));
            }
            cands
        }
    }
}

/// The one value of `v` passing a restriction `verify(v, m, pk(k)) = true()`
/// once `m` and `k` are bound.
fn signature_for(v: &str, b: &Subst, acts: &[Fact]) -> Option<Term> {
    acts.iter().filter(|a| a.name == "Eq" && a.args.len() == 2).find_map(|a| {
        let (lhs, rhs) = (&a.args[0], &a.args[1]);
        let Term::App(Fun::Verify, x) = lhs else { return None };
        if *rhs != Term::app(Fun::True, vec![]) || x[0] != Term::var(v) {
            return None;
        }
        let Term::App(Fun::Pk, k) = x[2].subst(b) else { return None };
        let m = x[1].subst(b);
        (m.is_ground() && k[0].is_ground()).then(|| Term::app(Fun::Sign, vec![m, k[0].clone()]))
    })
}

fn assignments(vars: &[String], pool: &[Term], b: &Subst) -> Vec<Subst> {
    let Some((v, rest)) = vars.split_first() else {
        return vec![b.clone()];
    };
    let mut out = Vec::new();
    for t in pool {
        let mut nb = b.clone();
        nb.insert(v.clone(), t.clone());
        out.extend(assignments(rest, pool, &nb));
    }
    out
}

/// Instances of `r` enabled in `s` under the symbolic attacker.
pub fn role_steps(model: &Model, r: &Rule, s: &State, know: &Knowledge) -> Vec<(WitnessStep, State, Vec<Fact>)> {
    let fixed: Vec<Fact> = r.premises.iter().filter(|f| f.name != "In" && f.name != "Fr").cloned().collect();
    let mut taken = s.names();
    taken.extend(model.pubs.iter().cloned());
    let mut pool: Vec<Term> = know.atoms().cloned().collect();
    pool.extend(model.pubs.iter().cloned());
    pool.sort();
    pool.dedup();
    let mut out = Vec::new();
    for mut b in match_premises(&fixed, s, &Subst::new()) {
        let mut minted = taken.clone();
        for f in r.premises.iter().filter(|f| f.name == "Fr") {
            if let Some(Term::Var(v)) = f.args.first() {
                if !b.contains_key(v) {
                    let n = mint_fresh(v.trim_start_matches('~'), &minted);
                    minted.insert(n.clone());
                    b.insert(v.clone(), n);
                }
            }
        }
        let mut partial = vec![(b, Vec::new())];
        for f in r.premises.iter().filter(|f| f.name == "In") {
            let mut next = Vec::new();
            for (b, ins) in &partial {
                let pat = f.args[0].subst(b);
                let cands = input_candidates(&pat, b, know, &pool, &r.actions, true);
                for nb in cands {
                    let msg = pat.subst(&nb).normalize();
                    if msg.is_ground() && know.derivable(&msg) {
                        let mut nins = ins.clone();
                        nins.push(msg);
                        next.push((nb, nins));
                    }
                }
            }
            partial = next;
        }
        for (b, ins) in partial {
            let pubs: Vec<String> = r.vars().into_iter().filter(|v| v.starts_with('$') && !b.contains_key(v)).collect();
            let mut ppool: Vec<Term> = taken.iter().filter(|t| matches!(t, Term::Pub(_))).cloned().collect();
            ppool.push(mint_pub(&taken));
            for full in assignments(&pubs, &ppool, &b) {
                let refuted = r.actions.iter().filter(|a| a.name == "Eq" && a.args.len() == 2).any(|a| {
                    let a = a.subst(&full);
                    a.is_ground() && a.args[0] != a.args[1]
                });
                if refuted {
                    continue;
                }
                let mut pre = s.clone();
                for m in &ins {
                    pre.insert(Fact::new("In", vec![m.clone()]));
                }
                for f in r.premises.iter().filter(|f| f.name == "Fr") {
                    pre.insert(f.subst(&full));
                }
                let Ok(done) = apply_rule(&pre, r, &full) else { continue };
                let mut st = State::new();
                for (f, n) in done.state.facts() {
                    for _ in 0..n {
                        if f.name == "Out" {
                            st.insert(Fact::new("K", f.args.clone()));
                        } else {
                            st.insert(f.clone());
                        }
                    }
                }
                let step = WitnessStep { rule: r.name.clone(), binding: full, inputs: ins.clone() };
                out.push((step, st, done.actions));
            }
        }
    }
    out
}

fn violation(query: Query, n: &Node) -> Option<String> {
    let corrupted: BTreeSet<&Term> =
        n.acts.keys().filter(|f| f.name == "Corrupt").flat_map(|f| f.args.iter()).collect();
    match query {
        Query::Secrecy => {
            if !corrupted.is_empty() {
                return None;
            }
            let know = Knowledge::new(n.state.knowledge());
            n.acts
                .keys()
                .filter(|f| f.name == "Secret")
                .find(|f| know.derivable(&f.args[0]))
                .map(|f| format!("attacker knows {}", f.args[0]))
        }
        Query::Agreement => n
            .acts
            .iter()
            .filter(|(f, _)| f.name == "Commit")
            .find(|(f, c)| {
                let running = n.acts.get(&Fact::new("Running", f.args.clone())).copied().unwrap_or(0);
                **c > running && !f.args.iter().any(|a| corrupted.contains(a))
            })
            .map(|(f, _)| format!("{f} has no matching Running")),
    }
}

/// Names that carry no meaning of their own: fresh names and public names
/// the search invented.
fn is_name(t: &Term, fixed: &BTreeSet<Term>) -> bool {
    matches!(t, Term::Fresh(_)) || (matches!(t, Term::Pub(_)) && !fixed.contains(t))
}

fn fresh_seq(t: &Term, fixed: &BTreeSet<Term>, out: &mut Vec<Term>) {
    match t {
        Term::App(_, a) => a.iter().for_each(|x| fresh_seq(x, fixed, out)),
        t if is_name(t, fixed) => out.push(t.clone()),
        _ => {}
    }
}

fn skeleton(t: &Term, fixed: &BTreeSet<Term>) -> Term {
    match t {
        Term::Fresh(_) => Term::Fresh("_".into()),
        Term::App(f, a) => Term::App(*f, a.iter().map(|x| skeleton(x, fixed)).collect()),
        t if is_name(t, fixed) => Term::Pub("#".into()),
        t => t.clone(),
    }
}

fn rename(t: &Term, map: &BTreeMap<Term, Term>) -> Term {
    match t {
        Term::App(f, a) => Term::App(*f, a.iter().map(|x| rename(x, map)).collect()),
        t => map.get(t).cloned().unwrap_or_else(|| t.clone()),
    }
}

/// Where a name occurs: fact skeleton, argument position, multiplicity and
/// the colours of the names next to it.
type Occurrence<'a> = (&'a str, usize, usize, Vec<usize>);

/// Renames fresh names by their role in the state so that states differing
/// only in the choice of fresh names coincide. Names are coloured by the
/// shapes of the facts they occur in, refined by the colours of the names
/// they co-occur with. Remaining ties keep the original order, so some
/// isomorphic states stay apart, but distinct states never merge.
fn canonical(n: &Node, fixed: &BTreeSet<Term>) -> Node {
    let mut shapes: Vec<(String, Vec<Term>, usize)> = Vec::new();
    for (f, m, act) in n.state.facts().map(|(f, m)| (f, m, false)).chain(n.acts.iter().map(|(f, m)| (f, *m, true))) {
        let mut occ = Vec::new();
        f.args.iter().for_each(|a| fresh_seq(a, fixed, &mut occ));
        if occ.is_empty() {
            continue;
        }
        let sk = format!("{}{}{:?}", if act { "@" } else { "" }, f.name, f.args.iter().map(|a| skeleton(a, fixed)).collect::<Vec<_>>());
        shapes.push((sk, occ, m));
    }
    let names: BTreeSet<&Term> = shapes.iter().flat_map(|(_, o, _)| o).collect();
    let mut color: BTreeMap<&Term, usize> = names.iter().map(|n| (*n, usize::from(matches!(n, Term::Pub(_))))).collect();
    let mut classes = color.values().collect::<BTreeSet<_>>().len();
    loop {
        let mut sig: BTreeMap<&Term, Vec<Occurrence>> = BTreeMap::new();
        for (sk, occ, m) in &shapes {
            let cols: Vec<usize> = occ.iter().map(|x| color[x]).collect();
            for (pos, name) in occ.iter().enumerate() {
                sig.entry(name).or_default().push((sk, pos, *m, cols.clone()));
            }
        }
        let mut keyed: Vec<((usize, Vec<Occurrence>), &Term)> = sig
            .into_iter()
            .map(|(name, mut v)| {
                v.sort();
                ((color[name], v), name)
            })
            .collect();
        keyed.sort();
        let mut next = BTreeMap::new();
        let mut c = 0;
        for i in 0..keyed.len() {
            if i > 0 && keyed[i].0 != keyed[i - 1].0 {
                c += 1;
            }
            next.insert(keyed[i].1, c);
        }
        let count = if keyed.is_empty() { 0 } else { c + 1 };
        color = next;
        if count == classes {
            break;
        }
        classes = count;
    }
    let mut order: Vec<(usize, &Term)> = color.iter().map(|(n, c)| (*c, *n)).collect();
    order.sort();
    let map: BTreeMap<Term, Term> = order
        .into_iter()
        .enumerate()
        .map(|(i, (_, name))| {
            let to = match name {
                Term::Fresh(_) => Term::Fresh(format!("c{i}")),
                _ => Term::Pub(format!("#{i}")),
            };
            (name.clone(), to)
        })
        .collect();
    let rn = |f: &Fact| Fact { name: f.name.clone(), args: f.args.iter().map(|a| rename(a, &map)).collect() };
    let mut state = State::new();
    for (f, m) in n.state.facts() {
        for _ in 0..m {
            state.insert(rn(f));
        }
    }
    Node { state, acts: n.acts.iter().map(|(f, m)| (rn(f), *m)).collect(), started: n.started }
}

/// Rules that only read fresh names and persistent facts made by other such
/// rules, and only produce persistent facts and outputs. Their steps can be
/// moved before any other step of a trace without changing its actions, so
/// the search schedules them first.
fn setup_rules(model: &Model) -> BTreeSet<String> {
    let produces_only_persistent =
        |r: &Rule| r.conclusions.iter().all(|f| f.persistent() || f.name == "Out");
    let mut set: BTreeSet<String> = model.rules.iter().filter(|r| produces_only_persistent(r)).map(|r| r.name.clone()).collect();
    loop {
        let made: BTreeSet<&str> = model
            .rules
            .iter()
            .filter(|r| set.contains(&r.name))
            .flat_map(|r| r.conclusions.iter().map(|f| f.name.as_str()))
            .collect();
        let others: BTreeSet<&str> = model
            .rules
            .iter()
            .filter(|r| !set.contains(&r.name))
            .flat_map(|r| r.conclusions.iter().map(|f| f.name.as_str()))
            .collect();
        let keep: BTreeSet<String> = set
            .iter()
            .filter(|name| {
                let r = model.rules.iter().find(|r| &&r.name == name).expect("rule");
                r.premises.iter().all(|f| {
                    f.name == "Fr" || (f.persistent() && made.contains(f.name.as_str()) && !others.contains(f.name.as_str()))
                })
            })
            .cloned()
            .collect();
        if keep == set {
            return set;
        }
        set = keep;
    }
}

/// Whether repeating an action can change the verdict.
fn matters(query: Query, a: &Fact) -> bool {
    query == Query::Agreement && (a.name == "Commit" || a.name == "Running")
}

/// Breadth-first search over role steps up to `bound`; returns the first
/// (shallowest) violation found.
pub fn explore_traces(model: &Model, query: Query, bound: usize) -> Verdict {
    let setup = setup_rules(model);
    let root = Node { state: State::new(), acts: BTreeMap::new(), started: false };
    let mut nodes: Vec<(Node, Option<(usize, WitnessStep)>)> = vec![(root.clone(), None)];
    let mut seen: HashSet<Node> = HashSet::from([root]);
    let mut queue = VecDeque::from([(0usize, 0usize)]);
    let mut found = None;
    'search: while let Some((i, depth)) = queue.pop_front() {
        if depth >= bound {
            continue;
        }
        let node = nodes[i].0.clone();
        let know = Knowledge::new(node.state.knowledge());
        for r in &model.rules {
            let is_setup = setup.contains(&r.name);
            if is_setup && node.started {
                continue;
            }
            for (step, state, acts) in role_steps(model, r, &node.state, &know) {
                if state == node.state && acts.iter().all(|a| node.acts.contains_key(a) && !matters(query, a)) {
                    continue;
                }
                let mut n = Node { state, acts: node.acts.clone(), started: node.started || !is_setup };
                for a in acts {
                    *n.acts.entry(a).or_default() += 1;
                }
                let key = canonical(&n, &model.pubs);
                if seen.contains(&key) {
                    continue;
                }
                let v = violation(query, &n);
                nodes.push((n.clone(), Some((i, step))));
                let j = nodes.len() - 1;
                seen.insert(key);
                if let Some(v) = v {
                    found = Some((j, v));
                    break 'search;
                }
                queue.push_back((j, depth + 1));
            }
        }
    }
    let mut witness = Vec::new();
    let violation = found.map(|(mut j, v)| {
        while let Some((p, step)) = &nodes[j].1 {
            witness.push(step.clone());
            j = *p;
        }
        witness.reverse();
        v
    });
    Verdict { query, bound, attack: violation.is_some(), states: nodes.len(), violation, witness }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplicitStep {
    pub rule: String,
    pub binding: Subst,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("step {index}: unknown rule `{rule}`")]
    UnknownRule { index: usize, rule: String },
    #[error("step {index} ({rule}): {source}")]
    Apply { index: usize, rule: String, source: ApplyError },
    #[error("cannot derive {0}")]
    Underivable(String),
}

struct Expander<'m> {
    model: &'m Model,
    state: State,
    steps: Vec<ExplicitStep>,
}

impl Expander<'_> {
    fn apply(&mut self, rule: Rule, binding: Subst) -> Result<(), ReplayError> {
        let index = self.steps.len();
        let a = apply_rule(&self.state, &rule, &binding).map_err(|source| ReplayError::Apply {
            index,
            rule: rule.name.clone(),
            source,
        })?;
        self.state = a.state;
        self.steps.push(ExplicitStep { rule: rule.name, binding });
        Ok(())
    }

    fn known(&self, t: &Term) -> bool {
        self.state.contains(&Fact::new("K", vec![t.clone()]))
    }

    fn app(&mut self, f: Fun, args: &[Term]) -> Result<(), ReplayError> {
        let b = args.iter().enumerate().map(|(i, a)| (format!("x{i}"), a.clone())).collect();
        self.apply(Builtin::App(f).rule(), b)
    }

    fn synth(&mut self, t: &Term) -> Result<(), ReplayError> {
        if self.known(t) {
            return Ok(());
        }
        match t {
            Term::Pub(_) => self.apply(Builtin::Pub.rule(), [("$x".to_string(), t.clone())].into()),
            Term::App(f, args) => {
                for a in args {
                    self.synth(a)?;
                }
                self.app(*f, args)
            }
            _ => Err(ReplayError::Underivable(t.to_string())),
        }
    }

    /// Decomposes known messages until nothing new appears.
    fn analyze(&mut self) -> Result<(), ReplayError> {
        loop {
            let know = Knowledge::new(self.state.knowledge());
            let ks: Vec<Term> = self.state.knowledge().cloned().collect();
            let mut progressed = false;
            for u in ks {
                match &u {
                    Term::App(Fun::Pair, a) => {
                        for (f, part) in [(Fun::Fst, &a[0]), (Fun::Snd, &a[1])] {
                            if !self.known(part) {
                                self.app(f, std::slice::from_ref(&u))?;
                                progressed = true;
                            }
                        }
                    }
                    Term::App(Fun::Senc, a) if !self.known(&a[0]) && know.derivable(&a[1]) => {
                        self.synth(&a[1])?;
                        self.app(Fun::Sdec, &[u.clone(), a[1].clone()])?;
                        progressed = true;
                    }
                    Term::App(Fun::Aenc, a) => {
                        if let Term::App(Fun::Pk, sk) = &a[1] {
                            if !self.known(&a[0]) && know.derivable(&sk[0]) {
                                self.synth(&sk[0])?;
                                self.app(Fun::Adec, &[u.clone(), sk[0].clone()])?;
                                progressed = true;
                            }
                        }
                    }
                    _ => {}
                }
            }
            if !progressed {
                return Ok(());
            }
        }
    }

    fn role_step(&mut self, w: &WitnessStep) -> Result<(), ReplayError> {
        let rule = self.model.rule(&w.rule).ok_or_else(|| ReplayError::UnknownRule {
            index: self.steps.len(),
            rule: w.rule.clone(),
        })?;
        for f in rule.premises.iter().filter(|f| f.name == "Fr") {
            let n = f.args[0].subst(&w.binding);
            self.apply(Builtin::Fresh.rule(), [("~x".to_string(), n)].into())?;
        }
        for m in &w.inputs {
            self.analyze()?;
            self.synth(m)?;
            self.apply(Builtin::In.rule(), [("x".to_string(), m.clone())].into())?;
        }
        self.apply(rule.clone(), w.binding.clone())?;
        for f in rule.conclusions.iter().filter(|f| f.name == "Out") {
            let m = f.args[0].subst(&w.binding).normalize();
            self.apply(Builtin::Out.rule(), [("x".to_string(), m)].into())?;
        }
        Ok(())
    }
}

/// Expands a search witness into explicit rule applications, including the
/// attacker's deduction steps.
pub fn expand_witness(model: &Model, witness: &[WitnessStep]) -> Result<Vec<ExplicitStep>, ReplayError> {
    let mut e = Expander { model, state: State::new(), steps: Vec::new() };
    for w in witness {
        e.role_step(w)?;
    }
    Ok(e.steps)
}

/// Replays explicit steps from the empty state; returns the final state and
/// the action trace.
pub fn replay_steps(model: &Model, steps: &[ExplicitStep]) -> Result<(State, Vec<Fact>), ReplayError> {
    let mut s = State::new();
    let mut trace = Vec::new();
    for (index, st) in steps.iter().enumerate() {
        let rule = model.rule(&st.rule).ok_or_else(|| ReplayError::UnknownRule { index, rule: st.rule.clone() })?;
        let a = apply_rule(&s, &rule, &st.binding).map_err(|source| ReplayError::Apply {
            index,
            rule: st.rule.clone(),
            source,
        })?;
        s = a.state;
        trace.extend(a.actions);
    }
    Ok((s, trace))
}
