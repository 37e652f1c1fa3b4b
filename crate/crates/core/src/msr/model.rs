//! Facts, multiset states, rewrite rules and the textual model format.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Serialize, Serializer};
use thiserror::Error;

use super::term::{Fun, Subst, Term, TermError, TermParser};

/// Hidden persistent fact recording `Once` restrictions.
const ONCE: &str = "!_once";

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fact {
    pub name: String,
    pub args: Vec<Term>,
}

impl Fact {
    pub fn new(name: &str, args: Vec<Term>) -> Fact {
        Fact { name: name.to_string(), args }
    }

    /// Persistent facts survive being matched by a premise.
    pub fn persistent(&self) -> bool {
        self.name.starts_with('!') || self.name == "K" || self.name == "ind"
    }

    pub fn subst(&self, s: &Subst) -> Fact {
        Fact { name: self.name.clone(), args: self.args.iter().map(|a| a.subst(s).normalize()).collect() }
    }

    pub fn vars(&self, out: &mut Vec<String>) {
        self.args.iter().for_each(|a| a.vars(out));
    }

    pub fn is_ground(&self) -> bool {
        self.args.iter().all(Term::is_ground)
    }

    /// Extends `s` so that this pattern instantiates to `f`.
    pub fn matches(&self, f: &Fact, s: &mut Subst) -> bool {
        if self.name != f.name || self.args.len() != f.args.len() {
            return false;
        }
        let saved = s.clone();
        if self.args.iter().zip(&f.args).all(|(p, t)| p.matches(t, s)) {
            return true;
        }
        *s = saved;
        false
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.name)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str(")")
    }
}

impl Serialize for Fact {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// A multiset of facts. Persistent facts are kept as a set.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct State {
    linear: BTreeMap<Fact, usize>,
    persistent: BTreeSet<Fact>,
}

impl State {
    pub fn new() -> State {
        State::default()
    }

    pub fn insert(&mut self, f: Fact) {
        if f.persistent() {
            self.persistent.insert(f);
        } else {
            *self.linear.entry(f).or_default() += 1;
        }
    }

    /// Removes one copy of a linear fact; persistent facts are only checked.
    pub fn take(&mut self, f: &Fact) -> bool {
        if f.persistent() {
            return self.persistent.contains(f);
        }
        match self.linear.get_mut(f) {
            Some(n) if *n > 1 => {
                *n -= 1;
                true
            }
            Some(_) => {
                self.linear.remove(f);
                true
            }
            None => false,
        }
    }

    pub fn count(&self, f: &Fact) -> usize {
        if f.persistent() {
            self.persistent.contains(f) as usize
        } else {
            self.linear.get(f).copied().unwrap_or(0)
        }
    }

    pub fn contains(&self, f: &Fact) -> bool {
        self.count(f) > 0
    }

    /// Every fact with its multiplicity.
    pub fn facts(&self) -> impl Iterator<Item = (&Fact, usize)> {
        self.persistent.iter().map(|f| (f, 1)).chain(self.linear.iter().map(|(f, n)| (f, *n)))
    }

    pub fn len(&self) -> usize {
        self.persistent.len() + self.linear.values().sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Terms the attacker knows.
    pub fn knowledge(&self) -> impl Iterator<Item = &Term> {
        self.persistent.iter().filter(|f| f.name == "K").map(|f| &f.args[0])
    }

    pub fn canonical_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.hash(&mut h);
        h.finish()
    }

    /// Constants occurring anywhere in the state.
    pub fn names(&self) -> BTreeSet<Term> {
        let mut out = BTreeSet::new();
        for (f, _) in self.facts() {
            for a in &f.args {
                let mut subs = Vec::new();
                a.subterms(&mut subs);
                out.extend(subs.into_iter().filter(|t| matches!(t, Term::Pub(_) | Term::Fresh(_))));
            }
        }
        out
    }

    /// Facts in a stable textual order, for reports.
    pub fn to_strings(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (f, n) in self.facts() {
            for _ in 0..n {
                v.push(f.to_string());
            }
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Builtin {
    /// Creates a fresh name.
    Fresh,
    /// The attacker learns a sent message.
    Out,
    /// The attacker injects a message it knows.
    In,
    Pub,
    Fr,
    App(Fun),
    IndOut,
    IndIn,
    IndPub,
    IndFr,
    IndApp(Fun),
    /// Environment side of an independent send.
    Collect,
    /// Environment side of an independent receive.
    Deliver,
}

impl Builtin {
    pub fn all() -> Vec<Builtin> {
        let mut v = vec![Builtin::Fresh, Builtin::Out, Builtin::In, Builtin::Pub, Builtin::Fr];
        v.extend(Fun::ALL.iter().map(|f| Builtin::App(*f)));
        v.extend([Builtin::IndOut, Builtin::IndIn, Builtin::IndPub, Builtin::IndFr]);
        v.extend(Fun::ALL.iter().map(|f| Builtin::IndApp(*f)));
        v.extend([Builtin::Collect, Builtin::Deliver]);
        v
    }

    pub fn name(self) -> String {
        match self {
            Builtin::Fresh => "fresh".into(),
            Builtin::Out => "md_out".into(),
            Builtin::In => "md_in".into(),
            Builtin::Pub => "md_pub".into(),
            Builtin::Fr => "md_fr".into(),
            Builtin::App(f) => format!("md_app:{}", f.name()),
            Builtin::IndOut => "ind_out".into(),
            Builtin::IndIn => "ind_in".into(),
            Builtin::IndPub => "ind_pub".into(),
            Builtin::IndFr => "ind_fr".into(),
            Builtin::IndApp(f) => format!("ind_app:{}", f.name()),
            Builtin::Collect => "env_collect".into(),
            Builtin::Deliver => "env_deliver".into(),
        }
    }

    pub fn from_name(s: &str) -> Option<Builtin> {
        Builtin::all().into_iter().find(|b| b.name() == s)
    }

    /// Belongs to the protocol-independent component or its environment side.
    pub fn is_independent(self) -> bool {
        matches!(
            self,
            Builtin::IndOut
                | Builtin::IndIn
                | Builtin::IndPub
                | Builtin::IndFr
                | Builtin::IndApp(_)
                | Builtin::Collect
                | Builtin::Deliver
        )
    }

    pub fn rule(self) -> Rule {
        let v = Term::var;
        let k = |t: Term| Fact::new("K", vec![t]);
        let ind = |t: Term| Fact::new("ind", vec![v("rid"), t]);
        let xs = |f: Fun| (0..f.arity()).map(|i| v(&format!("x{i}"))).collect::<Vec<_>>();
        let (premises, actions, conclusions) = match self {
            Builtin::Fresh => (vec![], vec![], vec![Fact::new("Fr", vec![v("~x")])]),
            Builtin::Out => (vec![Fact::new("Out", vec![v("x")])], vec![], vec![k(v("x"))]),
            Builtin::In => (vec![k(v("x"))], vec![k(v("x"))], vec![Fact::new("In", vec![v("x")])]),
            Builtin::Pub => (vec![], vec![], vec![k(v("$x"))]),
            Builtin::Fr => (vec![Fact::new("Fr", vec![v("~x")])], vec![], vec![k(v("~x"))]),
            Builtin::App(f) => (xs(f).into_iter().map(k).collect(), vec![], vec![k(Term::App(f, xs(f)))]),
            Builtin::IndOut => (vec![ind(v("x"))], vec![], vec![Fact::new("out_ind", vec![v("x")])]),
            Builtin::IndIn => (vec![Fact::new("in_ind", vec![v("x")])], vec![], vec![ind(v("x"))]),
            Builtin::IndPub => (vec![], vec![], vec![ind(v("$x"))]),
            Builtin::IndFr => (vec![Fact::new("Fr", vec![v("~x")])], vec![], vec![ind(v("~x"))]),
            Builtin::IndApp(f) => (xs(f).into_iter().map(ind).collect(), vec![], vec![ind(Term::App(f, xs(f)))]),
            Builtin::Collect => (vec![Fact::new("out_ind", vec![v("x")])], vec![], vec![k(v("x"))]),
            Builtin::Deliver => (vec![k(v("x"))], vec![], vec![Fact::new("in_ind", vec![v("x")])]),
        };
        Rule { name: self.name(), premises, actions, conclusions, builtin: Some(self) }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Rule {
    pub name: String,
    pub premises: Vec<Fact>,
    pub actions: Vec<Fact>,
    pub conclusions: Vec<Fact>,
    #[serde(skip)]
    pub builtin: Option<Builtin>,
}

impl Rule {
    pub fn vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        for f in self.premises.iter().chain(&self.actions).chain(&self.conclusions) {
            f.vars(&mut out);
        }
        out
    }

    /// Role a rule belongs to: the name up to the first underscore.
    pub fn role(&self) -> &str {
        self.name.split('_').next().unwrap_or(&self.name)
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |v: &[Fact]| v.iter().map(Fact::to_string).collect::<Vec<_>>().join(", ");
        write!(f, "rule {}: [{}] --[{}]-> [{}]", self.name, list(&self.premises), list(&self.actions), list(&self.conclusions))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Model {
    pub rules: Vec<Rule>,
    /// Public constants mentioned by the rules, plus the attacker's own name.
    pub pubs: BTreeSet<Term>,
}

impl Model {
    /// A role rule or a built-in rule by name.
    pub fn rule(&self, name: &str) -> Option<Rule> {
        self.rules.iter().find(|r| r.name == name).cloned().or_else(|| Builtin::from_name(name).map(Builtin::rule))
    }

    pub fn roles(&self) -> BTreeSet<String> {
        self.rules.iter().map(|r| r.role().to_string()).collect()
    }

    /// Role rules followed by every built-in rule.
    pub fn all_rules(&self) -> Vec<Rule> {
        let mut v = self.rules.clone();
        v.extend(Builtin::all().into_iter().map(Builtin::rule));
        v
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("line {line}: {source}")]
    Term { line: usize, source: TermError },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("rule `{0}` is defined twice")]
    Duplicate(String),
    #[error("fact `{name}` used with {a} and {b} arguments")]
    FactArity { name: String, a: usize, b: usize },
    #[error("rule `{rule}`: `{var}` is not bound by a premise")]
    Unbound { rule: String, var: String },
    #[error("rule `{rule}`: fact `{name}` is reserved for the attacker")]
    Reserved { rule: String, name: String },
}

const RESERVED: [&str; 4] = ["K", "ind", "in_ind", "out_ind"];

/// Fresh names in rule text are variables of fresh sort.
fn rule_term(t: Term) -> Term {
    match t {
        Term::Fresh(n) => Term::Var(format!("~{n}")),
        Term::App(f, a) => Term::App(f, a.into_iter().map(rule_term).collect()),
        t => t,
    }
}

struct RuleParser<'a> {
    p: TermParser<'a>,
    line0: usize,
}

impl RuleParser<'_> {
    fn line(&self) -> usize {
        self.line0 + self.p.s[..self.p.pos.min(self.p.s.len())].iter().filter(|c| **c == b'\n').count()
    }

    fn syntax(&self, msg: &str) -> ModelError {
        ModelError::Syntax { line: self.line(), msg: msg.to_string() }
    }

    fn term(&mut self) -> Result<Term, ModelError> {
        self.p.term().map(rule_term).map_err(|source| ModelError::Term { line: self.line(), source })
    }

    fn keyword(&mut self, kw: &str) -> bool {
        self.p.ws();
        let rest = &self.p.s[self.p.pos..];
        let ok = rest.starts_with(kw.as_bytes())
            && rest.get(kw.len()).is_none_or(|c| !(c.is_ascii_alphanumeric() || *c == b'_'));
        if ok {
            self.p.pos += kw.len();
        }
        ok
    }

    fn lit(&mut self, s: &str) -> bool {
        self.p.ws();
        if self.p.s[self.p.pos..].starts_with(s.as_bytes()) {
            self.p.pos += s.len();
            true
        } else {
            false
        }
    }

    fn facts(&mut self, lets: &Subst) -> Result<Vec<Fact>, ModelError> {
        if !self.p.eat(b'[') {
            return Err(self.syntax("expected `[`"));
        }
        let mut out = Vec::new();
        if self.p.eat(b']') {
            return Ok(out);
        }
        loop {
            let bang = self.p.eat(b'!');
            let name = self.p.ident().ok_or_else(|| self.syntax("expected a fact"))?;
            if !self.p.eat(b'(') {
                return Err(self.syntax("expected `(` after fact name"));
            }
            let mut args = Vec::new();
            if !self.p.eat(b')') {
                args.push(self.term()?.subst(lets));
                while self.p.eat(b',') {
                    args.push(self.term()?.subst(lets));
                }
                if !self.p.eat(b')') {
                    return Err(self.syntax("expected `)`"));
                }
            }
            let name = if bang { format!("!{name}") } else { name };
            out.push(Fact { name, args: args.iter().map(Term::normalize).collect() });
            if self.p.eat(b']') {
                return Ok(out);
            }
            if !self.p.eat(b',') {
                return Err(self.syntax("expected `,` or `]`"));
            }
        }
    }

    fn rule(&mut self, name: String) -> Result<Rule, ModelError> {
        let mut lets = Subst::new();
        while self.keyword("let") {
            let v = self.p.ident().ok_or_else(|| self.syntax("expected a name after `let`"))?;
            if !self.p.eat(b'=') {
                return Err(self.syntax("expected `=`"));
            }
            let t = self.term()?.subst(&lets);
            if !self.keyword("in") {
                return Err(self.syntax("expected `in`"));
            }
            lets.insert(v, t);
        }
        let premises = self.facts(&lets)?;
        let actions = if self.lit("--[") {
            self.p.pos -= 1;
            let a = self.facts(&lets)?;
            if !self.lit("->") {
                return Err(self.syntax("expected `->`"));
            }
            a
        } else if self.lit("--->") || self.lit("-->") {
            Vec::new()
        } else {
            return Err(self.syntax("expected `--[` or `-->`"));
        };
        let conclusions = self.facts(&lets)?;
        Ok(Rule { name, premises, actions, conclusions, builtin: None })
    }
}

fn strip_comments(src: &str) -> String {
    src.lines()
        .map(|l| {
            let cut = [l.find('#'), l.find("//")].into_iter().flatten().min().unwrap_or(l.len());
            &l[..cut]
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn parse_model(src: &str) -> Result<Model, ModelError> {
    let text = strip_comments(src);
    let mut rp = RuleParser { p: TermParser { s: text.as_bytes(), pos: 0 }, line0: 1 };
    let mut rules: Vec<Rule> = Vec::new();
    loop {
        rp.p.ws();
        if rp.p.pos >= rp.p.s.len() {
            break;
        }
        if !rp.keyword("rule") {
            return Err(rp.syntax("expected `rule`"));
        }
        let name = rp.p.ident().ok_or_else(|| rp.syntax("expected a rule name"))?;
        if !rp.p.eat(b':') {
            return Err(rp.syntax("expected `:`"));
        }
        if rules.iter().any(|r| r.name == name) || Builtin::from_name(&name).is_some() {
            return Err(ModelError::Duplicate(name));
        }
        rules.push(rp.rule(name)?);
    }
    let mut arity: BTreeMap<&str, usize> = BTreeMap::new();
    let mut pubs = BTreeSet::from([Term::pub_("adv")]);
    for r in &rules {
        for f in r.premises.iter().chain(&r.conclusions) {
            if RESERVED.contains(&f.name.as_str()) {
                return Err(ModelError::Reserved { rule: r.name.clone(), name: f.name.clone() });
            }
        }
        for f in r.premises.iter().chain(&r.actions).chain(&r.conclusions) {
            match arity.insert(&f.name, f.args.len()) {
                Some(a) if a != f.args.len() => {
                    return Err(ModelError::FactArity { name: f.name.clone(), a, b: f.args.len() })
                }
                _ => {}
            }
            for a in &f.args {
                let mut subs = Vec::new();
                a.subterms(&mut subs);
                pubs.extend(subs.into_iter().filter(|t| matches!(t, Term::Pub(_))));
            }
        }
        let mut bound = Vec::new();
        r.premises.iter().for_each(|f| f.vars(&mut bound));
        let mut used = Vec::new();
        r.actions.iter().chain(&r.conclusions).for_each(|f| f.vars(&mut used));
        if let Some(v) = used.into_iter().find(|v| !v.starts_with('$') && !bound.contains(v)) {
            return Err(ModelError::Unbound { rule: r.name.clone(), var: v });
        }
    }
    Ok(Model { rules, pubs })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Applied {
    pub state: State,
    pub actions: Vec<Fact>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ApplyError {
    #[error("`{0}` is unbound")]
    Unbound(String),
    #[error("`{var}` must be bound to a {sort} name")]
    Sort { var: String, sort: &'static str },
    #[error("premise {0} is not in the state")]
    Missing(String),
    #[error("restriction {0} fails")]
    Restriction(String),
}

/// Applies a rule instance: removes the linear premises, keeps persistent
/// ones, adds the conclusions and returns the instantiated actions.
pub fn apply_rule(s: &State, r: &Rule, b: &Subst) -> Result<Applied, ApplyError> {
    for v in r.vars() {
        let t = b.get(&v).ok_or_else(|| ApplyError::Unbound(v.clone()))?;
        if v.starts_with('$') && !matches!(t, Term::Pub(_)) {
            return Err(ApplyError::Sort { var: v, sort: "public" });
        }
        if v.starts_with('~') && !matches!(t, Term::Fresh(_)) {
            return Err(ApplyError::Sort { var: v, sort: "fresh" });
        }
    }
    let premises: Vec<Fact> = r.premises.iter().map(|f| f.subst(b)).collect();
    let actions: Vec<Fact> = r.actions.iter().map(|f| f.subst(b)).collect();
    let mut next = s.clone();
    for a in &actions {
        match (a.name.as_str(), a.args.as_slice()) {
            ("Eq", [x, y]) if x != y => return Err(ApplyError::Restriction(a.to_string())),
            ("Once", args) => {
                let mark = Fact::new(ONCE, args.to_vec());
                if next.contains(&mark) {
                    return Err(ApplyError::Restriction(a.to_string()));
                }
                next.insert(mark);
            }
            _ => {}
        }
    }
    for p in &premises {
        if !next.take(p) {
            return Err(ApplyError::Missing(p.to_string()));
        }
    }
    for c in &r.conclusions {
        next.insert(c.subst(b));
    }
    Ok(Applied { state: next, actions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msr::parse_term;

    pub(crate) const SAMPLE: &str = "
rule Alice_Send:
    let packet = <msg, sign(msg, psk)> in
    [ Alice_1(rid, A, B, psk), In(msg) ]
  --->
    [ Alice_1(rid, A, B, psk), Out(packet) ]
rule Alice_Recv:
    let packet = <msg, sign(msg, psk)> in
    [ Alice_1(rid, A, B, psk), In(packet) ]
  --->
    [ Alice_1(rid, A, B, psk), Out(msg) ]
";

    fn t(s: &str) -> Term {
        parse_term(s).unwrap()
    }

    #[test]
    fn parses_sample_model() {
        let m = parse_model(SAMPLE).unwrap();
        let names: Vec<&str> = m.rules.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["Alice_Send", "Alice_Recv"]);
        assert_eq!(m.rules[0].conclusions[1], Fact::new("Out", vec![t("<msg, sign(msg, psk)>")]));
        assert_eq!(m.roles(), ["Alice".to_string()].into());
    }

    #[test]
    fn empty_model_has_only_builtins() {
        let m = parse_model("# nothing\n").unwrap();
        assert!(m.rules.is_empty());
        assert!(m.rule("md_app:senc").is_some());
        assert_eq!(m.all_rules().len(), Builtin::all().len());
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            parse_model("rule A: [F(foo(x))] --> []"),
            Err(ModelError::Term { source: TermError::UnknownFunction(_), .. })
        ));
        assert!(matches!(
            parse_model("rule A: [F(senc(x))] --> []"),
            Err(ModelError::Term { source: TermError::Arity { .. }, .. })
        ));
        assert!(matches!(parse_model("rule A: [] --> [F(x)]"), Err(ModelError::Unbound { .. })));
        assert!(matches!(parse_model("rule A: [] --> [K('a')]"), Err(ModelError::Reserved { .. })));
        assert!(matches!(parse_model("rule A: [F(x)] --> [F(x, x)]"), Err(ModelError::FactArity { .. })));
        assert!(matches!(parse_model("rule A: [] --> []\nrule A: [] --> []"), Err(ModelError::Duplicate(_))));
    }

    #[test]
    fn fresh_and_public_sorts() {
        let m = parse_model("rule R: [Fr(~k)] --[Secret(~k)]-> [S($A, ~k)]").unwrap();
        let r = &m.rules[0];
        let mut b = Subst::new();
        b.insert("~k".into(), t("'k'"));
        b.insert("$A".into(), t("'a'"));
        let mut s = State::new();
        s.insert(Fact::new("Fr", vec![t("'k'")]));
        assert!(matches!(apply_rule(&s, r, &b), Err(ApplyError::Sort { .. })));
    }

    #[test]
    fn persistent_premise_is_kept() {
        let m = parse_model("rule R: [!Ltk(a, k), T(a)] --> [U(k)]").unwrap();
        let mut s = State::new();
        s.insert(Fact::new("!Ltk", vec![t("'a'"), t("~k")]));
        s.insert(Fact::new("T", vec![t("'a'")]));
        let b: Subst = [("a".to_string(), t("'a'")), ("k".to_string(), t("~k"))].into();
        let out = apply_rule(&s, &m.rules[0], &b).unwrap().state;
        assert!(out.contains(&Fact::new("!Ltk", vec![t("'a'"), t("~k")])));
        assert!(!out.contains(&Fact::new("T", vec![t("'a'")])));
        assert!(out.contains(&Fact::new("U", vec![t("~k")])));
    }
}
