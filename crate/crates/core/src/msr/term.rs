//! Message terms and their equational theory.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Fun {
    Pair,
    Senc,
    Sdec,
    Aenc,
    Adec,
    Pk,
    Sign,
    Verify,
    H,
    Kdf1,
    Kdf2,
    Exp,
    Fst,
    Snd,
    True,
}

impl Fun {
    pub const ALL: [Fun; 15] = [
        Fun::Pair,
        Fun::Senc,
        Fun::Sdec,
        Fun::Aenc,
        Fun::Adec,
        Fun::Pk,
        Fun::Sign,
        Fun::Verify,
        Fun::H,
        Fun::Kdf1,
        Fun::Kdf2,
        Fun::Exp,
        Fun::Fst,
        Fun::Snd,
        Fun::True,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Fun::Pair => "pair",
            Fun::Senc => "senc",
            Fun::Sdec => "sdec",
            Fun::Aenc => "aenc",
            Fun::Adec => "adec",
            Fun::Pk => "pk",
            Fun::Sign => "sign",
            Fun::Verify => "verify",
            Fun::H => "h",
            Fun::Kdf1 => "kdf1",
            Fun::Kdf2 => "kdf2",
            Fun::Exp => "exp",
            Fun::Fst => "fst",
            Fun::Snd => "snd",
            Fun::True => "true",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Fun::True => 0,
            Fun::Pk | Fun::H | Fun::Kdf1 | Fun::Kdf2 | Fun::Fst | Fun::Snd => 1,
            Fun::Verify => 3,
            _ => 2,
        }
    }

    pub fn from_name(s: &str) -> Option<Fun> {
        Fun::ALL.into_iter().find(|f| f.name() == s)
    }

    /// Destructors only make sense applied to matching constructors; they
    /// never appear in patterns with unbound variables.
    pub fn is_destructor(self) -> bool {
        matches!(self, Fun::Sdec | Fun::Adec | Fun::Verify | Fun::Fst | Fun::Snd)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    /// Public constant `'a'`.
    Pub(String),
    /// Fresh name `~n`.
    Fresh(String),
    Var(String),
    App(Fun, Vec<Term>),
}

pub type Subst = BTreeMap<String, Term>;

impl Term {
    pub fn app(f: Fun, args: Vec<Term>) -> Term {
        Term::App(f, args).normalize()
    }

    pub fn pair(a: Term, b: Term) -> Term {
        Term::App(Fun::Pair, vec![a, b])
    }

    pub fn pub_(s: &str) -> Term {
        Term::Pub(s.to_string())
    }

    pub fn var(s: &str) -> Term {
        Term::Var(s.to_string())
    }

    pub fn is_ground(&self) -> bool {
        match self {
            Term::Var(_) => false,
            Term::App(_, a) => a.iter().all(Term::is_ground),
            _ => true,
        }
    }

    pub fn vars(&self, out: &mut Vec<String>) {
        match self {
            Term::Var(v) if !out.contains(v) => out.push(v.clone()),
            Term::App(_, a) => a.iter().for_each(|t| t.vars(out)),
            _ => {}
        }
    }

    pub fn subterms(&self, out: &mut Vec<Term>) {
        out.push(self.clone());
        if let Term::App(_, a) = self {
            a.iter().for_each(|t| t.subterms(out));
        }
    }

    /// Normal form modulo the equational theory.
    pub fn normalize(&self) -> Term {
        match self {
            Term::App(f, args) => {
                let args: Vec<Term> = args.iter().map(Term::normalize).collect();
                reduce(*f, args)
            }
            t => t.clone(),
        }
    }

    pub fn subst(&self, s: &Subst) -> Term {
        match self {
            Term::Var(v) => s.get(v).cloned().unwrap_or_else(|| self.clone()),
            Term::App(f, a) => Term::App(*f, a.iter().map(|t| t.subst(s)).collect()),
            t => t.clone(),
        }
    }

    /// Extends `s` so that `self` instantiated equals `t` (both normalized).
    /// Ground subpatterns are compared after normalization.
    pub fn matches(&self, t: &Term, s: &mut Subst) -> bool {
        match self {
            Term::Var(v) => match s.get(v) {
                Some(bound) => bound == t,
                None => {
                    s.insert(v.clone(), t.clone());
                    true
                }
            },
            Term::App(f, pa) => {
                let inst = self.subst(s);
                if inst.is_ground() {
                    return &inst.normalize() == t;
                }
                if f.is_destructor() {
                    return false;
                }
                match t {
                    Term::App(g, ta) if g == f && ta.len() == pa.len() => {
                        let saved = s.clone();
                        if pa.iter().zip(ta).all(|(p, x)| p.matches(x, s)) {
                            return true;
                        }
                        *s = saved;
                        if *f == Fun::Exp {
                            return exp_swap_match(pa, t, s);
                        }
                        false
                    }
                    _ => false,
                }
            }
            c => c == t,
        }
    }
}

fn exp_swap_match(pa: &[Term], t: &Term, s: &mut Subst) -> bool {
    // exp(exp(g, a), b) matches its commuted form exp(exp(g, b), a)
    if let (Term::App(Fun::Exp, inner), Term::App(Fun::Exp, ta)) = (&pa[0], t) {
        if let Term::App(Fun::Exp, tin) = &ta[0] {
            let saved = s.clone();
            if inner[0].matches(&tin[0], s) && inner[1].matches(&ta[1], s) && pa[1].matches(&tin[1], s) {
                return true;
            }
            *s = saved;
        }
    }
    false
}

fn reduce(f: Fun, args: Vec<Term>) -> Term {
    match (f, args.as_slice()) {
        (Fun::Sdec, [Term::App(Fun::Senc, inner), k]) if &inner[1] == k => inner[0].clone(),
        (Fun::Adec, [Term::App(Fun::Aenc, inner), sk]) => match &inner[1] {
            Term::App(Fun::Pk, pk) if &pk[0] == sk => inner[0].clone(),
            _ => Term::App(f, args),
        },
        (Fun::Verify, [Term::App(Fun::Sign, sig), m, Term::App(Fun::Pk, pk)]) if sig[0] == *m && sig[1] == pk[0] => {
            Term::App(Fun::True, Vec::new())
        }
        (Fun::Fst, [Term::App(Fun::Pair, p)]) => p[0].clone(),
        (Fun::Snd, [Term::App(Fun::Pair, p)]) => p[1].clone(),
        (Fun::Exp, [Term::App(Fun::Exp, _), _]) => {
            let mut exps = vec![args[1].clone()];
            let mut base = args[0].clone();
            while let Term::App(Fun::Exp, a) = base {
                exps.push(a[1].clone());
                base = a[0].clone();
            }
            exps.sort();
            exps.into_iter().fold(base, |b, e| Term::App(Fun::Exp, vec![b, e]))
        }
        _ => Term::App(f, args),
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Pub(s) => write!(f, "'{s}'"),
            Term::Fresh(s) => write!(f, "~{s}"),
            Term::Var(s) => f.write_str(s),
            Term::App(Fun::Pair, a) => write!(f, "<{}, {}>", a[0], a[1]),
            Term::App(g, a) => {
                write!(f, "{}(", g.name())?;
                for (i, t) in a.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{t}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl Serialize for Term {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Term {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_term(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TermError {
    #[error("unknown function symbol `{0}`")]
    UnknownFunction(String),
    #[error("`{name}` takes {expected} arguments, got {got}")]
    Arity { name: String, expected: usize, got: usize },
    #[error("term syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
}

pub fn parse_term(s: &str) -> Result<Term, TermError> {
    let mut p = TermParser { s: s.as_bytes(), pos: 0 };
    let t = p.term()?;
    p.ws();
    if p.pos != p.s.len() {
        return Err(p.err("trailing input"));
    }
    Ok(t)
}

pub(crate) struct TermParser<'a> {
    pub(crate) s: &'a [u8],
    pub(crate) pos: usize,
}

impl TermParser<'_> {
    pub(crate) fn err(&self, msg: &str) -> TermError {
        TermError::Syntax { pos: self.pos, msg: msg.to_string() }
    }

    pub(crate) fn ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    pub(crate) fn peek(&mut self) -> Option<u8> {
        self.ws();
        self.s.get(self.pos).copied()
    }

    pub(crate) fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    pub(crate) fn expect(&mut self, c: u8) -> Result<(), TermError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(&format!("expected `{}`", c as char)))
        }
    }

    pub(crate) fn ident(&mut self) -> Option<String> {
        self.ws();
        let start = self.pos;
        while self.pos < self.s.len() {
            let c = self.s[self.pos];
            let ok = c.is_ascii_alphanumeric() || c == b'_' || (c == b'*' && self.pos == start);
            if !ok {
                break;
            }
            self.pos += 1;
        }
        (self.pos > start).then(|| String::from_utf8_lossy(&self.s[start..self.pos]).into_owned())
    }

    pub(crate) fn term(&mut self) -> Result<Term, TermError> {
        let mut t = self.primary()?;
        while self.eat(b'^') {
            let e = self.primary()?;
            t = Term::App(Fun::Exp, vec![t, e]);
        }
        Ok(t)
    }

    fn primary(&mut self) -> Result<Term, TermError> {
        match self.peek() {
            Some(b'<') => {
                self.pos += 1;
                let mut items = vec![self.term()?];
                while self.eat(b',') {
                    items.push(self.term()?);
                }
                self.expect(b'>')?;
                if items.len() < 2 {
                    return Err(self.err("tuples need at least two components"));
                }
                let last = items.pop().expect("non-empty");
                Ok(items.into_iter().rev().fold(last, |acc, t| Term::pair(t, acc)))
            }
            Some(b'\'') => {
                self.pos += 1;
                let start = self.pos;
                while self.pos < self.s.len() && self.s[self.pos] != b'\'' {
                    self.pos += 1;
                }
                if self.pos == self.s.len() {
                    return Err(self.err("unterminated constant"));
                }
                let name = String::from_utf8_lossy(&self.s[start..self.pos]).into_owned();
                self.pos += 1;
                Ok(Term::Pub(name))
            }
            Some(b'~') => {
                self.pos += 1;
                self.ident().map(Term::Fresh).ok_or_else(|| self.err("expected fresh name"))
            }
            Some(b'$') => {
                self.pos += 1;
                self.ident().map(|n| Term::Var(format!("${n}"))).ok_or_else(|| self.err("expected variable name"))
            }
            Some(b'(') => {
                self.pos += 1;
                let t = self.term()?;
                self.expect(b')')?;
                Ok(t)
            }
            _ => {
                let name = self.ident().ok_or_else(|| self.err("expected term"))?;
                if name.bytes().all(|c| c.is_ascii_digit()) {
                    return Ok(Term::Pub(name));
                }
                if !self.eat(b'(') {
                    return Ok(Term::Var(name));
                }
                let f = Fun::from_name(&name).ok_or_else(|| TermError::UnknownFunction(name.clone()))?;
                let mut args = Vec::new();
                if !self.eat(b')') {
                    args.push(self.term()?);
                    while self.eat(b',') {
                        args.push(self.term()?);
                    }
                    self.expect(b')')?;
                }
                if args.len() != f.arity() {
                    return Err(TermError::Arity { name, expected: f.arity(), got: args.len() });
                }
                Ok(Term::App(f, args))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Term {
        parse_term(s).unwrap()
    }

    #[test]
    fn symmetric_and_asymmetric_decryption_cancel() {
        assert_eq!(t("sdec(senc(m, k), k)").normalize(), t("m"));
        assert_eq!(t("sdec(senc(m, k), j)").normalize(), t("sdec(senc(m, k), j)"));
        assert_eq!(t("adec(aenc(m, pk(sk)), sk)").normalize(), t("m"));
    }

    #[test]
    fn verification_and_projections() {
        assert_eq!(t("verify(sign(m, sk), m, pk(sk))").normalize(), t("true()"));
        assert_eq!(t("verify(sign(m, sk), n, pk(sk))").normalize(), t("verify(sign(m, sk), n, pk(sk))"));
        assert_eq!(t("fst(<a, b>)").normalize(), t("a"));
        assert_eq!(t("snd(<a, b, c>)").normalize(), t("<b, c>"));
    }

    #[test]
    fn exponents_commute() {
        assert_eq!(t("'g'^x^y").normalize(), t("'g'^y^x").normalize());
    }

    #[test]
    fn matching_binds_consistently() {
        let mut s = Subst::new();
        assert!(t("<m, sign(m, k)>").matches(&t("<'a', sign('a', 'k')>"), &mut s));
        assert_eq!(s["m"], t("'a'"));
        let mut s = Subst::new();
        assert!(!t("<m, sign(m, k)>").matches(&t("<'a', sign('b', 'k')>"), &mut s));
    }

    #[test]
    fn parse_errors() {
        assert_eq!(parse_term("foo(a)"), Err(TermError::UnknownFunction("foo".into())));
        assert!(matches!(parse_term("pk(a, b)"), Err(TermError::Arity { .. })));
        assert!(matches!(parse_term("<a"), Err(TermError::Syntax { .. })));
    }

    #[test]
    fn display_parses_back() {
        for s in ["<'a', ~n, x>", "senc(h(x), kdf1('g'^x))", "true()", "*arg0"] {
            let a = t(s);
            assert_eq!(t(&a.to_string()), a);
        }
    }
}
