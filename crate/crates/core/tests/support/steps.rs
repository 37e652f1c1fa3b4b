//! Single rule applications checked against hand-computed successor states
//! and against a plain multiset computation of `(S - L) + R`.
//!
//! Each case returns an error message instead of panicking so that the
//! acceptance runner can reuse them.

use std::collections::{BTreeMap, BTreeSet};

use coresplit::msr::{apply_rule, parse_model, parse_term, Builtin, Fact, Fun, Rule, State, Subst};

macro_rules! ensure {
    ($c:expr, $($m:tt)*) => {
        if !$c {
            return Err(format!($($m)*));
        }
    };
}

fn split_args(s: &str) -> Vec<&str> {
    let (mut depth, mut start, mut out) = (0i32, 0, Vec::new());
    for (i, ch) in s.char_indices() {
        match ch {
            '(' | '<' => depth += 1,
            ')' | '>' => depth -= 1,
            ',' if depth == 0 => {
                out.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    if !s[start..].trim().is_empty() {
        out.push(s[start..].trim());
    }
    out
}

fn fact(s: &str) -> Fact {
    let open = s.find('(').unwrap();
    let args = split_args(&s[open + 1..s.len() - 1]).into_iter().map(|a| parse_term(a).unwrap()).collect();
    Fact::new(&s[..open], args)
}

fn state(facts: &[&str]) -> State {
    let mut s = State::new();
    for f in facts {
        s.insert(fact(f));
    }
    s
}

fn binding(pairs: &[(&str, &str)]) -> Subst {
    pairs.iter().map(|(k, v)| (k.to_string(), parse_term(v).unwrap())).collect()
}

fn rule(src: &str) -> Rule {
    parse_model(src).unwrap().rules.remove(0)
}

/// Successor by multiset arithmetic over printed facts. Persistent facts
/// are a set and are never removed.
fn oracle(s: &[&str], r: &Rule, b: &Subst) -> Option<Vec<String>> {
    let mut linear: BTreeMap<String, usize> = BTreeMap::new();
    let mut persistent: BTreeSet<String> = BTreeSet::new();
    let is_persistent = |name: &str| name.starts_with('!') || name == "K" || name == "ind";
    for f in s {
        let f = fact(f);
        if is_persistent(&f.name) {
            persistent.insert(f.to_string());
        } else {
            *linear.entry(f.to_string()).or_default() += 1;
        }
    }
    for p in &r.premises {
        let p = p.subst(b);
        if is_persistent(&p.name) {
            if !persistent.contains(&p.to_string()) {
                return None;
            }
            continue;
        }
        let n = linear.get_mut(&p.to_string())?;
        *n -= 1;
        if *n == 0 {
            linear.remove(&p.to_string());
        }
    }
    for c in &r.conclusions {
        let c = c.subst(b);
        if is_persistent(&c.name) {
            persistent.insert(c.to_string());
        } else {
            *linear.entry(c.to_string()).or_default() += 1;
        }
    }
    let mut out: Vec<String> = persistent.into_iter().collect();
    for (f, n) in linear {
        out.extend(std::iter::repeat_n(f, n));
    }
    out.sort();
    Some(out)
}

fn check(s: &[&str], r: &Rule, b: &[(&str, &str)], expected: Option<&[&str]>) -> Result<(), String> {
    let b = binding(b);
    let got = apply_rule(&state(s), r, &b).ok().map(|a| {
        let mut v = a.state.to_strings();
        v.sort();
        v
    });
    let want = expected.map(|e| {
        let mut v: Vec<String> = e.iter().map(|f| fact(f).to_string()).collect();
        v.sort();
        v
    });
    ensure!(got == want, "{r}: got {got:?}, expected {want:?}");
    if want.is_some() {
        ensure!(oracle(s, r, &b) == want, "{r}: multiset computation disagrees");
    }
    Ok(())
}

const SEND: &str = "rule Alice_Send:
    let packet = <msg, sign(msg, psk)> in
    [ Alice_1(rid, A, B, psk), In(msg) ] ---> [ Alice_1(rid, A, B, psk), Out(packet) ]";

const RECV: &str = "rule Alice_Recv:
    let packet = <msg, sign(msg, psk)> in
    [ Alice_1(rid, A, B, psk), In(packet) ] ---> [ Alice_1(rid, A, B, psk), Out(msg) ]";

fn alice(msg: &'static str) -> [(&'static str, &'static str); 5] {
    [("rid", "~r"), ("A", "'alice'"), ("B", "'bob'"), ("psk", "~k"), ("msg", msg)]
}

pub fn s01_send_signs_and_keeps_the_role_state() -> Result<(), String> {
    check(
        &["Alice_1(~r, 'alice', 'bob', ~k)", "In('m')"],
        &rule(SEND),
        &alice("'m'"),
        Some(&["Alice_1(~r, 'alice', 'bob', ~k)", "Out(<'m', sign('m', ~k)>)"]),
    )?;
    Ok(())
}

pub fn s02_send_without_input_fails() -> Result<(), String> {
    check(&["Alice_1(~r, 'alice', 'bob', ~k)"], &rule(SEND), &alice("'m'"), None)?;
    Ok(())
}

pub fn s03_receive_checks_the_signature_key() -> Result<(), String> {
    let s = ["Alice_1(~r, 'alice', 'bob', ~k)", "In(<'m', sign('m', ~other)>)"];
    check(&s, &rule(RECV), &alice("'m'"), None)?;
    Ok(())
}

pub fn s04_receive_releases_the_payload() -> Result<(), String> {
    check(
        &["Alice_1(~r, 'alice', 'bob', ~k)", "In(<'m', sign('m', ~k)>)"],
        &rule(RECV),
        &alice("'m'"),
        Some(&["Alice_1(~r, 'alice', 'bob', ~k)", "Out('m')"]),
    )?;
    Ok(())
}

pub fn s05_only_one_copy_of_a_linear_fact_is_consumed() -> Result<(), String> {
    check(
        &["Alice_1(~r, 'alice', 'bob', ~k)", "In('m')", "In('m')"],
        &rule(SEND),
        &alice("'m'"),
        Some(&["Alice_1(~r, 'alice', 'bob', ~k)", "In('m')", "Out(<'m', sign('m', ~k)>)"]),
    )?;
    Ok(())
}

pub fn s06_unrelated_facts_are_untouched() -> Result<(), String> {
    check(
        &["Alice_1(~r, 'alice', 'bob', ~k)", "In('m')", "Bob_1(~r, 'bob', 'alice', ~k)", "K('x')"],
        &rule(SEND),
        &alice("'m'"),
        Some(&[
            "Alice_1(~r, 'alice', 'bob', ~k)",
            "Bob_1(~r, 'bob', 'alice', ~k)",
            "K('x')",
            "Out(<'m', sign('m', ~k)>)",
        ]),
    )?;
    Ok(())
}

pub fn s07_persistent_premise_is_retained() -> Result<(), String> {
    let r = rule("rule Use: [ !Ltk(A, k), In(m) ] ---> [ Out(senc(m, k)) ]");
    check(
        &["!Ltk('a', ~k)", "In('m')"],
        &r,
        &[("A", "'a'"), ("k", "~k"), ("m", "'m'")],
        Some(&["!Ltk('a', ~k)", "Out(senc('m', ~k))"]),
    )?;
    Ok(())
}

pub fn s08_persistent_fact_used_twice() -> Result<(), String> {
    let r = rule("rule Use: [ !Ltk(A, k), In(m) ] ---> [ Out(senc(m, k)) ]");
    check(
        &["!Ltk('a', ~k)", "In('m')", "In('n')"],
        &r,
        &[("A", "'a'"), ("k", "~k"), ("m", "'n'")],
        Some(&["!Ltk('a', ~k)", "In('m')", "Out(senc('n', ~k))"]),
    )?;
    Ok(())
}

pub fn s09_persistent_conclusion_is_deduplicated() -> Result<(), String> {
    let r = rule("rule Reg: [ Fr(~k) ] ---> [ !Ltk('a', ~k) ]");
    check(&["Fr(~k)", "!Ltk('a', ~k)"], &r, &[("~k", "~k")], Some(&["!Ltk('a', ~k)"]))?;
    Ok(())
}

pub fn s10_attacker_pairing_keeps_its_inputs() -> Result<(), String> {
    let r = Builtin::App(Fun::Pair).rule();
    check(&["K('a')", "K('b')"], &r, &[("x0", "'a'"), ("x1", "'b'")], Some(&["K('a')", "K('b')", "K(<'a', 'b'>)"]))?;
    Ok(())
}

pub fn s11_attacker_decryption_normalises() -> Result<(), String> {
    let r = Builtin::App(Fun::Sdec).rule();
    check(
        &["K(senc('m', ~k))", "K(~k)"],
        &r,
        &[("x0", "senc('m', ~k)"), ("x1", "~k")],
        Some(&["K(senc('m', ~k))", "K(~k)", "K('m')"]),
    )?;
    Ok(())
}

pub fn s12_attacker_needs_every_argument() -> Result<(), String> {
    let r = Builtin::App(Fun::Sdec).rule();
    check(&["K(senc('m', ~k))"], &r, &[("x0", "senc('m', ~k)"), ("x1", "~k")], None)?;
    Ok(())
}

pub fn s13_output_becomes_knowledge() -> Result<(), String> {
    check(&["Out('m')", "Out('m')"], &Builtin::Out.rule(), &[("x", "'m'")], Some(&["Out('m')", "K('m')"]))?;
    Ok(())
}

pub fn s14_input_needs_knowledge_and_keeps_it() -> Result<(), String> {
    check(&["K('m')"], &Builtin::In.rule(), &[("x", "'m'")], Some(&["K('m')", "In('m')"]))?;
    Ok(())
}

pub fn s15_fresh_names_come_from_the_fresh_rule() -> Result<(), String> {
    check(&[], &Builtin::Fresh.rule(), &[("~x", "~n")], Some(&["Fr(~n)"]))?;
    check(&["Fr(~n)"], &Builtin::Fr.rule(), &[("~x", "~n")], Some(&["K(~n)"]))?;
    Ok(())
}

pub fn s16_sorts_are_enforced() -> Result<(), String> {
    check(&[], &Builtin::Pub.rule(), &[("$x", "~n")], None)?;
    check(&[], &Builtin::Pub.rule(), &[("$x", "'a'")], Some(&["K('a')"]))?;
    Ok(())
}

pub fn s17_equality_restriction() -> Result<(), String> {
    let r = rule("rule Chk: [ In(<m, s>), !Pk(A, pk) ] --[ Eq(verify(s, m, pk), true()) ]-> [ Ok(A, m) ]");
    let s = ["In(<'m', sign('m', ~k)>)", "!Pk('a', pk(~k))"];
    let good = [("m", "'m'"), ("s", "sign('m', ~k)"), ("A", "'a'"), ("pk", "pk(~k)")];
    check(&s, &r, &good, Some(&["!Pk('a', pk(~k))", "Ok('a', 'm')"]))?;
    let s = ["In(<'m', sign('m', ~j)>)", "!Pk('a', pk(~k))"];
    check(&s, &r, &[("m", "'m'"), ("s", "sign('m', ~j)"), ("A", "'a'"), ("pk", "pk(~k)")], None)?;
    Ok(())
}

pub fn s18_once_restriction() -> Result<(), String> {
    let r = rule("rule Reg: [ Fr(~k) ] --[ Once($A) ]-> [ !Ltk($A, ~k) ]");
    let first = apply_rule(&state(&["Fr(~k)", "Fr(~j)"]), &r, &binding(&[("$A", "'a'"), ("~k", "~k")])).unwrap();
    ensure!(first.state.contains(&fact("!Ltk('a', ~k)")), "first registration missing");
    ensure!(apply_rule(&first.state, &r, &binding(&[("$A", "'a'"), ("~k", "~j")])).is_err(), "second registration of 'a' allowed");
    ensure!(apply_rule(&first.state, &r, &binding(&[("$A", "'b'"), ("~k", "~j")])).is_ok(), "registration of 'b' refused");
    Ok(())
}

pub fn s19_independent_component_exchange() -> Result<(), String> {
    check(&["ind(~r, 'x')"], &Builtin::IndOut.rule(), &[("rid", "~r"), ("x", "'x'")], Some(&["ind(~r, 'x')", "out_ind('x')"]))?;
    check(&["out_ind('x')"], &Builtin::Collect.rule(), &[("x", "'x'")], Some(&["K('x')"]))?;
    check(&["K('x')"], &Builtin::Deliver.rule(), &[("x", "'x'")], Some(&["K('x')", "in_ind('x')"]))?;
    Ok(())
}

pub fn s20_actions_are_reported_in_order() -> Result<(), String> {
    let r = rule("rule Go: [ Fr(~k) ] --[ Secret(~k), Running('a', ~k) ]-> [ Out(~k) ]");
    let a = apply_rule(&state(&["Fr(~k)"]), &r, &binding(&[("~k", "~k")])).unwrap();
    let acts: Vec<String> = a.actions.iter().map(Fact::to_string).collect();
    ensure!(acts == ["Secret(~k)", "Running('a', ~k)"], "actions {acts:?}");
    check(&["Fr(~k)"], &r, &[("~k", "~k")], Some(&["Out(~k)"]))?;
    Ok(())
}

/// Every case with its name.
pub type Case = fn() -> Result<(), String>;

pub const ALL: [(&str, Case); 20] = [
    ("s01_send_signs_and_keeps_the_role_state", s01_send_signs_and_keeps_the_role_state),
    ("s02_send_without_input_fails", s02_send_without_input_fails),
    ("s03_receive_checks_the_signature_key", s03_receive_checks_the_signature_key),
    ("s04_receive_releases_the_payload", s04_receive_releases_the_payload),
    ("s05_only_one_copy_of_a_linear_fact_is_consumed", s05_only_one_copy_of_a_linear_fact_is_consumed),
    ("s06_unrelated_facts_are_untouched", s06_unrelated_facts_are_untouched),
    ("s07_persistent_premise_is_retained", s07_persistent_premise_is_retained),
    ("s08_persistent_fact_used_twice", s08_persistent_fact_used_twice),
    ("s09_persistent_conclusion_is_deduplicated", s09_persistent_conclusion_is_deduplicated),
    ("s10_attacker_pairing_keeps_its_inputs", s10_attacker_pairing_keeps_its_inputs),
    ("s11_attacker_decryption_normalises", s11_attacker_decryption_normalises),
    ("s12_attacker_needs_every_argument", s12_attacker_needs_every_argument),
    ("s13_output_becomes_knowledge", s13_output_becomes_knowledge),
    ("s14_input_needs_knowledge_and_keeps_it", s14_input_needs_knowledge_and_keeps_it),
    ("s15_fresh_names_come_from_the_fresh_rule", s15_fresh_names_come_from_the_fresh_rule),
    ("s16_sorts_are_enforced", s16_sorts_are_enforced),
    ("s17_equality_restriction", s17_equality_restriction),
    ("s18_once_restriction", s18_once_restriction),
    ("s19_independent_component_exchange", s19_independent_component_exchange),
    ("s20_actions_are_reported_in_order", s20_actions_are_reported_in_order),
];
