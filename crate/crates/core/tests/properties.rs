#[path = "support/dataflow.rs"]
mod dataflow;

use std::collections::BTreeSet;

use coresplit::corpus::{self, CLEAN, MUTANTS};
use coresplit::ghost::instrument;
use coresplit::interp::Dir;
use coresplit::iorefine::check_instance;
use coresplit::lang::Cap;
use coresplit::msr::{explore::Knowledge, parse_model, role_iospec, Fact, Fun, State, Subst, Term};
use coresplit::taint::{compute_taint, TaintConfig};
use coresplit::{compute_points_to, parse_program, print_program, Label, ValidProgram};
use dataflow::{brute_force, random_program};
use proptest::prelude::*;

fn valid(src: &str) -> ValidProgram {
    ValidProgram::new(parse_program(src).unwrap_or_else(|e| panic!("{e}\n{src}"))).unwrap_or_else(|e| panic!("{e}\n{src}"))
}

fn term() -> impl Strategy<Value = Term> {
    let leaf = prop_oneof![
        prop::sample::select(vec!["a", "b"]).prop_map(Term::pub_),
        prop::sample::select(vec!["k", "n"]).prop_map(|s| Term::Fresh(s.into())),
    ];
    leaf.prop_recursive(4, 24, 3, |inner| {
        (prop::sample::select(Fun::ALL.to_vec()), prop::collection::vec(inner, 3))
            .prop_map(|(f, mut args)| {
                args.truncate(f.arity());
                Term::App(f, args)
            })
    })
}

fn fact() -> impl Strategy<Value = Fact> {
    (prop::sample::select(vec!["K", "Out", "In", "!Ltk", "St"]), term()).prop_map(|(n, t)| Fact::new(n, vec![t]))
}

fn state_of(facts: &[Fact]) -> State {
    let mut s = State::new();
    for f in facts {
        s.insert(f.clone());
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn taint_matches_naive_closure(seed in any::<u64>()) {
        let p = valid(&random_program(seed, 40));
        let m = compute_points_to(&p);
        let cfg = TaintConfig { sinks: vec![Cap::FsWrite], ..Default::default() };
        let r = compute_taint(&p, &cfg, &m).unwrap();
        let (sinks, conds) = brute_force(&p, &m, &cfg.sinks);
        let got: BTreeSet<Label> = r.flows.iter().map(|f| f.sink).collect();
        prop_assert_eq!(got, sinks);
        prop_assert_eq!(r.branch_violations.iter().copied().collect::<BTreeSet<_>>(), conds);
        for f in &r.flows {
            prop_assert_eq!(f.path.first(), Some(&Label(0)));
            prop_assert_eq!(f.path.last(), Some(&f.sink));
        }
    }

    #[test]
    fn printing_round_trips(seed in any::<u64>()) {
        let p = parse_program(&random_program(seed, 40)).unwrap();
        let text = print_program(&p);
        prop_assert_eq!(parse_program(&text).unwrap(), p);
    }

    #[test]
    fn instrumentation_erases(seed in any::<u64>()) {
        let p = valid(&random_program(seed, 40));
        let i = instrument(&p);
        prop_assert_eq!(&i.strip(), p.program());
        prop_assert_eq!(&parse_program(&i.print()).unwrap(), p.program());
    }

    #[test]
    fn normalisation_is_idempotent(t in term()) {
        let n = t.normalize();
        prop_assert_eq!(n.normalize(), n);
    }

    #[test]
    fn state_hash_agrees_with_equality(a in prop::collection::vec(fact(), 0..6), b in prop::collection::vec(fact(), 0..6)) {
        let mut rev = a.clone();
        rev.reverse();
        let (sa, sr, sb) = (state_of(&a), state_of(&rev), state_of(&b));
        prop_assert_eq!(&sa, &sr);
        prop_assert_eq!(sa.canonical_hash(), sr.canonical_hash());
        prop_assert_eq!(sa == sb, sa.canonical_hash() == sb.canonical_hash());
    }

    #[test]
    fn knowledge_grows_with_its_base(a in prop::collection::vec(term(), 0..5), b in prop::collection::vec(term(), 0..5), probe in term()) {
        let small = Knowledge::new(&a);
        let big = Knowledge::new(a.iter().chain(&b));
        for t in &a {
            prop_assert!(small.derivable(t));
        }
        for t in small.terms() {
            prop_assert!(big.derivable(t));
        }
        if small.derivable(&probe) {
            prop_assert!(big.derivable(&probe));
        }
    }

    #[test]
    fn refinement_is_prefix_closed(events in prop::collection::vec((0..4usize, prop::sample::select(vec!["a", "b"])), 0..8)) {
        let m = parse_model(corpus::MODEL_MAC).unwrap();
        let a = role_iospec(&m, "Alice").unwrap();
        let init = Subst::from([("psk".to_string(), Term::Fresh("k".into()))]);
        let ev: Vec<(Dir, Term)> = events
            .iter()
            .map(|(kind, msg)| {
                let msg = Term::pub_(msg);
                let signed = |k: &str| Term::pair(msg.clone(), Term::app(Fun::Sign, vec![msg.clone(), Term::Fresh(k.into())]));
                match kind {
                    0 => (Dir::Vin, msg),
                    1 => (Dir::Out, signed("k")),
                    2 => (Dir::In, signed("k")),
                    _ => (Dir::Out, signed("j")),
                }
            })
            .collect();
        let full = check_instance(&a, 1, &ev, &init).unwrap();
        for n in 0..=ev.len() {
            let v = check_instance(&a, 1, &ev[..n], &init).unwrap();
            match &full.mismatch {
                Some(mm) if n > mm.index => prop_assert_eq!(v.mismatch.as_ref().map(|x| x.index), Some(mm.index)),
                _ => prop_assert!(v.accepted),
            }
        }
    }
}

#[test]
fn taint_oracle_covers_fifty_programs() {
    let cfg = TaintConfig { sinks: vec![Cap::FsWrite], ..Default::default() };
    let mut leaky = 0;
    for seed in 0..60 {
        let src = random_program(seed, 40);
        let p = valid(&src);
        assert!(p.all_stmts().len() <= 40);
        let m = compute_points_to(&p);
        let r = compute_taint(&p, &cfg, &m).unwrap();
        let (sinks, conds) = brute_force(&p, &m, &cfg.sinks);
        assert_eq!(r.flows.iter().map(|f| f.sink).collect::<BTreeSet<_>>(), sinks, "{src}");
        assert_eq!(r.branch_violations.iter().copied().collect::<BTreeSet<_>>(), conds, "{src}");
        leaky += usize::from(!sinks.is_empty());
    }
    assert!(leaky >= 10, "{leaky}");
}

#[test]
fn corpus_round_trips_and_erases() {
    for s in CLEAN.iter().chain([&corpus::MAC, &corpus::MAC_PSK_LOG]).map(|s| s.text).chain(MUTANTS.iter().map(|m| m.text)) {
        let p = valid(s);
        assert_eq!(&parse_program(&print_program(&p)).unwrap(), p.program());
        assert_eq!(&instrument(&p).strip(), p.program());
    }
}
