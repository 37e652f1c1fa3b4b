use coresplit::conditions::{check_conditions, Rule};
use coresplit::corpus::{self, CLEAN, MUTANTS};
use coresplit::ghost::instrument;
use coresplit::interp::{explore, Contract, ExploreReport, FailureKind, RunConfig, Statics};
use coresplit::taint::{compute_taint, TaintConfig};
use coresplit::{compute_escape, compute_passthrough, compute_points_to, parse_program, Label, ValidProgram};

fn valid(src: &str) -> ValidProgram {
    let p = parse_program(src).unwrap_or_else(|e| panic!("{e}\n{src}"));
    ValidProgram::new(p).unwrap_or_else(|e| panic!("{e:?}\n{src}"))
}

fn rules(p: &ValidProgram) -> Vec<Rule> {
    let m = compute_points_to(p);
    let e = compute_escape(p, &m);
    let pm = compute_passthrough(p, &m);
    check_conditions(p, &m, &e, &pm).unwrap().into_iter().map(|d| d.rule).collect()
}

fn run(p: &ValidProgram, contract: &Contract) -> ExploreReport {
    let st = Statics::compute(p);
    explore(&instrument(p), contract, &RunConfig::default(), Some(&st), 200_000)
}

#[test]
fn clean_programs_pass_every_check() {
    let taint = TaintConfig::from_json(corpus::TAINT_DEFAULT).unwrap();
    let contract = Contract::from_json(corpus::CONTRACT_DEFAULT).unwrap();
    let (mut steps, mut threads) = (0, 0);
    for s in CLEAN {
        let p = valid(s.text);
        assert_eq!(rules(&p), vec![], "{}", s.name);
        let t = compute_taint(&p, &taint, &compute_points_to(&p)).unwrap();
        assert!(t.pass, "{}: {t:?}", s.name);
        let r = run(&p, &contract);
        assert!(!r.truncated, "{}", s.name);
        assert!(r.failures.is_empty(), "{}: {:?}", s.name, r.failures);
        steps += r.steps;
        threads = threads.max(r.threads);
    }
    assert!(CLEAN.len() >= 25);
    assert!(threads >= 3, "{threads}");
    assert!(steps >= 10_000, "{steps}");
}

#[test]
fn every_mutant_is_flagged_by_its_rule() {
    for m in MUTANTS {
        let p = valid(m.text);
        assert!(rules(&p).contains(&m.rule), "{}: {:?}", m.name, rules(&p));
    }
    for r in [Rule::C1, Rule::C2, Rule::C3, Rule::C4, Rule::C5, Rule::C6, Rule::C7, Rule::C8] {
        assert!(MUTANTS.iter().filter(|m| m.rule == r).count() >= 2);
    }
}

#[test]
fn ownership_mutants_fail_at_runtime() {
    let contract = Contract::default();
    for m in MUTANTS.iter().filter(|m| matches!(m.rule, Rule::C2 | Rule::C4 | Rule::C7)) {
        let r = run(&valid(m.text), &contract);
        assert!(r.has(FailureKind::Ghost), "{}: {:?}", m.name, r.failures);
    }
}

#[test]
fn mac_client_is_clean_and_its_logging_mutant_leaks() {
    let taint = TaintConfig::from_json(corpus::TAINT_DEFAULT).unwrap();
    let p = valid(corpus::MAC.text);
    assert_eq!(rules(&p), vec![]);
    assert!(compute_taint(&p, &taint, &compute_points_to(&p)).unwrap().pass);
    let r = run(&p, &Contract::from_json(corpus::CONTRACT_MAC).unwrap());
    assert!(r.failures.is_empty(), "{:?}", r.failures);

    let bad = valid(corpus::MAC_PSK_LOG.text);
    let t = compute_taint(&bad, &taint, &compute_points_to(&bad)).unwrap();
    assert!(!t.pass);
    assert!(t.flows.iter().any(|f| f.sink == Label(11) && f.path.last() == Some(&Label(11))), "{t:?}");
}
