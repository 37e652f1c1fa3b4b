use coresplit::msr::{expand_witness, explore_traces, parse_model, replay_steps, Query};

const MAC: &str = include_str!("../corpus/models/mac.msr");
const DH: &str = include_str!("../corpus/models/signed_dh.msr");
const PITM: &str = include_str!("../corpus/models/signed_dh_pitm.msr");

#[test]
fn mac_secrecy_holds_to_depth_12() {
    let m = parse_model(MAC).unwrap();
    let v = explore_traces(&m, Query::Secrecy, 12);
    assert!(!v.attack, "{}", v.summary());
}

#[test]
fn signed_dh_agreement_holds() {
    let m = parse_model(DH).unwrap();
    let v = explore_traces(&m, Query::Agreement, 6);
    assert!(!v.attack, "{:?}", v);
}

#[test]
fn pitm_mutant_has_agreement_attack() {
    let m = parse_model(PITM).unwrap();
    let v = explore_traces(&m, Query::Agreement, 14);
    assert!(v.attack);
    assert!(v.witness.len() <= 14);
    let steps = expand_witness(&m, &v.witness).unwrap();
    let (_, trace) = replay_steps(&m, &steps).unwrap();
    assert!(trace.iter().any(|f| f.name == "Commit"));
}
