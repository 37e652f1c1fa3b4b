//! Programs, Core contracts, taint configurations and protocol models
//! shipped with the crate.

use crate::conditions::Rule;

pub struct Source {
    pub name: &'static str,
    pub text: &'static str,
}

pub struct Mutant {
    pub name: &'static str,
    pub text: &'static str,
    /// The rule the seeded bug violates.
    pub rule: Rule,
}

macro_rules! src {
    ($dir:literal, $name:literal) => {
        Source { name: $name, text: include_str!(concat!("../corpus/", $dir, "/", $name, ".", "prog")) }
    };
}

/// Programs without seeded bugs.
pub const CLEAN: &[Source] = &[
    src!("programs/clean", "01_skip"),
    src!("programs/clean", "02_heap_roundtrip"),
    src!("programs/clean", "03_core_call"),
    src!("programs/clean", "04_two_instances"),
    src!("programs/clean", "05_two_workers"),
    src!("programs/clean", "06_branch"),
    src!("programs/clean", "07_loop"),
    src!("programs/clean", "08_core_in_loop"),
    src!("programs/clean", "09_core_in_child"),
    src!("programs/clean", "10_return_to_worker"),
    src!("programs/clean", "11_nil_arguments"),
    src!("programs/clean", "12_network_log"),
    src!("programs/clean", "13_secret_into_core"),
    src!("programs/clean", "14_three_threads_core"),
    src!("programs/clean", "15_nested_fork"),
    src!("programs/clean", "16_alias"),
    src!("programs/clean", "17_pointer_chain"),
    src!("programs/clean", "18_arithmetic"),
    src!("programs/clean", "19_shared_reads"),
    src!("programs/clean", "20_many_arguments"),
    src!("programs/clean", "21_result_round_trip"),
    src!("programs/clean", "22_fork_in_loop"),
    src!("programs/clean", "23_branch_core"),
    src!("programs/clean", "24_io_result"),
    src!("programs/clean", "25_callback"),
    src!("programs/clean", "26_store_pointer_in_worker"),
    src!("programs/clean", "27_worker_owns_core_three_threads"),
    src!("programs/clean", "28_secret_untouched"),
    src!("programs/clean", "29_three_workers"),
    src!("programs/clean", "30_core_beside_workers"),
];

pub const MUTANTS: &[Mutant] = &[
    Mutant { name: "c1_aliased_receiver", text: include_str!("../corpus/programs/mutants/c1_aliased_receiver.prog"), rule: Rule::C1 },
    Mutant { name: "c1_app_receiver", text: include_str!("../corpus/programs/mutants/c1_app_receiver.prog"), rule: Rule::C1 },
    Mutant { name: "c2_write_instance", text: include_str!("../corpus/programs/mutants/c2_write_instance.prog"), rule: Rule::C2 },
    Mutant { name: "c2_write_via_alias", text: include_str!("../corpus/programs/mutants/c2_write_via_alias.prog"), rule: Rule::C2 },
    Mutant { name: "c3_ctor_as_call", text: include_str!("../corpus/programs/mutants/c3_ctor_as_call.prog"), rule: Rule::C3 },
    Mutant { name: "c3_instance_argument", text: include_str!("../corpus/programs/mutants/c3_instance_argument.prog"), rule: Rule::C3 },
    Mutant { name: "c4_captured_in_branch", text: include_str!("../corpus/programs/mutants/c4_captured_in_branch.prog"), rule: Rule::C4 },
    Mutant { name: "c4_captured_instance", text: include_str!("../corpus/programs/mutants/c4_captured_instance.prog"), rule: Rule::C4 },
    Mutant { name: "c5_callback_alloc", text: include_str!("../corpus/programs/mutants/c5_callback_alloc.prog"), rule: Rule::C5 },
    Mutant { name: "c5_callback_nested", text: include_str!("../corpus/programs/mutants/c5_callback_nested.prog"), rule: Rule::C5 },
    Mutant { name: "c6_forked_argument", text: include_str!("../corpus/programs/mutants/c6_forked_argument.prog"), rule: Rule::C6 },
    Mutant { name: "c6_forked_ctor_argument", text: include_str!("../corpus/programs/mutants/c6_forked_ctor_argument.prog"), rule: Rule::C6 },
    Mutant { name: "c7_aliased_arguments", text: include_str!("../corpus/programs/mutants/c7_aliased_arguments.prog"), rule: Rule::C7 },
    Mutant { name: "c7_same_argument", text: include_str!("../corpus/programs/mutants/c7_same_argument.prog"), rule: Rule::C7 },
    Mutant { name: "c8_read_instance", text: include_str!("../corpus/programs/mutants/c8_read_instance.prog"), rule: Rule::C8 },
    Mutant { name: "c8_read_via_alias", text: include_str!("../corpus/programs/mutants/c8_read_via_alias.prog"), rule: Rule::C8 },
];

pub const MAC: Source = src!("programs", "mac");
/// The MAC client printing its channel, key included.
pub const MAC_PSK_LOG: Source = src!("programs", "mac_psk_log");

pub const CONTRACT_MAC: &str = include_str!("../corpus/contracts/mac.json");
/// Signs the message but sends a different payload.
pub const CONTRACT_MAC_TAMPERED: &str = include_str!("../corpus/contracts/mac_tampered.json");
pub const CONTRACT_DEFAULT: &str = include_str!("../corpus/contracts/default.json");

pub const TAINT_DEFAULT: &str = include_str!("../corpus/taint/default.json");

pub const MODEL_MAC: &str = include_str!("../corpus/models/mac.msr");
pub const MODEL_SIGNED_DH: &str = include_str!("../corpus/models/signed_dh.msr");
/// Signed Diffie-Hellman without the peer identity under the signatures.
pub const MODEL_SIGNED_DH_PITM: &str = include_str!("../corpus/models/signed_dh_pitm.msr");

/// Looks a program up by name among all shipped programs.
pub fn program(name: &str) -> Option<&'static str> {
    CLEAN
        .iter()
        .chain([&MAC, &MAC_PSK_LOG])
        .find(|s| s.name == name)
        .map(|s| s.text)
        .or_else(|| MUTANTS.iter().find(|m| m.name == name).map(|m| m.text))
}
