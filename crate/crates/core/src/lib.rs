//! Static and dynamic checking for programs split into a protocol core and
//! an application that uses it.
//!
//! The pipeline: [`lang`] parses and validates programs, [`points_to`],
//! [`escape`] and [`passthrough`] compute heap facts, [`taint`] checks that
//! secrets never reach protocol-irrelevant I/O, [`conditions`] turns the
//! facts into per-statement verdicts, [`ghost`] instruments programs with
//! permission bookkeeping and [`interp`] executes them under every schedule
//! to validate the static verdicts. [`msr`] and [`iorefine`] cover the
//! protocol side: a multiset-rewriting engine with a symbolic attacker and a
//! refinement check of core I/O traces against role automata.

pub mod conditions;
pub mod corpus;
pub mod escape;
pub mod ghost;
pub mod interp;
pub mod iorefine;
pub mod lang;
pub mod msr;
pub mod passthrough;
pub mod points_to;
pub mod taint;

pub use escape::{compute_escape, EscapeMap, Point, Pos};
pub use lang::{parse_program, print_program, validate_program, Label, Program, ValidProgram};
pub use passthrough::{compute_passthrough, PassMap};
pub use points_to::{compute_points_to, disjoint_args, PtsMap, Site};

/// Version tag written into every JSON report.
pub const SCHEMA_VERSION: &str = "coresplit/1";
