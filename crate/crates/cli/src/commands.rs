use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use coresplit::ghost::instrument;
use coresplit::interp::{explore, Statics};
use coresplit::iorefine::check_refinement;
use coresplit::msr::{expand_witness, explore_traces, parse_model, random_trace, simulate_independent, Query, SimFailure};
use coresplit::taint::compute_taint;
use coresplit::ValidProgram;
use serde::Serialize;
use serde_json::json;

use crate::config::PipelineConfig;
use crate::pipeline::{load_automaton, load_contract, load_program, load_taint, observed_instances, run_check, run_config, ExploreSummary};
use crate::Output;

fn valid(cfg: &PipelineConfig) -> Result<ValidProgram> {
    cfg.validate()?;
    let src = load_program(&cfg.program)?;
    ValidProgram::new(src.program).map_err(|r| anyhow::anyhow!("{} is not a valid program:\n{r}", cfg.program.display()))
}

pub fn check(cfg: &PipelineConfig) -> Result<Output> {
    let r = run_check(cfg)?;
    Ok(Output::new("check", r.exit_code(), &r, r.text()))
}

/// Static facts only: points-to, escape, pass-through and taint.
pub fn analyze(cfg: &PipelineConfig) -> Result<Output> {
    let p = valid(cfg)?;
    let st = Statics::compute(&p);
    let taint = compute_taint(&p, &load_taint(cfg.taint.as_deref())?, &st.pts)?;
    let body = json!({
        "program": cfg.program.display().to_string(),
        "points_to": st.pts.to_json(),
        "escape": st.esc.to_json(&st.pts),
        "passthrough": st.pass.to_json(),
        "taint": taint,
    });
    let mut text = String::new();
    for (x, sites) in st.pts.vars() {
        let s: Vec<String> = sites.iter().map(ToString::to_string).collect();
        let _ = writeln!(text, "pts({x}) = {{{}}}", s.join(", "));
    }
    for f in &taint.flows {
        let path: Vec<String> = f.path.iter().map(ToString::to_string).collect();
        let _ = writeln!(text, "flow {} -> {}: {}", f.source, f.sink, path.join(" -> "));
    }
    for l in &taint.branch_violations {
        let _ = writeln!(text, "secret-dependent branch at {l}");
    }
    let _ = writeln!(text, "taint {}", if taint.pass { "passes" } else { "fails" });
    Ok(Output::new("analyze", 0, &body, text))
}

pub fn instrument_cmd(cfg: &PipelineConfig) -> Result<Output> {
    let p = valid(cfg)?;
    let printed = instrument(&p).print();
    Ok(Output::new("instrument", 0, &json!({ "program": printed }), printed))
}

pub fn explore_cmd(cfg: &PipelineConfig) -> Result<Output> {
    let p = valid(cfg)?;
    let contract = load_contract(cfg.contract.as_deref())?;
    let rc = run_config(&cfg.bounds, &load_taint(cfg.taint.as_deref())?);
    let st = Statics::compute(&p);
    let r = explore(&instrument(&p), &contract, &rc, Some(&st), cfg.bounds.max_runs);
    let mut text = String::new();
    let s = ExploreSummary::from(&r);
    let _ = writeln!(text, "{} schedules, {} steps, up to {} threads{}", s.runs, s.steps, s.threads, if s.truncated { ", truncated" } else { "" });
    for (o, n) in &s.outcomes {
        let _ = writeln!(text, "  {o}: {n}");
    }
    for f in &r.failures {
        let sched: Vec<String> = f.witness.iter().map(ToString::to_string).collect();
        let _ = writeln!(text, "{:?} at {}: {} (schedule: {})", f.kind, f.label, f.detail, sched.join(" "));
    }
    for v in &r.cross {
        let _ = writeln!(text, "crosscheck {} at {}: {}", v.check.name(), v.point.label, v.message);
    }
    let code = i32::from(!r.failures.is_empty() || !r.cross.is_empty());
    Ok(Output::new("explore", code, &r, text))
}

pub fn refine_cmd(cfg: &PipelineConfig) -> Result<Output> {
    let p = valid(cfg)?;
    let (model, role) = match (&cfg.model, &cfg.role) {
        (Some(m), Some(r)) => (m, r),
        _ => anyhow::bail!("refine needs a model and a role"),
    };
    let a = load_automaton(model, role)?;
    let contract = load_contract(cfg.contract.as_deref())?;
    let rc = run_config(&cfg.bounds, &load_taint(cfg.taint.as_deref())?);
    let r = explore(&instrument(&p), &contract, &rc, None, cfg.bounds.max_runs);
    let trace = observed_instances(&r);
    let rr = check_refinement(&trace, &a)?;
    let mut text = String::new();
    for v in &rr.instances {
        match &v.mismatch {
            None => {
                let _ = writeln!(text, "instance {} ({} events): accepted", v.rid, v.events);
            }
            Some(m) => {
                let _ = writeln!(text, "instance {}: rejected at event {} `{}`; expected {}", v.rid, m.index, m.event, m.expected.join(" | "));
            }
        }
    }
    let _ = writeln!(text, "role {}: {}", rr.role, if rr.accepted() { "refined" } else { "not refined" });
    let body = json!({ "program": cfg.program.display().to_string(), "truncated": r.truncated, "refinement": rr });
    Ok(Output::new("refine", i32::from(!rr.accepted()), &body, text))
}

#[derive(Clone, Debug)]
pub struct MsrOptions {
    pub query: Query,
    pub bound: usize,
    /// Random concrete traces to replay against the abstract attacker.
    pub simulate: usize,
    pub seed: u64,
    pub depth: usize,
}

#[derive(Serialize)]
struct Simulation {
    traces: usize,
    seed: u64,
    depth: usize,
    steps: usize,
    failures: Vec<(u64, SimFailure)>,
}

pub fn msr(model_path: &Path, o: &MsrOptions) -> Result<Output> {
    let text_in = std::fs::read_to_string(model_path).with_context(|| format!("reading {}", model_path.display()))?;
    let model = parse_model(&text_in).with_context(|| format!("parsing model {}", model_path.display()))?;
    let v = explore_traces(&model, o.query, o.bound);
    let mut text = format!("{:?} within {} steps: {} ({} states)\n", o.query, o.bound, v.summary(), v.states);
    let steps = if v.attack { expand_witness(&model, &v.witness).ok() } else { None };
    for (i, s) in v.witness.iter().enumerate() {
        let ins: Vec<String> = s.inputs.iter().map(ToString::to_string).collect();
        let _ = writeln!(text, "  {i}: {}{}", s.rule, if ins.is_empty() { String::new() } else { format!(" <- {}", ins.join(", ")) });
    }
    let mut sim = None;
    if o.simulate > 0 {
        let mut s = Simulation { traces: o.simulate, seed: o.seed, depth: o.depth, steps: 0, failures: Vec::new() };
        for k in 0..o.simulate as u64 {
            let seed = o.seed.wrapping_add(k);
            let t = random_trace(&model, o.depth, seed);
            s.steps += t.len();
            if let Some(f) = simulate_independent(&model, &t).failure {
                s.failures.push((seed, f));
            }
        }
        let _ = writeln!(text, "simulation: {} traces, {} steps, {} failures", s.traces, s.steps, s.failures.len());
        sim = Some(s);
    }
    let code = i32::from(v.attack || sim.as_ref().is_some_and(|s| !s.failures.is_empty()));
    let body = json!({ "model": model_path.display().to_string(), "verdict": v, "trace": steps, "simulation": sim });
    Ok(Output::new("msr", code, &body, text))
}
