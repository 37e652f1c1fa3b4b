use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use coresplit::conditions::{check_conditions, validation_diagnostics, Severity};
use coresplit::ghost::instrument;
use coresplit::interp::{explore, Contract, ExploreReport, RunConfig, Statics};
use coresplit::iorefine::{check_refinement, CoreTrace, RefinementReport};
use coresplit::lang::{parse_with_lines, validate_program, Program};
use coresplit::msr::{parse_model, role_iospec, IoAutomaton};
use coresplit::taint::{compute_taint, TaintConfig, TaintReport};
use coresplit::{Label, ValidProgram};
use serde::Serialize;

use crate::config::{Bounds, PipelineConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Validate,
    Taint,
    Conditions,
    Explore,
    Crosscheck,
    Refine,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Diag {
    pub stage: Stage,
    pub label: Label,
    /// Source line of `label`, 0 when the label has none.
    pub line: usize,
    pub rule: String,
    pub severity: Severity,
    pub message: String,
}

impl Diag {
    fn error(stage: Stage, label: Label, rule: impl Into<String>, message: String) -> Diag {
        Diag { stage, label, line: 0, rule: rule.into(), severity: Severity::Error, message }
    }
}

/// Program text with the source line of every label.
pub struct Source {
    pub program: Program,
    pub lines: BTreeMap<Label, usize>,
}

pub fn load_program(path: &Path) -> Result<Source> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (program, lines) = parse_with_lines(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Source { program, lines })
}

pub fn load_taint(path: Option<&Path>) -> Result<TaintConfig> {
    match path {
        None => Ok(TaintConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TaintConfig::from_json(&text).with_context(|| format!("parsing taint config {}", p.display()))
        }
    }
}

pub fn load_contract(path: Option<&Path>) -> Result<Contract> {
    match path {
        None => Ok(Contract::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Contract::from_json(&text).with_context(|| format!("parsing contract {}", p.display()))
        }
    }
}

pub fn load_automaton(model: &Path, role: &str) -> Result<IoAutomaton> {
    let text = std::fs::read_to_string(model).with_context(|| format!("reading {}", model.display()))?;
    let m = parse_model(&text).with_context(|| format!("parsing model {}", model.display()))?;
    if !m.roles().contains(role) {
        anyhow::bail!("model {} has no role `{role}`", model.display());
    }
    role_iospec(&m, role).with_context(|| format!("role `{role}`"))
}

pub fn run_config(b: &Bounds, taint: &TaintConfig) -> RunConfig {
    RunConfig { max_steps: b.max_steps, max_threads: b.max_threads, observe: false, taint: taint.clone() }
}

/// Instances seen in any schedule, numbered in their sorted order.
pub fn observed_instances(r: &ExploreReport) -> CoreTrace {
    r.core_traces.iter().cloned().enumerate().map(|(i, run)| (i as u32 + 1, run)).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ExploreSummary {
    pub runs: usize,
    pub steps: usize,
    pub threads: usize,
    pub truncated: bool,
    pub outcomes: BTreeMap<String, usize>,
}

impl From<&ExploreReport> for ExploreSummary {
    fn from(r: &ExploreReport) -> Self {
        ExploreSummary { runs: r.runs, steps: r.steps, threads: r.threads, truncated: r.truncated, outcomes: r.outcomes.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CheckReport {
    pub program: String,
    pub diagnostics: Vec<Diag>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub taint: Option<TaintReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exploration: Option<ExploreSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refinement: Option<RefinementReport>,
}

impl CheckReport {
    pub fn errors(&self) -> usize {
        self.diagnostics.iter().filter(|d| d.severity == Severity::Error).count()
    }

    pub fn exit_code(&self) -> i32 {
        i32::from(self.errors() > 0)
    }

    pub fn text(&self) -> String {
        let mut out = String::new();
        for d in &self.diagnostics {
            let sev = match d.severity {
                Severity::Error => "error",
                Severity::Warning => "warning",
            };
            let _ = writeln!(out, "{}:{}: {} {sev}[{}]: {}", self.program, d.line, d.label, d.rule, d.message);
        }
        if let Some(e) = &self.exploration {
            let cut = if e.truncated { ", truncated" } else { "" };
            let _ = writeln!(out, "explored {} schedules, {} steps, up to {} threads{cut}", e.runs, e.steps, e.threads);
        }
        if let Some(r) = &self.refinement {
            let ok = r.instances.iter().filter(|v| v.accepted).count();
            let _ = writeln!(out, "refinement of role {}: {ok}/{} instances accepted", r.role, r.instances.len());
        }
        let _ = writeln!(out, "{} error(s)", self.errors());
        out
    }
}

/// Runs every enabled pass in order: taint, conditions, instrumented
/// exploration, refinement of the observed Core traces.
pub fn run_check(cfg: &PipelineConfig) -> Result<CheckReport> {
    cfg.validate()?;
    let src = load_program(&cfg.program)?;
    let taint_cfg = load_taint(cfg.taint.as_deref())?;
    let contract = load_contract(cfg.contract.as_deref())?;
    let automaton = match (&cfg.model, &cfg.role) {
        (Some(m), Some(r)) if cfg.passes.refine => Some(load_automaton(m, r)?),
        _ => None,
    };
    let mut report = CheckReport {
        program: cfg.program.display().to_string(),
        diagnostics: Vec::new(),
        taint: None,
        exploration: None,
        refinement: None,
    };
    let push = |report: &mut CheckReport, mut d: Diag| {
        d.line = src.lines.get(&d.label).copied().unwrap_or(0);
        report.diagnostics.push(d);
    };

    let p = match ValidProgram::new(src.program.clone()) {
        Ok(p) => p,
        Err(_) => {
            let (ds, rest) = validation_diagnostics(&validate_program(&src.program));
            for v in rest.violations {
                let rule = format!("{:?}", v.kind).to_uppercase();
                push(&mut report, Diag::error(Stage::Validate, v.label, rule, v.message));
            }
            for d in ds {
                push(&mut report, Diag { stage: Stage::Validate, label: d.label, line: 0, rule: d.rule.name().into(), severity: d.severity, message: d.message });
            }
            return Ok(report);
        }
    };
    let st = Statics::compute(&p);

    if cfg.passes.taint {
        let t = compute_taint(&p, &taint_cfg, &st.pts)?;
        let names: BTreeMap<Label, &str> = p.inputs.iter().map(|i| (i.label, i.name.as_str())).collect();
        for f in &t.flows {
            let path: Vec<String> = f.path.iter().map(Label::to_string).collect();
            let from = names.get(&f.source).map_or_else(|| f.source.to_string(), |n| format!("`{n}` ({})", f.source));
            let msg = format!("secret {from} reaches a sink: {}", path.join(" -> "));
            push(&mut report, Diag::error(Stage::Taint, f.sink, "TAINT-FLOW", msg));
        }
        for &l in &t.branch_violations {
            push(&mut report, Diag::error(Stage::Taint, l, "TAINT-BRANCH", "branch condition depends on a secret".into()));
        }
        report.taint = Some(t);
    }

    if cfg.passes.conditions {
        for d in check_conditions(&p, &st.pts, &st.esc, &st.pass)? {
            push(&mut report, Diag { stage: Stage::Conditions, label: d.label, line: 0, rule: d.rule.name().into(), severity: d.severity, message: d.message });
        }
    }

    if cfg.passes.explore {
        let rc = run_config(&cfg.bounds, &taint_cfg);
        let r = explore(&instrument(&p), &contract, &rc, Some(&st), cfg.bounds.max_runs);
        for f in &r.failures {
            let sched: Vec<String> = f.witness.iter().map(|t| t.to_string()).collect();
            let msg = format!("{} (schedule: {})", f.detail, sched.join(" "));
            let rule = format!("RUNTIME-{}", format!("{:?}", f.kind).to_uppercase());
            push(&mut report, Diag::error(Stage::Explore, f.label, rule, msg));
        }
        for v in &r.cross {
            let rule = format!("CROSSCHECK-{}", v.check.name().to_uppercase());
            push(&mut report, Diag::error(Stage::Crosscheck, v.point.label, rule, v.message.clone()));
        }
        if let Some(a) = &automaton {
            let trace = observed_instances(&r);
            let rr = check_refinement(&trace, a)?;
            for v in &rr.instances {
                if let Some(m) = &v.mismatch {
                    let msg = format!(
                        "instance {}: event {} `{}` is not allowed; expected {}",
                        v.rid,
                        m.index,
                        m.event,
                        if m.expected.is_empty() { "nothing".into() } else { m.expected.join(" | ") }
                    );
                    push(&mut report, Diag::error(Stage::Refine, trace[&v.rid].label, "REFINE", msg));
                }
            }
            report.refinement = Some(rr);
        }
        report.exploration = Some(ExploreSummary::from(&r));
    }
    report.diagnostics.sort_by(|a, b| (a.label, a.stage, &a.rule, &a.message).cmp(&(b.label, b.stage, &b.rule, &b.message)));
    Ok(report)
}
