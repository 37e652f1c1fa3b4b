//! Pipeline driver behind the `coresplit` binary.
//!
//! Every command returns an [`Output`]: an exit code (0 clean, 1 findings)
//! plus the same result as text and as JSON. Errors map to exit code 2.

mod commands;
mod config;
mod pipeline;

use serde::Serialize;
use serde_json::{json, Value};

pub use commands::{analyze, check, explore_cmd, instrument_cmd, msr, refine_cmd, MsrOptions};
pub use config::{Bounds, Format, Passes, PipelineConfig};
pub use pipeline::{load_program, observed_instances, run_check, CheckReport, Diag, ExploreSummary, Stage};

#[derive(Clone, Debug, PartialEq)]
pub struct Output {
    pub code: i32,
    pub json: Value,
    pub text: String,
}

impl Output {
    /// Wraps `body` in the versioned envelope.
    pub fn new(command: &str, code: i32, body: &impl Serialize, text: String) -> Output {
        let body = serde_json::to_value(body).expect("reports serialize");
        Output { code, json: json!({ "schema": coresplit::SCHEMA_VERSION, "command": command, "result": body }), text }
    }

    pub fn render(&self, f: Format) -> String {
        match f {
            Format::Text => self.text.clone(),
            Format::Json => serde_json::to_string_pretty(&self.json).expect("json") + "\n",
        }
    }
}
