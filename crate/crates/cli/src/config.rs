use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bounds {
    /// Complete schedules explored before giving up.
    pub max_runs: usize,
    /// Machine steps per schedule.
    pub max_steps: usize,
    pub max_threads: usize,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds { max_runs: 200_000, max_steps: 10_000, max_threads: 8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Passes {
    pub taint: bool,
    pub conditions: bool,
    pub explore: bool,
    pub refine: bool,
}

impl Default for Passes {
    fn default() -> Self {
        Passes { taint: true, conditions: true, explore: true, refine: true }
    }
}

impl Passes {
    /// Turns off the passes named in a comma-separated list.
    pub fn skip(&mut self, list: &str) -> Result<()> {
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match name {
                "taint" => self.taint = false,
                "conditions" => self.conditions = false,
                "explore" => self.explore = false,
                "refine" => self.refine = false,
                _ => bail!("unknown pass `{name}` (expected taint, conditions, explore or refine)"),
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub program: PathBuf,
    pub taint: Option<PathBuf>,
    /// Core contract script; the empty contract when absent.
    pub contract: Option<PathBuf>,
    /// Protocol model whose role automaton the Core traces must refine.
    pub model: Option<PathBuf>,
    pub role: Option<String>,
    pub bounds: Bounds,
    pub passes: Passes,
    pub format: Format,
}

impl PipelineConfig {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        PipelineConfig { program: program.into(), ..Default::default() }
    }

    /// Reads a JSON config. Relative paths are taken from the config's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.program);
        for p in [&mut cfg.taint, &mut cfg.contract, &mut cfg.model].into_iter().flatten() {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let files = [Some(&self.program), self.taint.as_ref(), self.contract.as_ref(), self.model.as_ref()];
        for p in files.into_iter().flatten() {
            if !p.is_file() {
                bail!("no such file: {}", p.display());
            }
        }
        let b = &self.bounds;
        if b.max_runs == 0 || b.max_steps == 0 || b.max_threads == 0 {
            bail!("exploration bounds must be positive");
        }
        if self.model.is_some() != self.role.is_some() {
            bail!("a model and a role must be given together");
        }
        Ok(())
    }
}
