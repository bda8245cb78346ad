//! Experiment configuration files.
//!
//! Every command reads one TOML file. Unknown keys are rejected so a typo
//! never silently falls back to a default.

use std::path::{Path, PathBuf};

use grnn::cells::CellKind;
use grnn::summaries::SummaryFn;
use grnn::synth::{ArmaProcess, TaskKind};
use grnn::training::TrainConfig;
use grnn::weather::experiment::WeatherSettings;
use grnn::weather::{BoundingBox, CleanConfig, InputFormat, PlantedConfig, WeatherModelSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the output root.
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub task: SynthTask,
    pub model: SynthModel,
    pub training: TrainConfig,
    /// Allowed excess of the test loss over the analytic optimum.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_tolerance() -> f64 {
    0.02
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthTask {
    pub kind: TaskKind,
    pub train_steps: usize,
    #[serde(default = "default_test_steps")]
    pub test_steps: usize,
    #[serde(default)]
    pub arma: Option<ArmaProcess>,
}

fn default_test_steps() -> usize {
    5000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthModel {
    pub cell: CellKind,
    #[serde(default = "default_synth_hidden")]
    pub hidden_dim: usize,
    pub inroll: usize,
    /// One per relation; defaults to the task's own choice.
    #[serde(default)]
    pub summaries: Option<Vec<SummaryFn>>,
}

fn default_synth_hidden() -> usize {
    16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatherConfig {
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub data: WeatherSource,
    #[serde(default)]
    pub clean: CleanConfig,
    #[serde(default)]
    pub graph: GraphConfig,
    pub split: SplitConfig,
    pub settings: Option<WeatherSettings>,
    #[serde(default)]
    pub models: Vec<WeatherModelSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", tag = "source")]
pub enum WeatherSource {
    /// Station files (one file or a directory of `*.csv`).
    Files { path: PathBuf, format: InputFormat },
    /// Generated data with planted spatial structure.
    Planted(PlantedConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    #[serde(default = "default_keep")]
    pub keep_frac: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            keep_frac: default_keep(),
        }
    }
}

fn default_keep() -> f64 {
    0.95
}

/// Either the first test date or the number of training days.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default)]
    pub test_start: Option<chrono::NaiveDate>,
    #[serde(default)]
    pub train_days: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    pub cell: CellKind,
    #[serde(default = "default_gc_hidden")]
    pub hidden_dim: usize,
    pub inroll: usize,
    /// One summary per relation; the relation count follows from this list.
    pub summaries: Vec<SummaryFn>,
    #[serde(default = "default_gc_tol")]
    pub tolerance: f64,
    #[serde(default = "default_fd_step")]
    pub step: f64,
    #[serde(default)]
    pub seed: u64,
    /// Parameters to load instead of the seeded initialization.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Perturbs one analytic gradient coordinate; a negative control.
    #[serde(default)]
    pub inject_fault: Option<FaultConfig>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultConfig {
    pub param: String,
    pub index: usize,
    pub delta: f64,
}

fn default_nodes() -> usize {
    4
}

fn default_steps() -> usize {
    3
}

fn default_gc_hidden() -> usize {
    3
}

fn default_gc_tol() -> f64 {
    1e-5
}

fn default_fd_step() -> f64 {
    1e-6
}

/// Reads and parses `path`; any problem is a configuration error.
pub fn load<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(T, String), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok((cfg, text))
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.task.train_steps == 0 || self.task.test_steps == 0 {
            return Err(CliError::Config("task.train_steps and task.test_steps must be >= 1".into()));
        }
        if self.model.inroll == 0 || self.model.hidden_dim == 0 {
            return Err(CliError::Config("model.inroll and model.hidden_dim must be >= 1".into()));
        }
        self.training
            .validate(self.task.train_steps)
            .map_err(|e| CliError::Config(format!("training: {e}")))?;
        Ok(())
    }
}

impl WeatherConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.graph.keep_frac > 0.0 && self.graph.keep_frac <= 1.0) {
            return Err(CliError::Config(format!("graph.keep_frac {} outside (0, 1]", self.graph.keep_frac)));
        }
        match (&self.split.test_start, &self.split.train_days) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(CliError::Config("split needs exactly one of test_start, train_days".into())),
        }
        let mut names = std::collections::HashSet::new();
        for m in &self.models {
            if !names.insert(&m.name) {
                return Err(CliError::Config(format!("duplicate model name {:?}", m.name)));
            }
            if m.name.is_empty() || m.name.contains(['/', '\\']) {
                return Err(CliError::Config(format!("model name {:?} must be a plain file name", m.name)));
            }
        }
        if let Some(bbox) = &self.clean.bbox {
            check_bbox(bbox)?;
        }
        Ok(())
    }

    /// Training settings, required by the training commands.
    pub fn settings(&self) -> Result<&WeatherSettings, CliError> {
        self.settings
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [settings] section".into()))
    }
}

fn check_bbox(b: &BoundingBox) -> Result<(), CliError> {
    if b.min_lat > b.max_lat || b.min_lon > b.max_lon {
        return Err(CliError::Config("clean.bbox has min > max".into()));
    }
    Ok(())
}

impl GradcheckConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.nodes == 0 || self.steps == 0 || self.inroll == 0 || self.hidden_dim == 0 {
            return Err(CliError::Config("nodes, steps, inroll and hidden_dim must be >= 1".into()));
        }
        if !(self.step > 0.0 && self.tolerance > 0.0) {
            return Err(CliError::Config("step and tolerance must be positive".into()));
        }
        Ok(())
    }
}
