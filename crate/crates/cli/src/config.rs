//! Experiment configuration: one JSON document, defaults for every field,
//! dotted-path overrides from the command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use orient_core::metrics::EvalConfig;
use orient_core::synth::{PerturbConfig, SceneConfig};
use orient_core::train::{GradcheckConfig, TrainConfig};
use orient_core::{LandscapeConfig, Method};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scene: SceneConfig,
    /// Dataset file for `train` and `eval`; regenerated from `scene` when
    /// absent.
    pub dataset: Option<PathBuf>,
    /// Shared hyperparameters; `method`, `no_half`, `no_flip` and `seed`
    /// are overridden per run from `methods` and `seeds`.
    pub train: TrainConfig,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Used when `--out` is not given.
    pub output_dir: Option<PathBuf>,
    pub eval: EvalSection,
    pub landscape: LandscapeConfig,
    pub gradcheck: GradcheckConfig,
    pub report: ReportSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub metrics: EvalConfig,
    /// Checkpoints to evaluate on the validation split. When both this and
    /// `detections` are empty, every run written by `train` is evaluated.
    pub checkpoints: Vec<PathBuf>,
    /// Detection files scored against the whole dataset.
    pub detections: Vec<PathBuf>,
    /// When set, `eval` with no inputs scores perturbed ground truth
    /// instead of trained runs.
    pub perturb: Option<PerturbConfig>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    /// `report.json` files; defaults to every report under the output dir.
    pub inputs: Vec<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scene: SceneConfig::default(),
            dataset: None,
            train: TrainConfig::default(),
            methods: default_methods(),
            seeds: vec![1],
            output_dir: None,
            eval: EvalSection::default(),
            landscape: LandscapeConfig::default(),
            gradcheck: GradcheckConfig::default(),
            report: ReportSection::default(),
        }
    }
}

/// The five compared methods plus MultiBin-4 and the two ablations.
pub fn default_methods() -> Vec<Method> {
    [
        "sin_cos_2x",
        "l1_sin",
        "sin_cos",
        "multibin_2",
        "multibin_4",
        "flip_aware",
        "flip_aware-no-half",
        "flip_aware-no-flip",
    ]
    .iter()
    .map(|m| m.parse().expect("built-in method name"))
    .collect()
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.train.validate()?;
        self.landscape.validate()?;
        for m in &self.methods {
            m.validate()?;
        }
        if self.methods.is_empty() {
            bail!("`methods` must name at least one method");
        }
        if self.seeds.is_empty() {
            bail!("`seeds` must list at least one seed");
        }
        if self.train.horizon != self.scene.horizon {
            bail!(
                "train.horizon ({}) must equal scene.horizon ({})",
                self.train.horizon,
                self.scene.horizon
            );
        }
        Ok(())
    }

    /// Training config for one method and seed.
    pub fn run_config(&self, method: Method, seed: u64) -> TrainConfig {
        TrainConfig {
            method: method.kind,
            no_half: method.no_half,
            no_flip: method.no_flip,
            seed,
            ..self.train.clone()
        }
    }
}

/// Recursively overlays `patch` onto `base`; objects merge key by key,
/// everything else is replaced.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `key.path=value`; the value is parsed as JSON, falling back to a
/// plain string.
pub fn apply_override(cfg: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .with_context(|| format!("override `{assignment}` is not of the form key=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut patch = value;
    for key in path.rsplit('.') {
        if key.is_empty() {
            bail!("override `{assignment}` has an empty key");
        }
        let mut obj = serde_json::Map::new();
        obj.insert(key.to_string(), patch);
        patch = Value::Object(obj);
    }
    merge(cfg, patch);
    Ok(())
}

/// Defaults, overlaid with the config file (if any), then each override.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut v = serde_json::to_value(ExperimentConfig::default())?;
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let file: Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        if !file.is_object() {
            bail!("{}: config must be a JSON object", p.display());
        }
        merge(&mut v, file);
    }
    for o in overrides {
        apply_override(&mut v, o)?;
    }
    let cfg: ExperimentConfig = serde_json::from_value(v).context("invalid configuration")?;
    cfg.validate()?;
    Ok(cfg)
}
