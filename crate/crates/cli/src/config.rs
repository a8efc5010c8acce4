//! Run configuration: defaults, then the config file, then `--set`
//! overrides, then dedicated flags. Unknown keys are rejected with their path.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use shepherd_grid::coverage::default_horizons;
use shepherd_grid::harness::{BatchConfig, SweepAxis, DEFAULT_LOSS_LEVELS, DEFAULT_TARGET_LEVELS};
use shepherd_grid::{Scenario, SimError, Strategy};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("config {path} is not valid JSON: {reason}")]
    Syntax { path: String, reason: String },
    #[error("invalid config at `{path}`: {reason}")]
    Field { path: String, reason: String },
    #[error("bad override `{0}`: expected key=value")]
    Override(String),
    #[error(transparent)]
    Invalid(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub n_trials: usize,
    pub seed_base: u64,
    pub strategies: Vec<Strategy>,
    pub loss_levels: Vec<f64>,
    pub target_levels: Vec<usize>,
    pub coverage_horizons: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let batch = BatchConfig::default();
        Self {
            scenario: batch.scenario,
            n_trials: batch.n_trials,
            seed_base: batch.seed_base,
            strategies: batch.strategies,
            loss_levels: DEFAULT_LOSS_LEVELS.to_vec(),
            target_levels: DEFAULT_TARGET_LEVELS.to_vec(),
            coverage_horizons: default_horizons(),
        }
    }
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct FlagOverrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub strategy: Option<Strategy>,
    pub loss: Option<f64>,
    pub targets: Option<usize>,
    pub trace: bool,
}

impl RunConfig {
    pub fn batch(&self, sweep: SweepAxis) -> BatchConfig {
        BatchConfig {
            scenario: self.scenario.clone(),
            n_trials: self.n_trials,
            seed_base: self.seed_base,
            sweep,
            strategies: self.strategies.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.batch(SweepAxis::None).validate()?;
        self.batch(SweepAxis::PacketLoss(self.loss_levels.clone())).validate()?;
        self.batch(SweepAxis::TargetCount(self.target_levels.clone())).validate()?;
        if self.coverage_horizons.iter().any(|h| !(*h >= 0.0 && h.is_finite())) {
            return Err(SimError::InvalidParameter("coverage_horizons must be finite and non-negative".into()).into());
        }
        Ok(())
    }

    fn apply_flags(&mut self, flags: &FlagOverrides) {
        if let Some(seed) = flags.seed {
            self.scenario.seed = seed;
            self.seed_base = seed;
        }
        if let Some(n) = flags.trials {
            self.n_trials = n;
        }
        if let Some(s) = flags.strategy {
            self.scenario.strategy = s;
            self.strategies = vec![s];
        }
        if let Some(l) = flags.loss {
            self.scenario.channel.loss_prob = l;
        }
        if let Some(n) = flags.targets {
            self.scenario.n_targets = n;
            self.scenario.n_packs = n;
        }
        if flags.trace {
            self.scenario.record_trace = true;
        }
    }
}

/// Builds the effective configuration and validates it.
pub fn load(file: Option<&Path>, sets: &[String], flags: &FlagOverrides) -> Result<RunConfig, ConfigError> {
    let mut tree = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    if let Some(path) = file {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: display.clone(), source })?;
        let user: Value = if text.trim().is_empty() {
            Value::Object(Map::new())
        } else {
            serde_json::from_str(&text).map_err(|e| ConfigError::Syntax { path: display, reason: e.to_string() })?
        };
        merge(&mut tree, user);
    }
    for s in sets {
        apply_set(&mut tree, s)?;
    }
    let mut cfg: RunConfig = serde_path_to_error::deserialize(tree)
        .map_err(|e| ConfigError::Field { path: e.path().to_string(), reason: e.inner().to_string() })?;
    cfg.apply_flags(flags);
    cfg.validate()?;
    Ok(cfg)
}

/// Recursive object merge; non-object values replace.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// `a.b.c=value`. A bare key that is not top-level is looked up under `scenario`.
/// The value is parsed as JSON, falling back to a plain string.
fn apply_set(tree: &mut Value, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::Override(spec.to_string()));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let top_level = tree.as_object().is_some_and(|o| o.contains_key(key.split('.').next().unwrap_or("")));
    let full = if top_level { key.to_string() } else { format!("scenario.{key}") };

    let mut node = tree;
    let parts: Vec<&str> = full.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let obj = node.as_object_mut().ok_or_else(|| ConfigError::Field { path: full.clone(), reason: "not an object".into() })?;
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    let obj = node.as_object_mut().ok_or_else(|| ConfigError::Field { path: full.clone(), reason: "not an object".into() })?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
