use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SceneSpec;
use crate::layers::ModelConfig;
use crate::loss::DEFAULT_PGA_K;
use crate::{Error, Result};

/// Boundary weighting of the loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgaConfig {
    pub enabled: bool,
    pub eta: f64,
    pub theta: f64,
    /// Neighbours per score.
    pub k: usize,
}

impl Default for PgaConfig {
    fn default() -> Self {
        PgaConfig {
            enabled: true,
            eta: 1.0,
            theta: 1.0 / DEFAULT_PGA_K as f64,
            k: DEFAULT_PGA_K,
        }
    }
}

impl PgaConfig {
    /// Slope actually applied: disabling keeps `eta` and zeroes `theta`.
    pub fn effective_theta(&self) -> f64 {
        if self.enabled {
            self.theta
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// SGD momentum, or Adam's first-moment decay.
    pub momentum: f64,
    /// Adam's second-moment decay.
    pub beta2: f64,
    pub steps: usize,
    /// Fraction of `steps` after which the learning rate is multiplied by
    /// `decay_factor`.
    pub decay_at: f64,
    pub decay_factor: f64,
    /// Rescale gradients whose global norm exceeds this (0 disables).
    pub clip_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr: 1e-2,
            momentum: 0.9,
            beta2: 0.999,
            steps: 300,
            decay_at: 0.7,
            decay_factor: 0.1,
            clip_norm: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn lr_at(&self, step: usize) -> f64 {
        let boundary = (self.decay_at * self.steps as f64).floor() as usize;
        if step >= boundary {
            self.lr * self.decay_factor
        } else {
            self.lr
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Crop radius; defaults to 1.0 for synthetic scenes and 4.0 for scans.
    pub sphere_radius: Option<f64>,
    /// Minimum number of crops covering each point at inference.
    pub votes: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            sphere_radius: None,
            votes: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Kitti,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Synthetic scene layout; its seed is replaced per scene.
    pub scene: SceneSpec,
    pub train_scenes: usize,
    pub validation_scenes: usize,
    /// Seed of the first training scene; validation scenes start at
    /// `scene_seed + 1000`.
    pub scene_seed: u64,
    /// SemanticKITTI root (containing `sequences/`).
    pub kitti_root: String,
    /// Remap table path; empty uses the bundled table.
    pub remap: String,
    /// Limit on scans per split (0 = all).
    pub max_scans: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            scene: SceneSpec::plane_and_poles(0),
            train_scenes: 1,
            validation_scenes: 1,
            scene_seed: 0,
            kitti_root: String::new(),
            remap: String::new(),
            max_scans: 0,
        }
    }
}

/// Everything a training or evaluation run needs. Loaded from TOML; every
/// field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub seed: u64,
    /// Write a checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: usize,
    /// Validate every this many steps (0 = never during training).
    pub eval_every: usize,
    pub model: ModelConfig,
    pub pga: PgaConfig,
    pub optimizer: OptimizerConfig,
    pub sampling: SamplingConfig,
    pub data: DataConfig,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            seed: 0,
            checkpoint_every: 0,
            eval_every: 0,
            model: ModelConfig::default(),
            pga: PgaConfig::default(),
            optimizer: OptimizerConfig::default(),
            sampling: SamplingConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl NetworkConfig {
    /// Parses a TOML document, then applies `key.path=value` overrides.
    /// Values are read as TOML (`0.5`, `true`, `"sgd"`); anything that does not
    /// parse is taken as a bare string.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let cfg: NetworkConfig = if overrides.is_empty() {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
            for o in overrides {
                apply_override(&mut table, o)?;
            }
            NetworkConfig::deserialize(toml::Value::Table(table))
                .map_err(|e| Error::Config(format!("after overrides: {e}")))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        NetworkConfig::from_toml(&text, overrides).map_err(|e| match (e, path) {
            (Error::Config(m), Some(p)) => Error::Config(format!("{}: {m}", p.display())),
            (e, _) => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let err = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.pga.eta > 0.0) {
            return err("pga.eta must be positive");
        }
        if !(self.pga.theta >= 0.0) {
            return err("pga.theta must be non-negative");
        }
        if self.pga.k == 0 {
            return err("pga.k must be at least 1");
        }
        let o = &self.optimizer;
        if !(o.lr >= 0.0 && o.lr.is_finite()) {
            return err("optimizer.lr must be a non-negative number");
        }
        if !(0.0..1.0).contains(&o.momentum) || !(0.0..1.0).contains(&o.beta2) {
            return err("optimizer.momentum and optimizer.beta2 must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&o.decay_at) || !(o.decay_factor >= 0.0) {
            return err("optimizer.decay_at must lie in [0, 1] and decay_factor be >= 0");
        }
        if !(o.clip_norm >= 0.0) {
            return err("optimizer.clip_norm must be >= 0");
        }
        if let Some(r) = self.sampling.sphere_radius {
            if !(r > 0.0 && r.is_finite()) {
                return err("sampling.sphere_radius must be positive");
            }
        }
        if self.sampling.votes == 0 {
            return err("sampling.votes must be at least 1");
        }
        if self.data.source == DataSource::Synthetic
            && self.data.scene.n_classes() > self.model.n_classes
        {
            return Err(Error::Config(format!(
                "synthetic scene emits {} classes but model.n_classes = {}",
                self.data.scene.n_classes(),
                self.model.n_classes
            )));
        }
        Ok(())
    }

    pub fn sphere_radius(&self) -> f64 {
        self.sampling.sphere_radius.unwrap_or(match self.data.source {
            DataSource::Synthetic => 1.0,
            DataSource::Kitti => 4.0,
        })
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let key = key.trim();
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key {key:?} is malformed")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key {key:?}: {p} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
