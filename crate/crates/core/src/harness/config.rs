use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::SynthConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::objectives::{GroupPlan, LossOptions, MiningMode, ObjectiveSpec, VCG_MASK_RATIO};

/// How the groups of an objective string combine each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupMode {
    /// Every group's loss every step, summed.
    #[default]
    Sum,
    /// One group per step, drawn uniformly.
    Sample,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mining {
    #[default]
    Stochastic,
    Deterministic,
}

impl From<Mining> for MiningMode {
    fn from(m: Mining) -> Self {
        match m {
            Mining::Stochastic => MiningMode::Stochastic,
            Mining::Deterministic => MiningMode::Deterministic,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSource {
    pub path: PathBuf,
    #[serde(default = "one")]
    pub ratio: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Corpus directories; one is drawn per step in proportion to `ratio`.
    pub corpora: Vec<CorpusSource>,
    /// Objective string, e.g. `ret%vast + cap%vast`.
    pub objective: String,
    pub group_mode: GroupMode,
    /// Per-group loss weights by tag (`vast`, `vat`, ...); missing ones are 1.
    pub group_weights: std::collections::BTreeMap<String, f64>,
    pub batch_size: usize,
    /// Length of the linear decay schedule.
    pub steps: usize,
    /// Stop early at this global step (the schedule still spans `steps`).
    pub stop_at: Option<usize>,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub mining: Mining,
    pub mask_ratio: f64,
    /// Training-set retrieval check every this many steps; 0 disables.
    pub eval_every: usize,
    /// Directory receiving `checkpoint.bin`, `vocab.txt` and `metrics.json`.
    pub out_dir: Option<PathBuf>,
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            corpora: Vec::new(),
            objective: "ret%vast + cap%vast".into(),
            group_mode: GroupMode::Sum,
            group_weights: Default::default(),
            batch_size: 16,
            steps: 500,
            stop_at: None,
            lr: 1e-3,
            weight_decay: 0.01,
            seed: 7,
            mining: Mining::Stochastic,
            mask_ratio: VCG_MASK_RATIO,
            eval_every: 0,
            out_dir: None,
            resume: None,
            model: ModelConfig::default(),
        }
    }
}

/// Parses TOML, mapping every parse failure (including unknown keys) to a
/// config error.
pub fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(format!("{what}: {e}")))
}

fn read_config_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))
}

/// Joins relative paths onto the directory of the file that named them.
pub(crate) fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p.to_path_buf(),
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: TrainConfig = parse_toml(text, "train config")?;
        c.validate()?;
        Ok(c)
    }

    /// Loads and validates; relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut c = Self::from_toml(&read_config_text(path)?)?;
        let base = path.parent();
        for src in &mut c.corpora {
            src.path = resolve(base, &src.path);
        }
        c.out_dir = c.out_dir.map(|p| resolve(base, &p));
        c.resume = c.resume.map(|p| resolve(base, &p));
        Ok(c)
    }

    pub fn objective_spec(&self) -> Result<ObjectiveSpec> {
        self.objective.parse()
    }

    /// Group plans with configured weights applied.
    pub fn plans(&self) -> Result<Vec<GroupPlan>> {
        let mut plans = self.objective_spec()?.plan();
        for (tag, &w) in &self.group_weights {
            let group: crate::objectives::ModalityGroup = tag.parse()?;
            let plan = plans
                .iter_mut()
                .find(|p| p.group == group)
                .ok_or_else(|| Error::Config(format!("weight given for group {tag} absent from the objective")))?;
            plan.weight = w;
        }
        Ok(plans)
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            mining: self.mining.into(),
            mask_ratio: self.mask_ratio,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2 for hard negatives".into()));
        }
        if self.stop_at.is_some_and(|s| s > self.steps) {
            return Err(Error::Config("stop_at exceeds steps".into()));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("lr must be positive and weight_decay non-negative".into()));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio <= 1.0) {
            return Err(Error::Config("mask_ratio must lie in (0, 1]".into()));
        }
        if self.corpora.is_empty() {
            return Err(Error::Config("no corpus configured".into()));
        }
        if self.corpora.iter().any(|c| !(c.ratio > 0.0)) {
            return Err(Error::Config("corpus ratios must be positive".into()));
        }
        if self.group_weights.values().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("group weights must be non-negative".into()));
        }
        self.plans()?;
        self.model.validate()
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring the fields that only
    /// say where to read or write (`out_dir`, `resume`, `stop_at`).
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        c.resume = None;
        c.stop_at = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// `gen-corpus` settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    #[serde(default = "default_shard_size")]
    pub shard_size: usize,
    pub synth: SynthConfig,
}

fn default_shard_size() -> usize {
    16
}

impl GenConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let c: GenConfig = parse_toml(&read_config_text(path)?, "corpus config")?;
        c.synth.validate()?;
        if c.shard_size == 0 {
            return Err(Error::Config("shard_size must be at least 1".into()));
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        objective = "ret%vat%vt + cap%vat%vt"
        steps = 10
        [[corpora]]
        path = "corpus"
    "#;

    #[test]
    fn parses_and_rejects_unknown_keys() {
        let c = TrainConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.plans().unwrap().len(), 2);
        assert_eq!(c.corpora[0].ratio, 1.0);
        let bad = format!("{MINIMAL}\nbogus = 1");
        assert!(matches!(TrainConfig::from_toml(&bad), Err(Error::Config(_))));
        let nested = format!("{MINIMAL}\n[model]\nembed_dim = 16\nwat = 2");
        assert!(matches!(TrainConfig::from_toml(&nested), Err(Error::Config(_))));
    }

    #[test]
    fn invariants() {
        let c = TrainConfig::from_toml(MINIMAL).unwrap();
        for bad in [
            TrainConfig { steps: 0, ..c.clone() },
            TrainConfig { batch_size: 1, ..c.clone() },
            TrainConfig { objective: "ret%nope".into(), ..c.clone() },
            TrainConfig { corpora: vec![], ..c.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn digest_ignores_locations() {
        let a = TrainConfig::from_toml(MINIMAL).unwrap();
        let b = TrainConfig {
            out_dir: Some("x".into()),
            stop_at: Some(3),
            ..a.clone()
        };
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), TrainConfig { seed: 1, ..a.clone() }.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn weights_apply() {
        let text = format!("{MINIMAL}\n[group_weights]\nvt = 0.5");
        let c = TrainConfig::from_toml(&text).unwrap();
        let plans = c.plans().unwrap();
        assert_eq!(plans.iter().find(|p| p.group.tag() == "vt").unwrap().weight, 0.5);
        let bad = format!("{MINIMAL}\n[group_weights]\nvast = 0.5");
        assert!(TrainConfig::from_toml(&bad).is_err());
    }
}
