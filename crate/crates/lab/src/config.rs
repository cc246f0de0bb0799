//! Sweep configuration.
//!
//! A TOML file, optionally starting from a named preset whose values it
//! overrides key by key:
//!
//! ```toml
//! preset = "desk"            # or "full"; omitted means "desk"
//! repetitions = 5
//! epsilons = [0.1]
//! pairs = ["absolute-nn", "quantile-qr"]
//!
//! [synthetic]
//! dims = [1]
//! noises = ["homo_gauss", "hetero_gauss"]
//!
//! [[datasets]]
//! name = "concrete"
//! path = "data/concrete.csv"
//! target = "strength"
//!
//! [training]
//! epochs = 1000
//! ```
//!
//! Every key is listed in `configs/reference.toml`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cplab_core::data::NoiseKind;
use cplab_core::models::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Nonconformity measure column of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NcmChoice {
    Absolute,
    Normalized,
    Quantile,
}

/// Underlying regressor column of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelChoice {
    Nn,
    Gp,
    Qr,
}

impl NcmChoice {
    pub fn name(self) -> &'static str {
        match self {
            NcmChoice::Absolute => "absolute",
            NcmChoice::Normalized => "normalized",
            NcmChoice::Quantile => "quantile",
        }
    }
}

impl ModelChoice {
    pub fn name(self) -> &'static str {
        match self {
            ModelChoice::Nn => "nn",
            ModelChoice::Gp => "gp",
            ModelChoice::Qr => "qr",
        }
    }
}

/// A nonconformity measure combined with a regressor, written `ncm-model`.
/// The quantile measure needs the quantile regressor; the other two accept
/// any regressor (a quantile regressor then predicts the median).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Pair {
    pub ncm: NcmChoice,
    pub model: ModelChoice,
}

impl Pair {
    pub const fn new(ncm: NcmChoice, model: ModelChoice) -> Self {
        Self { ncm, model }
    }

    /// The five pairs studied by default.
    pub const STANDARD: [Pair; 5] = [
        Pair::new(NcmChoice::Absolute, ModelChoice::Nn),
        Pair::new(NcmChoice::Absolute, ModelChoice::Gp),
        Pair::new(NcmChoice::Normalized, ModelChoice::Nn),
        Pair::new(NcmChoice::Normalized, ModelChoice::Gp),
        Pair::new(NcmChoice::Quantile, ModelChoice::Qr),
    ];
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.ncm.name(), self.model.name())
    }
}

impl FromStr for Pair {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s.split_once('-').ok_or_else(|| format!("pair `{s}` is not `ncm-model`"))?;
        let ncm = match a {
            "absolute" => NcmChoice::Absolute,
            "normalized" => NcmChoice::Normalized,
            "quantile" => NcmChoice::Quantile,
            _ => return Err(format!("unknown nonconformity measure `{a}`")),
        };
        let model = match b {
            "nn" => ModelChoice::Nn,
            "gp" => ModelChoice::Gp,
            "qr" => ModelChoice::Qr,
            _ => return Err(format!("unknown model `{b}`")),
        };
        if ncm == NcmChoice::Quantile && model != ModelChoice::Qr {
            return Err(format!("pair `{s}`: the quantile measure needs the qr model"));
        }
        Ok(Pair { ncm, model })
    }
}

impl TryFrom<String> for Pair {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<Pair> for String {
    fn from(p: Pair) -> String {
        p.to_string()
    }
}

/// Noise kind by its snake_case name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Noise(pub NoiseKind);

impl TryFrom<String> for Noise {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        NoiseKind::from_name(&s)
            .map(Noise)
            .ok_or_else(|| format!("unknown noise kind `{s}`"))
    }
}

impl From<Noise> for String {
    fn from(n: Noise) -> String {
        n.0.name().to_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub dims: Vec<usize>,
    /// `hetero_non_gauss` is only generated for `d = 1`.
    pub noises: Vec<Noise>,
    pub noise_level: f64,
    /// Rows in the separately drawn test set of every repetition.
    pub test_size: usize,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self {
            dims: vec![1],
            noises: NoiseKind::ALL.iter().copied().map(Noise).collect(),
            noise_level: 0.3,
            test_size: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealDataset {
    pub name: String,
    pub path: PathBuf,
    pub target: String,
    /// Feature columns in order; all non-target columns when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<String>>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_train_fraction() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub epochs: usize,
    /// 0 trains on the full proper training set at every step.
    pub batch_size: usize,
    pub hidden_units: usize,
    pub gp_learning_rate: f64,
    pub gp_steps: usize,
    pub gp_jitter: f64,
    pub trees: usize,
    pub depth: usize,
    pub shrinkage: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            hidden_units: t.hidden_units,
            gp_learning_rate: t.gp_learning_rate,
            gp_steps: t.gp_steps,
            gp_jitter: t.gp_jitter,
            trees: t.trees,
            depth: t.depth,
            shrinkage: t.shrinkage,
        }
    }
}

impl TrainingSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            hidden_units: self.hidden_units,
            gp_learning_rate: self.gp_learning_rate,
            gp_steps: self.gp_steps,
            gp_jitter: self.gp_jitter,
            trees: self.trees,
            depth: self.depth,
            shrinkage: self.shrinkage,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub repetitions: usize,
    pub base_seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub sizes: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub pairs: Vec<Pair>,
    /// Share of the training pool used for fitting; the rest calibrates.
    pub proper_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSection>,
    pub datasets: Vec<RealDataset>,
    pub training: TrainingSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// Reduced protocol: 20 repetitions, sizes 100/500/1000, one-dimensional
    /// synthetic data with 5000 test points, shortened GP optimisation.
    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            output_dir: None,
            repetitions: 20,
            base_seed: 20240,
            workers: 0,
            sizes: vec![100, 500, 1000],
            epsilons: vec![0.01, 0.05, 0.1, 0.2],
            pairs: Pair::STANDARD.to_vec(),
            proper_fraction: 0.8,
            synthetic: Some(SyntheticSection::default()),
            datasets: Vec::new(),
            training: TrainingSection {
                gp_steps: 100,
                gp_learning_rate: 0.05,
                ..TrainingSection::default()
            },
        }
    }

    /// Full protocol: 100 repetitions, sizes 100..=1000, dimensions 1, 2, 5
    /// and 8, 10 000 test points.
    pub fn full() -> Self {
        Self {
            name: "full".into(),
            repetitions: 100,
            sizes: (1..=10).map(|k| k * 100).collect(),
            synthetic: Some(SyntheticSection {
                dims: vec![1, 2, 5, 8],
                test_size: 10_000,
                ..SyntheticSection::default()
            }),
            training: TrainingSection::default(),
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            _ => Err(LabError::Config(format!("unknown preset `{name}`"))),
        }
    }

    /// Parses TOML text layered over its `preset` (default `desk`).
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut user: toml::Table = text.parse().map_err(|e: toml::de::Error| LabError::Config(e.to_string()))?;
        let preset = match user.remove("preset") {
            None => "desk".to_owned(),
            Some(toml::Value::String(s)) => s,
            Some(_) => return Err(LabError::Config("`preset` must be a string".into())),
        };
        let base = Self::preset(&preset)?;
        let mut merged = toml::Table::try_from(&base).map_err(|e| LabError::Config(e.to_string()))?;
        merge(&mut merged, user);
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => LabError::MissingFile(path.to_path_buf()),
            _ => LabError::io(path, e),
        })?;
        let mut cfg = Self::from_toml(&text)?;
        // Dataset paths are relative to the config file.
        if let Some(dir) = path.parent() {
            for d in &mut cfg.datasets {
                if d.path.is_relative() {
                    d.path = dir.join(&d.path);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(LabError::Config(m.to_owned()));
        if self.repetitions == 0 {
            return fail("repetitions must be at least 1");
        }
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return fail("sizes must be a nonempty list of positive counts");
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
            return fail("epsilons must be a nonempty list of values in (0, 1)");
        }
        if self.pairs.is_empty() {
            return fail("pairs must not be empty");
        }
        if !(self.proper_fraction > 0.0 && self.proper_fraction < 1.0) {
            return fail("proper_fraction must lie in (0, 1)");
        }
        if let Some(s) = &self.synthetic {
            if s.dims.is_empty() || s.dims.contains(&0) || s.noises.is_empty() {
                return fail("synthetic dims and noises must be nonempty");
            }
            if !(s.noise_level >= 0.0) || s.test_size == 0 {
                return fail("synthetic noise_level must be >= 0 and test_size > 0");
            }
        }
        for d in &self.datasets {
            if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
                return fail("dataset train_fraction must lie in (0, 1)");
            }
        }
        if self.synthetic.is_none() && self.datasets.is_empty() {
            return fail("no data source: add [synthetic] or [[datasets]]");
        }
        self.training.to_train_config(0).validate()?;
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
