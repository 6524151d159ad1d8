//! Experiment configuration.
//!
//! Values come from three layers, later ones winning: built-in defaults, a
//! JSON config file, then command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{ensure, Result};
use neuralda_core::datagen::{FeatureConfig, WalkConfig};
use neuralda_core::network::{InitScheme, InputMode, DEFAULT_HIDDEN};
use neuralda_core::sinkhorn::SinkhornConfig;
use neuralda_core::trainer::{graduation_rate_for, Optimizer, SupervisedConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn build(self) -> Optimizer {
        match self {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::adam(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    PaperLiteral,
    Scaled,
}

impl From<InitKind> for InitScheme {
    fn from(k: InitKind) -> Self {
        match k {
            InitKind::PaperLiteral => InitScheme::PaperLiteral,
            InitKind::Scaled => InitScheme::Scaled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Positional,
    Contextual,
    Both,
}

impl From<InputKind> for InputMode {
    fn from(k: InputKind) -> Self {
        match k {
            InputKind::Positional => InputMode::Positional,
            InputKind::Contextual => InputMode::Contextual,
            InputKind::Both => InputMode::Both,
        }
    }
}

/// Random-walk constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub objects: usize,
    pub dim: usize,
    pub steps: usize,
    pub sigma_q: f64,
    pub sigma_r: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let w = WalkConfig::default();
        Self { objects: w.objects, dim: w.dim, steps: w.steps, sigma_q: w.sigma_q, sigma_r: w.sigma_r }
    }
}

impl ModelSettings {
    pub fn walk(&self, sigma_r: f64) -> WalkConfig {
        WalkConfig {
            objects: self.objects,
            dim: self.dim,
            steps: self.steps,
            sigma_q: self.sigma_q,
            sigma_r,
            shuffle: true,
        }
    }
}

/// EM training settings shared by every cell of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub iterations: usize,
    /// `Q_min` scale used whenever graduated optimization is on.
    pub q_min_scale: f64,
    pub batch_size: usize,
    pub subsequence_len: usize,
    pub temperature: f64,
    pub final_temperature: Option<f64>,
    pub sinkhorn_iterations: usize,
    pub optimizer: OptimizerKind,
    pub clip_norm: f64,
    pub hidden: Vec<usize>,
    pub init: InitKind,
    pub restarts: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            iterations: t.iterations,
            q_min_scale: t.q_min_scale,
            batch_size: t.batch_size,
            subsequence_len: t.subsequence_len,
            temperature: t.sinkhorn.temperature,
            final_temperature: t.final_temperature,
            sinkhorn_iterations: t.sinkhorn.iterations,
            optimizer: OptimizerKind::Sgd,
            clip_norm: t.clip_norm,
            hidden: DEFAULT_HIDDEN.to_vec(),
            init: InitKind::Scaled,
            restarts: t.restarts,
        }
    }
}

impl TrainSettings {
    pub fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig { temperature: self.temperature, iterations: self.sinkhorn_iterations }
    }

    /// `graduation_rate <= 1` disables graduated optimization.
    pub fn build(&self, learning_rate: f64, graduation_rate: f64, seed: u64, mode: InputMode) -> TrainConfig {
        let base = TrainConfig {
            learning_rate,
            iterations: self.iterations,
            graduation_rate: 1.0,
            q_min_scale: 1.0,
            batch_size: self.batch_size,
            subsequence_len: self.subsequence_len,
            sinkhorn: self.sinkhorn(),
            final_temperature: self.final_temperature,
            seed,
            optimizer: self.optimizer.build(),
            clip_norm: self.clip_norm,
            input_mode: mode,
            hidden: self.hidden.clone(),
            init: self.init.into(),
            restarts: self.restarts,
        };
        if graduation_rate > 1.0 {
            TrainConfig { graduation_rate, q_min_scale: self.q_min_scale, ..base }
        } else {
            base
        }
    }

    /// The rate that reaches full `Q` halfway through training.
    pub fn default_graduation_rate(&self) -> f64 {
        graduation_rate_for(self.q_min_scale, self.iterations)
    }
}

/// Feature-conditioned detector comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSettings {
    pub feature_dim: usize,
    pub sigma_f: f64,
    pub dataset_seed: u64,
    /// Leading fraction of each trace used for training.
    pub train_fraction: f64,
    pub supervised_learning_rate: f64,
    pub supervised_iterations: usize,
    pub supervised_batch_size: usize,
    /// EM settings for the detector; the learning rate and GO come from here.
    pub em_learning_rate: f64,
    pub em_optimizer: OptimizerKind,
    pub em_graduation: bool,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        let s = SupervisedConfig::default();
        Self {
            feature_dim: 8,
            sigma_f: 0.5,
            dataset_seed: 1,
            train_fraction: 0.8,
            supervised_learning_rate: s.learning_rate,
            supervised_iterations: s.iterations,
            supervised_batch_size: s.batch_size,
            em_learning_rate: TrainConfig::default().learning_rate,
            em_optimizer: OptimizerKind::Sgd,
            em_graduation: true,
        }
    }
}

impl DetectorSettings {
    pub fn features(&self) -> FeatureConfig {
        FeatureConfig { dim: self.feature_dim, sigma_f: self.sigma_f, dataset_seed: self.dataset_seed }
    }

    pub fn supervised(&self, seed: u64, train: &TrainSettings) -> SupervisedConfig {
        SupervisedConfig {
            learning_rate: self.supervised_learning_rate,
            iterations: self.supervised_iterations,
            batch_size: self.supervised_batch_size,
            seed,
            optimizer: Optimizer::adam(),
            input_mode: InputMode::Contextual,
            hidden: train.hidden.clone(),
            init: train.init.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelSettings,
    pub train: TrainSettings,
    /// Learning-rate grid.
    pub learning_rates: Vec<f64>,
    /// Graduation-rate grid; `1.0` means graduated optimization off.
    pub graduation_rates: Vec<f64>,
    /// Measurement-noise grid.
    pub sigma_r: Vec<f64>,
    pub seeds: Vec<u64>,
    pub detector: DetectorSettings,
    /// Not part of the fingerprint.
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainSettings::default();
        let gamma_half = train.default_graduation_rate();
        Self {
            name: "neuralda".into(),
            model: ModelSettings::default(),
            learning_rates: vec![0.005, 0.02, 0.1, 0.5],
            graduation_rates: vec![1.0, gamma_half, 1.1],
            sigma_r: vec![ModelSettings::default().sigma_r],
            seeds: (0..50).collect(),
            detector: DetectorSettings::default(),
            out_dir: PathBuf::from("out"),
            train,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        crate::io::read_json(path)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.learning_rates.is_empty(), "learning-rate grid is empty");
        ensure!(!self.graduation_rates.is_empty(), "graduation-rate grid is empty");
        ensure!(!self.sigma_r.is_empty(), "sigma_r grid is empty");
        ensure!(!self.seeds.is_empty(), "seed list is empty");
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        ensure!(seeds.len() == self.seeds.len(), "seeds must be distinct");
        ensure!(self.learning_rates.iter().all(|l| *l > 0.0), "learning rates must be positive");
        ensure!(self.graduation_rates.iter().all(|g| *g >= 1.0), "graduation rates must be >= 1");
        ensure!(self.sigma_r.iter().all(|s| *s >= 0.0), "sigma_r must be non-negative");
        ensure!(self.train.restarts >= 1, "restarts must be at least 1");
        ensure!(
            self.detector.train_fraction > 0.0 && self.detector.train_fraction < 1.0,
            "train fraction must lie in (0, 1)"
        );
        self.model.walk(self.model.sigma_r).validate()?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON of everything that affects results.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}
