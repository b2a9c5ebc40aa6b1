//! Training configuration, the composed model, the training loop, metrics and
//! the ablation / alpha-sweep / gradient-check experiments.

mod experiments;
mod metrics;
mod model;
mod train;

use serde::{Deserialize, Serialize};

use crate::classifier_loss::LossConfig;
use crate::data::{Modality, ModalityDims};
use crate::dialogue_graph::{GraphConfig, RelationNorm, Window};
use crate::encoder_cam::CamConfig;
use crate::error::{Error, Result};
use crate::numerics::FloatMode;

pub use experiments::{
    ablate, default_alpha_grid, gradcheck_pipeline, modality_grid, run_cell, subset_name, sweep_alpha, AblationReport,
    AlphaPoint, CellResult,
};
pub use metrics::{compute_metrics, majority_baseline, population_std, ClassScore, Metrics};
pub use model::Model;
pub use train::{
    evaluate, load_model, loss_and_grad, meta_path, save_model, train, train_with, CheckpointMeta, EpochLog,
    Evaluation, TrainOutcome,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub disable_cam: bool,
    pub disable_graph: bool,
    pub modalities: Vec<Modality>,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            disable_cam: false,
            disable_graph: false,
            modalities: Modality::ALL.to_vec(),
        }
    }
}

impl Ablation {
    pub fn active(&self) -> [bool; 3] {
        let mut a = [false; 3];
        for m in &self.modalities {
            a[m.index()] = true;
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// conversations per batch
    pub batch_size: usize,
    pub learning_rate: f64,
    /// coarse-loss weight; absent means the taxonomy default
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub lambda: f64,
    pub drop_rate: f64,
    pub window: Window,
    pub cam: CamConfig,
    pub d_g: usize,
    pub d_h1: usize,
    pub d_h2: usize,
    pub mlp_hidden: usize,
    pub max_speakers: usize,
    pub relation_norm: RelationNorm,
    pub seed: u64,
    pub ablation: Ablation,
    pub float_mode: FloatMode,
    /// train fraction when a command splits one dataset
    pub split_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            epochs: 15,
            batch_size: 32,
            learning_rate: 0.005,
            alpha: None,
            lambda: 1e-5,
            drop_rate: 0.1,
            window: Window { p: 10, f: 10 },
            cam: CamConfig {
                t: 1,
                ..CamConfig::desk()
            },
            d_g: 12,
            d_h1: 16,
            d_h2: 16,
            mlp_hidden: 16,
            max_speakers: 2,
            relation_norm: RelationNorm::Learned,
            seed: 0,
            ablation: Ablation::default(),
            float_mode: FloatMode::F64,
            split_ratio: 0.8,
        }
    }

    pub fn paper() -> Self {
        Self {
            epochs: 60,
            cam: CamConfig::paper(),
            d_g: 100,
            d_h1: 100,
            d_h2: 100,
            mlp_hidden: 100,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!("unknown preset {other}; expected desk or paper"))),
        }
    }

    /// Parses TOML. An optional top-level `preset` key (default `desk`) picks
    /// the base; every other key overrides it, tables merging recursively.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let preset = match table.remove("preset") {
            None => "desk".to_string(),
            Some(toml::Value::String(s)) => s,
            Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
        };
        let base = toml::Table::try_from(Self::preset(&preset)?).map_err(|e| Error::Config(e.to_string()))?;
        let mut merged = toml::Value::Table(base);
        merge(&mut merged, toml::Value::Table(table));
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig {
            window: self.window,
            max_speakers: self.max_speakers,
            d_h1: self.d_h1,
            d_h2: self.d_h2,
            relation_norm: self.relation_norm,
            drop_rate: self.drop_rate,
            rescale: true,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            lambda: self.lambda,
        }
    }

    pub fn dims(&self) -> ModalityDims {
        self.cam.dims_in
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if self.d_g == 0 || self.mlp_hidden == 0 {
            return bad("d_g and mlp_hidden must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a finite non-negative number");
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad("split_ratio must lie in (0, 1)");
        }
        if self.ablation.modalities.is_empty() {
            return bad("ablation.modalities must name at least one modality");
        }
        let mut seen = self.ablation.modalities.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.ablation.modalities.len() {
            return bad("ablation.modalities lists a modality twice");
        }
        self.cam.validate()?;
        self.graph_config().validate()?;
        self.loss_config().validate()
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
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
