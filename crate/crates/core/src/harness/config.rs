use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::{ModelConfig, RefineMode};
use crate::render::io::read_json;
use crate::tensor::AdamConfig;

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: PathBuf,
    pub out: PathBuf,
    /// Identities rendered by `gen`.
    pub identities: usize,
    pub epochs: usize,
    pub batch: usize,
    /// Stops training early once this many steps ran.
    pub max_steps: Option<usize>,
    pub lr: f64,
    pub betas: (f64, f64),
    pub width: usize,
    pub multi_view: bool,
    pub use_url: bool,
    pub use_cycle: bool,
    pub use_refine: bool,
    /// Plain convolutions instead of deformable ones in the refinement.
    pub conv_refine: bool,
    pub cycle_stopgrad: bool,
    pub camera_jitter_deg: f64,
    pub face_bank: usize,
    pub weights: LossWeights,
    /// Validation render interval in steps; 0 disables.
    pub val_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            dataset: PathBuf::from("data"),
            out: PathBuf::from("runs/default"),
            identities: 32,
            epochs: 30,
            batch: 8,
            max_steps: None,
            lr: 1e-3,
            betas: (0.9, 0.999),
            width: 32,
            multi_view: true,
            use_url: true,
            use_cycle: true,
            use_refine: true,
            conv_refine: false,
            cycle_stopgrad: false,
            camera_jitter_deg: 0.0,
            face_bank: crate::data::DEFAULT_FACE_BANK_SIZE,
            weights: LossWeights::default(),
            val_every: 100,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let config: Self = read_json(path)?;
        config.validate()?;
        Ok(config)
    }

    /// Loads `path` (or the defaults) and applies `key=value` overrides.
    pub fn load_with_overrides(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let base = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        base.with_overrides(overrides)
    }

    /// Applies `key=value` pairs; dotted keys reach nested fields and values
    /// parse as JSON when possible, as strings otherwise.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(self).expect("config serializes");
        for item in overrides {
            let (key, raw) = item.split_once('=').ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
            let key = key.trim_start_matches("--").replace('-', "_");
            let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut slot = &mut value;
            for part in key.split('.') {
                slot = slot.as_object_mut().and_then(|o| o.get_mut(part)).ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
            }
            *slot = parsed;
        }
        let config: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch == 0 || self.width == 0 {
            return fail("batch and width must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("learning rate must be positive");
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return fail("betas must lie in [0, 1)");
        }
        if self.use_cycle && !self.multi_view {
            return fail("the cycle loss needs multi-view training");
        }
        if self.conv_refine && !self.use_refine {
            return fail("conv_refine needs use_refine");
        }
        if !(self.camera_jitter_deg >= 0.0 && self.camera_jitter_deg.is_finite()) {
            return fail("camera_jitter_deg must be non-negative");
        }
        if self.face_bank == 0 {
            return fail("face_bank must be positive");
        }
        self.weights.validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        let refine = match (self.use_refine, self.conv_refine) {
            (false, _) => RefineMode::None,
            (true, true) => RefineMode::Conv,
            (true, false) => RefineMode::Deformable,
        };
        ModelConfig { width: self.width, refine }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.betas.0, beta2: self.betas.1, ..AdamConfig::default() }
    }

    /// Hex SHA-256 prefix of the canonical JSON of every field except the
    /// dataset and output paths.
    pub fn fingerprint(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(o) = value.as_object_mut() {
            o.remove("dataset");
            o.remove("out");
        }
        let digest = Sha256::digest(value.to_string().as_bytes());
        hex::encode(&digest[..8])
    }
}
