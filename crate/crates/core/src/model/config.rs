use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loss coefficients. `fn`/`fp`/`correct` weight the sign-aware TSDF loss;
/// `cos`/`mse`/`mask` weight the distillation terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    #[serde(rename = "fn")]
    pub w_fn: f64,
    #[serde(rename = "fp")]
    pub w_fp: f64,
    #[serde(rename = "correct")]
    pub w_correct: f64,
    pub cos: f64,
    pub mse: f64,
    pub mask: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_fn: 5.0,
            w_fp: 3.0,
            w_correct: 1.0,
            cos: 1.0,
            mse: 1.0,
            mask: 0.1,
            beta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_fn, self.w_fp, self.w_correct, self.cos, self.mse, self.mask];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config("smooth-L1 beta must be positive".into()));
        }
        Ok(())
    }
}

/// Layer widths and branch switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub student_widths: [usize; 3],
    pub tsdf_width: usize,
    pub fuse_dim: usize,
    pub token_dim: usize,
    pub decoder_dim: usize,
    pub use_student: bool,
    pub use_multiscale: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            student_widths: [8, 16, 32],
            tsdf_width: 16,
            fuse_dim: 32,
            token_dim: 16,
            decoder_dim: 4,
            use_student: true,
            use_multiscale: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub loss_weights: LossWeights,
    pub chunk_a: usize,
    pub chunk_b: usize,
    pub feat_dim: usize,
    pub state_dim: usize,
    #[serde(default)]
    pub model: ModelConfig,
    /// Keep student weights fixed during completion training.
    #[serde(default)]
    pub freeze_student: bool,
    /// Use at most this many training samples.
    #[serde(default)]
    pub max_train_samples: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            epochs: 10,
            batch_size: 4,
            lr: 2e-3,
            loss_weights: LossWeights::default(),
            chunk_a: 4,
            chunk_b: 8,
            feat_dim: 16,
            state_dim: 16,
            model: ModelConfig::default(),
            freeze_student: false,
            max_train_samples: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, edge: usize) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} is not a finite non-negative number",
                self.lr
            )));
        }
        if self.chunk_a * self.chunk_b != edge {
            return Err(Error::Config(format!(
                "chunk sizes {} x {} must multiply to the grid edge {edge}",
                self.chunk_a, self.chunk_b
            )));
        }
        if self.feat_dim == 0 || self.state_dim == 0 {
            return Err(Error::Config("feat_dim and state_dim must be positive".into()));
        }
        let m = &self.model;
        let widths = [m.tsdf_width, m.fuse_dim, m.token_dim, m.decoder_dim];
        if m.student_widths.iter().chain(&widths).any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if m.fuse_dim < 2 || m.token_dim < 2 || m.decoder_dim < 2 {
            return Err(Error::Config("layer-normalized widths need at least 2 channels".into()));
        }
        self.loss_weights.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_json_uses_defaults() {
        let cfg = TrainConfig::from_json(
            r#"{"seed":1,"epochs":2,"batch_size":4,"lr":1e-4,"chunk_a":4,"chunk_b":8,"feat_dim":16,"state_dim":16}"#,
        )
        .unwrap();
        assert_eq!(cfg.loss_weights, LossWeights::default());
        cfg.validate(32).unwrap();
    }

    #[test]
    fn schema_violations_are_config_errors() {
        assert!(TrainConfig::from_json(r#"{"seed":1}"#).is_err());
        let cfg = TrainConfig {
            chunk_a: 3,
            ..TrainConfig::default()
        };
        assert!(cfg.validate(32).is_err());
        let text = serde_json::to_string(&TrainConfig::default())
            .unwrap()
            .replace("\"seed\"", "\"sed\"");
        assert!(TrainConfig::from_json(&text).is_err());
    }
}
