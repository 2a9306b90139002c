//! Engine configuration.
//!
//! The on-disk form is a flat TOML document whose keys are the field names of
//! [`EngineConfig`]. Missing keys take their defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Batch-norm running-stat momentum for the cluster-assignment logits.
pub const BN_MOMENTUM: f64 = 0.1;
/// Batch-norm variance epsilon.
pub const BN_EPS: f64 = 1e-5;
/// Guard added inside the norm of expert projections.
pub const NORM_EPS: f64 = 1e-12;
/// Vectors with a smaller norm are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Shared embedding dimension.
    pub dim: usize,
    /// Raw query-token dimension.
    pub text_dim: usize,
    /// Sub-codebooks per quantization level.
    pub num_subspaces: usize,
    /// Codewords per sub-codebook; a power of two.
    pub num_codewords: usize,
    /// Active (non-ghost) clusters, i.e. fine-grained levels.
    pub num_clusters: usize,
    /// Modality experts on the item side.
    pub num_experts: usize,
    /// Scale applied to codeword attention logits.
    pub alpha: f64,
    /// Contrastive temperature.
    pub tau: f64,
    pub learning_rate: f64,
    pub lr_decay_every_steps: u64,
    pub lr_decay_factor: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub max_epochs: usize,
    /// Hard cap on optimizer steps; 0 disables the cap.
    pub max_steps: u64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            dim: 512,
            text_dim: 768,
            num_subspaces: 32,
            num_codewords: 256,
            num_clusters: 7,
            num_experts: 7,
            alpha: 1.0,
            tau: 0.05,
            learning_rate: 5e-5,
            lr_decay_every_steps: 1000,
            lr_decay_factor: 0.95,
            batch_size: 128,
            seed: 0,
            max_epochs: 10,
            max_steps: 0,
            patience: 0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        for (name, v) in [
            ("dim", self.dim),
            ("text_dim", self.text_dim),
            ("num_subspaces", self.num_subspaces),
            ("num_clusters", self.num_clusters),
            ("num_experts", self.num_experts),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !self.dim.is_multiple_of(self.num_subspaces) {
            return bad(format!(
                "dim {} is not divisible by num_subspaces {}",
                self.dim, self.num_subspaces
            ));
        }
        if self.num_codewords < 2 || !self.num_codewords.is_power_of_two() {
            return bad(format!(
                "num_codewords {} must be a power of two >= 2",
                self.num_codewords
            ));
        }
        if self.num_codewords > 1 << 16 {
            return bad(format!(
                "num_codewords {} exceeds 65536",
                self.num_codewords
            ));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            ));
        }
        if self.lr_decay_every_steps == 0 {
            return bad("lr_decay_every_steps must be positive".into());
        }
        if !(self.lr_decay_factor.is_finite() && self.lr_decay_factor > 0.0) {
            return bad(format!(
                "lr_decay_factor must be positive, got {}",
                self.lr_decay_factor
            ));
        }
        Ok(())
    }

    /// Sub-space dimension `dim / num_subspaces`.
    pub fn sub_dim(&self) -> usize {
        self.dim / self.num_subspaces
    }

    /// Coarse level plus one level per active cluster.
    pub fn num_levels(&self) -> usize {
        self.num_clusters + 1
    }

    pub fn bits_per_index(&self) -> u32 {
        self.num_codewords.trailing_zeros()
    }

    pub fn code_bits_per_level(&self) -> usize {
        self.num_subspaces * self.bits_per_index() as usize
    }

    /// Bytes needed to store one item's full hybrid code.
    pub fn code_bytes_per_item(&self) -> usize {
        (self.num_levels() * self.code_bits_per_level()).div_ceil(8)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(s).map_err(|e| Error::InvalidConfig(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).with_path(path))?;
        Self::from_toml_str(&text)
    }
}
