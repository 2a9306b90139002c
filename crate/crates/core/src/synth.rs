//! Synthetic paired data where both views are noisy linear projections of shared
//! latent concepts, so cross-view alignment is learnable.
//!
//! Each pair draws a few latent concept vectors. Every token (in either view)
//! projects one randomly chosen concept through a view-specific mixing matrix;
//! condensed tokens (query CLS, item AGG per expert) project the mean concept
//! through their own matrices. Isotropic Gaussian noise with standard deviation
//! `noise` is added to every coordinate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::data::PairedDataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::TokenBag;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub pairs: usize,
    /// Inclusive token-count range for queries.
    pub query_tokens: (usize, usize),
    /// Inclusive token-count range for items.
    pub item_tokens: (usize, usize),
    pub latent_dim: usize,
    pub concepts_per_pair: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            pairs: 512,
            query_tokens: (4, 12),
            item_tokens: (6, 16),
            latent_dim: 8,
            concepts_per_pair: 3,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Parses a flat TOML table; missing keys take their defaults.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::InvalidConfig(e.message().to_string()))
    }

    pub fn validate(&self, cfg: &EngineConfig) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad(format!("noise must be non-negative, got {}", self.noise));
        }
        if self.latent_dim == 0 || self.latent_dim > cfg.text_dim.min(cfg.dim) {
            return bad(format!(
                "latent_dim {} must be in 1..={}",
                self.latent_dim,
                cfg.text_dim.min(cfg.dim)
            ));
        }
        for (name, (lo, hi)) in [("query", self.query_tokens), ("item", self.item_tokens)] {
            if lo == 0 || lo > hi {
                return bad(format!("{name} token range {lo}..={hi} is invalid"));
            }
        }
        if self.concepts_per_pair == 0 {
            return bad("concepts_per_pair must be positive".into());
        }
        Ok(())
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

fn noisy(rng: &mut ChaCha8Rng, mix: &Matrix, z: &[f64], noise: f64) -> Vec<f64> {
    let mut v = mix.matvec(z);
    if noise > 0.0 {
        for x in &mut v {
            *x += noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    v
}

/// Generates `spec.pairs` matched pairs with dimensions taken from `cfg`.
pub fn generate(spec: &SyntheticSpec, cfg: &EngineConfig) -> Result<PairedDataset> {
    spec.validate(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let r = spec.latent_dim;
    let s = 1.0 / (r as f64).sqrt();
    let cls_mix = gaussian_matrix(&mut rng, cfg.text_dim, r, s);
    let qtok_mix = gaussian_matrix(&mut rng, cfg.text_dim, r, s);
    let agg_mix: Vec<Matrix> = (0..cfg.num_experts)
        .map(|_| gaussian_matrix(&mut rng, cfg.dim, r, s))
        .collect();
    let itok_mix = gaussian_matrix(&mut rng, cfg.dim, r, s);

    let mut queries = Vec::with_capacity(spec.pairs);
    let mut items = Vec::with_capacity(spec.pairs);
    for _ in 0..spec.pairs {
        let concepts: Vec<Vec<f64>> = (0..spec.concepts_per_pair)
            .map(|_| (0..r).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let mut mean = vec![0.0; r];
        for c in &concepts {
            for (m, v) in mean.iter_mut().zip(c) {
                *m += v / concepts.len() as f64;
            }
        }

        let cls = noisy(&mut rng, &cls_mix, &mean, spec.noise);
        let nq = rng.random_range(spec.query_tokens.0..=spec.query_tokens.1);
        let qtok: Vec<Vec<f64>> = (0..nq)
            .map(|_| {
                let c = rng.random_range(0..concepts.len());
                noisy(&mut rng, &qtok_mix, &concepts[c], spec.noise)
            })
            .collect();
        queries.push(TokenBag::query(cls, Matrix::from_rows(&qtok))?);

        let agg: Vec<Vec<f64>> = agg_mix
            .iter()
            .map(|m| noisy(&mut rng, m, &mean, spec.noise))
            .collect();
        let ni = rng.random_range(spec.item_tokens.0..=spec.item_tokens.1);
        let itok: Vec<Vec<f64>> = (0..ni)
            .map(|_| {
                let c = rng.random_range(0..concepts.len());
                noisy(&mut rng, &itok_mix, &concepts[c], spec.noise)
            })
            .collect();
        items.push(TokenBag::item(
            Matrix::from_rows(&agg),
            Matrix::from_rows(&itok),
        )?);
    }
    PairedDataset::new(queries, items)
}
