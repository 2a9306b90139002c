#![allow(dead_code)]

pub mod invariants;

use hybridq_core::data::PairedDataset;
use hybridq_core::objective::hybrid_loss;
use hybridq_core::synth::{generate, SyntheticSpec};
use hybridq_core::{EngineConfig, ParameterSet, Trainable};

/// The small configuration used throughout the numerical checks.
pub fn toy_config() -> EngineConfig {
    EngineConfig {
        dim: 8,
        text_dim: 6,
        num_subspaces: 2,
        num_codewords: 4,
        num_clusters: 2,
        num_experts: 2,
        seed: 5,
        ..Default::default()
    }
}

pub fn toy_data(cfg: &EngineConfig, pairs: usize, seed: u64) -> PairedDataset {
    generate(
        &SyntheticSpec {
            pairs,
            query_tokens: (2, 4),
            item_tokens: (2, 5),
            latent_dim: 4.min(cfg.dim).min(cfg.text_dim),
            noise: 0.3,
            seed,
            ..Default::default()
        },
        cfg,
    )
    .unwrap()
}

/// Central finite differences of the hybrid loss wrt every trainable value,
/// laid out like `Trainable`.
pub fn finite_difference_grad(params: &ParameterSet, data: &PairedDataset, step: f64) -> Trainable {
    let (q, i): (Vec<_>, Vec<_>) = (0..data.len()).map(|k| data.pair(k)).unzip();
    let mut out = Trainable::zeros_like(&params.trainable);
    let shapes: Vec<usize> = params
        .trainable
        .tensors()
        .iter()
        .map(|t| t.data.len())
        .collect();
    for (ti, &len) in shapes.iter().enumerate() {
        for j in 0..len {
            let mut plus = params.clone();
            plus.trainable.tensors_mut()[ti].data[j] += step;
            let mut minus = params.clone();
            minus.trainable.tensors_mut()[ti].data[j] -= step;
            let lp = hybrid_loss(&plus, &q, &i).unwrap().total;
            let lm = hybrid_loss(&minus, &q, &i).unwrap().total;
            out.tensors_mut()[ti].data[j] = (lp - lm) / (2.0 * step);
        }
    }
    out
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both are (numerically) zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-10 {
        0.0
    } else {
        diff / scale
    }
}
