//! Soft cluster assignment with one ghost cluster, and residual aggregation into
//! fine-grained level embeddings.
//!
//! Cluster 0 is the ghost: it competes in the assignment softmax but its residual
//! is never emitted. Assignment logits pass through a per-cluster batch norm,
//! using batch statistics in [`Mode::Train`] and running statistics in
//! [`Mode::Infer`].

use crate::config::{BN_EPS, BN_MOMENTUM, ZERO_NORM};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, normalize_backward, softmax, softmax_backward, Matrix};
use crate::model::{Level, LevelEmbedding};
use crate::params::{BnRunning, Trainable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy)]
pub struct VladParams<'a> {
    pub centroids: &'a Matrix,
    pub assign_weights: &'a Matrix,
    pub bn_scale: &'a [f64],
    pub bn_shift: &'a [f64],
    pub running: &'a BnRunning,
}

impl<'a> VladParams<'a> {
    pub fn from_parts(t: &'a Trainable, running: &'a BnRunning) -> Self {
        Self {
            centroids: &t.centroids,
            assign_weights: &t.assign_weights,
            bn_scale: &t.bn_scale,
            bn_shift: &t.bn_shift,
            running,
        }
    }

    pub fn num_clusters(&self) -> usize {
        self.centroids.rows() - 1
    }
}

/// Per-channel statistics of one training batch of logits.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased variance (used for normalization).
    pub var: Vec<f64>,
    pub count: usize,
}

impl BnRunning {
    /// Exponential moving update with momentum 0.1; the running variance takes
    /// the unbiased estimate.
    pub fn update(&mut self, stats: &BatchStats) {
        let n = stats.count as f64;
        let correction = if stats.count > 1 { n / (n - 1.0) } else { 1.0 };
        for c in 0..self.mean.len() {
            self.mean[c] = (1.0 - BN_MOMENTUM) * self.mean[c] + BN_MOMENTUM * stats.mean[c];
            self.var[c] =
                (1.0 - BN_MOMENTUM) * self.var[c] + BN_MOMENTUM * stats.var[c] * correction;
        }
    }
}

/// Soft assignments plus what the backward pass needs.
#[derive(Debug, Clone)]
pub struct Assignment {
    /// `N × (L+1)`, row-stochastic.
    pub scores: Matrix,
    /// Batch-normalized logits before scale and shift.
    normalized: Matrix,
    inv_std: Vec<f64>,
    pub mode: Mode,
    /// Present in train mode.
    pub stats: Option<BatchStats>,
}

/// Soft-assigns every token (row of `tokens`) to the `L + 1` clusters.
pub fn assign(tokens: &Matrix, vp: &VladParams<'_>, mode: Mode) -> Result<Assignment> {
    let dim = vp.assign_weights.cols();
    if tokens.cols() != dim {
        return Err(Error::DimensionMismatch {
            what: "cluster assignment token",
            expected: dim,
            got: tokens.cols(),
        });
    }
    let n = tokens.rows();
    if n == 0 {
        return Err(Error::Empty("no tokens to assign"));
    }
    let channels = vp.assign_weights.rows();
    let mut logits = Matrix::zeros(n, channels);
    for (i, t) in tokens.iter_rows().enumerate() {
        logits
            .row_mut(i)
            .copy_from_slice(&vp.assign_weights.matvec(t));
    }

    let (mean, var, stats) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0; channels];
            for r in logits.iter_rows() {
                axpy(&mut mean, 1.0, r);
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; channels];
            for r in logits.iter_rows() {
                for c in 0..channels {
                    let d = r[c] - mean[c];
                    var[c] += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= n as f64);
            let stats = BatchStats {
                mean: mean.clone(),
                var: var.clone(),
                count: n,
            };
            (mean, var, Some(stats))
        }
        Mode::Infer => (vp.running.mean.clone(), vp.running.var.clone(), None),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();

    let mut normalized = Matrix::zeros(n, channels);
    let mut scores = Matrix::zeros(n, channels);
    for i in 0..n {
        let mut bn = vec![0.0; channels];
        for c in 0..channels {
            let xh = (logits.get(i, c) - mean[c]) * inv_std[c];
            normalized.set(i, c, xh);
            bn[c] = vp.bn_scale[c] * xh + vp.bn_shift[c];
        }
        scores.row_mut(i).copy_from_slice(&softmax(&bn));
    }
    Ok(Assignment {
        scores,
        normalized,
        inv_std,
        mode,
        stats,
    })
}

/// Gradients of [`assign`] wrt its inputs.
pub struct AssignGrads {
    pub tokens: Matrix,
}

/// Back-propagates `d_scores` through the softmax and batch norm, accumulating
/// into the assignment weights and batch-norm affine parameters of `grad`.
pub fn assign_backward(
    tokens: &Matrix,
    vp: &VladParams<'_>,
    a: &Assignment,
    d_scores: &Matrix,
    grad: &mut Trainable,
) -> AssignGrads {
    let n = tokens.rows();
    let channels = vp.assign_weights.rows();
    // d(bn output)
    let mut d_bn = Matrix::zeros(n, channels);
    for i in 0..n {
        let g = softmax_backward(a.scores.row(i), d_scores.row(i));
        d_bn.row_mut(i).copy_from_slice(&g);
    }
    let mut d_logits = Matrix::zeros(n, channels);
    for c in 0..channels {
        let mut sum_dy = 0.0;
        let mut sum_dy_xh = 0.0;
        for i in 0..n {
            let dy = d_bn.get(i, c);
            sum_dy += dy;
            sum_dy_xh += dy * a.normalized.get(i, c);
        }
        grad.bn_shift[c] += sum_dy;
        grad.bn_scale[c] += sum_dy_xh;
        let gs = vp.bn_scale[c] * a.inv_std[c];
        match a.mode {
            Mode::Train => {
                let nf = n as f64;
                for i in 0..n {
                    let dy = d_bn.get(i, c);
                    let xh = a.normalized.get(i, c);
                    d_logits.set(i, c, gs * (dy - sum_dy / nf - xh * sum_dy_xh / nf));
                }
            }
            Mode::Infer => {
                for i in 0..n {
                    d_logits.set(i, c, gs * d_bn.get(i, c));
                }
            }
        }
    }
    let mut d_tokens = Matrix::zeros(n, tokens.cols());
    for i in 0..n {
        let dl = d_logits.row(i);
        grad.assign_weights.add_outer(dl, tokens.row(i), 1.0);
        d_tokens
            .row_mut(i)
            .copy_from_slice(&vp.assign_weights.matvec_t(dl));
    }
    AssignGrads { tokens: d_tokens }
}

/// Raw residuals and their norms, for the backward pass.
#[derive(Debug, Clone)]
pub struct AggregateCache {
    pub residuals: Vec<Vec<f64>>,
    pub norms: Vec<f64>,
}

/// Sums assignment-weighted residuals `a_il (x_i - c_l)` for each active cluster
/// `l = 1..L` and ℓ2-normalizes them; residuals with norm below 1e-12 become
/// the zero vector.
pub fn aggregate(
    tokens: &Matrix,
    scores: &Matrix,
    centroids: &Matrix,
) -> Result<(Vec<LevelEmbedding>, AggregateCache)> {
    let clusters = centroids.rows();
    if scores.cols() != clusters {
        return Err(Error::DimensionMismatch {
            what: "assignment columns",
            expected: clusters,
            got: scores.cols(),
        });
    }
    if scores.rows() != tokens.rows() {
        return Err(Error::DimensionMismatch {
            what: "assignment rows",
            expected: tokens.rows(),
            got: scores.rows(),
        });
    }
    let dim = centroids.cols();
    let mut out = Vec::with_capacity(clusters - 1);
    let mut residuals = Vec::with_capacity(clusters - 1);
    let mut norms = Vec::with_capacity(clusters - 1);
    for l in 1..clusters {
        let mut r = vec![0.0; dim];
        let c = centroids.row(l);
        for (i, t) in tokens.iter_rows().enumerate() {
            let a = scores.get(i, l);
            for ((rj, tj), cj) in r.iter_mut().zip(t).zip(c) {
                *rj += a * (tj - cj);
            }
        }
        let n = norm(&r);
        let vector = if n < ZERO_NORM {
            vec![0.0; dim]
        } else {
            r.iter().map(|v| v / n).collect()
        };
        out.push(LevelEmbedding {
            level: Level::Fine(l),
            vector,
        });
        residuals.push(r);
        norms.push(n);
    }
    Ok((out, AggregateCache { residuals, norms }))
}

pub struct AggregateGrads {
    pub tokens: Matrix,
    pub scores: Matrix,
}

/// Back-propagates fine-level upstream gradients (`upstream[l - 1]` for level
/// `l`) through [`aggregate`]; centroid gradients are accumulated into `grad`.
pub fn aggregate_backward(
    tokens: &Matrix,
    scores: &Matrix,
    centroids: &Matrix,
    cache: &AggregateCache,
    upstream: &[Vec<f64>],
    grad_centroids: &mut Matrix,
) -> AggregateGrads {
    let n = tokens.rows();
    let dim = centroids.cols();
    let mut d_tokens = Matrix::zeros(n, dim);
    let mut d_scores = Matrix::zeros(n, centroids.rows());
    for l in 1..centroids.rows() {
        let nr = cache.norms[l - 1];
        if nr < ZERO_NORM {
            continue;
        }
        let unit: Vec<f64> = cache.residuals[l - 1].iter().map(|v| v / nr).collect();
        let dr = normalize_backward(&unit, nr, &upstream[l - 1]);
        let c = centroids.row(l);
        let mut mass = 0.0;
        for (i, t) in tokens.iter_rows().enumerate() {
            let a = scores.get(i, l);
            mass += a;
            let resid: Vec<f64> = t.iter().zip(c).map(|(tj, cj)| tj - cj).collect();
            d_scores.set(i, l, dot(&dr, &resid));
            axpy(d_tokens.row_mut(i), a, &dr);
        }
        axpy(grad_centroids.row_mut(l), -mass, &dr);
    }
    AggregateGrads {
        tokens: d_tokens,
        scores: d_scores,
    }
}

/// Infer-mode fine embeddings of one token set.
pub fn fine_embed(tokens: &Matrix, vp: &VladParams<'_>) -> Result<Vec<Vec<f64>>> {
    let a = assign(tokens, vp, Mode::Infer)?;
    let (levels, _) = aggregate(tokens, &a.scores, vp.centroids)?;
    Ok(levels.into_iter().map(|e| e.vector).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_bn(channels: usize) -> (Vec<f64>, Vec<f64>, BnRunning) {
        (
            vec![1.0; channels],
            vec![0.0; channels],
            BnRunning {
                mean: vec![0.0; channels],
                var: vec![1.0; channels],
            },
        )
    }

    #[test]
    fn symmetric_weights_split_evenly() {
        let (s, b, run) = identity_bn(2);
        let w = Matrix::from_rows(&[[0.4, -1.0], [0.4, -1.0]]);
        let c = Matrix::zeros(2, 2);
        let vp = VladParams {
            centroids: &c,
            assign_weights: &w,
            bn_scale: &s,
            bn_shift: &b,
            running: &run,
        };
        let tokens = Matrix::from_rows(&[[1.0, 2.0], [-3.0, 0.5], [0.0, 0.0]]);
        for mode in [Mode::Train, Mode::Infer] {
            let a = assign(&tokens, &vp, mode).unwrap();
            for v in a.scores.as_slice() {
                assert!((v - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn infer_mode_matches_scalar_softmax() {
        let (s, b, _) = identity_bn(3);
        let run = BnRunning {
            mean: vec![0.0; 3],
            var: vec![1.0; 3],
        };
        let w = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let c = Matrix::zeros(3, 2);
        let vp = VladParams {
            centroids: &c,
            assign_weights: &w,
            bn_scale: &s,
            bn_shift: &b,
            running: &run,
        };
        let tokens = Matrix::from_rows(&[[0.5, -0.2], [1.0, 2.0]]);
        let a = assign(&tokens, &vp, Mode::Infer).unwrap();
        let k = 1.0 / (1.0f64 + BN_EPS).sqrt();
        for (i, t) in tokens.iter_rows().enumerate() {
            let logits = [t[0] * k, t[1] * k, (t[0] + t[1]) * k];
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for (j, l) in logits.iter().enumerate() {
                assert!((a.scores.get(i, j) - l.exp() / z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn train_mode_updates_running_stats() {
        let (s, b, mut run) = identity_bn(2);
        let w = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let c = Matrix::zeros(2, 2);
        let tokens = Matrix::from_rows(&[[1.0, 0.0], [3.0, 2.0]]);
        let stats = {
            let vp = VladParams {
                centroids: &c,
                assign_weights: &w,
                bn_scale: &s,
                bn_shift: &b,
                running: &run,
            };
            assign(&tokens, &vp, Mode::Train).unwrap().stats.unwrap()
        };
        assert_eq!(stats.mean, vec![2.0, 1.0]);
        assert_eq!(stats.var, vec![1.0, 1.0]);
        run.update(&stats);
        assert!((run.mean[0] - 0.2).abs() < 1e-12);
        // unbiased var 2.0: 0.9 * 1 + 0.1 * 2
        assert!((run.var[0] - 1.1).abs() < 1e-12);
    }

    #[test]
    fn zero_residual_yields_zero_level() {
        let c = Matrix::from_rows(&[[0.0, 0.0], [1.0, 2.0]]);
        let tokens = Matrix::from_rows(&[[1.0, 2.0]]);
        let scores = Matrix::from_rows(&[[0.0, 1.0]]);
        let (levels, _) = aggregate(&tokens, &scores, &c).unwrap();
        assert_eq!(levels[0].vector, vec![0.0, 0.0]);
    }

    #[test]
    fn ghost_absorbs_everything() {
        let c = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let tokens = Matrix::from_rows(&[[3.0, 1.0], [-1.0, 2.0]]);
        let scores = Matrix::from_rows(&[[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let (levels, _) = aggregate(&tokens, &scores, &c).unwrap();
        for l in levels {
            assert!(l.vector.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn hand_set_two_token_aggregate() {
        // L = 2, c1 = (1, 0), c2 = (0, 1)
        // x1 = (2, 1) with a = (0.2, 0.5, 0.3); x2 = (0, -1) with a = (0.1, 0.1, 0.8)
        // r1 = 0.5*(1, 1) + 0.1*(-1, -1) = (0.4, 0.4)
        // r2 = 0.3*(2, 0) + 0.8*(0, -2) = (0.6, -1.6)
        let c = Matrix::from_rows(&[[9.0, 9.0], [1.0, 0.0], [0.0, 1.0]]);
        let tokens = Matrix::from_rows(&[[2.0, 1.0], [0.0, -1.0]]);
        let scores = Matrix::from_rows(&[[0.2, 0.5, 0.3], [0.1, 0.1, 0.8]]);
        let (levels, cache) = aggregate(&tokens, &scores, &c).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!((levels[0].vector[0] - h).abs() < 1e-12);
        assert!((levels[0].vector[1] - h).abs() < 1e-12);
        let n2 = (0.36f64 + 2.56).sqrt();
        assert!((levels[1].vector[0] - 0.6 / n2).abs() < 1e-12);
        assert!((levels[1].vector[1] + 1.6 / n2).abs() < 1e-12);
        assert!((cache.norms[1] - n2).abs() < 1e-12);
    }
}
