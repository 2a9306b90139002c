//! Coarse-grained embeddings for both views and the query-token projection
//! into the shared fine-path space.

use crate::config::{NORM_EPS, ZERO_NORM};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, normalize_backward, softmax, softmax_backward, Matrix};
use crate::model::{Level, LevelEmbedding};

/// Self-gated mixture of per-expert projections applied to the query CLS vector.
#[derive(Debug, Clone, Copy)]
pub struct GatingProjection<'a> {
    /// One gating vector per expert (`N_E × text_dim`).
    pub gate: &'a Matrix,
    /// One `dim × text_dim` projection per expert.
    pub experts: &'a [Matrix],
}

/// Intermediate values of the coarse query path, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct CoarseQueryCache {
    pub weights: Vec<f64>,
    /// Normalized expert outputs.
    pub units: Vec<Vec<f64>>,
    pub norms: Vec<f64>,
}

impl<'a> GatingProjection<'a> {
    pub fn new(gate: &'a Matrix, experts: &'a [Matrix]) -> Self {
        Self { gate, experts }
    }

    fn check(&self, cls: &[f64]) -> Result<()> {
        if self.gate.cols() != cls.len() {
            return Err(Error::DimensionMismatch {
                what: "query CLS vector",
                expected: self.gate.cols(),
                got: cls.len(),
            });
        }
        if self.experts.len() != self.gate.rows() {
            return Err(Error::DimensionMismatch {
                what: "expert count",
                expected: self.gate.rows(),
                got: self.experts.len(),
            });
        }
        if !cls.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("query CLS vector"));
        }
        Ok(())
    }

    /// Softmax gate weights over experts.
    pub fn weights(&self, cls: &[f64]) -> Vec<f64> {
        softmax(&self.gate.matvec(cls))
    }

    pub fn forward(&self, cls: &[f64]) -> Result<(Vec<f64>, CoarseQueryCache)> {
        self.check(cls)?;
        let weights = self.weights(cls);
        let dim = self.experts.first().map_or(0, Matrix::rows);
        let mut out = vec![0.0; dim];
        let mut units = Vec::with_capacity(self.experts.len());
        let mut norms = Vec::with_capacity(self.experts.len());
        for (proj, &w) in self.experts.iter().zip(&weights) {
            let mut z = proj.matvec(cls);
            let n = (dot(&z, &z) + NORM_EPS).sqrt();
            z.iter_mut().for_each(|v| *v /= n);
            axpy(&mut out, w, &z);
            units.push(z);
            norms.push(n);
        }
        Ok((
            out,
            CoarseQueryCache {
                weights,
                units,
                norms,
            },
        ))
    }

    /// Accumulates the gradients of a coarse query embedding into `grad_gate`
    /// and `grad_experts`.
    pub fn backward(
        &self,
        cls: &[f64],
        cache: &CoarseQueryCache,
        upstream: &[f64],
        grad_gate: &mut Matrix,
        grad_experts: &mut [Matrix],
    ) {
        let dw: Vec<f64> = cache.units.iter().map(|u| dot(upstream, u)).collect();
        let dlogits = softmax_backward(&cache.weights, &dw);
        grad_gate.add_outer(&dlogits, cls, 1.0);
        for (i, grad) in grad_experts.iter_mut().enumerate() {
            let du: Vec<f64> = upstream.iter().map(|g| g * cache.weights[i]).collect();
            let dz = normalize_backward(&cache.units[i], cache.norms[i], &du);
            grad.add_outer(&dz, cls, 1.0);
        }
    }
}

/// Coarse query embedding: gate-weighted sum of normalized expert projections of
/// the CLS vector. The sum itself is not re-normalized.
pub fn coarse_query_embed(cls: &[f64], gp: GatingProjection<'_>) -> Result<LevelEmbedding> {
    let (vector, _) = gp.forward(cls)?;
    Ok(LevelEmbedding {
        level: Level::Coarse,
        vector,
    })
}

/// Coarse item embedding: the ℓ2-normalized mean of the per-expert AGG vectors.
pub fn coarse_item_embed(agg: &Matrix) -> Result<LevelEmbedding> {
    if agg.rows() == 0 {
        return Err(Error::Empty("item has no aggregate tokens"));
    }
    if !agg.is_finite() {
        return Err(Error::NonFinite("item aggregate tokens"));
    }
    let mut mean = vec![0.0; agg.cols()];
    for r in agg.iter_rows() {
        axpy(&mut mean, 1.0, r);
    }
    let inv = 1.0 / agg.rows() as f64;
    mean.iter_mut().for_each(|v| *v *= inv);
    let n = norm(&mean);
    if n < ZERO_NORM {
        return Err(Error::DegenerateItem { id: None });
    }
    mean.iter_mut().for_each(|v| *v /= n);
    Ok(LevelEmbedding {
        level: Level::Coarse,
        vector: mean,
    })
}

/// Maps each query token through `proj` (`dim × text_dim`).
pub fn project_query_tokens(tokens: &Matrix, proj: &Matrix) -> Result<Matrix> {
    if tokens.cols() != proj.cols() {
        return Err(Error::DimensionMismatch {
            what: "query token",
            expected: proj.cols(),
            got: tokens.cols(),
        });
    }
    if !tokens.is_finite() {
        return Err(Error::NonFinite("query tokens"));
    }
    let mut out = Matrix::zeros(tokens.rows(), proj.rows());
    for (i, t) in tokens.iter_rows().enumerate() {
        out.row_mut(i).copy_from_slice(&proj.matvec(t));
    }
    Ok(out)
}
