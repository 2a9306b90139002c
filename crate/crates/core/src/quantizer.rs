//! Per-level product quantization with codeword attention.
//!
//! A level's codebook holds `M` sub-codebooks of `K` codewords in `d = D / M`
//! dimensions. Segments and codewords are ℓ2-normalized on every read; stored
//! codewords are unconstrained. Training uses the softmax attention over
//! codewords (soft codes); indexing uses the argmax (hard codes).

use crate::config::ZERO_NORM;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, normalize_backward, softmax, softmax_backward, Matrix};
use crate::model::Level;

/// One level's quantizer: a borrowed codebook plus its shape and attention scale.
#[derive(Debug, Clone, Copy)]
pub struct QuantizationModule<'a> {
    pub level: Level,
    codebook: &'a Matrix,
    num_subspaces: usize,
    num_codewords: usize,
    pub alpha: f64,
}

impl<'a> QuantizationModule<'a> {
    pub fn new(
        level: Level,
        codebook: &'a Matrix,
        num_subspaces: usize,
        num_codewords: usize,
        alpha: f64,
    ) -> Result<Self> {
        if codebook.rows() != num_subspaces * num_codewords {
            return Err(Error::DimensionMismatch {
                what: "codebook rows",
                expected: num_subspaces * num_codewords,
                got: codebook.rows(),
            });
        }
        Ok(Self {
            level,
            codebook,
            num_subspaces,
            num_codewords,
            alpha,
        })
    }

    pub fn num_subspaces(&self) -> usize {
        self.num_subspaces
    }

    pub fn num_codewords(&self) -> usize {
        self.num_codewords
    }

    pub fn sub_dim(&self) -> usize {
        self.codebook.cols()
    }

    pub fn dim(&self) -> usize {
        self.num_subspaces * self.sub_dim()
    }

    pub fn raw(&self) -> &Matrix {
        self.codebook
    }

    pub fn normalized(&self) -> NormalizedCodebook {
        NormalizedCodebook::new(self.codebook, self.num_subspaces, self.num_codewords)
    }
}

/// Codebook with every codeword ℓ2-normalized; codewords with norm below 1e-12
/// read as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedCodebook {
    units: Matrix,
    norms: Vec<f64>,
    num_subspaces: usize,
    num_codewords: usize,
}

/// Soft quantization code: one probability vector over `K` codewords per sub-space,
/// concatenated.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftCode {
    pub probs: Vec<f64>,
    pub num_codewords: usize,
}

impl SoftCode {
    pub fn subspace(&self, m: usize) -> &[f64] {
        &self.probs[m * self.num_codewords..(m + 1) * self.num_codewords]
    }

    pub fn num_subspaces(&self) -> usize {
        self.probs.len() / self.num_codewords
    }
}

/// Forward result of soft quantization, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct SoftQuantized {
    pub code: SoftCode,
    pub reconstruction: Vec<f64>,
    /// Normalized input segments (zero for zero segments).
    seg_units: Vec<f64>,
    seg_norms: Vec<f64>,
}

impl NormalizedCodebook {
    pub fn new(raw: &Matrix, num_subspaces: usize, num_codewords: usize) -> Self {
        let mut units = raw.clone();
        let mut norms = Vec::with_capacity(raw.rows());
        for i in 0..raw.rows() {
            let row = units.row_mut(i);
            let n = norm(row);
            if n < ZERO_NORM {
                row.iter_mut().for_each(|v| *v = 0.0);
            } else {
                row.iter_mut().for_each(|v| *v /= n);
            }
            norms.push(n);
        }
        Self {
            units,
            norms,
            num_subspaces,
            num_codewords,
        }
    }

    #[inline]
    pub fn codeword(&self, m: usize, k: usize) -> &[f64] {
        self.units.row(m * self.num_codewords + k)
    }

    pub fn num_subspaces(&self) -> usize {
        self.num_subspaces
    }

    pub fn num_codewords(&self) -> usize {
        self.num_codewords
    }

    pub fn sub_dim(&self) -> usize {
        self.units.cols()
    }

    pub fn dim(&self) -> usize {
        self.num_subspaces * self.sub_dim()
    }

    pub fn units(&self) -> &Matrix {
        &self.units
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "quantizer input",
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Codeword attention per sub-space. A zero segment gets uniform attention
    /// (the softmax of all-zero logits).
    pub fn soft(&self, x: &[f64], alpha: f64) -> Result<SoftQuantized> {
        self.check(x)?;
        let d = self.sub_dim();
        let k = self.num_codewords;
        let mut probs = Vec::with_capacity(self.num_subspaces * k);
        let mut recon = vec![0.0; x.len()];
        let mut seg_units = vec![0.0; x.len()];
        let mut seg_norms = Vec::with_capacity(self.num_subspaces);
        for m in 0..self.num_subspaces {
            let seg = &x[m * d..(m + 1) * d];
            let n = norm(seg);
            let unit = &mut seg_units[m * d..(m + 1) * d];
            if n >= ZERO_NORM {
                for (u, s) in unit.iter_mut().zip(seg) {
                    *u = s / n;
                }
            }
            seg_norms.push(n);
            let logits: Vec<f64> = (0..k)
                .map(|i| alpha * dot(unit, self.codeword(m, i)))
                .collect();
            let p = softmax(&logits);
            let out = &mut recon[m * d..(m + 1) * d];
            for (i, &pi) in p.iter().enumerate() {
                axpy(out, pi, self.codeword(m, i));
            }
            probs.extend_from_slice(&p);
        }
        Ok(SoftQuantized {
            code: SoftCode {
                probs,
                num_codewords: k,
            },
            reconstruction: recon,
            seg_units,
            seg_norms,
        })
    }

    /// Argmax codeword per sub-space (lowest index on ties) and the concatenated
    /// normalized codewords. A zero segment maps to index 0.
    pub fn hard(&self, x: &[f64]) -> Result<(Vec<u16>, Vec<f64>)> {
        self.check(x)?;
        let d = self.sub_dim();
        let mut codes = Vec::with_capacity(self.num_subspaces);
        let mut recon = Vec::with_capacity(x.len());
        for m in 0..self.num_subspaces {
            let seg = &x[m * d..(m + 1) * d];
            let n = norm(seg);
            let mut best = 0usize;
            if n >= ZERO_NORM {
                let unit: Vec<f64> = seg.iter().map(|v| v / n).collect();
                let mut best_score = f64::NEG_INFINITY;
                for i in 0..self.num_codewords {
                    let s = dot(&unit, self.codeword(m, i));
                    if s > best_score {
                        best_score = s;
                        best = i;
                    }
                }
            }
            codes.push(best as u16);
            recon.extend_from_slice(self.codeword(m, best));
        }
        Ok((codes, recon))
    }

    /// Concatenates the normalized codewords selected by `codes`.
    pub fn reconstruct(&self, codes: &[u16]) -> Result<Vec<f64>> {
        if codes.len() != self.num_subspaces {
            return Err(Error::DimensionMismatch {
                what: "hard code length",
                expected: self.num_subspaces,
                got: codes.len(),
            });
        }
        let mut out = Vec::with_capacity(self.dim());
        for (m, &c) in codes.iter().enumerate() {
            let c = c as usize;
            if c >= self.num_codewords {
                return Err(Error::IndexOutOfRange {
                    index: c,
                    bound: self.num_codewords,
                });
            }
            out.extend_from_slice(self.codeword(m, c));
        }
        Ok(out)
    }

    /// Vector-Jacobian product of [`NormalizedCodebook::soft`]'s reconstruction.
    ///
    /// Returns the gradient wrt `x` and accumulates the gradient wrt the raw
    /// codebook into `grad_codebook`.
    pub fn soft_backward(
        &self,
        fwd: &SoftQuantized,
        alpha: f64,
        upstream: &[f64],
        grad_codebook: &mut Matrix,
    ) -> Vec<f64> {
        let d = self.sub_dim();
        let k = self.num_codewords;
        let mut dx = vec![0.0; upstream.len()];
        for m in 0..self.num_subspaces {
            let g = &upstream[m * d..(m + 1) * d];
            let p = fwd.code.subspace(m);
            let unit = &fwd.seg_units[m * d..(m + 1) * d];
            let dp: Vec<f64> = (0..k).map(|i| dot(g, self.codeword(m, i))).collect();
            let ds = softmax_backward(p, &dp);
            let mut d_unit = vec![0.0; d];
            for i in 0..k {
                let row = m * k + i;
                let cn = self.norms[row];
                let c_unit = self.units.row(row);
                axpy(&mut d_unit, alpha * ds[i], c_unit);
                if cn < ZERO_NORM {
                    continue;
                }
                // dL/dĉ = p_i g + α ds_i x̂
                let dc_unit: Vec<f64> = g
                    .iter()
                    .zip(unit)
                    .map(|(gj, uj)| p[i] * gj + alpha * ds[i] * uj)
                    .collect();
                let dc = normalize_backward(c_unit, cn, &dc_unit);
                axpy(grad_codebook.row_mut(row), 1.0, &dc);
            }
            let sn = fwd.seg_norms[m];
            if sn >= ZERO_NORM {
                let dseg = normalize_backward(unit, sn, &d_unit);
                dx[m * d..(m + 1) * d].copy_from_slice(&dseg);
            }
        }
        dx
    }
}

/// Soft code and soft reconstruction of `x`.
pub fn soft_quantize(x: &[f64], qm: &QuantizationModule<'_>) -> Result<(SoftCode, Vec<f64>)> {
    let fwd = qm.normalized().soft(x, qm.alpha)?;
    Ok((fwd.code, fwd.reconstruction))
}

/// Hard code and hard reconstruction of `x`.
pub fn hard_quantize(x: &[f64], qm: &QuantizationModule<'_>) -> Result<(Vec<u16>, Vec<f64>)> {
    qm.normalized().hard(x)
}

/// Gradient of `⟨upstream, soft_reconstruction(x)⟩` wrt `x` and the raw codebook.
pub fn grad_soft_quantize(
    x: &[f64],
    qm: &QuantizationModule<'_>,
    upstream: &[f64],
) -> Result<(Vec<f64>, Matrix)> {
    if upstream.len() != x.len() {
        return Err(Error::DimensionMismatch {
            what: "upstream gradient",
            expected: x.len(),
            got: upstream.len(),
        });
    }
    let cb = qm.normalized();
    let fwd = cb.soft(x, qm.alpha)?;
    let mut grad = Matrix::zeros(qm.raw().rows(), qm.raw().cols());
    let dx = cb.soft_backward(&fwd, qm.alpha, upstream, &mut grad);
    Ok((dx, grad))
}
