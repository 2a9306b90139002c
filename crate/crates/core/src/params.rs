//! Trainable parameters and their deterministic initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::config::EngineConfig;
use crate::error::Result;
use crate::linalg::{norm, Matrix};

/// Every tensor touched by the optimizer.
///
/// The same struct doubles as the gradient accumulator (see [`Trainable::zeros_like`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Trainable {
    /// Gating vectors `h_i`, one row per expert (`N_E × text_dim`).
    pub gate: Matrix,
    /// Per-expert projections `text_dim → dim`, stored `dim × text_dim`.
    pub expert_proj: Vec<Matrix>,
    /// Query-token projection into the fine-path space (`dim × text_dim`).
    pub token_proj: Matrix,
    /// Cluster centroids, row 0 is the ghost (`(L+1) × dim`).
    pub centroids: Matrix,
    /// Cluster assignment weights (`(L+1) × dim`).
    pub assign_weights: Matrix,
    pub bn_scale: Vec<f64>,
    pub bn_shift: Vec<f64>,
    /// One codebook per level; rows are `m * K + k`, columns the sub-space (`(M·K) × d`).
    pub codebooks: Vec<Matrix>,
}

/// Running batch-norm statistics for the assignment logits.
#[derive(Debug, Clone, PartialEq)]
pub struct BnRunning {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub config: EngineConfig,
    pub trainable: Trainable,
    pub running: BnRunning,
}

/// Borrowed view of one named tensor.
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct TensorMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

fn level_name(level: usize) -> String {
    if level == 0 {
        "codebook.coarse".into()
    } else {
        format!("codebook.fine{level}")
    }
}

impl Trainable {
    pub fn zeros_like(other: &Trainable) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            gate: z(&other.gate),
            expert_proj: other.expert_proj.iter().map(z).collect(),
            token_proj: z(&other.token_proj),
            centroids: z(&other.centroids),
            assign_weights: z(&other.assign_weights),
            bn_scale: vec![0.0; other.bn_scale.len()],
            bn_shift: vec![0.0; other.bn_shift.len()],
            codebooks: other.codebooks.iter().map(z).collect(),
        }
    }

    /// Named tensors in a fixed order; this order is the checkpoint order.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        fn mat(name: String, m: &Matrix) -> TensorRef<'_> {
            TensorRef {
                name,
                shape: vec![m.rows(), m.cols()],
                data: m.as_slice(),
            }
        }
        let mut out = Vec::new();
        out.push(mat("gate".into(), &self.gate));
        for (i, p) in self.expert_proj.iter().enumerate() {
            out.push(mat(format!("expert_proj.{i}"), p));
        }
        out.push(mat("token_proj".into(), &self.token_proj));
        out.push(mat("centroids".into(), &self.centroids));
        out.push(mat("assign_weights".into(), &self.assign_weights));
        out.push(TensorRef {
            name: "bn_scale".into(),
            shape: vec![self.bn_scale.len()],
            data: &self.bn_scale,
        });
        out.push(TensorRef {
            name: "bn_shift".into(),
            shape: vec![self.bn_shift.len()],
            data: &self.bn_shift,
        });
        for (l, c) in self.codebooks.iter().enumerate() {
            out.push(mat(level_name(l), c));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let Trainable {
            gate,
            expert_proj,
            token_proj,
            centroids,
            assign_weights,
            bn_scale,
            bn_shift,
            codebooks,
        } = self;
        fn mat(name: String, m: &mut Matrix) -> TensorMut<'_> {
            TensorMut {
                name,
                shape: vec![m.rows(), m.cols()],
                data: m.as_mut_slice(),
            }
        }
        let mut out = vec![mat("gate".into(), gate)];
        for (i, p) in expert_proj.iter_mut().enumerate() {
            out.push(mat(format!("expert_proj.{i}"), p));
        }
        out.push(mat("token_proj".into(), token_proj));
        out.push(mat("centroids".into(), centroids));
        out.push(mat("assign_weights".into(), assign_weights));
        out.push(TensorMut {
            name: "bn_scale".into(),
            shape: vec![bn_scale.len()],
            data: bn_scale,
        });
        out.push(TensorMut {
            name: "bn_shift".into(),
            shape: vec![bn_shift.len()],
            data: bn_shift,
        });
        for (l, c) in codebooks.iter_mut().enumerate() {
            out.push(mat(level_name(l), c));
        }
        out
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

fn gaussian_unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..rows {
        let row = m.row_mut(i);
        loop {
            for v in row.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let n = norm(row);
            if n > 1e-6 {
                row.iter_mut().for_each(|v| *v /= n);
                break;
            }
        }
    }
    m
}

fn fan_in_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let bound = 1.0 / (cols as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// Draws every trainable parameter from `config.seed`.
///
/// Codewords and centroids are unit-normalized Gaussian vectors; projection and
/// assignment matrices use `U(-1/√fan_in, 1/√fan_in)`. Batch-norm starts as the
/// identity transform.
pub fn init_parameters(config: &EngineConfig) -> Result<ParameterSet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (dim, text_dim) = (config.dim, config.text_dim);
    let clusters = config.num_levels();

    let gate = fan_in_uniform(&mut rng, config.num_experts, text_dim);
    let expert_proj = (0..config.num_experts)
        .map(|_| fan_in_uniform(&mut rng, dim, text_dim))
        .collect();
    let token_proj = fan_in_uniform(&mut rng, dim, text_dim);
    let centroids = gaussian_unit_rows(&mut rng, clusters, dim);
    let assign_weights = fan_in_uniform(&mut rng, clusters, dim);
    let codebooks = (0..config.num_levels())
        .map(|_| {
            gaussian_unit_rows(
                &mut rng,
                config.num_subspaces * config.num_codewords,
                config.sub_dim(),
            )
        })
        .collect();

    Ok(ParameterSet {
        config: config.clone(),
        trainable: Trainable {
            gate,
            expert_proj,
            token_proj,
            centroids,
            assign_weights,
            bn_scale: vec![1.0; clusters],
            bn_shift: vec![0.0; clusters],
            codebooks,
        },
        running: BnRunning {
            mean: vec![0.0; clusters],
            var: vec![1.0; clusters],
        },
    })
}

impl ParameterSet {
    /// Stable 64-bit digest of every codebook, used to detect indexes built with
    /// different codebooks than the ones answering a query.
    pub fn codebook_fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update((self.config.num_subspaces as u64).to_le_bytes());
        h.update((self.config.num_codewords as u64).to_le_bytes());
        for cb in &self.trainable.codebooks {
            for v in cb.as_slice() {
                h.update(v.to_le_bytes());
            }
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}
