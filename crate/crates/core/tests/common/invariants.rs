//! Seeded checks of the normalization and stochasticity invariants. Each check
//! draws its own random instance from `seed` and reports the first violation.

use hybridq_core::frontend::GatingProjection;
use hybridq_core::ghostvlad::{aggregate, assign, fine_embed, Mode, VladParams};
use hybridq_core::linalg::{norm, Matrix};
use hybridq_core::model::Level;
use hybridq_core::objective::{aqcl_loss, infonce};
use hybridq_core::params::BnRunning;
use hybridq_core::quantizer::{soft_quantize, QuantizationModule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-6;

pub type Check = Result<(), String>;

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-scale..scale))
            .collect(),
    )
}

fn ensure(ok: bool, what: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(what())
    }
}

pub fn gating_weights_sum_to_one(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let experts = rng.random_range(1..8);
    let dt = rng.random_range(1..10);
    let gate = uniform(&mut rng, experts, dt, 3.0);
    let projs: Vec<Matrix> = (0..experts)
        .map(|_| uniform(&mut rng, 4, dt, 1.0))
        .collect();
    let cls: Vec<f64> = (0..dt).map(|_| rng.random_range(-5.0..5.0)).collect();
    let w = GatingProjection::new(&gate, &projs).weights(&cls);
    let s: f64 = w.iter().sum();
    ensure((s - 1.0).abs() < TOL && w.iter().all(|&x| x >= 0.0), || {
        format!("gating weights {w:?} sum to {s}")
    })
}

struct VladFixture {
    tokens: Matrix,
    centroids: Matrix,
    weights: Matrix,
    scale: Vec<f64>,
    shift: Vec<f64>,
    running: BnRunning,
}

impl VladFixture {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let n = rng.random_range(1..10);
        let d = rng.random_range(1..8);
        let c = rng.random_range(2..6);
        Self {
            tokens: uniform(rng, n, d, 2.0),
            centroids: uniform(rng, c, d, 1.0),
            weights: uniform(rng, c, d, 2.0),
            scale: (0..c).map(|_| rng.random_range(0.1..3.0)).collect(),
            shift: (0..c).map(|_| rng.random_range(-1.0..1.0)).collect(),
            running: BnRunning {
                mean: (0..c).map(|_| rng.random_range(-1.0..1.0)).collect(),
                var: (0..c).map(|_| rng.random_range(0.1..2.0)).collect(),
            },
        }
    }

    fn params(&self) -> VladParams<'_> {
        VladParams {
            centroids: &self.centroids,
            assign_weights: &self.weights,
            bn_scale: &self.scale,
            bn_shift: &self.shift,
            running: &self.running,
        }
    }
}

pub fn assignments_row_stochastic(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = VladFixture::draw(&mut rng);
    for mode in [Mode::Train, Mode::Infer] {
        let a = assign(&f.tokens, &f.params(), mode).map_err(|e| e.to_string())?;
        for r in a.scores.iter_rows() {
            let s: f64 = r.iter().sum();
            ensure((s - 1.0).abs() < TOL && r.iter().all(|&x| x >= 0.0), || {
                format!("{mode:?} assignment row {r:?} sums to {s}")
            })?;
        }
    }
    Ok(())
}

pub fn fine_embeddings_unit_or_zero(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = VladFixture::draw(&mut rng);
    let levels = fine_embed(&f.tokens, &f.params()).map_err(|e| e.to_string())?;
    for v in &levels {
        let n = norm(v);
        ensure(n == 0.0 || (n - 1.0).abs() < TOL, || {
            format!("fine level norm {n}")
        })?;
    }
    // a token sitting on its centroid with all mass there yields an exact zero level
    let d = f.centroids.cols();
    let c = f.centroids.rows();
    let tokens = Matrix::from_vec(1, d, f.centroids.row(1).to_vec());
    let mut scores = Matrix::zeros(1, c);
    scores.set(0, 1, 1.0);
    let (lv, _) = aggregate(&tokens, &scores, &f.centroids).map_err(|e| e.to_string())?;
    ensure(lv[0].vector.iter().all(|&x| x == 0.0), || {
        "zero residual not zero".into()
    })
}

pub fn soft_codes_stochastic(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(1..5);
    let k = 1usize << rng.random_range(1..5);
    let d = rng.random_range(1..5);
    let alpha = [0.0, 1.0, 10.0, 100.0][rng.random_range(0..4)];
    let cb = uniform(&mut rng, m * k, d, 1.0);
    let qm = QuantizationModule::new(Level::Coarse, &cb, m, k, alpha).map_err(|e| e.to_string())?;
    let mut x: Vec<f64> = (0..m * d).map(|_| rng.random_range(-3.0..3.0)).collect();
    if rng.random_bool(0.2) {
        x[..d].iter_mut().for_each(|v| *v = 0.0);
    }
    let (code, recon) = soft_quantize(&x, &qm).map_err(|e| e.to_string())?;
    for s in 0..m {
        let p = code.subspace(s);
        let sum: f64 = p.iter().sum();
        ensure(
            (sum - 1.0).abs() < TOL && p.iter().all(|&v| v >= 0.0),
            || format!("soft code {p:?} sums to {sum}"),
        )?;
        let n = norm(&recon[s * d..(s + 1) * d]);
        ensure(n <= 1.0 + TOL, || {
            format!("reconstruction segment norm {n}")
        })?;
    }
    Ok(())
}

fn random_sim(rng: &mut ChaCha8Rng) -> Matrix {
    let n = rng.random_range(1..8);
    uniform(rng, n, n, 1.5)
}

pub fn aqcl_loss_non_negative(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..8);
    let d = rng.random_range(1..6);
    let q = uniform(&mut rng, n, d, 1.0);
    let k = uniform(&mut rng, n, d, 1.0);
    let tau = rng.random_range(0.01..1.0);
    let l = aqcl_loss(&q, &k, tau);
    ensure(l >= -1e-9 && l.is_finite(), || format!("loss {l}"))
}

pub fn aqcl_loss_row_shift_invariant(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sim = random_sim(&mut rng);
    let tau = rng.random_range(0.02..1.0);
    let (base, _) = infonce(&sim, tau);
    let mut shifted = sim.clone();
    for i in 0..shifted.rows() {
        let c = rng.random_range(-10.0..10.0);
        shifted.row_mut(i).iter_mut().for_each(|v| *v += c);
    }
    let (l, _) = infonce(&shifted, tau);
    ensure((l - base).abs() < TOL, || {
        format!("shifted loss {l} vs {base}")
    })
}

pub type NamedCheck = (&'static str, fn(u64) -> Check);

/// Every check, by name.
pub fn all() -> Vec<NamedCheck> {
    vec![
        ("gating weights sum to 1", gating_weights_sum_to_one),
        ("assignments row-stochastic", assignments_row_stochastic),
        (
            "fine embeddings unit-norm or zero",
            fine_embeddings_unit_or_zero,
        ),
        ("soft codes per-sub-space stochastic", soft_codes_stochastic),
        ("AQ-CL loss non-negative", aqcl_loss_non_negative),
        (
            "AQ-CL loss row-shift invariant",
            aqcl_loss_row_shift_invariant,
        ),
    ]
}
