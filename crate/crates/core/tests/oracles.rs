#![allow(clippy::needless_range_loop)]

mod common;

use std::sync::Arc;

use hybridq_core::config::NORM_EPS;
use hybridq_core::index::{
    brute_force_scores, brute_force_search, encode_database, encode_embeddings, hybrid_search,
    CodebookSnapshot, LookupTable, Reconstruction,
};
use hybridq_core::linalg::Matrix;
use hybridq_core::model::Level;
use hybridq_core::objective::hybrid_loss;
use hybridq_core::quantizer::{
    grad_soft_quantize, hard_quantize, soft_quantize, QuantizationModule,
};
use hybridq_core::{init_parameters, EngineConfig, HybridEmbedding, ParameterSet, TokenBag};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{relative_error, toy_config, toy_data};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn matvec(m: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|r| (0..m.cols()).map(|c| m.get(r, c) * x[c]).sum())
        .collect()
}

fn softmax_naive(v: &[f64]) -> Vec<f64> {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn unit_or_zero(v: &[f64]) -> Vec<f64> {
    let n = l2(v);
    if n < 1e-12 {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

/// Fine embeddings of every bag of one view, with batch norm over all tokens of
/// the view in the batch.
fn naive_fine(p: &ParameterSet, projected: &[Vec<Vec<f64>>]) -> Vec<Vec<Vec<f64>>> {
    let t = &p.trainable;
    let c = t.centroids.rows();
    let logits: Vec<Vec<Vec<f64>>> = projected
        .iter()
        .map(|bag| bag.iter().map(|y| matvec(&t.assign_weights, y)).collect())
        .collect();
    let all: Vec<&Vec<f64>> = logits.iter().flatten().collect();
    let n = all.len() as f64;
    let mean: Vec<f64> = (0..c)
        .map(|k| all.iter().map(|l| l[k]).sum::<f64>() / n)
        .collect();
    let var: Vec<f64> = (0..c)
        .map(|k| all.iter().map(|l| (l[k] - mean[k]).powi(2)).sum::<f64>() / n)
        .collect();
    projected
        .iter()
        .zip(&logits)
        .map(|(bag, bag_logits)| {
            let a: Vec<Vec<f64>> = bag_logits
                .iter()
                .map(|l| {
                    let bn: Vec<f64> = (0..c)
                        .map(|k| {
                            t.bn_scale[k] * (l[k] - mean[k]) / (var[k] + 1e-5).sqrt()
                                + t.bn_shift[k]
                        })
                        .collect();
                    softmax_naive(&bn)
                })
                .collect();
            (1..c)
                .map(|l| {
                    let mut r = vec![0.0; t.centroids.cols()];
                    for (i, y) in bag.iter().enumerate() {
                        for (j, rj) in r.iter_mut().enumerate() {
                            *rj += a[i][l] * (y[j] - t.centroids.get(l, j));
                        }
                    }
                    unit_or_zero(&r)
                })
                .collect()
        })
        .collect()
}

fn naive_soft(p: &ParameterSet, lv: usize, x: &[f64]) -> Vec<f64> {
    let cfg = &p.config;
    let (m_count, k_count, d) = (cfg.num_subspaces, cfg.num_codewords, cfg.sub_dim());
    let cb = &p.trainable.codebooks[lv];
    let mut out = Vec::with_capacity(x.len());
    for m in 0..m_count {
        let seg = unit_or_zero(&x[m * d..(m + 1) * d]);
        let words: Vec<Vec<f64>> = (0..k_count)
            .map(|k| unit_or_zero(cb.row(m * k_count + k)))
            .collect();
        let logits: Vec<f64> = words.iter().map(|w| cfg.alpha * dot(&seg, w)).collect();
        let pr = softmax_naive(&logits);
        for j in 0..d {
            out.push((0..k_count).map(|k| pr[k] * words[k][j]).sum());
        }
    }
    out
}

fn naive_infonce(q: &[Vec<f64>], k: &[Vec<f64>], tau: f64) -> f64 {
    let n = q.len();
    let mut total = 0.0;
    for i in 0..n {
        let logits: Vec<f64> = k.iter().map(|kj| dot(&q[i], kj) / tau).collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
        total += lse - logits[i];
    }
    total / n as f64
}

/// Straight-line evaluation of the hybrid loss in training mode.
fn naive_hybrid_loss(p: &ParameterSet, queries: &[&TokenBag], items: &[&TokenBag]) -> f64 {
    let cfg = &p.config;
    let t = &p.trainable;
    let q_coarse: Vec<Vec<f64>> = queries
        .iter()
        .map(|b| {
            let cls = b.condensed().row(0);
            let w = softmax_naive(&matvec(&t.gate, cls));
            let mut out = vec![0.0; cfg.dim];
            for (e, proj) in t.expert_proj.iter().enumerate() {
                let z = matvec(proj, cls);
                let n = (dot(&z, &z) + NORM_EPS).sqrt();
                for j in 0..cfg.dim {
                    out[j] += w[e] * z[j] / n;
                }
            }
            out
        })
        .collect();
    let v_coarse: Vec<Vec<f64>> = items
        .iter()
        .map(|b| {
            let agg = b.condensed();
            let mean: Vec<f64> = (0..agg.cols())
                .map(|j| (0..agg.rows()).map(|r| agg.get(r, j)).sum::<f64>() / agg.rows() as f64)
                .collect();
            unit_or_zero(&mean)
        })
        .collect();
    let q_tokens: Vec<Vec<Vec<f64>>> = queries
        .iter()
        .map(|b| {
            b.tokens()
                .iter_rows()
                .map(|x| matvec(&t.token_proj, x))
                .collect()
        })
        .collect();
    let v_tokens: Vec<Vec<Vec<f64>>> = items
        .iter()
        .map(|b| b.tokens().iter_rows().map(<[f64]>::to_vec).collect())
        .collect();
    let q_fine = naive_fine(p, &q_tokens);
    let v_fine = naive_fine(p, &v_tokens);

    let mut level_losses = Vec::new();
    for lv in 0..=cfg.num_clusters {
        let pick = |coarse: &[Vec<f64>], fine: &[Vec<Vec<f64>>], i: usize| -> Vec<f64> {
            if lv == 0 {
                coarse[i].clone()
            } else {
                fine[i][lv - 1].clone()
            }
        };
        let n = queries.len();
        let qr: Vec<Vec<f64>> = (0..n).map(|i| pick(&q_coarse, &q_fine, i)).collect();
        let vr: Vec<Vec<f64>> = (0..n).map(|i| pick(&v_coarse, &v_fine, i)).collect();
        let qs: Vec<Vec<f64>> = qr.iter().map(|x| naive_soft(p, lv, x)).collect();
        let vs: Vec<Vec<f64>> = vr.iter().map(|x| naive_soft(p, lv, x)).collect();
        let l = 0.5 * (naive_infonce(&qr, &vs, cfg.tau) + naive_infonce(&vr, &qs, cfg.tau));
        level_losses.push(l);
    }
    let fine: f64 = level_losses[1..].iter().sum::<f64>() / cfg.num_clusters as f64;
    level_losses[0] + fine
}

#[test]
fn hybrid_loss_matches_straight_line_oracle() {
    let cfg = EngineConfig {
        num_experts: 1,
        ..toy_config()
    };
    let params = init_parameters(&cfg).unwrap();
    let data = toy_data(&cfg, 3, 21);
    let (q, i) = data.batch(&[0, 1, 2]);
    let got = hybrid_loss(&params, &q, &i).unwrap();
    let want = naive_hybrid_loss(&params, &q, &i);
    assert!(
        (got.total - want).abs() < 1e-10 * want.abs().max(1.0),
        "{} vs {want}",
        got.total
    );
    let again = hybrid_loss(&params, &q, &i).unwrap();
    assert_eq!(got, again);
}

#[test]
fn hybrid_loss_matches_oracle_with_several_experts_and_levels() {
    let cfg = EngineConfig {
        num_experts: 3,
        num_clusters: 3,
        alpha: 4.0,
        ..toy_config()
    };
    let params = init_parameters(&cfg).unwrap();
    let data = toy_data(&cfg, 5, 4);
    let idx: Vec<usize> = (0..5).collect();
    let (q, i) = data.batch(&idx);
    let got = hybrid_loss(&params, &q, &i).unwrap().total;
    let want = naive_hybrid_loss(&params, &q, &i);
    assert!((got - want).abs() < 1e-10 * want.abs().max(1.0));
}

#[test]
fn batch_of_one_has_zero_loss() {
    let cfg = toy_config();
    let params = init_parameters(&cfg).unwrap();
    let data = toy_data(&cfg, 1, 2);
    let (q, i) = data.batch(&[0]);
    let l = hybrid_loss(&params, &q, &i).unwrap();
    assert_eq!(l.total, 0.0);
}

fn random_codebook(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
}

#[test]
fn soft_quantize_matches_scalar_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (m_count, k_count, d) = (2, 4, 3);
    let cb = random_codebook(&mut rng, m_count * k_count, d);
    let qm = QuantizationModule::new(Level::Coarse, &cb, m_count, k_count, 1.0).unwrap();
    let x: Vec<f64> = (0..m_count * d)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let (code, recon) = soft_quantize(&x, &qm).unwrap();
    for m in 0..m_count {
        let seg = &x[m * d..(m + 1) * d];
        let sn = l2(seg);
        let words: Vec<Vec<f64>> = (0..k_count)
            .map(|k| {
                let r = cb.row(m * k_count + k);
                let n = l2(r);
                r.iter().map(|v| v / n).collect()
            })
            .collect();
        let logits: Vec<f64> = words.iter().map(|w| dot(seg, w) / sn).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for k in 0..k_count {
            assert!((code.subspace(m)[k] - logits[k].exp() / z).abs() < 1e-12);
        }
        for j in 0..d {
            let want: f64 = (0..k_count)
                .map(|k| logits[k].exp() / z * words[k][j])
                .sum();
            assert!((recon[m * d + j] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn hard_quantize_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let (m_count, k_count, d) = (3, 8, 2);
        let cb = random_codebook(&mut rng, m_count * k_count, d);
        let qm = QuantizationModule::new(Level::Fine(1), &cb, m_count, k_count, 1.0).unwrap();
        let x: Vec<f64> = (0..m_count * d)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let (idx, _) = hard_quantize(&x, &qm).unwrap();
        for m in 0..m_count {
            let seg = &x[m * d..(m + 1) * d];
            let mut best = (0usize, f64::NEG_INFINITY);
            for k in 0..k_count {
                let w = unit_or_zero(cb.row(m * k_count + k));
                let s = dot(seg, &w);
                if s > best.1 {
                    best = (k, s);
                }
            }
            assert_eq!(idx[m] as usize, best.0);
        }
    }
}

#[test]
fn soft_quantize_gradient_matches_finite_differences_hand_case() {
    let cb = Matrix::from_rows(&[[0.9, 0.3], [-0.2, 1.1]]);
    let x = vec![0.7, -0.4];
    let up = vec![1.3, -0.6];
    let alpha = 2.0;
    let f = |x: &[f64], cb: &Matrix| {
        let qm = QuantizationModule::new(Level::Coarse, cb, 1, 2, alpha).unwrap();
        dot(&soft_quantize(x, &qm).unwrap().1, &up)
    };
    let qm = QuantizationModule::new(Level::Coarse, &cb, 1, 2, alpha).unwrap();
    let (dx, dcb) = grad_soft_quantize(&x, &qm, &up).unwrap();
    let h = 1e-5;
    let mut fd_x = vec![0.0; 2];
    for j in 0..2 {
        let (mut a, mut b) = (x.clone(), x.clone());
        a[j] += h;
        b[j] -= h;
        fd_x[j] = (f(&a, &cb) - f(&b, &cb)) / (2.0 * h);
    }
    assert!(relative_error(&dx, &fd_x) < 1e-4);
    let mut fd_cb = vec![0.0; 4];
    for j in 0..4 {
        let (mut a, mut b) = (cb.clone(), cb.clone());
        a.as_mut_slice()[j] += h;
        b.as_mut_slice()[j] -= h;
        fd_cb[j] = (f(&x, &a) - f(&x, &b)) / (2.0 * h);
    }
    assert!(relative_error(dcb.as_slice(), &fd_cb) < 1e-4);
    assert!(
        dcb.iter_rows().all(|r| l2(r) > 0.0),
        "every codeword receives gradient"
    );
}

fn random_embedding(rng: &mut ChaCha8Rng, dim: usize, levels: usize) -> HybridEmbedding {
    let mut v = || {
        (0..dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect::<Vec<f64>>()
    };
    HybridEmbedding {
        coarse: v(),
        fine: (1..levels).map(|_| v()).collect(),
    }
}

#[test]
fn lookup_table_entries_are_direct_dot_products() {
    let cfg = EngineConfig {
        num_subspaces: 2,
        num_codewords: 4,
        ..toy_config()
    };
    let params = init_parameters(&cfg).unwrap();
    let snap = CodebookSnapshot::from_params(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q = random_embedding(&mut rng, cfg.dim, cfg.num_levels());
    let t = LookupTable::from_embedding(&q, &snap).unwrap();
    let d = cfg.sub_dim();
    for lv in 0..cfg.num_levels() {
        for m in 0..2 {
            for k in 0..4 {
                let w = unit_or_zero(params.trainable.codebooks[lv].row(m * 4 + k));
                let want = dot(&q.level_by_index(lv)[m * d..(m + 1) * d], &w);
                assert!((t.entry(lv, m, k) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn zero_fine_query_level_gives_zero_table() {
    let cfg = toy_config();
    let params = init_parameters(&cfg).unwrap();
    let snap = CodebookSnapshot::from_params(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut q = random_embedding(&mut rng, cfg.dim, cfg.num_levels());
    q.fine[1] = vec![0.0; cfg.dim];
    let t = LookupTable::from_embedding(&q, &snap).unwrap();
    assert!(t.level(2).iter().all(|&v| v == 0.0));
    assert_eq!(t.aqs(2, &[3, 1]).unwrap(), 0.0);
}

#[test]
fn single_subspace_aqs_is_table_entry() {
    let cfg = EngineConfig {
        num_subspaces: 1,
        ..toy_config()
    };
    let params = init_parameters(&cfg).unwrap();
    let snap = CodebookSnapshot::from_params(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q = random_embedding(&mut rng, cfg.dim, cfg.num_levels());
    let t = LookupTable::from_embedding(&q, &snap).unwrap();
    for j in 0..4u16 {
        assert_eq!(t.aqs(0, &[j]).unwrap(), t.entry(0, 0, j as usize));
    }
}

/// D=2, M=1, K=2 with axis codewords; every score can be written down by hand.
fn axis_params() -> ParameterSet {
    let cfg = EngineConfig {
        dim: 2,
        text_dim: 2,
        num_subspaces: 1,
        num_codewords: 2,
        num_clusters: 1,
        num_experts: 1,
        ..Default::default()
    };
    let mut p = init_parameters(&cfg).unwrap();
    for cb in &mut p.trainable.codebooks {
        *cb = Matrix::from_rows(&[[1.0, 0.0], [0.0, 2.0]]);
    }
    p
}

#[test]
fn ten_item_hand_case() {
    let p = axis_params();
    let snap = Arc::new(CodebookSnapshot::from_params(&p));
    let query = HybridEmbedding {
        coarse: vec![0.6, 0.8],
        fine: vec![vec![-0.5, 0.25]],
    };
    // (coarse, fine) per item; the codeword is whichever axis has the larger
    // positive projection, first axis on ties.
    let items: Vec<HybridEmbedding> = [
        ([1.0, 0.1], [1.0, 0.0]),
        ([0.1, 1.0], [1.0, 0.0]),
        ([1.0, 0.1], [0.0, 1.0]),
        ([0.1, 1.0], [0.0, 1.0]),
        ([0.5, 0.5], [0.3, 0.2]),
        ([-1.0, 0.2], [-1.0, -1.0]),
        ([0.2, 0.3], [0.9, 1.0]),
        ([0.7, 0.0], [2.0, 1.0]),
        ([0.0, -1.0], [0.0, 0.0]),
        ([3.0, 3.1], [-0.1, 5.0]),
    ]
    .iter()
    .map(|(c, f)| HybridEmbedding {
        coarse: c.to_vec(),
        fine: vec![f.to_vec()],
    })
    .collect();
    // coarse codeword (1,0) scores 0.6, (0,1) scores 0.8;
    // fine codeword (1,0) scores -0.5, (0,1) scores 0.25; hybrid = coarse + fine.
    let want = [
        0.6 - 0.5,
        0.8 - 0.5,
        0.6 + 0.25,
        0.8 + 0.25,
        0.6 - 0.5,
        0.8 - 0.5,
        0.8 + 0.25,
        0.6 - 0.5,
        0.6 - 0.5,
        0.8 + 0.25,
    ];
    let got = brute_force_scores(&query, &items, &snap, Reconstruction::Hard).unwrap();
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-12, "{got:?}");
    }
    let index = encode_embeddings(snap.clone(), &items).unwrap();
    let table = LookupTable::from_embedding(&query, &snap).unwrap();
    assert_eq!(index.score_all(&table).unwrap(), got);
    let hits = index.search(&table, 4, 1).unwrap();
    let ids: Vec<u64> = hits.iter().map(|h| h.id).collect();
    assert_eq!(ids, vec![3, 6, 9, 2]);

    let bypass = brute_force_scores(&query, &items, &snap, Reconstruction::Bypass).unwrap();
    for (b, it) in bypass.iter().zip(&items) {
        let want = dot(&query.coarse, &it.coarse) + dot(&query.fine[0], &it.fine[0]);
        assert!((b - want).abs() < 1e-12);
    }
}

#[test]
fn search_edge_cases() {
    let cfg = toy_config();
    let params = init_parameters(&cfg).unwrap();
    let data = toy_data(&cfg, 6, 10);
    let index = encode_database(&params, data.items()).unwrap();
    let q = &data.queries()[0];
    let all = hybrid_search(&params, q, &index, 100).unwrap();
    assert_eq!(all.len(), 6);
    assert!(all.windows(2).all(|w| w[0].score >= w[1].score));
    let oracle = brute_force_search(&params, q, data.items(), 100, Reconstruction::Hard).unwrap();
    assert_eq!(all, oracle);

    let one = encode_database(&params, &data.items()[..1]).unwrap();
    let hits = hybrid_search(&params, q, &one, 5).unwrap();
    assert_eq!(hits.len(), 1);
    assert_eq!(hits[0].id, 0);

    let empty = encode_database(&params, &[]).unwrap();
    assert!(empty.is_empty());
    assert!(hybrid_search(&params, q, &empty, 5).is_err());

    let again = encode_database(&params, data.items()).unwrap();
    assert!((0..6).all(|i| again.code(i) == index.code(i)));
}

#[test]
fn default_config_stores_256_bytes_per_item() {
    let cfg = EngineConfig::default();
    assert_eq!(cfg.code_bytes_per_item(), 256);
    let params = init_parameters(&cfg).unwrap();
    let snap = Arc::new(CodebookSnapshot::from_params(&params));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let embs: Vec<_> = (0..3)
        .map(|_| random_embedding(&mut rng, cfg.dim, 8))
        .collect();
    let index = encode_embeddings(snap, &embs).unwrap();
    assert_eq!(index.bytes_per_item(), 256);
}

#[test]
fn degenerate_item_reports_its_id() {
    let cfg = toy_config();
    let params = init_parameters(&cfg).unwrap();
    let data = toy_data(&cfg, 3, 1);
    let mut items = data.items().to_vec();
    let u: Vec<f64> = (0..cfg.dim).map(|j| j as f64 + 1.0).collect();
    let neg: Vec<f64> = u.iter().map(|v| -v).collect();
    items[2] = TokenBag::item(
        Matrix::from_rows(&[u, neg]),
        data.items()[2].tokens().clone(),
    )
    .unwrap();
    let err =
        hybridq_core::index::encode_database_with_ids(&params, &[10, 11, 12], &items).unwrap_err();
    assert!(
        matches!(err, hybridq_core::Error::DegenerateItem { id: Some(12) }),
        "{err}"
    );
}
