//! Asymmetric-quantized contrastive loss at every level, and its exact gradient
//! wrt all trainable parameters.
//!
//! At each level the raw embeddings of one view act as queries against the
//! soft-quantized embeddings of the other view as keys, in both directions. The
//! two directional losses are averaged, and the hybrid loss is the coarse loss
//! plus the mean of the fine-level losses.

use crate::error::{Error, Result};
use crate::frontend::{
    coarse_item_embed, project_query_tokens, CoarseQueryCache, GatingProjection,
};
use crate::ghostvlad::{
    aggregate, aggregate_backward, assign, assign_backward, AggregateCache, Assignment, BatchStats,
    Mode, VladParams,
};
use crate::linalg::{axpy, dot, log_sum_exp, Matrix};
use crate::model::{Level, TokenBag, View};
use crate::params::{ParameterSet, Trainable};
use crate::quantizer::{NormalizedCodebook, SoftQuantized};

/// `queries · keysᵀ`
pub fn similarity_matrix(queries: &Matrix, keys: &Matrix) -> Matrix {
    let mut s = Matrix::zeros(queries.rows(), keys.rows());
    for (i, q) in queries.iter_rows().enumerate() {
        for (j, k) in keys.iter_rows().enumerate() {
            s.set(i, j, dot(q, k));
        }
    }
    s
}

/// Row-wise InfoNCE with the diagonal as positives:
/// `-(1/N) Σ_i log softmax_j(s_ij / τ)[i]`.
///
/// Returns the loss and its gradient wrt the similarity matrix.
pub fn infonce(sim: &Matrix, tau: f64) -> (f64, Matrix) {
    let n = sim.rows();
    let mut grad = Matrix::zeros(n, sim.cols());
    if n == 0 {
        return (0.0, grad);
    }
    let mut loss = 0.0;
    for i in 0..n {
        let logits: Vec<f64> = sim.row(i).iter().map(|s| s / tau).collect();
        let lse = log_sum_exp(&logits);
        loss += lse - logits[i];
        let g = grad.row_mut(i);
        for (j, l) in logits.iter().enumerate() {
            g[j] = (l - lse).exp() / (tau * n as f64);
        }
        g[i] -= 1.0 / (tau * n as f64);
    }
    (loss / n as f64, grad)
}

/// Loss of raw `queries` against quantized `keys` (row `i` of each is a matched pair).
pub fn aqcl_loss(queries: &Matrix, keys_quantized: &Matrix, tau: f64) -> f64 {
    infonce(&similarity_matrix(queries, keys_quantized), tau).0
}

/// Both directional losses of one level and their mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelLoss {
    pub level: Level,
    pub query_to_item: f64,
    pub item_to_query: f64,
}

impl LevelLoss {
    pub fn combined(&self) -> f64 {
        0.5 * (self.query_to_item + self.item_to_query)
    }
}

/// Symmetric level loss from raw and quantized embeddings of both views.
pub fn level_loss(
    level: Level,
    queries: &Matrix,
    queries_quantized: &Matrix,
    items: &Matrix,
    items_quantized: &Matrix,
    tau: f64,
) -> LevelLoss {
    LevelLoss {
        level,
        query_to_item: aqcl_loss(queries, items_quantized, tau),
        item_to_query: aqcl_loss(items, queries_quantized, tau),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// Coarse first, then fine levels `1..=L`.
    pub levels: Vec<LevelLoss>,
}

impl LossBreakdown {
    pub fn from_levels(levels: Vec<LevelLoss>) -> Self {
        let coarse = levels[0].combined();
        let fine = &levels[1..];
        let fine_mean = if fine.is_empty() {
            0.0
        } else {
            fine.iter().map(LevelLoss::combined).sum::<f64>() / fine.len() as f64
        };
        Self {
            total: coarse + fine_mean,
            levels,
        }
    }

    pub fn coarse(&self) -> &LevelLoss {
        &self.levels[0]
    }

    pub fn fine(&self) -> &[LevelLoss] {
        &self.levels[1..]
    }
}

/// Training-mode forward pass of one view over a batch.
struct ViewForward {
    /// Per level, one row per instance.
    raw: Vec<Matrix>,
    /// Per level, per instance.
    soft: Vec<Vec<SoftQuantized>>,
    coarse_cache: Vec<CoarseQueryCache>,
    /// Fine-path tokens of all instances stacked, with per-instance row offsets.
    tokens: Matrix,
    offsets: Vec<usize>,
    assignment: Assignment,
    aggregates: Vec<AggregateCache>,
}

fn stack(rows: &[Matrix], cols: usize) -> (Matrix, Vec<usize>) {
    let total: usize = rows.iter().map(Matrix::rows).sum();
    let mut data = Vec::with_capacity(total * cols);
    let mut offsets = Vec::with_capacity(rows.len() + 1);
    offsets.push(0);
    for m in rows {
        data.extend_from_slice(m.as_slice());
        offsets.push(offsets.last().unwrap() + m.rows());
    }
    (Matrix::from_vec(total, cols, data), offsets)
}

fn slice_rows(m: &Matrix, start: usize, end: usize) -> Matrix {
    Matrix::from_vec(
        end - start,
        m.cols(),
        m.as_slice()[start * m.cols()..end * m.cols()].to_vec(),
    )
}

fn check_bags(params: &ParameterSet, bags: &[&TokenBag], view: View) -> Result<()> {
    let cfg = &params.config;
    let dim = match view {
        View::Query => cfg.text_dim,
        View::Item => cfg.dim,
    };
    for bag in bags {
        if bag.view() != view {
            return Err(Error::format("batch", format!("expected {view:?} bags")));
        }
        if bag.dim() != dim {
            return Err(Error::DimensionMismatch {
                what: "token bag",
                expected: dim,
                got: bag.dim(),
            });
        }
        if view == View::Item && bag.condensed().rows() != cfg.num_experts {
            return Err(Error::DimensionMismatch {
                what: "item aggregate token count",
                expected: cfg.num_experts,
                got: bag.condensed().rows(),
            });
        }
    }
    Ok(())
}

fn forward_view(
    params: &ParameterSet,
    codebooks: &[NormalizedCodebook],
    bags: &[&TokenBag],
    view: View,
    mode: Mode,
) -> Result<ViewForward> {
    check_bags(params, bags, view)?;
    let t = &params.trainable;
    let cfg = &params.config;
    let n = bags.len();
    let mut coarse = Matrix::zeros(n, cfg.dim);
    let mut coarse_cache = Vec::new();
    let mut per_bag_tokens = Vec::with_capacity(n);
    for (i, bag) in bags.iter().enumerate() {
        match view {
            View::Query => {
                let gp = GatingProjection::new(&t.gate, &t.expert_proj);
                let (v, cache) = gp.forward(bag.condensed().row(0))?;
                coarse.row_mut(i).copy_from_slice(&v);
                coarse_cache.push(cache);
                per_bag_tokens.push(project_query_tokens(bag.tokens(), &t.token_proj)?);
            }
            View::Item => {
                let v = coarse_item_embed(bag.condensed()).map_err(|e| match e {
                    Error::DegenerateItem { .. } => Error::DegenerateItem { id: Some(i as u64) },
                    other => other,
                })?;
                coarse.row_mut(i).copy_from_slice(&v.vector);
                per_bag_tokens.push(bag.tokens().clone());
            }
        }
    }
    let (tokens, offsets) = stack(&per_bag_tokens, cfg.dim);
    let vp = VladParams::from_parts(t, &params.running);
    let assignment = assign(&tokens, &vp, mode)?;

    let mut raw = vec![coarse];
    raw.extend((0..cfg.num_clusters).map(|_| Matrix::zeros(n, cfg.dim)));
    let mut aggregates = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = (offsets[i], offsets[i + 1]);
        let (levels, cache) = aggregate(
            &slice_rows(&tokens, a, b),
            &slice_rows(&assignment.scores, a, b),
            &t.centroids,
        )?;
        for e in levels {
            raw[e.level.index()].row_mut(i).copy_from_slice(&e.vector);
        }
        aggregates.push(cache);
    }

    let mut soft = Vec::with_capacity(raw.len());
    for (lv, emb) in raw.iter().enumerate() {
        let level = emb
            .iter_rows()
            .map(|x| codebooks[lv].soft(x, cfg.alpha))
            .collect::<Result<Vec<_>>>()?;
        soft.push(level);
    }
    Ok(ViewForward {
        raw,
        soft,
        coarse_cache,
        tokens,
        offsets,
        assignment,
        aggregates,
    })
}

fn soft_matrix(level: &[SoftQuantized], dim: usize) -> Matrix {
    let mut m = Matrix::zeros(level.len(), dim);
    for (i, s) in level.iter().enumerate() {
        m.row_mut(i).copy_from_slice(&s.reconstruction);
    }
    m
}

/// Everything the backward pass needs from one batch forward.
pub struct BatchForward {
    query: ViewForward,
    item: ViewForward,
    codebooks: Vec<NormalizedCodebook>,
    pub loss: LossBreakdown,
    /// Per level: (dL/dS query→item, dL/dS item→query), already weighted.
    sim_grads: Vec<(Matrix, Matrix)>,
}

impl BatchForward {
    /// Batch-norm statistics of the query and item token batches (train mode only).
    pub fn batch_stats(&self) -> (Option<&BatchStats>, Option<&BatchStats>) {
        (
            self.query.assignment.stats.as_ref(),
            self.item.assignment.stats.as_ref(),
        )
    }
}

fn normalized_codebooks(params: &ParameterSet) -> Vec<NormalizedCodebook> {
    params
        .trainable
        .codebooks
        .iter()
        .map(|cb| {
            NormalizedCodebook::new(cb, params.config.num_subspaces, params.config.num_codewords)
        })
        .collect()
}

/// Runs the full forward pipeline on matched `(queries[i], items[i])` pairs.
pub fn forward_batch(
    params: &ParameterSet,
    queries: &[&TokenBag],
    items: &[&TokenBag],
    mode: Mode,
) -> Result<BatchForward> {
    if queries.is_empty() {
        return Err(Error::Empty("batch has no pairs"));
    }
    if queries.len() != items.len() {
        return Err(Error::DimensionMismatch {
            what: "batch pairs",
            expected: queries.len(),
            got: items.len(),
        });
    }
    let cfg = &params.config;
    let codebooks = normalized_codebooks(params);
    let query = forward_view(params, &codebooks, queries, View::Query, mode)?;
    let item = forward_view(params, &codebooks, items, View::Item, mode)?;

    let num_fine = cfg.num_clusters as f64;
    let mut levels = Vec::with_capacity(cfg.num_levels());
    let mut sim_grads = Vec::with_capacity(cfg.num_levels());
    for lv in 0..cfg.num_levels() {
        let level = Level::from_index(lv);
        let q_soft = soft_matrix(&query.soft[lv], cfg.dim);
        let i_soft = soft_matrix(&item.soft[lv], cfg.dim);
        let (l_qi, mut g_qi) = infonce(&similarity_matrix(&query.raw[lv], &i_soft), cfg.tau);
        let (l_iq, mut g_iq) = infonce(&similarity_matrix(&item.raw[lv], &q_soft), cfg.tau);
        if !l_qi.is_finite() || !l_iq.is_finite() {
            return Err(Error::NonFiniteLoss { level });
        }
        let weight = 0.5 * if lv == 0 { 1.0 } else { 1.0 / num_fine };
        g_qi.as_mut_slice().iter_mut().for_each(|g| *g *= weight);
        g_iq.as_mut_slice().iter_mut().for_each(|g| *g *= weight);
        levels.push(LevelLoss {
            level,
            query_to_item: l_qi,
            item_to_query: l_iq,
        });
        sim_grads.push((g_qi, g_iq));
    }
    let loss = LossBreakdown::from_levels(levels);
    if !loss.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            level: Level::Coarse,
        });
    }
    Ok(BatchForward {
        query,
        item,
        codebooks,
        loss,
        sim_grads,
    })
}

/// Hybrid loss of a batch of matched pairs (train-mode batch norm).
pub fn hybrid_loss(
    params: &ParameterSet,
    queries: &[&TokenBag],
    items: &[&TokenBag],
) -> Result<LossBreakdown> {
    Ok(forward_batch(params, queries, items, Mode::Train)?.loss)
}

/// `out[i] += Σ_j g[i][j] · keys[j]`
fn accumulate_rows(out: &mut Matrix, g: &Matrix, keys: &Matrix) {
    for i in 0..g.rows() {
        let row = out.row_mut(i);
        for (j, k) in keys.iter_rows().enumerate() {
            axpy(row, g.get(i, j), k);
        }
    }
}

/// `out[j] += Σ_i g[i][j] · queries[i]`
fn accumulate_cols(out: &mut Matrix, g: &Matrix, queries: &Matrix) {
    for (i, q) in queries.iter_rows().enumerate() {
        for j in 0..g.cols() {
            axpy(out.row_mut(j), g.get(i, j), q);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn backward_view(
    params: &ParameterSet,
    codebooks: &[NormalizedCodebook],
    fwd: &ViewForward,
    bags: &[&TokenBag],
    view: View,
    d_raw: &mut [Matrix],
    d_soft: &[Matrix],
    grad: &mut Trainable,
) {
    let cfg = &params.config;
    let t = &params.trainable;
    // quantized branch feeds back into the raw embeddings
    for lv in 0..cfg.num_levels() {
        for (i, sq) in fwd.soft[lv].iter().enumerate() {
            let dx = codebooks[lv].soft_backward(
                sq,
                cfg.alpha,
                d_soft[lv].row(i),
                &mut grad.codebooks[lv],
            );
            axpy(d_raw[lv].row_mut(i), 1.0, &dx);
        }
    }

    if view == View::Query {
        let gp = GatingProjection::new(&t.gate, &t.expert_proj);
        for (i, bag) in bags.iter().enumerate() {
            gp.backward(
                bag.condensed().row(0),
                &fwd.coarse_cache[i],
                d_raw[0].row(i),
                &mut grad.gate,
                &mut grad.expert_proj,
            );
        }
    }

    let mut d_tokens = Matrix::zeros(fwd.tokens.rows(), cfg.dim);
    let mut d_scores = Matrix::zeros(fwd.tokens.rows(), cfg.num_levels());
    for i in 0..bags.len() {
        let (a, b) = (fwd.offsets[i], fwd.offsets[i + 1]);
        let upstream: Vec<Vec<f64>> = (1..cfg.num_levels())
            .map(|lv| d_raw[lv].row(i).to_vec())
            .collect();
        let g = aggregate_backward(
            &slice_rows(&fwd.tokens, a, b),
            &slice_rows(&fwd.assignment.scores, a, b),
            &t.centroids,
            &fwd.aggregates[i],
            &upstream,
            &mut grad.centroids,
        );
        for r in 0..(b - a) {
            d_tokens.row_mut(a + r).copy_from_slice(g.tokens.row(r));
            d_scores.row_mut(a + r).copy_from_slice(g.scores.row(r));
        }
    }
    let vp = VladParams::from_parts(t, &params.running);
    let via_assign = assign_backward(&fwd.tokens, &vp, &fwd.assignment, &d_scores, grad);
    axpy(d_tokens.as_mut_slice(), 1.0, via_assign.tokens.as_slice());

    if view == View::Query {
        for (i, bag) in bags.iter().enumerate() {
            for (r, e) in bag.tokens().iter_rows().enumerate() {
                grad.token_proj
                    .add_outer(d_tokens.row(fwd.offsets[i] + r), e, 1.0);
            }
        }
    }
}

/// Exact gradient of the hybrid loss wrt every trainable parameter.
pub fn backward_batch(
    params: &ParameterSet,
    fwd: &BatchForward,
    queries: &[&TokenBag],
    items: &[&TokenBag],
) -> Trainable {
    let cfg = &params.config;
    let n = queries.len();
    let levels = cfg.num_levels();
    let zeros = || -> Vec<Matrix> { (0..levels).map(|_| Matrix::zeros(n, cfg.dim)).collect() };
    let (mut dq_raw, mut dq_soft, mut di_raw, mut di_soft) = (zeros(), zeros(), zeros(), zeros());
    for lv in 0..levels {
        let (g_qi, g_iq) = &fwd.sim_grads[lv];
        let q_soft = soft_matrix(&fwd.query.soft[lv], cfg.dim);
        let i_soft = soft_matrix(&fwd.item.soft[lv], cfg.dim);
        // S_qi = Q · Îᵀ ; S_iq = I · Q̂ᵀ
        accumulate_rows(&mut dq_raw[lv], g_qi, &i_soft);
        accumulate_cols(&mut di_soft[lv], g_qi, &fwd.query.raw[lv]);
        accumulate_rows(&mut di_raw[lv], g_iq, &q_soft);
        accumulate_cols(&mut dq_soft[lv], g_iq, &fwd.item.raw[lv]);
    }
    let mut grad = Trainable::zeros_like(&params.trainable);
    backward_view(
        params,
        &fwd.codebooks,
        &fwd.query,
        queries,
        View::Query,
        &mut dq_raw,
        &dq_soft,
        &mut grad,
    );
    backward_view(
        params,
        &fwd.codebooks,
        &fwd.item,
        items,
        View::Item,
        &mut di_raw,
        &di_soft,
        &mut grad,
    );
    grad
}

/// Hybrid loss and its gradient in one call.
pub fn hybrid_loss_and_grad(
    params: &ParameterSet,
    queries: &[&TokenBag],
    items: &[&TokenBag],
) -> Result<(BatchForward, Trainable)> {
    let fwd = forward_batch(params, queries, items, Mode::Train)?;
    let grad = backward_batch(params, &fwd, queries, items);
    Ok((fwd, grad))
}
