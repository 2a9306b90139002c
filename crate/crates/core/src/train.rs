//! Mini-batch training with Adam and a step-decayed learning rate.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::EngineConfig;
use crate::data::PairedDataset;
use crate::error::{Error, Result};
use crate::ghostvlad::Mode;
use crate::metrics::{query_to_item_ranks, recall_at, Scoring};
use crate::model::TokenBag;
use crate::objective::{backward_batch, forward_batch, LossBreakdown};
use crate::optim::{learning_rate_at, AdamState};
use crate::params::{init_parameters, ParameterSet};

/// Loss and learning rate of one completed step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// 1-based step number.
    pub step: u64,
    pub learning_rate: f64,
    pub loss: LossBreakdown,
}

impl StepReport {
    /// `step<TAB>lr<TAB>total<TAB>coarse<TAB>fine1...`
    pub fn log_line(&self) -> String {
        let mut s = format!(
            "{}\t{:e}\t{:.6}",
            self.step, self.learning_rate, self.loss.total
        );
        for l in &self.loss.levels {
            s.push_str(&format!("\t{:.6}", l.combined()));
        }
        s
    }
}

/// Header matching [`StepReport::log_line`] for `num_clusters` fine levels.
pub fn log_header(num_clusters: usize) -> String {
    let mut s = String::from("step\tlr\ttotal\tcoarse");
    for l in 1..=num_clusters {
        s.push_str(&format!("\tfine{l}"));
    }
    s
}

/// One optimisation step on a batch of matched pairs.
///
/// Running batch-norm statistics are updated from the query batch and then the
/// item batch. Nothing is modified when the loss is non-finite.
pub fn train_step(
    params: &mut ParameterSet,
    adam: &mut AdamState,
    queries: &[&TokenBag],
    items: &[&TokenBag],
) -> Result<StepReport> {
    let fwd = forward_batch(params, queries, items, Mode::Train)?;
    let grad = backward_batch(params, &fwd, queries, items);
    if !grad.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    let lr = learning_rate_at(&params.config, adam.step);
    let (qs, is) = fwd.batch_stats();
    if let Some(s) = qs {
        params.running.update(s);
    }
    if let Some(s) = is {
        params.running.update(s);
    }
    adam.update(&mut params.trainable, &grad, lr);
    Ok(StepReport {
        step: adam.step,
        learning_rate: lr,
        loss: fwd.loss,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    /// 1-based epoch number.
    pub epoch: usize,
    pub steps: u64,
    pub mean_loss: f64,
    /// Query→item hard-code R@1 on the validation set, when one is given.
    pub validation_r1: Option<f64>,
}

impl EpochSummary {
    pub fn log_line(&self) -> String {
        let v = self
            .validation_r1
            .map_or_else(|| "-".to_string(), |r| format!("{r:.4}"));
        format!(
            "epoch\t{}\t{}\t{:.6}\t{}",
            self.epoch, self.steps, self.mean_loss, v
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParameterSet,
    pub steps: u64,
    pub epochs: Vec<EpochSummary>,
    pub stopped_early: bool,
}

/// Trains from fresh parameters initialised with `config.seed`.
///
/// Each epoch reshuffles the training pairs with a generator seeded from the
/// config seed and the epoch number, then walks it in consecutive batches of
/// `batch_size` (the last batch may be smaller; single-pair batches are skipped
/// because their contrastive loss is identically zero). Training stops after
/// `max_epochs`, after `max_steps` when non-zero, or when validation R@1 has
/// not improved for `patience` epochs when `patience` is non-zero.
pub fn train_loop(
    config: &EngineConfig,
    train: &PairedDataset,
    validation: Option<&PairedDataset>,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set has no pairs"));
    }
    let mut params = init_parameters(config)?;
    let mut adam = AdamState::new(&params.trainable);
    let mut epochs = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut since_best = 0usize;
    let mut stopped_early = false;
    writeln!(log, "{}", log_header(config.num_clusters))?;

    'outer: for epoch in 1..=config.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64).rotate_left(32));
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0u64;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 && train.len() >= 2 {
                continue;
            }
            if config.max_steps > 0 && adam.step >= config.max_steps {
                stopped_early = true;
                break;
            }
            let (q, i) = train.batch(chunk);
            let report = train_step(&mut params, &mut adam, &q, &i)?;
            writeln!(log, "{}", report.log_line())?;
            sum += report.loss.total;
            count += 1;
        }
        let validation_r1 = match validation {
            Some(v) if !v.is_empty() => {
                let ranks = query_to_item_ranks(&params, v, None, Scoring::Tables)?;
                Some(recall_at(&ranks, 1))
            }
            _ => None,
        };
        let summary = EpochSummary {
            epoch,
            steps: count,
            mean_loss: if count > 0 { sum / count as f64 } else { 0.0 },
            validation_r1,
        };
        writeln!(log, "{}", summary.log_line())?;
        epochs.push(summary);
        if stopped_early || (config.max_steps > 0 && adam.step >= config.max_steps) {
            break 'outer;
        }
        if let (Some(r), true) = (validation_r1, config.patience > 0) {
            if r > best {
                best = r;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    stopped_early = true;
                    break 'outer;
                }
            }
        }
    }
    Ok(TrainOutcome {
        params,
        steps: adam.step,
        epochs,
        stopped_early,
    })
}
