//! Adam training loop with linear warmup and linear decay.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::loss::{batch_loss_grad, Example, LossBreakdown, LossWeights};
use super::ModelParams;
use crate::error::{Error, Result};
use crate::vocab::PAD_ID;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub lambda2: f64,
    pub lambda3: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            warmup_steps: 0,
            lambda2: 0.25,
            lambda3: 1.0,
            seed: 0,
        }
    }
}

/// Per-epoch telemetry: mean-per-example losses and the mean squared log
/// partition, the quantity the self-normalization term drives toward zero.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub position_ce: f64,
    pub shortlist_ce: f64,
    pub selfnorm: f64,
    pub mean_sq_log_partition: f64,
    pub learning_rate: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Adam {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let c2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + Self::EPS);
        }
    }
}

fn schedule(base: f64, warmup: usize, total: usize, step: usize) -> f64 {
    if warmup > 0 && step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let decay_span = total.saturating_sub(warmup).max(1);
    let done = step.saturating_sub(warmup);
    base * (1.0 - done as f64 / decay_span as f64).max(0.0)
}

/// Minimize ℓ over the examples. Deterministic for a fixed seed: shuffling,
/// batching and gradient reduction all have fixed order.
pub fn train(
    params: &mut ModelParams,
    examples: &[Example],
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    if examples.is_empty() {
        return Err(Error::InvalidInput("no training examples".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    for ex in examples {
        if ex.target.len() != params.config.output_len {
            return Err(Error::InvalidInput(format!(
                "target of length {} does not match output length {}",
                ex.target.len(),
                params.config.output_len
            )));
        }
        if let Some(&bad) = ex.target.iter().find(|&&v| v as usize >= params.config.vocab_size) {
            return Err(Error::InvalidInput(format!("target token {bad} out of range")));
        }
    }

    let weights = LossWeights::new(cfg.lambda2, cfg.lambda3);
    let batches_per_epoch = examples.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut adam = Adam::new(params.num_params());
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x747261696e5f6d64); // train-shuffle stream
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut stats = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_losses = LossBreakdown::default();
        let mut included_positions = 0usize;
        let mut lr_last = 0.0;

        for batch_ids in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = batch_ids.iter().map(|&i| examples[i].clone()).collect();
            let (losses, mut grad) = batch_loss_grad(params, &batch, &weights);
            if !losses.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, step {step}; lower the learning rate \
                     (currently {})",
                    cfg.learning_rate
                )));
            }
            let inv = 1.0 / batch.len() as f64;
            for g in grad.iter_mut() {
                *g *= inv;
            }
            lr_last = schedule(cfg.learning_rate, cfg.warmup_steps, total_steps, step);
            adam.step(&mut params.data, &grad, lr_last);
            step += 1;

            epoch_losses.position_ce += losses.position_ce;
            epoch_losses.shortlist_ce += losses.shortlist_ce;
            epoch_losses.selfnorm += losses.selfnorm;
            for ex in &batch {
                included_positions += if params.config.mask_pad {
                    ex.target.iter().filter(|&&v| v != PAD_ID).count()
                } else {
                    ex.target.len()
                };
            }
        }

        let n = examples.len() as f64;
        let s = EpochStats {
            epoch,
            position_ce: epoch_losses.position_ce / n,
            shortlist_ce: epoch_losses.shortlist_ce / n,
            selfnorm: epoch_losses.selfnorm / n,
            mean_sq_log_partition: epoch_losses.selfnorm / included_positions.max(1) as f64,
            learning_rate: lr_last,
        };
        log::info!(
            "epoch {:>3}: ce/example {:.4}  shortlist {:.4}  selfnorm {:.4}  mean log²Z {:.5}  lr {:.6}",
            s.epoch,
            s.position_ce,
            s.shortlist_ce,
            s.selfnorm,
            s.mean_sq_log_partition,
            s.learning_rate
        );
        stats.push(s);
    }
    Ok(stats)
}

/// Mean squared log-partition over every included position of a dataset,
/// evaluated with current parameters (not training-time telemetry).
pub fn mean_sq_log_partition(params: &ModelParams, examples: &[Example]) -> f64 {
    let losses = super::loss::batch_losses(params, examples);
    let mut positions = 0usize;
    for ex in examples {
        positions += if params.config.mask_pad {
            ex.target.iter().filter(|&&v| v != PAD_ID).count()
        } else {
            ex.target.len()
        };
    }
    losses.selfnorm / positions.max(1) as f64
}
