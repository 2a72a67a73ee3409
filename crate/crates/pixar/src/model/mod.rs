//! Trainable non-autoregressive encoder with a token-vector output head.
//!
//! A query is hashed into word buckets, prefixed with a CLS slot and
//! suffixed with `output_len` learned slot positions, then run through a
//! small pre-norm transformer. The final-layer output at CLS is the
//! shortlist embedding; the slot outputs score the target vocabulary
//! position-wise through inner products with per-token parameter vectors.
//!
//! Everything is f64 and hand-differentiated; `loss::batch_loss_grad` is
//! checked against central finite differences in the test suite.

mod encoder;
mod loss;
mod train;

pub use encoder::{encode, encode_ids, EncodeCache};
pub use loss::{
    batch_losses, batch_loss_grad, logsumexp, loss_position_ce, loss_selfnorm, loss_shortlist_ce,
    position_distribution, total_loss, unnormalized_score, vocab_logits, Example, LossBreakdown,
    LossWeights,
};
pub use train::{mean_sq_log_partition, train, EpochStats, TrainConfig};

use std::ops::Range;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::text::{split_query_words, stable_hash};
use crate::vocab::{Vocabulary, PAD_ID};

/// Architecture shape. Everything downstream of a trained model must agree
/// on these values, so they are serialized with the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub input_buckets: usize,
    pub max_query_tokens: usize,
    /// Output sequence length: number of per-position predictions.
    pub output_len: usize,
    pub vocab_size: usize,
    /// Skip PAD targets in the losses instead of training them.
    pub mask_pad: bool,
    /// Clamp applied to inner products before `exp` in the unnormalized path.
    pub logit_clamp: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.output_len == 0 || self.vocab_size == 0 {
            return Err(Error::InvalidConfig(
                "hidden_dim, output_len and vocab_size must be positive".into(),
            ));
        }
        if self.n_heads == 0 || self.hidden_dim % self.n_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "hidden_dim {} must be divisible by n_heads {}",
                self.hidden_dim, self.n_heads
            )));
        }
        if self.input_buckets == 0 || self.max_query_tokens == 0 {
            return Err(Error::InvalidConfig(
                "input_buckets and max_query_tokens must be positive".into(),
            ));
        }
        Ok(())
    }

    fn max_seq_len(&self) -> usize {
        1 + self.max_query_tokens + self.output_len
    }
}

/// Byte ranges of each named parameter block inside the flat vector.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub word_embed: Range<usize>,
    pub cls_embed: Range<usize>,
    pub slot_embed: Range<usize>,
    pub pos_embed: Range<usize>,
    pub blocks: Vec<BlockLayout>,
    pub final_norm_gamma: Range<usize>,
    pub final_norm_beta: Range<usize>,
    pub out_embed: Range<usize>,
    pub total: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockLayout {
    pub wq: Range<usize>,
    pub bq: Range<usize>,
    pub wk: Range<usize>,
    pub bk: Range<usize>,
    pub wv: Range<usize>,
    pub bv: Range<usize>,
    pub wo: Range<usize>,
    pub bo: Range<usize>,
    pub ln1_gamma: Range<usize>,
    pub ln1_beta: Range<usize>,
    pub ff1_w: Range<usize>,
    pub ff1_b: Range<usize>,
    pub ff2_w: Range<usize>,
    pub ff2_b: Range<usize>,
    pub ln2_gamma: Range<usize>,
    pub ln2_beta: Range<usize>,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Layout {
        let d = cfg.hidden_dim;
        let ff = cfg.ff_dim;
        let mut at = 0usize;
        let mut take = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };

        let word_embed = take(cfg.input_buckets * d);
        let cls_embed = take(d);
        let slot_embed = take(cfg.output_len * d);
        let pos_embed = take(cfg.max_seq_len() * d);
        let mut blocks = Vec::with_capacity(cfg.n_blocks);
        for _ in 0..cfg.n_blocks {
            blocks.push(BlockLayout {
                wq: take(d * d),
                bq: take(d),
                wk: take(d * d),
                bk: take(d),
                wv: take(d * d),
                bv: take(d),
                wo: take(d * d),
                bo: take(d),
                ln1_gamma: take(d),
                ln1_beta: take(d),
                ff1_w: take(ff * d),
                ff1_b: take(ff),
                ff2_w: take(d * ff),
                ff2_b: take(d),
                ln2_gamma: take(d),
                ln2_beta: take(d),
            });
        }
        let final_norm_gamma = take(d);
        let final_norm_beta = take(d);
        let out_embed = take(cfg.vocab_size * d);
        Layout {
            word_embed,
            cls_embed,
            slot_embed,
            pos_embed,
            blocks,
            final_norm_gamma,
            final_norm_beta,
            out_embed,
            total: at,
        }
    }
}

/// All trainable parameters in one flat f64 vector, plus the vocabulary
/// hash the model was trained against.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub data: Vec<f64>,
    pub vocab_hash: [u8; 32],
    pub(crate) layout: Layout,
}

impl ModelParams {
    /// Fresh parameters: small normal embeddings and projections, identity
    /// layer norms, zero biases. Seeded, so initialization is reproducible.
    pub fn init(config: ModelConfig, vocab_hash: [u8; 32], seed: u64) -> Result<ModelParams> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x6d6f64656c5f6969); // model-init stream
        let mut data = vec![0.0; layout.total];
        let scale = 0.02;
        for r in [
            &layout.word_embed,
            &layout.cls_embed,
            &layout.slot_embed,
            &layout.pos_embed,
            &layout.out_embed,
        ] {
            for x in &mut data[r.clone()] {
                *x = gauss(&mut rng) * scale;
            }
        }
        for b in &layout.blocks {
            for r in [&b.wq, &b.wk, &b.wv, &b.wo, &b.ff1_w, &b.ff2_w] {
                for x in &mut data[r.clone()] {
                    *x = gauss(&mut rng) * scale;
                }
            }
            data[b.ln1_gamma.clone()].fill(1.0);
            data[b.ln2_gamma.clone()].fill(1.0);
        }
        data[layout.final_norm_gamma.clone()].fill(1.0);
        Ok(ModelParams {
            config,
            data,
            vocab_hash,
            layout,
        })
    }

    /// Rebuild from a deserialized flat vector.
    pub fn from_data(config: ModelConfig, data: Vec<f64>, vocab_hash: [u8; 32]) -> Result<ModelParams> {
        config.validate()?;
        let layout = Layout::new(&config);
        if data.len() != layout.total {
            return Err(Error::InvalidInput(format!(
                "parameter vector has {} values, layout needs {}",
                data.len(),
                layout.total
            )));
        }
        Ok(ModelParams {
            config,
            data,
            vocab_hash,
            layout,
        })
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    /// Token parameter vector for target token `v`.
    pub fn out_vec(&self, v: u32) -> &[f64] {
        let d = self.config.hidden_dim;
        let base = self.layout.out_embed.start + v as usize * d;
        &self.data[base..base + d]
    }

    pub(crate) fn slice(&self, r: &Range<usize>) -> &[f64] {
        &self.data[r.clone()]
    }

    /// Map a query string to input embedding rows: CLS, hashed word buckets
    /// (truncated to the configured maximum), then the output slots.
    pub fn input_rows(&self, query: &str) -> (Vec<InputRow>, bool) {
        let words = split_query_words(query);
        let truncated = words.len() > self.config.max_query_tokens;
        let mut rows = Vec::with_capacity(1 + words.len().min(self.config.max_query_tokens) + self.config.output_len);
        rows.push(InputRow::Cls);
        for w in words.iter().take(self.config.max_query_tokens) {
            rows.push(InputRow::Word(
                (stable_hash(w) % self.config.input_buckets as u64) as usize,
            ));
        }
        for t in 0..self.config.output_len {
            rows.push(InputRow::Slot(t));
        }
        (rows, truncated)
    }
}

/// Source of one input position's embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputRow {
    Cls,
    Word(usize),
    Slot(usize),
}

/// Box-Muller standard normal.
fn gauss(rng: &mut ChaCha20Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// The s+1 output vectors for one query.
#[derive(Debug, Clone)]
pub struct QueryEncoding {
    /// Row 0 is the shortlist embedding, rows 1..=s the position embeddings.
    pub vectors: Vec<Vec<f64>>,
    pub truncated: bool,
}

impl QueryEncoding {
    pub fn shortlist_embedding(&self) -> &[f64] {
        &self.vectors[0]
    }

    /// Position embedding for output position `t` (1-based).
    pub fn position_embedding(&self, t: usize) -> &[f64] {
        &self.vectors[t]
    }

    pub fn output_len(&self) -> usize {
        self.vectors.len() - 1
    }
}

/// Tokenized docids never exceed the model's output length by construction;
/// compute that bound from the corpus.
pub fn compute_output_len(docids: &[String], vocab: &Vocabulary) -> usize {
    docids
        .iter()
        .map(|d| vocab.tokenize(d).len())
        .max()
        .unwrap_or(1)
        .max(1)
}

/// Tokenize and PAD-extend a docid to the model's output length.
pub fn target_sequence(docid: &str, vocab: &Vocabulary, output_len: usize) -> Result<Vec<u32>> {
    let mut ids = vocab.tokenize(docid);
    if ids.len() > output_len {
        return Err(Error::InvalidInput(format!(
            "docid {docid:?} tokenizes to {} tokens, beyond output length {output_len}",
            ids.len()
        )));
    }
    ids.resize(output_len, PAD_ID);
    Ok(ids)
}

#[cfg(test)]
pub(crate) fn toy_config(hidden_dim: usize, output_len: usize, vocab_size: usize) -> ModelConfig {
    ModelConfig {
        hidden_dim,
        n_blocks: 2,
        n_heads: 2,
        ff_dim: hidden_dim * 2,
        input_buckets: 64,
        max_query_tokens: 8,
        output_len,
        vocab_size,
        mask_pad: false,
        logit_clamp: 60.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_covers_all_params() {
        let cfg = toy_config(8, 4, 50);
        let params = ModelParams::init(cfg, [0; 32], 7).unwrap();
        assert_eq!(params.data.len(), params.num_params());
        assert!(params.data.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = toy_config(8, 4, 50);
        let a = ModelParams::init(cfg.clone(), [0; 32], 3).unwrap();
        let b = ModelParams::init(cfg.clone(), [0; 32], 3).unwrap();
        let c = ModelParams::init(cfg, [0; 32], 4).unwrap();
        assert_eq!(a.data, b.data);
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn config_rejects_bad_heads() {
        let mut cfg = toy_config(8, 4, 50);
        cfg.n_heads = 3;
        assert!(ModelParams::init(cfg, [0; 32], 0).is_err());
    }

    #[test]
    fn input_rows_truncate_and_flag() {
        let cfg = toy_config(8, 2, 50);
        let params = ModelParams::init(cfg, [0; 32], 0).unwrap();
        let (rows, truncated) = params.input_rows("one two three four five six seven eight nine");
        assert!(truncated);
        assert_eq!(rows.len(), 1 + 8 + 2);
        assert_eq!(rows[0], InputRow::Cls);
        assert_eq!(rows[9], InputRow::Slot(0));
    }
}
