//! Position-wise cross entropy, shortlist cross entropy, self-normalization,
//! and their exact gradients through the output head and encoder.

use super::encoder::{backward, dot, encode_ids};
use super::ModelParams;
use crate::par;
use crate::vocab::PAD_ID;

/// One training example: a query and its PAD-extended target token ids.
#[derive(Debug, Clone)]
pub struct Example {
    pub query: String,
    pub target: Vec<u32>,
}

/// Batch size used for deterministic chunked gradient accumulation. Chunk
/// boundaries are fixed, so the final chunk-ordered sum never depends on
/// thread scheduling.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub position_ce: f64,
    pub shortlist_ce: f64,
    pub selfnorm: f64,
}

impl LossBreakdown {
    fn add(&mut self, other: &LossBreakdown) {
        self.position_ce += other.position_ce;
        self.shortlist_ce += other.shortlist_ce;
        self.selfnorm += other.selfnorm;
    }

    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.position_ce * self.position_ce
            + w.shortlist_ce * self.shortlist_ce
            + w.selfnorm * self.selfnorm
    }

    pub fn is_finite(&self) -> bool {
        self.position_ce.is_finite() && self.shortlist_ce.is_finite() && self.selfnorm.is_finite()
    }
}

/// Coefficients on the three loss terms.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub position_ce: f64,
    pub shortlist_ce: f64,
    pub selfnorm: f64,
}

impl LossWeights {
    pub fn new(lambda2: f64, lambda3: f64) -> LossWeights {
        LossWeights {
            position_ce: 1.0,
            shortlist_ce: lambda2,
            selfnorm: lambda3,
        }
    }
}

/// Inner products of `x` with every token parameter vector.
pub fn vocab_logits(params: &ModelParams, x: &[f64]) -> Vec<f64> {
    let d = params.config.hidden_dim;
    let w = params.slice(&params.layout.out_embed);
    (0..params.config.vocab_size)
        .map(|v| dot(x, &w[v * d..(v + 1) * d]))
        .collect()
}

pub fn logsumexp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Full softmax over the vocabulary for one output vector, computed with
/// max subtraction. Sums to 1 within 1e-6.
pub fn position_distribution(params: &ModelParams, x: &[f64]) -> Vec<f64> {
    let mut z = vocab_logits(params, x);
    let lse = logsumexp(&z);
    for v in z.iter_mut() {
        *v = (*v - lse).exp();
    }
    z
}

/// Self-normalized estimate exp(x·w_v); logits are clamped before exp so
/// extreme values cannot overflow. Token ordering matches the full softmax.
pub fn unnormalized_score(params: &ModelParams, x: &[f64], v: u32) -> f64 {
    let c = params.config.logit_clamp;
    dot(x, params.out_vec(v)).clamp(-c, c).exp()
}

struct HeadStats {
    losses: LossBreakdown,
    /// Per included position t: (t, logits, lse).
    positions: Vec<(usize, Vec<f64>, f64)>,
    /// Shortlist row logits and lse.
    shortlist: (Vec<f64>, f64),
    /// Targets that participate (PAD skipped when masking).
    included: Vec<(usize, u32)>,
}

fn head_forward(params: &ModelParams, cache: &super::encoder::EncodeCache, target: &[u32]) -> HeadStats {
    let s = params.config.output_len;
    debug_assert_eq!(target.len(), s);
    let included: Vec<(usize, u32)> = (1..=s)
        .map(|t| (t, target[t - 1]))
        .filter(|(_, v)| !(params.config.mask_pad && *v == PAD_ID))
        .collect();

    let mut losses = LossBreakdown::default();
    let mut positions = Vec::with_capacity(included.len());
    for &(t, tv) in &included {
        let z = vocab_logits(params, cache.output_position(t));
        let lse = logsumexp(&z);
        losses.position_ce += lse - z[tv as usize];
        losses.selfnorm += lse * lse;
        positions.push((t, z, lse));
    }

    let z0 = vocab_logits(params, cache.output_position(0));
    let lse0 = logsumexp(&z0);
    for &(_, tv) in &included {
        losses.shortlist_ce += lse0 - z0[tv as usize];
    }

    HeadStats {
        losses,
        positions,
        shortlist: (z0, lse0),
        included,
    }
}

fn example_losses(params: &ModelParams, ex: &Example) -> LossBreakdown {
    let (rows, _) = params.input_rows(&ex.query);
    let cache = encode_ids(params, &rows);
    head_forward(params, &cache, &ex.target).losses
}

/// Loss values over a batch, following the summed-over-examples convention.
pub fn batch_losses(params: &ModelParams, batch: &[Example]) -> LossBreakdown {
    let partials = par::map_chunks(batch, GRAD_CHUNK, |chunk| {
        let mut acc = LossBreakdown::default();
        for ex in chunk {
            acc.add(&example_losses(params, ex));
        }
        acc
    });
    let mut total = LossBreakdown::default();
    for p in &partials {
        total.add(p);
    }
    total
}

/// ℓ over the batch: position CE + λ2·shortlist CE + λ3·self-norm.
pub fn total_loss(params: &ModelParams, batch: &[Example], lambda2: f64, lambda3: f64) -> f64 {
    batch_losses(params, batch).weighted(&LossWeights::new(lambda2, lambda3))
}

pub fn loss_position_ce(params: &ModelParams, batch: &[Example]) -> f64 {
    batch_losses(params, batch).position_ce
}

pub fn loss_shortlist_ce(params: &ModelParams, batch: &[Example]) -> f64 {
    batch_losses(params, batch).shortlist_ce
}

pub fn loss_selfnorm(params: &ModelParams, batch: &[Example]) -> f64 {
    batch_losses(params, batch).selfnorm
}

fn example_loss_grad(
    params: &ModelParams,
    ex: &Example,
    w: &LossWeights,
    grad: &mut [f64],
) -> LossBreakdown {
    let cfg = &params.config;
    let d = cfg.hidden_dim;
    let vs = cfg.vocab_size;
    let (rows, _) = params.input_rows(&ex.query);
    let cache = encode_ids(params, &rows);
    let stats = head_forward(params, &cache, &ex.target);

    let out_w = params.layout.out_embed.clone();
    let mut d_out = vec![0.0; cache.n * d];

    // Slot positions: d/dz of w1·(lse − z_tv) + λ3·lse² is
    // w1·(p − onehot) + 2·λ3·lse·p.
    for (t, z, lse) in &stats.positions {
        let tv = ex.target[t - 1] as usize;
        let x = cache.output_position(*t);
        let row = cache.q_len + t;
        let wdata = params.slice(&params.layout.out_embed);
        let dxrow = &mut d_out[row * d..(row + 1) * d];
        for v in 0..vs {
            let p = (z[v] - lse).exp();
            let mut g = w.position_ce * p + 2.0 * w.selfnorm * lse * p;
            if v == tv {
                g -= w.position_ce;
            }
            if g == 0.0 {
                continue;
            }
            let wrow = &wdata[v * d..(v + 1) * d];
            for (dx, w) in dxrow.iter_mut().zip(wrow) {
                *dx += g * w;
            }
            let gr = &mut grad[out_w.start + v * d..out_w.start + (v + 1) * d];
            for (gr_j, x_j) in gr.iter_mut().zip(x) {
                *gr_j += g * x_j;
            }
        }
    }

    // Shortlist position: λ2 · Σ_t (lse0 − z0_{d^t}).
    if w.shortlist_ce != 0.0 && !stats.included.is_empty() {
        let (z0, lse0) = &stats.shortlist;
        let mut counts = vec![0.0f64; vs];
        for &(_, tv) in &stats.included {
            counts[tv as usize] += 1.0;
        }
        let total = stats.included.len() as f64;
        let x0 = cache.output_position(0);
        let wdata = params.slice(&params.layout.out_embed);
        let dxrow = &mut d_out[0..d];
        for v in 0..vs {
            let p = (z0[v] - lse0).exp();
            let g = w.shortlist_ce * (total * p - counts[v]);
            if g == 0.0 {
                continue;
            }
            let wrow = &wdata[v * d..(v + 1) * d];
            for (dx, w) in dxrow.iter_mut().zip(wrow) {
                *dx += g * w;
            }
            let gr = &mut grad[out_w.start + v * d..out_w.start + (v + 1) * d];
            for (gr_j, x_j) in gr.iter_mut().zip(x0) {
                *gr_j += g * x_j;
            }
        }
    }

    backward(params, &rows, &cache, &d_out, grad);
    stats.losses
}

/// Losses and the full parameter gradient of the weighted sum over a batch.
/// Deterministic: per-chunk partials are reduced in chunk order.
pub fn batch_loss_grad(
    params: &ModelParams,
    batch: &[Example],
    w: &LossWeights,
) -> (LossBreakdown, Vec<f64>) {
    let partials = par::map_chunks(batch, GRAD_CHUNK, |chunk| {
        let mut grad = vec![0.0; params.num_params()];
        let mut acc = LossBreakdown::default();
        for ex in chunk {
            acc.add(&example_loss_grad(params, ex, w, &mut grad));
        }
        (acc, grad)
    });
    let mut losses = LossBreakdown::default();
    let mut grad = vec![0.0; params.num_params()];
    for (l, g) in &partials {
        losses.add(l);
        for (a, b) in grad.iter_mut().zip(g.iter()) {
            *a += b;
        }
    }
    (losses, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{toy_config, ModelParams};

    fn toy_params(vocab_size: usize, s: usize, seed: u64) -> ModelParams {
        ModelParams::init(toy_config(8, s, vocab_size), [0; 32], seed).unwrap()
    }

    fn ex(query: &str, target: Vec<u32>) -> Example {
        Example {
            query: query.into(),
            target,
        }
    }

    #[test]
    fn distribution_sums_to_one() {
        let params = toy_params(50, 2, 11);
        let enc = super::super::encode(&params, "probe query");
        for t in 0..=2 {
            let p = position_distribution(&params, &enc.vectors[t]);
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6, "sum={sum}");
            assert!(p.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn equal_logits_give_uniform() {
        // Zero output vectors ⇒ all inner products 0 ⇒ uniform.
        let mut params = toy_params(40, 2, 3);
        let r = params.layout.out_embed.clone();
        params.data[r].fill(0.0);
        let enc = super::super::encode(&params, "q");
        let p = position_distribution(&params, &enc.vectors[1]);
        for &x in &p {
            assert!((x - 1.0 / 40.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_softmax_two_tokens() {
        // x·w_a = 1, x·w_b = 0 ⇒ P(a) = e/(e+1).
        let mut params = toy_params(2, 1, 5);
        let r = params.layout.out_embed.clone();
        params.data[r].fill(0.0);
        let d = params.config.hidden_dim;
        let start = params.layout.out_embed.start;
        params.data[start] = 1.0; // w_a = e_1
        let mut x = vec![0.0; d];
        x[0] = 1.0;
        let p = position_distribution(&params, &x);
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((p[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn unnormalized_matches_exp_and_clamps() {
        let params = toy_params(10, 1, 5);
        let d = params.config.hidden_dim;
        let zero = vec![0.0; d];
        assert_eq!(unnormalized_score(&params, &zero, 3), 1.0);

        let mut unit = vec![0.0; d];
        // Align x with w_5 so the inner product is exactly 1.
        let w: Vec<f64> = params.out_vec(5).to_vec();
        let norm2: f64 = w.iter().map(|v| v * v).sum();
        for (u, wv) in unit.iter_mut().zip(w.iter()) {
            *u = wv / norm2;
        }
        assert!((unnormalized_score(&params, &unit, 5) - std::f64::consts::E).abs() < 1e-9);

        let huge = vec![1e6; d];
        assert!(unnormalized_score(&params, &huge, 5).is_finite());
    }

    #[test]
    fn rank_order_matches_full_softmax() {
        let params = toy_params(10, 1, 9);
        let enc = super::super::encode(&params, "ordering probe");
        let x = enc.position_embedding(1);
        let p = position_distribution(&params, x);
        let mut by_p: Vec<usize> = (0..10).collect();
        by_p.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
        let mut by_u: Vec<usize> = (0..10).collect();
        by_u.sort_by(|&a, &b| {
            unnormalized_score(&params, x, b as u32)
                .total_cmp(&unnormalized_score(&params, x, a as u32))
                .then(a.cmp(&b))
        });
        assert_eq!(by_p, by_u);
    }

    #[test]
    fn uniform_ce_closed_form() {
        // Uniform predictions over |V|=4 with s=2 ⇒ ℓ1 = ℓ2 = 2·ln 4.
        let mut params = toy_params(4, 2, 3);
        let r = params.layout.out_embed.clone();
        params.data[r].fill(0.0);
        let batch = vec![ex("anything", vec![1, 2])];
        let expect = 2.0 * 4.0f64.ln();
        assert!((loss_position_ce(&params, &batch) - expect).abs() < 1e-9);
        assert!((loss_shortlist_ce(&params, &batch) - expect).abs() < 1e-9);
    }

    #[test]
    fn selfnorm_zero_iff_unit_partition() {
        // All-zero out vectors: Z = |V| ⇒ ℓ3 = s·ln²|V|; then scale one
        // instance so Z = 1 exactly is hard to construct, so check the
        // analytic value instead.
        let mut params = toy_params(4, 2, 3);
        let r = params.layout.out_embed.clone();
        params.data[r].fill(0.0);
        let batch = vec![ex("q", vec![0, 0])];
        let expect = 2.0 * 4.0f64.ln().powi(2);
        assert!((loss_selfnorm(&params, &batch) - expect).abs() < 1e-9);
    }

    #[test]
    fn total_is_weighted_sum() {
        let params = toy_params(30, 3, 21);
        let batch = vec![ex("alpha beta", vec![3, 7, 0]), ex("gamma", vec![9, 9, 2])];
        let parts = batch_losses(&params, &batch);
        let total = total_loss(&params, &batch, 0.25, 1.0);
        assert!(
            (total - (parts.position_ce + 0.25 * parts.shortlist_ce + parts.selfnorm)).abs()
                < 1e-9
        );
        assert_eq!(total_loss(&params, &batch, 0.0, 0.0), parts.position_ce);
    }

    #[test]
    fn grad_matches_finite_differences_small() {
        // A quick smoke version of the acceptance-level check: every
        // parameter of a tiny model, all three losses at once.
        let params = toy_params(12, 2, 17);
        let batch = vec![ex("tiny query", vec![4, 0]), ex("other", vec![1, 11])];
        let w = LossWeights::new(0.5, 0.7);
        let (_, grad) = batch_loss_grad(&params, &batch, &w);

        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for i in (0..params.num_params()).step_by(7) {
            let mut plus = params.clone();
            plus.data[i] += h;
            let mut minus = params.clone();
            minus.data[i] -= h;
            let fd = (batch_losses(&plus, &batch).weighted(&w)
                - batch_losses(&minus, &batch).weighted(&w))
                / (2.0 * h);
            let denom = grad[i].abs().max(fd.abs()).max(1e-6);
            worst = worst.max((grad[i] - fd).abs() / denom);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn mask_pad_skips_pad_positions() {
        let mut params = toy_params(8, 3, 2);
        let batch = vec![ex("q", vec![3, 5, 0])];
        params.config.mask_pad = false;
        let unmasked = batch_losses(&params, &batch);
        params.config.mask_pad = true;
        let masked = batch_losses(&params, &batch);
        // The PAD-extended position contributes under inclusion, not under masking.
        assert!(masked.position_ce < unmasked.position_ce);
        assert!(masked.selfnorm < unmasked.selfnorm);
    }
}
