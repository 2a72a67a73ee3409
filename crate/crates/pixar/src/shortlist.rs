//! Learned centroid index over the token parameter space.
//!
//! Each centroid carries the top tokens of its softmax over the vocabulary.
//! At query time the centroids with the largest inner product against the
//! shortlist embedding are probed; the union of their token sets is the
//! only part of the vocabulary the decoder ranks.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::model::{encode, logsumexp, vocab_logits, Example, ModelParams};
use crate::par;
use crate::vocab::PAD_ID;

#[derive(Debug, Clone)]
pub struct ShortlistIndex {
    pub num_centroids: usize,
    /// Tokens per centroid set.
    pub set_size: usize,
    /// Centroids probed per query.
    pub probes: usize,
    pub hidden_dim: usize,
    /// num_centroids × hidden_dim centroid vectors, row-major.
    pub centroids: Vec<f64>,
    /// One set of exactly `set_size` token ids per centroid, sorted ascending.
    pub token_sets: Vec<Vec<u32>>,
    pub vocab_hash: [u8; 32],
}

#[derive(Debug, Clone)]
pub struct ClusterTrainConfig {
    pub num_centroids: usize,
    pub set_size: usize,
    pub probes: usize,
    /// Assignment/update rounds.
    pub epochs: usize,
    /// Gradient steps per round with assignments held fixed.
    pub steps_per_epoch: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ClusterTrainConfig {
    fn default() -> Self {
        ClusterTrainConfig {
            num_centroids: 4096,
            set_size: 20000,
            probes: 5,
            epochs: 10,
            steps_per_epoch: 10,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

impl ShortlistIndex {
    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.hidden_dim..(i + 1) * self.hidden_dim]
    }

    /// Index of the centroid with the largest inner product against `x`;
    /// ties break to the smaller index.
    pub fn assign_centroid(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for i in 0..self.num_centroids {
            let s = dot(x, self.centroid(i));
            if s > best_score {
                best_score = s;
                best = i;
            }
        }
        best
    }

    /// The probed centroid indices by inner product, score-descending with
    /// index-ascending ties.
    pub fn top_centroids(&self, x: &[f64]) -> Vec<usize> {
        let mut scored: Vec<(f64, usize)> = (0..self.num_centroids)
            .map(|i| (dot(x, self.centroid(i)), i))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.truncate(self.probes);
        scored.into_iter().map(|(_, i)| i).collect()
    }

    /// The query's shortlist: deduplicated union of the probed centroids'
    /// token sets, sorted ascending. Size is at most set_size × probes.
    pub fn shortlist(&self, x: &[f64]) -> Vec<u32> {
        let mut union: Vec<u32> = self
            .top_centroids(x)
            .into_iter()
            .flat_map(|i| self.token_sets[i].iter().copied())
            .collect();
        union.sort_unstable();
        union.dedup();
        union
    }
}

/// Softmax over the vocabulary induced by a centroid vector.
pub fn centroid_distribution(params: &ModelParams, centroid: &[f64]) -> Vec<f64> {
    let mut z = vocab_logits(params, centroid);
    let lse = logsumexp(&z);
    for v in z.iter_mut() {
        *v = (*v - lse).exp();
    }
    z
}

/// Exactly the top `count` token ids under inner product with `centroid`
/// (equivalently under its softmax), ties broken by ascending token id.
/// Returned sorted by id for set operations.
pub fn top_tokens(params: &ModelParams, centroid: &[f64], count: usize) -> Vec<u32> {
    let z = vocab_logits(params, centroid);
    let mut ids: Vec<u32> = (0..z.len() as u32).collect();
    let count = count.min(z.len());
    ids.sort_by(|&a, &b| z[b as usize].total_cmp(&z[a as usize]).then(a.cmp(&b)));
    ids.truncate(count);
    ids.sort_unstable();
    ids
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// k-means++-style seeding over the shortlist embeddings: the first centroid
/// is a uniform draw, later ones are drawn proportional to squared distance
/// from the nearest chosen centroid.
fn seed_centroids(
    embeddings: &[Vec<f64>],
    num_centroids: usize,
    dim: usize,
    rng: &mut ChaCha20Rng,
) -> Vec<f64> {
    let n = embeddings.len();
    let mut centroids = Vec::with_capacity(num_centroids * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(&embeddings[first]);

    let mut dist2: Vec<f64> = embeddings
        .iter()
        .map(|e| sq_dist(e, &centroids[0..dim]))
        .collect();
    for i in 1..num_centroids {
        let total: f64 = dist2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (j, &w) in dist2.iter().enumerate() {
                if target < w {
                    chosen = j;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let start = i * dim;
        centroids.extend_from_slice(&embeddings[pick]);
        for (j, e) in embeddings.iter().enumerate() {
            dist2[j] = dist2[j].min(sq_dist(e, &centroids[start..start + dim]));
        }
    }
    centroids
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Train centroids against frozen encoder parameters.
///
/// Alternates hard assignment of each example to its best centroid with
/// Adam steps on the assigned-centroid cross entropy, assignments fixed.
/// Token parameter vectors are never updated here. Empty centroids are
/// reseeded from a random shortlist embedding and logged.
pub fn train_centroids(
    params: &ModelParams,
    examples: &[Example],
    cfg: &ClusterTrainConfig,
) -> Result<ShortlistIndex> {
    if examples.is_empty() {
        return Err(Error::InvalidInput(
            "no examples for centroid training".into(),
        ));
    }
    if cfg.num_centroids == 0 || cfg.set_size == 0 || cfg.probes == 0 {
        return Err(Error::InvalidConfig(
            "num_centroids, set_size and probes must be positive".into(),
        ));
    }
    if cfg.probes > cfg.num_centroids {
        return Err(Error::InvalidConfig(format!(
            "probes {} cannot exceed num_centroids {}",
            cfg.probes, cfg.num_centroids
        )));
    }

    let dim = params.config.hidden_dim;
    let vs = params.config.vocab_size;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x636c75737465725f); // cluster stream

    // Shortlist embeddings and per-example target-vector sums are fixed all
    // the way through; precompute both.
    let embeddings: Vec<Vec<f64>> = par::map_slice(examples, |ex| {
        encode(params, &ex.query).shortlist_embedding().to_vec()
    });
    let target_info: Vec<(Vec<f64>, f64)> = par::map_slice(examples, |ex| {
        let mut sum = vec![0.0; dim];
        let mut count = 0.0;
        for &tv in &ex.target {
            if params.config.mask_pad && tv == PAD_ID {
                continue;
            }
            for (s, w) in sum.iter_mut().zip(params.out_vec(tv)) {
                *s += w;
            }
            count += 1.0;
        }
        (sum, count)
    });

    let mut centroids = seed_centroids(&embeddings, cfg.num_centroids, dim, &mut rng);
    let mut adam_m = vec![0.0; cfg.num_centroids * dim];
    let mut adam_v = vec![0.0; cfg.num_centroids * dim];
    let mut adam_t = 0u64;

    for epoch in 0..cfg.epochs {
        // Hard assignment under current centroids.
        let assignment: Vec<usize> = par::map_slice(&embeddings, |e| {
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for i in 0..cfg.num_centroids {
                let s = dot(e, &centroids[i * dim..(i + 1) * dim]);
                if s > best_score {
                    best_score = s;
                    best = i;
                }
            }
            best
        });

        let mut members: Vec<Vec<usize>> = vec![Vec::new(); cfg.num_centroids];
        for (ex_idx, &c) in assignment.iter().enumerate() {
            members[c].push(ex_idx);
        }
        for (c, m) in members.iter().enumerate() {
            if m.is_empty() {
                let pick = rng.gen_range(0..embeddings.len());
                centroids[c * dim..(c + 1) * dim].copy_from_slice(&embeddings[pick]);
                log::warn!(
                    "epoch {epoch}: centroid {c} had no assigned queries; reseeded from example {pick}"
                );
            }
        }

        // Per-centroid aggregate of assigned targets: the gradient of the
        // assigned cross entropy is count·E_p[w] − Σ w_target, a function
        // of the centroid alone once these sums are fixed.
        let agg: Vec<(Vec<f64>, f64)> = members
            .iter()
            .map(|ids| {
                let mut sum = vec![0.0; dim];
                let mut count = 0.0;
                for &i in ids {
                    let (ts, tc) = &target_info[i];
                    for (s, w) in sum.iter_mut().zip(ts) {
                        *s += w;
                    }
                    count += tc;
                }
                (sum, count)
            })
            .collect();

        for _ in 0..cfg.steps_per_epoch {
            let grads: Vec<Vec<f64>> = par::map_range(cfg.num_centroids, |c| {
                let (tsum, tcount) = &agg[c];
                if *tcount == 0.0 {
                    return vec![0.0; dim];
                }
                let centroid = &centroids[c * dim..(c + 1) * dim];
                let probs = centroid_distribution(params, centroid);
                let mut expect = vec![0.0; dim];
                for (v, &p) in probs.iter().enumerate().take(vs) {
                    let w = params.out_vec(v as u32);
                    for j in 0..dim {
                        expect[j] += p * w[j];
                    }
                }
                (0..dim).map(|j| tcount * expect[j] - tsum[j]).collect()
            });

            adam_t += 1;
            let c1 = 1.0 - 0.9f64.powi(adam_t as i32);
            let c2 = 1.0 - 0.999f64.powi(adam_t as i32);
            for c in 0..cfg.num_centroids {
                for j in 0..dim {
                    let idx = c * dim + j;
                    let g = grads[c][j];
                    adam_m[idx] = 0.9 * adam_m[idx] + 0.1 * g;
                    adam_v[idx] = 0.999 * adam_v[idx] + 0.001 * g * g;
                    centroids[idx] -=
                        cfg.learning_rate * (adam_m[idx] / c1) / ((adam_v[idx] / c2).sqrt() + 1e-8);
                }
            }
        }
    }

    let token_sets = materialize_token_sets(params, &centroids, cfg.num_centroids, cfg.set_size);
    Ok(ShortlistIndex {
        num_centroids: cfg.num_centroids,
        set_size: cfg.set_size.min(vs),
        probes: cfg.probes,
        hidden_dim: dim,
        centroids,
        token_sets,
        vocab_hash: params.vocab_hash,
    })
}

/// Recompute every token set from scratch; used after centroid training and
/// whenever the token vectors change.
pub fn materialize_token_sets(
    params: &ModelParams,
    centroids: &[f64],
    num_centroids: usize,
    set_size: usize,
) -> Vec<Vec<u32>> {
    let dim = params.config.hidden_dim;
    par::map_range(num_centroids, |i| {
        top_tokens(params, &centroids[i * dim..(i + 1) * dim], set_size)
    })
}

/// Cross entropy of assigned-centroid softmax against the docid tokens:
/// the objective centroid training minimizes. Exposed for gradient checks.
pub fn assigned_cross_entropy(
    params: &ModelParams,
    centroids: &[f64],
    assignment: &[usize],
    examples: &[Example],
) -> f64 {
    let dim = params.config.hidden_dim;
    let mut total = 0.0;
    for (ex, &c) in examples.iter().zip(assignment) {
        let z = vocab_logits(params, &centroids[c * dim..(c + 1) * dim]);
        let lse = logsumexp(&z);
        for &tv in &ex.target {
            if params.config.mask_pad && tv == PAD_ID {
                continue;
            }
            total += lse - z[tv as usize];
        }
    }
    total
}

/// Analytic gradient of [`assigned_cross_entropy`] w.r.t. the centroids,
/// assignments fixed. Mirrors the update used inside training.
pub fn assigned_cross_entropy_grad(
    params: &ModelParams,
    centroids: &[f64],
    assignment: &[usize],
    examples: &[Example],
) -> Vec<f64> {
    let dim = params.config.hidden_dim;
    let vs = params.config.vocab_size;
    let num_centroids = centroids.len() / dim;
    let mut grad = vec![0.0; centroids.len()];
    for c in 0..num_centroids {
        let assigned: Vec<&Example> = examples
            .iter()
            .zip(assignment)
            .filter(|(_, &a)| a == c)
            .map(|(e, _)| e)
            .collect();
        if assigned.is_empty() {
            continue;
        }
        let probs = centroid_distribution(params, &centroids[c * dim..(c + 1) * dim]);
        let mut expect = vec![0.0; dim];
        for (v, &p) in probs.iter().enumerate().take(vs) {
            let w = params.out_vec(v as u32);
            for j in 0..dim {
                expect[j] += p * w[j];
            }
        }
        let g = &mut grad[c * dim..(c + 1) * dim];
        for ex in assigned {
            for &tv in &ex.target {
                if params.config.mask_pad && tv == PAD_ID {
                    continue;
                }
                let w = params.out_vec(tv);
                for j in 0..dim {
                    g[j] += expect[j] - w[j];
                }
            }
        }
    }
    grad
}
