//! Trie-constrained depth-synchronous beam search.
//!
//! At depth t every live hypothesis expands only to trie children present
//! in that depth's candidate set, adding the position-t log score of the
//! chosen token. The shortlist path scores candidates by raw inner products
//! (the log of the self-normalized estimate); the full-softmax path scores
//! every vocabulary token with exact log probabilities and is the fidelity
//! oracle for the shortlist path. Per depth the two differ by the constant
//! log partition, so orderings agree whenever the candidate sets do.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{encode_ids, logsumexp, vocab_logits, EncodeCache, ModelParams};
use crate::shortlist::ShortlistIndex;
use crate::trie::DocidTrie;

#[derive(Debug, Clone, Copy)]
pub struct DecodeOptions {
    /// Beam width B.
    pub beam_width: usize,
    /// Number of docids to return.
    pub top_n: usize,
    /// Per-position candidate cap after re-ranking (shortlist path only).
    pub candidate_cap: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            beam_width: 100,
            top_n: 100,
            candidate_cap: 512,
        }
    }
}

/// Ranked docids, best first. `filled` is false when the beam completed
/// fewer than the requested `top_n` docids.
#[derive(Debug, Clone)]
pub struct RankedResult {
    pub hits: Vec<(String, f64)>,
    pub filled: bool,
}

/// Re-rank a candidate token set for one output position: tokens sorted by
/// inner product with `x` descending (id-ascending ties), truncated to
/// `cap`. The scores are raw inner products, i.e. log self-normalized
/// estimates; ordering is identical to the full softmax ordering.
pub fn rerank_position(
    params: &ModelParams,
    candidates: &[u32],
    x: &[f64],
    cap: usize,
) -> Vec<(u32, f64)> {
    let d = params.config.hidden_dim;
    let w = params.slice(&params.layout.out_embed);
    let mut scored: Vec<(u32, f64)> = candidates
        .iter()
        .map(|&v| {
            let row = &w[v as usize * d..(v as usize + 1) * d];
            (v, x.iter().zip(row).map(|(a, b)| a * b).sum())
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(cap);
    scored
}

struct Hypothesis {
    node: u32,
    score: f64,
}

/// Core beam loop over per-depth score lookups. `score_at(t, token)` yields
/// the depth-t log score of a token, or None when the token is outside the
/// depth's candidate set (t is 1-based).
fn beam_search(
    trie: &DocidTrie,
    depths: usize,
    score_at: impl Fn(usize, u32) -> Option<f64>,
    opts: &DecodeOptions,
) -> RankedResult {
    let mut beam = vec![Hypothesis { node: 0, score: 0.0 }];
    let mut completed: Vec<(u32, f64)> = Vec::new();

    for t in 1..=depths {
        let mut expansions: Vec<Hypothesis> = Vec::new();
        for hyp in &beam {
            for &(token, child) in &trie.nodes[hyp.node as usize].children {
                if let Some(s) = score_at(t, token) {
                    expansions.push(Hypothesis {
                        node: child,
                        score: hyp.score + s,
                    });
                }
            }
        }
        // Deterministic prune: score descending, then node index ascending
        // (node order is canonical because the trie is).
        expansions.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.node.cmp(&b.node)));
        expansions.truncate(opts.beam_width);
        for hyp in &expansions {
            if let Some(docid_idx) = trie.nodes[hyp.node as usize].terminal {
                completed.push((docid_idx, hyp.score));
            }
        }
        if expansions.is_empty() {
            break;
        }
        beam = expansions;
    }

    completed.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| trie.docids[a.0 as usize].cmp(&trie.docids[b.0 as usize]))
    });
    completed.truncate(opts.top_n);
    RankedResult {
        filled: completed.len() >= opts.top_n,
        hits: completed
            .into_iter()
            .map(|(idx, s)| (trie.docids[idx as usize].clone(), s))
            .collect(),
    }
}

fn check_hashes(params: &ModelParams, trie: &DocidTrie, index: Option<&ShortlistIndex>) -> Result<()> {
    let expect = params.vocab_hash;
    if trie.vocab_hash != expect {
        return Err(Error::VocabMismatch {
            what: "docid trie",
            expected: hex(&expect),
            found: hex(&trie.vocab_hash),
        });
    }
    if let Some(ix) = index {
        if ix.vocab_hash != expect {
            return Err(Error::VocabMismatch {
                what: "shortlist index",
                expected: hex(&expect),
                found: hex(&ix.vocab_hash),
            });
        }
    }
    Ok(())
}

fn hex(h: &[u8; 32]) -> String {
    use std::fmt::Write;
    h.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn validate(opts: &DecodeOptions) -> Result<()> {
    if opts.beam_width == 0 || opts.top_n == 0 || opts.candidate_cap == 0 {
        return Err(Error::InvalidInput(
            "beam width, top_n and candidate cap must be positive".into(),
        ));
    }
    if opts.beam_width < opts.top_n {
        return Err(Error::InvalidInput(format!(
            "beam width {} must be at least top_n {}",
            opts.beam_width, opts.top_n
        )));
    }
    Ok(())
}

fn encode_query(params: &ModelParams, query: &str) -> EncodeCache {
    let (rows, _) = params.input_rows(query);
    encode_ids(params, &rows)
}

/// Shortlist decode: select the k best centroids for the query, re-rank
/// their token union per position, and beam-search the trie over those
/// candidates with self-normalized log scores.
pub fn decode(
    params: &ModelParams,
    index: &ShortlistIndex,
    trie: &DocidTrie,
    query: &str,
    opts: &DecodeOptions,
) -> Result<RankedResult> {
    validate(opts)?;
    check_hashes(params, trie, Some(index))?;
    let cache = encode_query(params, query);
    let shortlist = index.shortlist(cache.output_position(0));

    let depths = trie.max_depth.min(params.config.output_len);
    let per_depth: Vec<HashMap<u32, f64>> = (1..=depths)
        .map(|t| {
            rerank_position(params, &shortlist, cache.output_position(t), opts.candidate_cap)
                .into_iter()
                .collect()
        })
        .collect();

    Ok(beam_search(
        trie,
        depths,
        |t, token| per_depth[t - 1].get(&token).copied(),
        opts,
    ))
}

/// Oracle decode: identical search with the candidate set equal to the
/// whole vocabulary and exact log softmax scores at every position.
pub fn decode_full_softmax(
    params: &ModelParams,
    trie: &DocidTrie,
    query: &str,
    opts: &DecodeOptions,
) -> Result<RankedResult> {
    validate(opts)?;
    check_hashes(params, trie, None)?;
    let cache = encode_query(params, query);

    let depths = trie.max_depth.min(params.config.output_len);
    let per_depth: Vec<(Vec<f64>, f64)> = (1..=depths)
        .map(|t| {
            let z = vocab_logits(params, cache.output_position(t));
            let lse = logsumexp(&z);
            (z, lse)
        })
        .collect();

    Ok(beam_search(
        trie,
        depths,
        |t, token| {
            let (z, lse) = &per_depth[t - 1];
            Some(z[token as usize] - lse)
        },
        opts,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::toy_config;
    use crate::shortlist::materialize_token_sets;
    use crate::vocab::{build_vocabulary, generate_candidates, Vocabulary, NUM_RESERVED};

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn small_vocab(docids: &[String]) -> Vocabulary {
        let cands = generate_candidates(docids, 10, 1);
        build_vocabulary(&cands, docids, NUM_RESERVED + cands.len()).0
    }

    fn setup(docids: &[&str], seed: u64) -> (ModelParams, Vocabulary, DocidTrie) {
        let docids = strings(docids);
        let vocab = small_vocab(&docids);
        let trie = DocidTrie::build(&docids, &vocab);
        let s = crate::model::compute_output_len(&docids, &vocab);
        let params =
            ModelParams::init(toy_config(8, s, vocab.len()), vocab.hash(), seed).unwrap();
        (params, vocab, trie)
    }

    fn full_index(
        params: &ModelParams,
        seed: u64,
        num_centroids: usize,
        set_size: usize,
        probes: usize,
    ) -> ShortlistIndex {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let dim = params.config.hidden_dim;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let centroids: Vec<f64> = (0..num_centroids * dim)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let token_sets = materialize_token_sets(params, &centroids, num_centroids, set_size);
        ShortlistIndex {
            num_centroids,
            set_size,
            probes,
            hidden_dim: dim,
            centroids,
            token_sets,
            vocab_hash: params.vocab_hash,
        }
    }

    /// Independent oracle: score every docid by its per-position sums and
    /// rank (score desc, docid asc).
    fn brute_force_full(params: &ModelParams, trie: &DocidTrie, vocab: &Vocabulary, query: &str) -> Vec<(String, f64)> {
        let cache = encode_query(params, query);
        let depths = trie.max_depth.min(params.config.output_len);
        let per_depth: Vec<(Vec<f64>, f64)> = (1..=depths)
            .map(|t| {
                let z = vocab_logits(params, cache.output_position(t));
                let lse = logsumexp(&z);
                (z, lse)
            })
            .collect();
        let mut ranked: Vec<(String, f64)> = trie
            .docids
            .iter()
            .filter(|d| vocab.tokenize(d).len() <= depths)
            .map(|d| {
                let mut score = 0.0;
                for (t, &tok) in vocab.tokenize(d).iter().enumerate() {
                    let (z, lse) = &per_depth[t];
                    score += z[tok as usize] - lse;
                }
                (d.clone(), score)
            })
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
    }

    #[test]
    fn single_docid_forced_path() {
        let (params, vocab, trie) = setup(&["only one"], 3);
        let opts = DecodeOptions {
            beam_width: 1,
            top_n: 1,
            candidate_cap: 512,
        };
        let out = decode_full_softmax(&params, &trie, "whatever", &opts).unwrap();
        assert_eq!(out.hits.len(), 1);
        assert_eq!(out.hits[0].0, "only one");
        assert!(out.filled);

        // Forced-path score is the sum of that docid's per-position scores.
        let brute = brute_force_full(&params, &trie, &vocab, "whatever");
        assert_eq!(out.hits[0].1, brute[0].1);
    }

    #[test]
    fn full_decode_equals_brute_force_exactly() {
        let docids = [
            "red apple pie",
            "red car race",
            "green tea cup",
            "blue sky day",
            "old red barn",
            "tea for two",
        ];
        let (params, vocab, trie) = setup(&docids, 11);
        let opts = DecodeOptions {
            beam_width: trie.num_docids(),
            top_n: trie.num_docids(),
            candidate_cap: usize::MAX,
        };
        for query in ["red", "tea time", "", "something else entirely"] {
            let out = decode_full_softmax(&params, &trie, query, &opts).unwrap();
            let brute = brute_force_full(&params, &trie, &vocab, query);
            assert_eq!(out.hits, brute, "query {query:?}");
        }
    }

    #[test]
    fn shortlist_with_everything_matches_full_ordering() {
        let docids = ["alpha beta", "alpha gamma", "delta tree", "beta beta"];
        let (params, _vocab, trie) = setup(&docids, 19);
        // Probe every centroid with full-size sets: shortlist covers the vocabulary.
        let index = full_index(&params, 7, 3, params.config.vocab_size, 3);
        let opts = DecodeOptions {
            beam_width: 10,
            top_n: 10,
            candidate_cap: usize::MAX,
        };
        let a = decode(&params, &index, &trie, "alpha", &opts).unwrap();
        let b = decode_full_softmax(&params, &trie, "alpha", &opts).unwrap();
        let order_a: Vec<&String> = a.hits.iter().map(|(d, _)| d).collect();
        let order_b: Vec<&String> = b.hits.iter().map(|(d, _)| d).collect();
        assert_eq!(order_a, order_b);
    }

    #[test]
    fn constraint_soundness_returned_docids_in_corpus() {
        let docids = ["one fish", "two fish", "red fish", "blue fish"];
        let (params, _vocab, trie) = setup(&docids, 23);
        let index = full_index(&params, 5, 4, 40, 2);
        let opts = DecodeOptions::default();
        for query in ["fish", "zzz unseen", ""] {
            let out = decode(&params, &index, &trie, query, &opts).unwrap();
            for (d, _) in &out.hits {
                assert!(trie.contains_docid(d), "{d:?} not in corpus");
            }
        }
    }

    #[test]
    fn beam_width_one_no_terminal_flags_short() {
        // Candidate cap of 1 plus beam 1 can strand the search before any
        // terminal; the result must flag that it under-filled.
        let docids = ["aa bb", "aa cc", "dd ee"];
        let (params, _vocab, trie) = setup(&docids, 29);
        let index = full_index(&params, 2, 1, 2, 1);
        let opts = DecodeOptions {
            beam_width: 1,
            top_n: 1,
            candidate_cap: 1,
        };
        let out = decode(&params, &index, &trie, "aa", &opts).unwrap();
        if out.hits.is_empty() {
            assert!(!out.filled);
        }
    }

    #[test]
    fn top1_score_nondecreasing_in_beam_width() {
        let docids = [
            "red apple pie",
            "red car race",
            "green tea cup",
            "blue sky day",
            "old red barn",
        ];
        let (params, _vocab, trie) = setup(&docids, 31);
        let mut prev = f64::NEG_INFINITY;
        for b in [1, 2, 3, 5] {
            let opts = DecodeOptions {
                beam_width: b,
                top_n: 1,
                candidate_cap: usize::MAX,
            };
            let out = decode_full_softmax(&params, &trie, "red", &opts).unwrap();
            if let Some(&(_, s)) = out.hits.first() {
                assert!(s >= prev, "beam {b}: {s} < {prev}");
                prev = s;
            }
        }
    }

    #[test]
    fn rejects_beam_smaller_than_top_n() {
        let (params, _vocab, trie) = setup(&["a b"], 1);
        let opts = DecodeOptions {
            beam_width: 1,
            top_n: 5,
            candidate_cap: 16,
        };
        assert!(decode_full_softmax(&params, &trie, "q", &opts).is_err());
    }

    #[test]
    fn rejects_mismatched_vocab_hash() {
        let (params, _vocab, mut trie) = setup(&["a b"], 1);
        trie.vocab_hash = [9; 32];
        let opts = DecodeOptions::default();
        assert!(matches!(
            decode_full_softmax(&params, &trie, "q", &opts),
            Err(Error::VocabMismatch { .. })
        ));
    }

    #[test]
    fn rerank_orders_by_inner_product() {
        let (params, _vocab, _trie) = setup(&["x y"], 37);
        let x: Vec<f64> = (0..8).map(|i| (i as f64 * 0.61).cos()).collect();
        let cands: Vec<u32> = (0..params.config.vocab_size as u32).step_by(3).collect();
        let ranked = rerank_position(&params, &cands, &x, 4);
        assert_eq!(ranked.len(), 4);
        for w in ranked.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
        // All candidates returned when cap is large, sorted.
        let all = rerank_position(&params, &cands, &x, usize::MAX);
        assert_eq!(all.len(), cands.len());
    }

    #[test]
    fn interior_terminal_emits_and_continues() {
        let docids = ["ab", "ab ab"];
        let (params, _vocab, trie) = setup(&docids, 41);
        let opts = DecodeOptions {
            beam_width: 4,
            top_n: 4,
            candidate_cap: usize::MAX,
        };
        let out = decode_full_softmax(&params, &trie, "ab", &opts).unwrap();
        let docs: Vec<&str> = out.hits.iter().map(|(d, _)| d.as_str()).collect();
        assert!(docs.contains(&"ab"));
        assert!(docs.contains(&"ab ab"));
    }
}
