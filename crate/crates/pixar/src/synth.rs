//! Deterministic synthetic corpora for tests and benchmarks.
//!
//! Docids are phrase-heavy by construction: each topic owns a disjoint pool
//! of generated words combined as `<template phrase> <entity> <qualifier>`,
//! so phrase tokens repeat often enough to dominate a built vocabulary, and
//! queries are noisy variants of their docid with heavy lexical overlap.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub topics: usize,
    pub docids_per_topic: usize,
    pub templates_per_topic: usize,
    pub entities_per_topic: usize,
    /// Training query variants generated per docid.
    pub train_queries_per_docid: usize,
    /// Additional held-out variants per docid.
    pub heldout_queries_per_docid: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            topics: 8,
            docids_per_topic: 25,
            templates_per_topic: 4,
            entities_per_topic: 8,
            train_queries_per_docid: 2,
            heldout_queries_per_docid: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub docids: Vec<String>,
    pub train_pairs: Vec<(String, String)>,
    pub heldout_pairs: Vec<(String, String)>,
}

const CONSONANTS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

fn make_word(rng: &mut ChaCha20Rng, taken: &mut HashSet<String>) -> String {
    loop {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(CONSONANTS[rng.gen_range(0..CONSONANTS.len())]);
            w.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
        }
        if taken.insert(w.clone()) {
            return w;
        }
    }
}

fn make_phrase(rng: &mut ChaCha20Rng, taken: &mut HashSet<String>, words: usize) -> String {
    (0..words)
        .map(|_| make_word(rng, taken))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Build a corpus plus training and held-out query variants.
pub fn generate(spec: &SynthSpec) -> SynthData {
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed ^ 0x73796e74685f6778); // synth stream
    let mut taken = HashSet::new();

    let qualifiers: Vec<String> = (0..6).map(|_| make_word(&mut rng, &mut taken)).collect();

    let mut docids = Vec::new();
    let mut topic_words: Vec<Vec<String>> = Vec::new();
    for _ in 0..spec.topics {
        let templates: Vec<String> = (0..spec.templates_per_topic)
            .map(|_| {
                let words = rng.gen_range(2..=3);
                make_phrase(&mut rng, &mut taken, words)
            })
            .collect();
        let entities: Vec<String> = (0..spec.entities_per_topic)
            .map(|_| {
                let words = rng.gen_range(1..=2);
                make_phrase(&mut rng, &mut taken, words)
            })
            .collect();

        let mut combos: Vec<(usize, usize, usize)> = Vec::new();
        for t in 0..templates.len() {
            for e in 0..entities.len() {
                for q in 0..qualifiers.len() {
                    combos.push((t, e, q));
                }
            }
        }
        combos.shuffle(&mut rng);
        assert!(
            combos.len() >= spec.docids_per_topic,
            "not enough template/entity/qualifier combinations per topic"
        );
        for &(t, e, q) in combos.iter().take(spec.docids_per_topic) {
            docids.push(format!("{} {} {}", templates[t], entities[e], qualifiers[q]));
        }

        let mut pool: Vec<String> = Vec::new();
        for t in &templates {
            pool.extend(t.split(' ').map(str::to_string));
        }
        for e in &entities {
            pool.extend(e.split(' ').map(str::to_string));
        }
        topic_words.push(pool);
    }

    let topic_of = |docid_idx: usize| docid_idx / spec.docids_per_topic;
    let mut train_pairs = Vec::new();
    let mut heldout_pairs = Vec::new();
    for (i, docid) in docids.iter().enumerate() {
        let fillers = &topic_words[topic_of(i)];
        for v in 0..spec.train_queries_per_docid + spec.heldout_queries_per_docid {
            let q = query_variant(docid, fillers, &mut rng);
            if v < spec.train_queries_per_docid {
                train_pairs.push((q, docid.clone()));
            } else {
                heldout_pairs.push((q, docid.clone()));
            }
        }
    }

    SynthData {
        docids,
        train_pairs,
        heldout_pairs,
    }
}

/// A noisy but recognizable query for a docid: occasional word drops, one
/// possible adjacent swap, and a possible topic filler word in front.
fn query_variant(docid: &str, fillers: &[String], rng: &mut ChaCha20Rng) -> String {
    let words: Vec<&str> = docid.split(' ').collect();
    let mut kept: Vec<String> = words
        .iter()
        .map(|w| w.to_string())
        .filter(|_| rng.gen_range(0.0..1.0) >= 0.15)
        .collect();
    if kept.len() < 2 {
        kept = words.iter().map(|w| w.to_string()).collect();
    }
    if kept.len() >= 2 && rng.gen_range(0.0..1.0) < 0.2 {
        let i = rng.gen_range(0..kept.len() - 1);
        kept.swap(i, i + 1);
    }
    if rng.gen_range(0.0..1.0) < 0.3 && !fillers.is_empty() {
        let f = fillers[rng.gen_range(0..fillers.len())].clone();
        kept.insert(0, f);
    }
    kept.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec::default();
        let a = generate(&spec);
        let b = generate(&spec);
        assert_eq!(a.docids, b.docids);
        assert_eq!(a.train_pairs, b.train_pairs);
        assert_eq!(a.heldout_pairs, b.heldout_pairs);
    }

    #[test]
    fn shapes_match_spec() {
        let spec = SynthSpec {
            topics: 4,
            docids_per_topic: 10,
            train_queries_per_docid: 3,
            heldout_queries_per_docid: 2,
            ..SynthSpec::default()
        };
        let data = generate(&spec);
        assert_eq!(data.docids.len(), 40);
        assert_eq!(data.train_pairs.len(), 120);
        assert_eq!(data.heldout_pairs.len(), 80);
        for (q, d) in data.train_pairs.iter().chain(&data.heldout_pairs) {
            assert!(!q.is_empty());
            assert!(data.docids.contains(d));
        }
    }

    #[test]
    fn docids_are_phrase_heavy() {
        let data = generate(&SynthSpec::default());
        // Every docid has at least three words, so phrases exist to mine.
        for d in &data.docids {
            assert!(d.split(' ').count() >= 3, "{d}");
        }
    }
}
