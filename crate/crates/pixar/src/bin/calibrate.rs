// Scratch calibration harness for the toy-system hyperparameters.
// Not part of the shipped surface; removed once numbers are frozen.

use std::collections::HashSet;
use std::time::Instant;

use pixar::decode::{decode, decode_full_softmax, DecodeOptions};
use pixar::model::{
    compute_output_len, mean_sq_log_partition, target_sequence, train, Example, ModelConfig,
    ModelParams, TrainConfig,
};
use pixar::shortlist::{train_centroids, ClusterTrainConfig};
use pixar::synth::{generate, SynthSpec};
use pixar::trie::DocidTrie;
use pixar::vocab::{build_vocabulary, generate_candidates};

fn main() {
    let t0 = Instant::now();
    let spec = SynthSpec {
        topics: 32,
        docids_per_topic: 32,
        templates_per_topic: 5,
        entities_per_topic: 12,
        train_queries_per_docid: 2,
        heldout_queries_per_docid: 1,
        seed: 7,
    };
    let data = generate(&spec);
    println!(
        "docids={} train={} heldout={} ({:?})",
        data.docids.len(),
        data.train_pairs.len(),
        data.heldout_pairs.len(),
        t0.elapsed()
    );

    let t = Instant::now();
    let cands = generate_candidates(&data.docids, 40, 3);
    let (vocab, stats) = build_vocabulary(&cands, &data.docids, 5000);
    println!(
        "cands={} vocab={} iters={} ({:?})",
        cands.len(),
        stats.actual,
        stats.iterations,
        t.elapsed()
    );

    let s = compute_output_len(&data.docids, &vocab);
    println!("output_len={s}");

    let cfg = ModelConfig {
        hidden_dim: 64,
        n_blocks: 2,
        n_heads: 4,
        ff_dim: 128,
        input_buckets: 4096,
        max_query_tokens: 12,
        output_len: s,
        vocab_size: vocab.len(),
        mask_pad: false,
        logit_clamp: 60.0,
    };
    let mut params = ModelParams::init(cfg, vocab.hash(), 7).unwrap();
    let examples: Vec<Example> = data
        .train_pairs
        .iter()
        .map(|(q, d)| Example {
            query: q.clone(),
            target: target_sequence(d, &vocab, s).unwrap(),
        })
        .collect();

    let trie = DocidTrie::build(&data.docids, &vocab);
    println!("trie nodes={} depth={}", trie.nodes.len(), trie.max_depth);

    for round in 0..1 {
        let t = Instant::now();
        let tcfg = TrainConfig {
            epochs: 24,
            batch_size: 64,
            learning_rate: 3e-3,
            warmup_steps: 0,
            lambda2: 0.25,
            lambda3: 1.0,
            seed: 7 + round,
        };
        let st = train(&mut params, &examples, &tcfg).unwrap();
        let last = st.last().unwrap();
        println!(
            "round {round}: epochs +10 ce={:.4} short={:.4} logZ²={:.4} ({:?})",
            last.position_ce,
            last.shortlist_ce,
            last.mean_sq_log_partition,
            t.elapsed()
        );

        let t = Instant::now();
        let ccfg = ClusterTrainConfig {
            num_centroids: 32,
            set_size: 256,
            probes: 4,
            epochs: 8,
            steps_per_epoch: 12,
            learning_rate: 0.05,
            seed: 7,
        };
        let index = train_centroids(&params, &examples, &ccfg).unwrap();
        println!("clusters trained ({:?})", t.elapsed());

        // Gold-token recall over held-out queries.
        let t = Instant::now();
        let heldout = &data.heldout_pairs[..200.min(data.heldout_pairs.len())];
        let mut recall_sum = 0.0;
        for (q, d) in heldout {
            let enc = pixar::model::encode(&params, q);
            let w0: HashSet<u32> = index
                .shortlist(enc.shortlist_embedding())
                .into_iter()
                .collect();
            let gold: Vec<u32> = vocab.tokenize(d);
            let hit = gold.iter().filter(|t| w0.contains(t)).count();
            recall_sum += hit as f64 / gold.len() as f64;
        }
        println!(
            "token recall={:.4} ({:?})",
            recall_sum / heldout.len() as f64,
            t.elapsed()
        );

        // Top-10 overlap, shortlist vs full.
        let t = Instant::now();
        let opts = DecodeOptions {
            beam_width: 100,
            top_n: 10,
            candidate_cap: 512,
        };
        let queries = &data.heldout_pairs[..100.min(data.heldout_pairs.len())];
        let mut overlap_sum = 0.0;
        let mut mrr = 0.0;
        for (q, d) in queries {
            let a = decode(&params, &index, &trie, q, &opts).unwrap();
            let b = decode_full_softmax(&params, &trie, q, &opts).unwrap();
            let sa: HashSet<&String> = a.hits.iter().map(|(x, _)| x).collect();
            let sb: HashSet<&String> = b.hits.iter().map(|(x, _)| x).collect();
            overlap_sum += sa.intersection(&sb).count() as f64 / 10.0;
            if let Some(rank) = b.hits.iter().position(|(x, _)| x == d) {
                mrr += 1.0 / (rank + 1) as f64;
            }
        }
        println!(
            "top10 overlap={:.4} full-path mrr@10={:.4} logZ²={:.4} ({:?})",
            overlap_sum / queries.len() as f64,
            mrr / queries.len() as f64,
            mean_sq_log_partition(&params, &examples),
            t.elapsed()
        );
    }
    println!("total {:?}", t0.elapsed());
}
