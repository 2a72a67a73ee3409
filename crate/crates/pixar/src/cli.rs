//! Command-line surface: artifact lifecycle and batch operations.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use crate::artifact;
use crate::config::RunConfig;
use crate::corpus::Corpus;
use crate::decode::{decode, decode_full_softmax, DecodeOptions, RankedResult};
use crate::eval::{
    bench_latency, char_level_report, evaluate, sequence_length_report, EvalSet,
};
use crate::model::{
    compute_output_len, target_sequence, train, Example, ModelConfig, ModelParams, TrainConfig,
};
use crate::shortlist::{train_centroids, ClusterTrainConfig, ShortlistIndex};
use crate::text::escape;
use crate::trie::DocidTrie;
use crate::vocab::{build_vocabulary, generate_candidates, Token, Vocabulary, NUM_RESERVED};

#[derive(Parser)]
#[command(
    name = "pixar",
    about = "Phrase-vocabulary non-autoregressive generative retrieval",
    version
)]
struct Cli {
    /// key=value config file applied before --set overrides.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key (repeatable), e.g. --set epochs=50.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// RNG seed; mandatory for train and train-clusters.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Construct a phrase-inclusive vocabulary from a docid corpus.
    BuildVocab {
        /// One docid per line.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tokenize text or a corpus with a built vocabulary.
    Tokenize {
        #[arg(long)]
        vocab: PathBuf,
        /// Single text to tokenize.
        #[arg(long, conflicts_with = "corpus")]
        text: Option<String>,
        /// Tokenize every line of this file.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Print token strings instead of ids.
        #[arg(long)]
        show_tokens: bool,
        /// Fail unless detokenize(tokenize(x)) == x for every input.
        #[arg(long)]
        verify_roundtrip: bool,
    },
    /// Train the encoder and token vectors on query–docid pairs.
    Train {
        /// Docid corpus; fixes the output length.
        #[arg(long)]
        corpus: PathBuf,
        /// query<TAB>docid training pairs.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the docid trie.
    BuildTrie {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn shortlist centroids against a frozen model.
    TrainClusters {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode the top docids for one query.
    Query {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        trie: PathBuf,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        query: String,
        /// Use the exact softmax over the whole vocabulary instead of the
        /// shortlist index.
        #[arg(long)]
        full_softmax: bool,
    },
    /// Retrieval metrics over an eval set.
    Eval {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        trie: PathBuf,
        #[arg(long)]
        index: Option<PathBuf>,
        /// query<TAB>docid1|docid2|... relevance file.
        #[arg(long)]
        evalset: PathBuf,
        /// Metric cutoffs.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 5, 20, 100])]
        ks: Vec<usize>,
        #[arg(long)]
        full_softmax: bool,
        /// Also write machine-readable key=value records here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-query decode latency with warmup.
    Bench {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        trie: PathBuf,
        #[arg(long)]
        index: Option<PathBuf>,
        /// One query per line.
        #[arg(long)]
        queries: PathBuf,
        /// Un-timed passes over the query list before measuring.
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        /// Bench the full-softmax path instead of the shortlist path.
        #[arg(long)]
        full_softmax: bool,
        /// Bench both paths and report the speedup.
        #[arg(long, conflicts_with = "full_softmax")]
        compare: bool,
    },
    /// Tokenization statistics of a corpus under a vocabulary.
    Stats {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
}

/// Entry point: parse, dispatch, map errors to a nonzero exit.
pub fn run() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for kv in &cli.overrides {
        let (key, value) = kv
            .split_once('=')
            .with_context(|| format!("--set {kv:?} is not KEY=VALUE"))?;
        cfg.set(key.trim(), value.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    cfg.validate()?;

    match cli.command {
        Command::BuildVocab { corpus, out } => build_vocab_cmd(&cfg, &corpus, &out),
        Command::Tokenize {
            vocab,
            text,
            corpus,
            show_tokens,
            verify_roundtrip,
        } => tokenize_cmd(&vocab, text, corpus, show_tokens, verify_roundtrip),
        Command::Train {
            corpus,
            pairs,
            vocab,
            out,
        } => train_cmd(&cfg, &corpus, &pairs, &vocab, &out),
        Command::BuildTrie { corpus, vocab, out } => build_trie_cmd(&corpus, &vocab, &out),
        Command::TrainClusters {
            pairs,
            vocab,
            model,
            out,
        } => train_clusters_cmd(&cfg, &pairs, &vocab, &model, &out),
        Command::Query {
            vocab,
            model,
            trie,
            index,
            query,
            full_softmax,
        } => query_cmd(&cfg, &vocab, &model, &trie, index.as_deref(), &query, full_softmax),
        Command::Eval {
            vocab,
            model,
            trie,
            index,
            evalset,
            ks,
            full_softmax,
            out,
        } => eval_cmd(
            &cfg,
            &vocab,
            &model,
            &trie,
            index.as_deref(),
            &evalset,
            &ks,
            full_softmax,
            out.as_deref(),
        ),
        Command::Bench {
            vocab,
            model,
            trie,
            index,
            queries,
            warmup,
            full_softmax,
            compare,
        } => bench_cmd(
            &cfg,
            &vocab,
            &model,
            &trie,
            index.as_deref(),
            &queries,
            warmup,
            full_softmax,
            compare,
        ),
        Command::Stats { vocab, corpus } => stats_cmd(&vocab, &corpus),
    }
}

fn build_vocab_cmd(cfg: &RunConfig, corpus_path: &Path, out: &Path) -> Result<()> {
    let docids = Corpus::load_docids(corpus_path)?;
    let corpus = Corpus::new(docids)?;
    let candidates =
        generate_candidates(&corpus.docids, cfg.max_candidate_len, cfg.min_occur);
    log::info!("{} candidates above min_occur {}", candidates.len(), cfg.min_occur);
    let (vocab, stats) = build_vocabulary(&candidates, &corpus.docids, cfg.target_vocab_size);
    vocab.save(out)?;
    println!(
        "vocabulary: {} tokens (requested {}, {} pruning passes) -> {}",
        stats.actual,
        stats.requested,
        stats.iterations,
        out.display()
    );
    println!("vocab_hash={}", vocab.hash_hex());
    Ok(())
}

fn tokenize_cmd(
    vocab_path: &Path,
    text: Option<String>,
    corpus: Option<PathBuf>,
    show_tokens: bool,
    verify_roundtrip: bool,
) -> Result<()> {
    let vocab = Vocabulary::load(vocab_path)?;
    let inputs: Vec<String> = match (text, corpus) {
        (Some(t), None) => vec![t],
        (None, Some(path)) => Corpus::load_docids(&path)?,
        (None, None) => bail!("provide --text or --corpus"),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    let mut total_tokens = 0usize;
    for input in &inputs {
        let ids = vocab.tokenize(input);
        total_tokens += ids.len();
        if verify_roundtrip {
            let back = vocab.detokenize(&ids)?;
            if &back != input {
                bail!("roundtrip mismatch: {input:?} -> {back:?}");
            }
        }
        let rendered: Vec<String> = if show_tokens {
            ids.iter().map(|&id| escape(&vocab.describe(id))).collect()
        } else {
            ids.iter().map(|id| id.to_string()).collect()
        };
        println!("{}", rendered.join(" "));
    }
    log::info!(
        "{} inputs, {} tokens, mean {:.2} tokens/input{}",
        inputs.len(),
        total_tokens,
        total_tokens as f64 / inputs.len().max(1) as f64,
        if verify_roundtrip { ", roundtrip exact" } else { "" }
    );
    Ok(())
}

fn load_examples(
    pairs: &[(String, String)],
    vocab: &Vocabulary,
    output_len: usize,
) -> Result<Vec<Example>> {
    pairs
        .iter()
        .map(|(q, d)| {
            Ok(Example {
                query: q.clone(),
                target: target_sequence(d, vocab, output_len)?,
            })
        })
        .collect::<crate::error::Result<Vec<_>>>()
        .map_err(Into::into)
}

fn train_cmd(
    cfg: &RunConfig,
    corpus_path: &Path,
    pairs_path: &Path,
    vocab_path: &Path,
    out: &Path,
) -> Result<()> {
    let seed = cfg.require_seed()?;
    let vocab = Vocabulary::load(vocab_path)?;
    let docids = Corpus::load_docids(corpus_path)?;
    let pairs = Corpus::load_pairs(pairs_path)?;
    let corpus = Corpus::with_pairs(docids, pairs)?;

    let output_len = cfg
        .output_len
        .unwrap_or_else(|| compute_output_len(&corpus.docids, &vocab));
    let model_cfg = ModelConfig {
        hidden_dim: cfg.hidden_dim,
        n_blocks: cfg.num_blocks,
        n_heads: cfg.num_heads,
        ff_dim: cfg.ff_dim,
        input_buckets: cfg.input_buckets,
        max_query_tokens: cfg.max_query_tokens,
        output_len,
        vocab_size: vocab.len(),
        mask_pad: cfg.mask_pad,
        logit_clamp: 60.0,
    };
    let mut params = ModelParams::init(model_cfg, vocab.hash(), seed)?;
    let examples = load_examples(&corpus.pairs, &vocab, output_len)?;
    log::info!(
        "training on {} pairs, output length {}, {} parameters",
        examples.len(),
        output_len,
        params.num_params()
    );
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        warmup_steps: cfg.warmup_steps,
        lambda2: cfg.lambda2,
        lambda3: cfg.lambda3,
        seed,
    };
    let stats = train(&mut params, &examples, &train_cfg)?;
    artifact::save_model(out, &params)?;
    if let Some(last) = stats.last() {
        println!(
            "trained {} epochs: ce/example {:.4}, mean log^2 partition {:.5} -> {}",
            stats.len(),
            last.position_ce,
            last.mean_sq_log_partition,
            out.display()
        );
    } else {
        println!("trained 0 epochs (initialization saved) -> {}", out.display());
    }
    Ok(())
}

fn build_trie_cmd(corpus_path: &Path, vocab_path: &Path, out: &Path) -> Result<()> {
    let vocab = Vocabulary::load(vocab_path)?;
    let docids = Corpus::load_docids(corpus_path)?;
    let corpus = Corpus::new(docids)?;
    let trie = DocidTrie::build(&corpus.docids, &vocab);
    trie.verify(&vocab)?;
    artifact::save_trie(out, &trie)?;
    println!(
        "trie: {} docids, {} nodes, depth {} -> {}",
        trie.num_docids(),
        trie.nodes.len(),
        trie.max_depth,
        out.display()
    );
    Ok(())
}

fn train_clusters_cmd(
    cfg: &RunConfig,
    pairs_path: &Path,
    vocab_path: &Path,
    model_path: &Path,
    out: &Path,
) -> Result<()> {
    let seed = cfg.require_seed()?;
    let vocab = Vocabulary::load(vocab_path)?;
    let params = load_model_checked(model_path, &vocab)?;
    let pairs = Corpus::load_pairs(pairs_path)?;
    let examples = load_examples(&pairs, &vocab, params.config.output_len)?;
    let cluster_cfg = ClusterTrainConfig {
        num_centroids: cfg.num_centroids,
        set_size: cfg.set_size,
        probes: cfg.probes,
        epochs: cfg.cluster_epochs,
        steps_per_epoch: cfg.cluster_steps,
        learning_rate: cfg.cluster_learning_rate,
        seed,
    };
    let index = train_centroids(&params, &examples, &cluster_cfg)?;
    artifact::save_index(out, &index)?;
    println!(
        "index: {} centroids x {} tokens, {} probes -> {}",
        index.num_centroids,
        index.set_size,
        index.probes,
        out.display()
    );
    Ok(())
}

fn load_model_checked(path: &Path, vocab: &Vocabulary) -> Result<ModelParams> {
    let params = artifact::load_model(path)?;
    if params.vocab_hash != vocab.hash() {
        bail!(crate::error::Error::VocabMismatch {
            what: "model",
            expected: vocab.hash_hex(),
            found: hex(&params.vocab_hash),
        });
    }
    Ok(params)
}

fn hex(h: &[u8; 32]) -> String {
    use std::fmt::Write;
    h.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

struct Pipeline {
    params: ModelParams,
    trie: DocidTrie,
    index: Option<ShortlistIndex>,
    opts: DecodeOptions,
}

impl Pipeline {
    fn load(
        cfg: &RunConfig,
        vocab_path: &Path,
        model_path: &Path,
        trie_path: &Path,
        index_path: Option<&Path>,
        need_index: bool,
    ) -> Result<Pipeline> {
        let vocab = Vocabulary::load(vocab_path)?;
        let params = load_model_checked(model_path, &vocab)?;
        let trie = artifact::load_trie(trie_path)?;
        if trie.vocab_hash != vocab.hash() {
            bail!(crate::error::Error::VocabMismatch {
                what: "docid trie",
                expected: vocab.hash_hex(),
                found: hex(&trie.vocab_hash),
            });
        }
        let index = match index_path {
            Some(p) => {
                let ix = artifact::load_index(p)?;
                if ix.vocab_hash != vocab.hash() {
                    bail!(crate::error::Error::VocabMismatch {
                        what: "shortlist index",
                        expected: vocab.hash_hex(),
                        found: hex(&ix.vocab_hash),
                    });
                }
                Some(ix)
            }
            None => None,
        };
        if need_index && index.is_none() {
            bail!("shortlist decoding needs --index (or pass --full-softmax)");
        }
        Ok(Pipeline {
            params,
            trie,
            index,
            opts: DecodeOptions {
                beam_width: cfg.beam_width,
                top_n: cfg.top_n,
                candidate_cap: cfg.candidate_cap,
            },
        })
    }

    fn run(&self, query: &str, full_softmax: bool) -> crate::error::Result<RankedResult> {
        if full_softmax {
            decode_full_softmax(&self.params, &self.trie, query, &self.opts)
        } else {
            decode(
                &self.params,
                self.index.as_ref().expect("index presence checked at load"),
                &self.trie,
                query,
                &self.opts,
            )
        }
    }
}

fn query_cmd(
    cfg: &RunConfig,
    vocab_path: &Path,
    model_path: &Path,
    trie_path: &Path,
    index_path: Option<&Path>,
    query: &str,
    full_softmax: bool,
) -> Result<()> {
    let pipeline = Pipeline::load(
        cfg,
        vocab_path,
        model_path,
        trie_path,
        index_path,
        !full_softmax,
    )?;
    let result = pipeline.run(query, full_softmax)?;
    for (rank, (docid, score)) in result.hits.iter().enumerate() {
        println!("{}\t{:.6}\t{}", rank + 1, score, escape(docid));
    }
    if !result.filled {
        log::warn!(
            "beam completed only {} of {} requested docids",
            result.hits.len(),
            pipeline.opts.top_n
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval_cmd(
    cfg: &RunConfig,
    vocab_path: &Path,
    model_path: &Path,
    trie_path: &Path,
    index_path: Option<&Path>,
    evalset_path: &Path,
    ks: &[usize],
    full_softmax: bool,
    out: Option<&Path>,
) -> Result<()> {
    let pipeline = Pipeline::load(
        cfg,
        vocab_path,
        model_path,
        trie_path,
        index_path,
        !full_softmax,
    )?;
    let eval_set = EvalSet::load(evalset_path)?;
    eval_set.validate_against(|d| pipeline.trie.contains_docid(d))?;

    let report = evaluate(&eval_set, ks, |q| {
        pipeline
            .run(q, full_softmax)
            .map(|r| r.hits.into_iter().map(|(d, _)| d).collect())
            .unwrap_or_default()
    })?;
    print!("{}", report.table());
    print!("{}", report.kv_lines());
    if let Some(path) = out {
        std::fs::write(path, report.kv_lines())
            .map_err(|e| crate::error::Error::io(path, e))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bench_cmd(
    cfg: &RunConfig,
    vocab_path: &Path,
    model_path: &Path,
    trie_path: &Path,
    index_path: Option<&Path>,
    queries_path: &Path,
    warmup: usize,
    full_softmax: bool,
    compare: bool,
) -> Result<()> {
    let need_index = compare || !full_softmax;
    let pipeline = Pipeline::load(
        cfg,
        vocab_path,
        model_path,
        trie_path,
        index_path,
        need_index,
    )?;
    let queries = Corpus::load_docids(queries_path)?;

    let measure = |full: bool, label: &str| -> Result<f64> {
        let report = bench_latency(&queries, warmup, |q| {
            let _ = std::hint::black_box(pipeline.run(q, full));
        })?;
        println!("# {label}");
        print!("{}", report.kv_lines());
        Ok(report.mean_ms)
    };

    if compare {
        let short = measure(false, "shortlist")?;
        let full = measure(true, "full-softmax")?;
        println!("speedup={:.2}", full / short);
    } else if full_softmax {
        measure(true, "full-softmax")?;
    } else {
        measure(false, "shortlist")?;
    }
    Ok(())
}

fn stats_cmd(vocab_path: &Path, corpus_path: &Path) -> Result<()> {
    let vocab = Vocabulary::load(vocab_path)?;
    let docids = Corpus::load_docids(corpus_path)?;
    let corpus = Corpus::new(docids)?;
    let unique: Vec<String> = corpus.unique_docids().iter().map(|s| s.to_string()).collect();

    let report = sequence_length_report(&unique, &vocab);
    let baseline = char_level_report(&unique);

    let mut phrases = 0usize;
    let mut singles = 0usize;
    for id in NUM_RESERVED as u32..vocab.len() as u32 {
        if let Some(Token::Text(t)) = vocab.token(id) {
            if t.contains(' ') {
                phrases += 1;
            } else {
                singles += 1;
            }
        }
    }
    println!("vocab_size={}", vocab.len());
    println!("vocab_phrase_tokens={phrases}");
    println!("vocab_word_tokens={singles}");
    println!("docids={}", unique.len());
    println!("seq_len_mean={:.4}", report.mean);
    println!("seq_len_p99={}", report.p99);
    println!("seq_len_max={}", report.max);
    println!("char_baseline_mean={:.4}", baseline.mean);
    println!("char_baseline_p99={}", baseline.p99);
    println!("compression_ratio={:.4}", report.mean / baseline.mean);
    Ok(())
}
