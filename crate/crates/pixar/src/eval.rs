//! Retrieval metrics, latency benchmarking, and tokenization statistics.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::par;
use crate::text::unescape;
use crate::vocab::Vocabulary;

/// Queries with their relevant docid sets.
#[derive(Debug, Clone, Default)]
pub struct EvalSet {
    pub entries: Vec<(String, HashSet<String>)>,
}

impl EvalSet {
    /// Load a `query<TAB>docid1|docid2|...` TSV.
    pub fn load(path: &Path) -> Result<EvalSet> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (lineno, line) in raw.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad =
                |msg: &str| Error::format("eval set", path, format!("{msg} on line {}", lineno + 1));
            let (q, rest) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected query<TAB>docids"))?;
            let q = unescape(q).ok_or_else(|| bad("bad escape in query"))?;
            let mut gold = HashSet::new();
            for d in rest.split('|') {
                let d = unescape(d).ok_or_else(|| bad("bad escape in docid"))?;
                if d.is_empty() {
                    return Err(bad("empty docid"));
                }
                gold.insert(d);
            }
            if gold.is_empty() {
                return Err(bad("no relevant docids"));
            }
            entries.push((q, gold));
        }
        Ok(EvalSet { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        use crate::text::escape;
        let mut out = String::new();
        for (q, gold) in &self.entries {
            let mut docids: Vec<&String> = gold.iter().collect();
            docids.sort();
            let joined: Vec<String> = docids.iter().map(|d| escape(d)).collect();
            let _ = writeln!(out, "{}\t{}", escape(q), joined.join("|"));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Check that every relevant docid exists in the corpus set.
    pub fn validate_against(&self, is_docid: impl Fn(&str) -> bool) -> Result<()> {
        for (q, gold) in &self.entries {
            for d in gold {
                if !is_docid(d) {
                    return Err(Error::InvalidInput(format!(
                        "eval set for query {q:?} references unknown docid {d:?}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_results(results: &[String], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidInput("metric cutoff k must be positive".into()));
    }
    let mut seen = HashSet::new();
    for d in results {
        if !seen.insert(d) {
            return Err(Error::InvalidInput(format!(
                "duplicate docid {d:?} in ranked results"
            )));
        }
    }
    Ok(())
}

/// Reciprocal rank of the first relevant result within the top k, else 0.
pub fn mrr_at_k(results: &[String], gold: &HashSet<String>, k: usize) -> Result<f64> {
    check_results(results, k)?;
    for (i, d) in results.iter().take(k).enumerate() {
        if gold.contains(d) {
            return Ok(1.0 / (i + 1) as f64);
        }
    }
    Ok(0.0)
}

/// |top-k ∩ gold| / |gold|.
pub fn recall_at_k(results: &[String], gold: &HashSet<String>, k: usize) -> Result<f64> {
    check_results(results, k)?;
    if gold.is_empty() {
        return Err(Error::InvalidInput("empty gold set".into()));
    }
    let hit = results.iter().take(k).filter(|d| gold.contains(*d)).count();
    Ok(hit as f64 / gold.len() as f64)
}

/// 1 if any relevant docid appears in the top k, else 0.
pub fn hits_at_k(results: &[String], gold: &HashSet<String>, k: usize) -> Result<f64> {
    check_results(results, k)?;
    Ok(results
        .iter()
        .take(k)
        .any(|d| gold.contains(d))
        .into())
}

/// |top-k ∩ gold| / k.
pub fn precision_at_k(results: &[String], gold: &HashSet<String>, k: usize) -> Result<f64> {
    check_results(results, k)?;
    let hit = results.iter().take(k).filter(|d| gold.contains(*d)).count();
    Ok(hit as f64 / k as f64)
}

/// Query-averaged metrics at each requested cutoff.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub ks: Vec<usize>,
    pub mrr: Vec<f64>,
    pub recall: Vec<f64>,
    pub hits: Vec<f64>,
    pub precision: Vec<f64>,
    pub num_queries: usize,
}

impl MetricsReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>10} {:>10} {:>10} {:>10} {:>10}", "k", "MRR", "Recall", "Hits", "Precision");
        for (i, k) in self.ks.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:>10} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
                k, self.mrr[i], self.recall[i], self.hits[i], self.precision[i]
            );
        }
        let _ = writeln!(out, "queries: {}", self.num_queries);
        out
    }

    pub fn kv_lines(&self) -> String {
        let mut out = String::new();
        for (i, k) in self.ks.iter().enumerate() {
            let _ = writeln!(out, "mrr@{k}={:.6}", self.mrr[i]);
            let _ = writeln!(out, "recall@{k}={:.6}", self.recall[i]);
            let _ = writeln!(out, "hits@{k}={:.6}", self.hits[i]);
            let _ = writeln!(out, "precision@{k}={:.6}", self.precision[i]);
        }
        let _ = writeln!(out, "queries={}", self.num_queries);
        out
    }
}

/// Run `retrieve` over every query (in parallel, results in input order)
/// and average the metrics. `retrieve` returns ranked docids, best first.
pub fn evaluate(
    eval_set: &EvalSet,
    ks: &[usize],
    retrieve: impl Fn(&str) -> Vec<String> + Sync + Send,
) -> Result<MetricsReport> {
    if eval_set.entries.is_empty() {
        return Err(Error::InvalidInput("empty eval set".into()));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidInput("metric cutoffs must be positive".into()));
    }
    let ranked: Vec<Vec<String>> =
        par::map_slice(&eval_set.entries, |(q, _)| retrieve(q));

    let n = eval_set.entries.len();
    let mut report = MetricsReport {
        ks: ks.to_vec(),
        mrr: vec![0.0; ks.len()],
        recall: vec![0.0; ks.len()],
        hits: vec![0.0; ks.len()],
        precision: vec![0.0; ks.len()],
        num_queries: n,
    };
    for ((_, gold), results) in eval_set.entries.iter().zip(ranked.iter()) {
        for (i, &k) in ks.iter().enumerate() {
            report.mrr[i] += mrr_at_k(results, gold, k)?;
            report.recall[i] += recall_at_k(results, gold, k)?;
            report.hits[i] += hits_at_k(results, gold, k)?;
            report.precision[i] += precision_at_k(results, gold, k)?;
        }
    }
    for i in 0..ks.len() {
        report.mrr[i] /= n as f64;
        report.recall[i] /= n as f64;
        report.hits[i] /= n as f64;
        report.precision[i] /= n as f64;
    }
    Ok(report)
}

/// Wall-clock latency statistics for a single-query pipeline.
#[derive(Debug, Clone)]
pub struct LatencyReport {
    pub mean_ms: f64,
    pub p99_ms: f64,
    pub queries: usize,
    /// Set when fewer than 100 measured queries make the tail estimate weak.
    pub low_confidence_p99: bool,
    pub environment: String,
}

impl LatencyReport {
    pub fn kv_lines(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "latency_mean_ms={:.4}", self.mean_ms);
        let _ = writeln!(out, "latency_p99_ms={:.4}", self.p99_ms);
        let _ = writeln!(out, "latency_queries={}", self.queries);
        let _ = writeln!(out, "latency_p99_low_confidence={}", self.low_confidence_p99);
        let _ = writeln!(out, "environment={}", self.environment);
        out
    }
}

/// Nearest-rank style p99 on a sorted slice: index ⌊0.99·n⌋ capped at the
/// maximum, so small samples report their max.
fn p99(sorted: &[f64]) -> f64 {
    let idx = ((sorted.len() as f64) * 0.99).floor() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

fn environment_string() -> String {
    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let mode = if cfg!(feature = "parallel") {
        "parallel"
    } else {
        "sequential"
    };
    format!(
        "os={} arch={} threads={threads} mode={mode}",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

/// Measure per-query latency at batch size 1: `warmup` un-timed passes over
/// the query list, then one timed pass per query.
pub fn bench_latency(
    queries: &[String],
    warmup: usize,
    mut pipeline: impl FnMut(&str),
) -> Result<LatencyReport> {
    if queries.is_empty() {
        return Err(Error::InvalidInput("no queries to benchmark".into()));
    }
    for _ in 0..warmup {
        for q in queries {
            pipeline(q);
        }
    }
    let mut samples = Vec::with_capacity(queries.len());
    for q in queries {
        let t0 = Instant::now();
        pipeline(q);
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let mut sorted = samples;
    sorted.sort_by(f64::total_cmp);
    Ok(LatencyReport {
        mean_ms: mean,
        p99_ms: p99(&sorted),
        queries: queries.len(),
        low_confidence_p99: queries.len() < 100,
        environment: environment_string(),
    })
}

/// Token-count statistics of the docid set under a tokenizer.
#[derive(Debug, Clone, Copy)]
pub struct SequenceLengthReport {
    pub mean: f64,
    pub p99: usize,
    pub max: usize,
}

pub fn sequence_length_report(docids: &[String], vocab: &Vocabulary) -> SequenceLengthReport {
    let counts = par::map_slice(docids, |d| vocab.tokenize(d).len());
    length_stats(&counts)
}

/// Character-count baseline: the sequence lengths a character-level
/// tokenizer would produce on the same docids.
pub fn char_level_report(docids: &[String]) -> SequenceLengthReport {
    let counts: Vec<usize> = docids.iter().map(|d| d.chars().count()).collect();
    length_stats(&counts)
}

fn length_stats(counts: &[usize]) -> SequenceLengthReport {
    if counts.is_empty() {
        return SequenceLengthReport {
            mean: 0.0,
            p99: 0,
            max: 0,
        };
    }
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let idx = ((sorted.len() as f64) * 0.99).floor() as usize;
    SequenceLengthReport {
        mean,
        p99: sorted[idx.min(sorted.len() - 1)],
        max: *sorted.last().unwrap(),
    }
}
