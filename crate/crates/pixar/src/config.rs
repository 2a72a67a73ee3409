//! Run configuration: every tunable with its default, a line-oriented
//! `key=value` file format, and validation. Command-line flags override
//! file values; unknown keys are rejected rather than ignored.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // Vocabulary construction.
    pub target_vocab_size: usize,
    pub max_candidate_len: usize,
    pub min_occur: u64,

    // Model shape.
    pub hidden_dim: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub input_buckets: usize,
    pub max_query_tokens: usize,
    /// Output length; inferred from the corpus when absent.
    pub output_len: Option<usize>,
    pub mask_pad: bool,

    // Training.
    pub lambda2: f64,
    pub lambda3: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_steps: usize,

    // Shortlist index.
    pub num_centroids: usize,
    pub set_size: usize,
    pub probes: usize,
    pub cluster_epochs: usize,
    pub cluster_steps: usize,
    pub cluster_learning_rate: f64,

    // Decoding.
    pub beam_width: usize,
    pub top_n: usize,
    pub candidate_cap: usize,

    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            target_vocab_size: 5000,
            max_candidate_len: 40,
            min_occur: 20,
            hidden_dim: 64,
            num_blocks: 2,
            num_heads: 4,
            ff_dim: 256,
            input_buckets: 4096,
            max_query_tokens: 32,
            output_len: None,
            mask_pad: false,
            lambda2: 0.25,
            lambda3: 1.0,
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 32,
            warmup_steps: 0,
            num_centroids: 4096,
            set_size: 20000,
            probes: 5,
            cluster_epochs: 10,
            cluster_steps: 10,
            cluster_learning_rate: 0.05,
            beam_width: 100,
            top_n: 100,
            candidate_cap: 512,
            seed: None,
        }
    }
}

impl RunConfig {
    /// Apply one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| {
            Error::InvalidConfig(format!("bad value {value:?} for {key} (expected {what})"))
        };
        macro_rules! parse {
            ($what:literal) => {
                value.parse().map_err(|_| bad($what))?
            };
        }
        match key {
            "target_vocab_size" => self.target_vocab_size = parse!("integer"),
            "max_candidate_len" => self.max_candidate_len = parse!("integer"),
            "min_occur" => self.min_occur = parse!("integer"),
            "hidden_dim" => self.hidden_dim = parse!("integer"),
            "num_blocks" => self.num_blocks = parse!("integer"),
            "num_heads" => self.num_heads = parse!("integer"),
            "ff_dim" => self.ff_dim = parse!("integer"),
            "input_buckets" => self.input_buckets = parse!("integer"),
            "max_query_tokens" => self.max_query_tokens = parse!("integer"),
            "output_len" => self.output_len = Some(parse!("integer")),
            "mask_pad" => self.mask_pad = parse!("bool"),
            "lambda2" => self.lambda2 = parse!("number"),
            "lambda3" => self.lambda3 = parse!("number"),
            "learning_rate" => self.learning_rate = parse!("number"),
            "epochs" => self.epochs = parse!("integer"),
            "batch_size" => self.batch_size = parse!("integer"),
            "warmup_steps" => self.warmup_steps = parse!("integer"),
            "num_centroids" => self.num_centroids = parse!("integer"),
            "set_size" => self.set_size = parse!("integer"),
            "probes" => self.probes = parse!("integer"),
            "cluster_epochs" => self.cluster_epochs = parse!("integer"),
            "cluster_steps" => self.cluster_steps = parse!("integer"),
            "cluster_learning_rate" => self.cluster_learning_rate = parse!("number"),
            "beam_width" => self.beam_width = parse!("integer"),
            "top_n" => self.top_n = parse!("integer"),
            "candidate_cap" => self.candidate_cap = parse!("integer"),
            "seed" => self.seed = Some(parse!("integer")),
            _ => return Err(Error::InvalidConfig(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Merge assignments from a config file: `key=value` lines, `#`
    /// comments and blank lines allowed.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, line) in raw.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::format(
                    "config file",
                    path,
                    format!("expected key=value on line {}", lineno + 1),
                )
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::format("config file", path, e.to_string()))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive: [(&str, usize); 14] = [
            ("target_vocab_size", self.target_vocab_size),
            ("max_candidate_len", self.max_candidate_len),
            ("hidden_dim", self.hidden_dim),
            ("num_blocks", self.num_blocks),
            ("num_heads", self.num_heads),
            ("ff_dim", self.ff_dim),
            ("input_buckets", self.input_buckets),
            ("max_query_tokens", self.max_query_tokens),
            ("batch_size", self.batch_size),
            ("num_centroids", self.num_centroids),
            ("set_size", self.set_size),
            ("probes", self.probes),
            ("beam_width", self.beam_width),
            ("candidate_cap", self.candidate_cap),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.min_occur == 0 {
            return Err(Error::InvalidConfig("min_occur must be positive".into()));
        }
        if self.top_n == 0 {
            return Err(Error::InvalidConfig("top_n must be positive".into()));
        }
        if self.lambda2 < 0.0 || self.lambda3 < 0.0 {
            return Err(Error::InvalidConfig(
                "lambda2 and lambda3 must be non-negative".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.cluster_learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        if self.probes > self.num_centroids {
            return Err(Error::InvalidConfig(format!(
                "probes {} cannot exceed num_centroids {}",
                self.probes, self.num_centroids
            )));
        }
        if self.beam_width < self.top_n {
            return Err(Error::InvalidConfig(format!(
                "beam_width {} must be at least top_n {}",
                self.beam_width, self.top_n
            )));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "hidden_dim {} must be divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if let Some(s) = self.output_len {
            if s == 0 {
                return Err(Error::InvalidConfig("output_len must be positive".into()));
            }
        }
        Ok(())
    }

    /// Seed, or an error for subcommands where reproducibility is mandatory.
    pub fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| {
            Error::InvalidConfig("this subcommand requires an explicit seed".into())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_key_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("not_a_key", "1").is_err());
    }

    #[test]
    fn bad_value_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("epochs", "many").is_err());
    }

    #[test]
    fn file_roundtrip_with_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, "# toy settings").unwrap();
        writeln!(f, "hidden_dim = 16").unwrap();
        writeln!(f).unwrap();
        writeln!(f, "probes=2").unwrap();
        drop(f);
        let mut cfg = RunConfig::default();
        cfg.apply_file(&path).unwrap();
        assert_eq!(cfg.hidden_dim, 16);
        assert_eq!(cfg.probes, 2);
    }

    #[test]
    fn cross_field_validation() {
        let mut cfg = RunConfig::default();
        cfg.probes = cfg.num_centroids + 1;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.beam_width = 5;
        cfg.top_n = 10;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.hidden_dim = 62;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn seed_required_where_stated() {
        let cfg = RunConfig::default();
        assert!(cfg.require_seed().is_err());
        let mut cfg = RunConfig::default();
        cfg.set("seed", "42").unwrap();
        assert_eq!(cfg.require_seed().unwrap(), 42);
    }
}
