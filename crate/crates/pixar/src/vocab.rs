//! Phrase-inclusive target vocabulary: candidate generation, iterative
//! score-and-prune construction, and deterministic greedy tokenization with
//! byte fallback.
//!
//! Reserved ids: 0 is PAD, 1..=256 are the byte-fallback tokens. Content
//! tokens occupy 257.. in (score desc, length desc, lexicographic asc)
//! order, so identical inputs always yield byte-identical vocabularies.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::par;
use crate::text::{char_class, escape, unescape, CharClass};

pub const PAD_ID: u32 = 0;
pub const NUM_RESERVED: usize = 257;

pub fn byte_token_id(b: u8) -> u32 {
    1 + u32::from(b)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    Pad,
    Byte(u8),
    Text(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateKind {
    Subword,
    Word,
    Phrase,
}

/// A substring that passed the boundary and character-class filters with
/// enough occurrences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub text: String,
    pub occurrences: u64,
    pub kind: CandidateKind,
}

/// Enumerate all filtered substrings of the docids that occur at least
/// `min_occur` times. Occurrences are counted once per start offset over the
/// docid list as given (duplicates are frequency, not noise).
///
/// Filter rules:
/// - at most `max_len` characters, no leading/trailing whitespace;
/// - internal whitespace must be single U+0020 spaces;
/// - within each space-separated segment all characters share one class
///   (letter, digit, or punctuation/symbol);
/// - a substring containing a space must start and end on word boundaries
///   in the docid it was found in.
pub fn generate_candidates(docids: &[String], max_len: usize, min_occur: u64) -> Vec<Candidate> {
    assert!(max_len >= 1, "max_len must be at least 1");
    assert!(min_occur >= 1, "min_occur must be at least 1");

    // Identical docids contribute identical substring sets; scan each
    // distinct docid once and weight by multiplicity.
    let mut multiplicity: HashMap<&str, u64> = HashMap::new();
    let mut distinct: Vec<&str> = Vec::new();
    for d in docids {
        let e = multiplicity.entry(d.as_str()).or_insert(0);
        if *e == 0 {
            distinct.push(d.as_str());
        }
        *e += 1;
    }

    let per_docid = par::map_slice(&distinct, |d| scan_docid(d, max_len));

    // (count, seen word-aligned at both ends)
    let mut counts: HashMap<&str, (u64, bool)> = HashMap::new();
    for (docid, found) in distinct.iter().zip(per_docid.iter()) {
        let mult = multiplicity[docid];
        for &(text, hits, aligned) in found {
            let e = counts.entry(text).or_insert((0, false));
            e.0 += hits * mult;
            e.1 |= aligned;
        }
    }

    let mut out: Vec<Candidate> = counts
        .into_iter()
        .filter(|(_, (n, _))| *n >= min_occur)
        .map(|(text, (occurrences, aligned))| {
            let kind = if text.contains(' ') {
                CandidateKind::Phrase
            } else if aligned {
                CandidateKind::Word
            } else {
                CandidateKind::Subword
            };
            Candidate {
                text: text.to_string(),
                occurrences,
                kind,
            }
        })
        .collect();
    out.sort_unstable_by(|a, b| {
        b.occurrences
            .cmp(&a.occurrences)
            .then_with(|| b.text.chars().count().cmp(&a.text.chars().count()))
            .then_with(|| a.text.cmp(&b.text))
    });
    out
}

/// Valid substrings of one docid: (text, occurrences-within-docid,
/// any-occurrence-word-aligned). Keys borrow from the docid.
fn scan_docid(docid: &str, max_len: usize) -> Vec<(&str, u64, bool)> {
    let offsets: Vec<usize> = docid
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(docid.len()))
        .collect();
    let chars: Vec<char> = docid.chars().collect();
    let n = chars.len();

    let mut counts: HashMap<&str, (u64, bool)> = HashMap::new();
    for start in 0..n {
        if chars[start].is_whitespace() {
            continue;
        }
        let start_aligned = start == 0 || chars[start - 1].is_whitespace();
        let mut seg_class: Option<CharClass> = None;
        let mut contains_space = false;
        for end in start + 1..=n.min(start + max_len) {
            let c = chars[end - 1];
            let class = char_class(c);
            if class == CharClass::Space {
                // Word boundary inside the substring: only a single plain
                // space between segments is allowed, and the whole span must
                // then be word-aligned. Longer extensions inherit any
                // violation, so bail out instead of skipping.
                if c != ' ' || chars[end - 2] == ' ' || !start_aligned {
                    break;
                }
                contains_space = true;
                seg_class = None;
                continue; // trailing space: extension may still be valid
            }
            match seg_class {
                None => seg_class = Some(class),
                Some(sc) if sc != class => break,
                Some(_) => {}
            }
            let end_aligned = end == n || chars[end].is_whitespace();
            if contains_space && !end_aligned {
                continue;
            }
            let text = &docid[offsets[start]..offsets[end]];
            let e = counts.entry(text).or_insert((0, false));
            e.0 += 1;
            e.1 |= start_aligned && end_aligned && !contains_space;
        }
    }
    counts
        .into_iter()
        .map(|(t, (n, a))| (t, n, a))
        .collect()
}

/// An immutable target vocabulary. Safe to share between threads.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    scores: Vec<u64>,
    lookup: HashMap<String, u32>,
    max_token_chars: usize,
    hash: [u8; 32],
}

impl Vocabulary {
    /// Assemble a vocabulary from scored content tokens. Ids are assigned
    /// deterministically: PAD, bytes, then `content` in the order given.
    fn from_content(content: Vec<(String, u64)>) -> Vocabulary {
        let mut tokens = Vec::with_capacity(NUM_RESERVED + content.len());
        let mut scores = vec![0u64; NUM_RESERVED];
        tokens.push(Token::Pad);
        for b in 0..=255u8 {
            tokens.push(Token::Byte(b));
        }
        let mut lookup = HashMap::with_capacity(content.len());
        let mut max_token_chars = 0;
        for (text, score) in content {
            let id = tokens.len() as u32;
            max_token_chars = max_token_chars.max(text.chars().count());
            lookup.insert(text.clone(), id);
            tokens.push(Token::Text(text));
            scores.push(score);
        }
        let mut v = Vocabulary {
            tokens,
            scores,
            lookup,
            max_token_chars,
            hash: [0; 32],
        };
        v.hash = Sha256::digest(v.canonical_bytes()).into();
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved tokens always present
    }

    pub fn token(&self, id: u32) -> Option<&Token> {
        self.tokens.get(id as usize)
    }

    pub fn score(&self, id: u32) -> Option<u64> {
        self.scores.get(id as usize).copied()
    }

    pub fn id_of(&self, text: &str) -> Option<u32> {
        self.lookup.get(text).copied()
    }

    /// Display form of a token (byte tokens as `<0xNN>`, PAD as `<pad>`).
    pub fn describe(&self, id: u32) -> String {
        match self.tokens.get(id as usize) {
            Some(Token::Pad) => "<pad>".to_string(),
            Some(Token::Byte(b)) => format!("<0x{b:02x}>"),
            Some(Token::Text(s)) => s.clone(),
            None => format!("<invalid:{id}>"),
        }
    }

    /// SHA-256 over the canonical serialization; embedded in every
    /// downstream artifact so incompatible files refuse to load together.
    pub fn hash(&self) -> [u8; 32] {
        self.hash
    }

    pub fn hash_hex(&self) -> String {
        self.hash.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Greedy longest-match left-to-right; unmatched characters fall back to
    /// their UTF-8 bytes, so every string tokenizes.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let offsets: Vec<usize> = text
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(text.len()))
            .collect();
        let n = offsets.len() - 1;
        let mut ids = Vec::new();
        let mut pos = 0;
        while pos < n {
            let longest = self.max_token_chars.min(n - pos);
            let mut matched = 0;
            for len in (1..=longest).rev() {
                if let Some(&id) = self.lookup.get(&text[offsets[pos]..offsets[pos + len]]) {
                    ids.push(id);
                    matched = len;
                    break;
                }
            }
            if matched == 0 {
                for b in text[offsets[pos]..offsets[pos + 1]].bytes() {
                    ids.push(byte_token_id(b));
                }
                matched = 1;
            }
            pos += matched;
        }
        ids
    }

    /// Inverse of [`Vocabulary::tokenize`]. PAD contributes nothing; an
    /// out-of-range id or a byte sequence that is not valid UTF-8 is a
    /// corruption error.
    pub fn detokenize(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            match self.tokens.get(id as usize) {
                Some(Token::Pad) => {}
                Some(Token::Byte(b)) => bytes.push(*b),
                Some(Token::Text(s)) => bytes.extend_from_slice(s.as_bytes()),
                None => {
                    return Err(Error::InvalidInput(format!(
                        "token id {id} out of range for vocabulary of {}",
                        self.tokens.len()
                    )))
                }
            }
        }
        String::from_utf8(bytes)
            .map_err(|_| Error::InvalidInput("detokenized bytes are not valid UTF-8".into()))
    }

    /// Canonical text serialization without the checksum trailer.
    fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = String::new();
        let _ = writeln!(out, "#pixar-vocab v1 size={}", self.tokens.len());
        for id in NUM_RESERVED..self.tokens.len() {
            if let Token::Text(s) = &self.tokens[id] {
                let _ = writeln!(out, "{id}\t{}\t{}", self.scores[id], escape(s));
            }
        }
        out.into_bytes()
    }

    /// Write the vocabulary file: header, one `id<TAB>score<TAB>token` line
    /// per content token (reserved tokens are implied by the format), and a
    /// checksum trailer.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = self.canonical_bytes();
        let digest = Sha256::digest(&bytes);
        let mut line = String::from("#checksum sha256=");
        for b in digest {
            let _ = write!(line, "{b:02x}");
        }
        line.push('\n');
        bytes.extend_from_slice(line.as_bytes());
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: String| Error::format("vocabulary file", path, msg);

        let checksum_at = raw
            .rfind("#checksum sha256=")
            .ok_or_else(|| Error::corrupt(path, "missing checksum trailer"))?;
        let (body, trailer) = raw.split_at(checksum_at);
        let stated = trailer
            .trim_end()
            .strip_prefix("#checksum sha256=")
            .unwrap_or("");
        let digest = Sha256::digest(body.as_bytes());
        let actual = digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
        if stated != actual {
            return Err(Error::corrupt(path, "checksum mismatch"));
        }

        let mut lines = body.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let size: usize = header
            .strip_prefix("#pixar-vocab v1 size=")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(format!("bad header {header:?}")))?;

        let mut content = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let mut fields = line.splitn(3, '\t');
            let mut parse = || -> Option<(u32, u64, String)> {
                let id = fields.next()?.parse().ok()?;
                let score = fields.next()?.parse().ok()?;
                let token = unescape(fields.next()?)?;
                Some((id, score, token))
            };
            let (id, score, token) =
                parse().ok_or_else(|| bad(format!("bad token line {}", lineno + 2)))?;
            let expect = (NUM_RESERVED + content.len()) as u32;
            if id != expect {
                return Err(bad(format!("non-dense id {id}, expected {expect}")));
            }
            if token.is_empty() {
                return Err(bad(format!("empty token at id {id}")));
            }
            content.push((token, score));
        }
        if NUM_RESERVED + content.len() != size {
            return Err(bad(format!(
                "header size {size} does not match {} tokens",
                NUM_RESERVED + content.len()
            )));
        }
        let mut seen = HashMap::new();
        for (t, _) in &content {
            if seen.insert(t.clone(), ()).is_some() {
                return Err(bad(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary::from_content(content))
    }
}

/// Outcome of a vocabulary build, for reporting.
#[derive(Debug, Clone, Copy)]
pub struct BuildStats {
    pub requested: usize,
    pub actual: usize,
    pub iterations: usize,
}

/// Iteratively prune `candidates` down to `target_size` total tokens
/// (reserved tokens included). Each round re-tokenizes the corpus, scores
/// every token by the characters it covered, and drops the worst 10% of the
/// pool (capped at the remaining excess). Final scores come from the last
/// full-corpus pass.
pub fn build_vocabulary(
    candidates: &[Candidate],
    docids: &[String],
    target_size: usize,
) -> (Vocabulary, BuildStats) {
    let floor = NUM_RESERVED
        + docids
            .iter()
            .flat_map(|d| d.chars())
            .collect::<std::collections::HashSet<char>>()
            .len();
    if target_size < floor {
        log::warn!(
            "target vocabulary size {target_size} is below the recommended floor {floor} \
             (reserved tokens plus distinct corpus characters)"
        );
    }

    let mut multiplicity: HashMap<&str, u64> = HashMap::new();
    let mut distinct: Vec<&str> = Vec::new();
    for d in docids {
        let e = multiplicity.entry(d.as_str()).or_insert(0);
        if *e == 0 {
            distinct.push(d.as_str());
        }
        *e += 1;
    }

    // Work pool ordered by the global tie-break so every pass is reproducible.
    let mut pool: Vec<&str> = candidates.iter().map(|c| c.text.as_str()).collect();
    pool.sort_unstable_by(|a, b| {
        b.chars()
            .count()
            .cmp(&a.chars().count())
            .then_with(|| a.cmp(b))
    });
    pool.dedup();

    let mut iterations = 0;
    let mut scores: Vec<u64>;
    loop {
        iterations += 1;
        scores = score_pass(&pool, &distinct, &multiplicity);

        let total = NUM_RESERVED + pool.len();
        if total <= target_size || pool.is_empty() {
            break;
        }
        let excess = total - target_size;
        let batch = (pool.len() / 10).max(1).min(excess);

        // Deletion order: worst score first, then shortest, then reverse
        // lexicographic — the exact mirror of the keep order.
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.sort_by(|&a, &b| {
            scores[a]
                .cmp(&scores[b])
                .then_with(|| pool[a].chars().count().cmp(&pool[b].chars().count()))
                .then_with(|| pool[b].cmp(pool[a]))
        });
        let drop: std::collections::HashSet<usize> = order[..batch].iter().copied().collect();
        pool = pool
            .iter()
            .enumerate()
            .filter(|(i, _)| !drop.contains(i))
            .map(|(_, t)| *t)
            .collect();
    }

    let mut content: Vec<(String, u64)> = pool
        .iter()
        .zip(scores.iter())
        .map(|(t, s)| (t.to_string(), *s))
        .collect();
    content.sort_unstable_by(|a, b| {
        b.1.cmp(&a.1)
            .then_with(|| b.0.chars().count().cmp(&a.0.chars().count()))
            .then_with(|| a.0.cmp(&b.0))
    });

    let vocab = Vocabulary::from_content(content);
    let stats = BuildStats {
        requested: target_size,
        actual: vocab.len(),
        iterations,
    };
    if stats.actual != stats.requested {
        log::warn!(
            "built vocabulary of {} tokens (requested {})",
            stats.actual,
            stats.requested
        );
    }
    (vocab, stats)
}

/// One full-corpus greedy tokenization pass; returns chars covered per pool
/// entry, weighted by docid multiplicity.
fn score_pass(pool: &[&str], distinct: &[&str], multiplicity: &HashMap<&str, u64>) -> Vec<u64> {
    let lookup: HashMap<&str, usize> = pool.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let max_chars = pool.iter().map(|t| t.chars().count()).max().unwrap_or(0);

    let per_docid = par::map_slice(distinct, |docid| {
        let mut local: Vec<(usize, u64)> = Vec::new();
        greedy_spans(docid, max_chars, |s| lookup.contains_key(s), |span| {
            if let Some(&idx) = lookup.get(span) {
                local.push((idx, span.chars().count() as u64));
            }
        });
        local
    });

    let mut scores = vec![0u64; pool.len()];
    for (docid, local) in distinct.iter().zip(per_docid.iter()) {
        let mult = multiplicity[docid];
        for &(idx, chars) in local {
            scores[idx] += chars * mult;
        }
    }
    scores
}

/// Greedy longest-match segmentation over an arbitrary membership test.
/// `emit` sees each matched span; fallback characters are skipped.
fn greedy_spans(
    text: &str,
    max_chars: usize,
    has: impl Fn(&str) -> bool,
    mut emit: impl FnMut(&str),
) {
    let offsets: Vec<usize> = text
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()))
        .collect();
    let n = offsets.len() - 1;
    let mut pos = 0;
    while pos < n {
        let longest = max_chars.min(n - pos);
        let mut advanced = 1;
        for len in (1..=longest).rev() {
            let span = &text[offsets[pos]..offsets[pos + len]];
            if has(span) {
                emit(span);
                advanced = len;
                break;
            }
        }
        pos += advanced;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn find<'a>(cands: &'a [Candidate], text: &str) -> Option<&'a Candidate> {
        cands.iter().find(|c| c.text == text)
    }

    /// Brute-force occurrence counter used as an independent oracle: counts
    /// every start offset of `needle` in the corpus, no filters applied.
    fn oracle_count(docids: &[String], needle: &str) -> u64 {
        let mut n = 0;
        for d in docids {
            let chars: Vec<usize> = d
                .char_indices()
                .map(|(i, _)| i)
                .chain(std::iter::once(d.len()))
                .collect();
            for w in 0..chars.len() {
                if d[chars[w]..].starts_with(needle) {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn candidates_match_hand_counts() {
        let docids = strings(&["red apple", "red apple", "red car"]);
        let cands = generate_candidates(&docids, 9, 2);

        assert_eq!(find(&cands, "red").map(|c| c.occurrences), Some(3));
        assert_eq!(find(&cands, "apple").map(|c| c.occurrences), Some(2));
        assert_eq!(find(&cands, "red apple").map(|c| c.occurrences), Some(2));
        assert!(find(&cands, "car").is_none(), "below min_occur");
        assert!(find(&cands, "ed ap").is_none(), "crosses word boundary");
        assert!(find(&cands, "red ").is_none(), "trailing space");

        assert_eq!(find(&cands, "red").unwrap().kind, CandidateKind::Word);
        assert_eq!(
            find(&cands, "red apple").unwrap().kind,
            CandidateKind::Phrase
        );
        assert_eq!(find(&cands, "ed").unwrap().kind, CandidateKind::Subword);

        // Every candidate recounts to at least its reported occurrences.
        for c in &cands {
            assert!(oracle_count(&docids, &c.text) >= c.occurrences);
        }
    }

    #[test]
    fn candidates_empty_corpus() {
        assert!(generate_candidates(&[], 10, 1).is_empty());
    }

    #[test]
    fn candidates_reject_mixed_classes() {
        let docids = strings(&["a1"]);
        let cands = generate_candidates(&docids, 10, 1);
        assert!(find(&cands, "a").is_some());
        assert!(find(&cands, "1").is_some());
        assert!(find(&cands, "a1").is_none(), "letter/digit mix");
    }

    #[test]
    fn candidates_max_len_limits_chars() {
        let docids = strings(&["abcdef"]);
        let cands = generate_candidates(&docids, 3, 1);
        assert!(cands.iter().all(|c| c.text.chars().count() <= 3));
        assert!(find(&cands, "abc").is_some());
    }

    #[test]
    fn candidates_double_space_blocked() {
        let docids = strings(&["red  car", "red  car"]);
        let cands = generate_candidates(&docids, 10, 2);
        assert!(find(&cands, "red  car").is_none());
        assert!(find(&cands, "red").is_some());
        assert!(find(&cands, "car").is_some());
    }

    #[test]
    fn build_keeps_top_compressors() {
        let mut docids = Vec::new();
        for _ in 0..50 {
            docids.push("red apple".to_string());
            docids.push("red car".to_string());
        }
        let cands = generate_candidates(&docids, 9, 2);
        let (vocab, stats) = build_vocabulary(&cands, &docids, 260);
        assert_eq!(vocab.len(), 260);
        assert_eq!(stats.actual, 260);
        // Highest-scoring survivors are the two whole-docid phrases.
        let a = vocab.id_of("red apple").expect("red apple survives");
        let b = vocab.id_of("red car").expect("red car survives");
        assert_eq!(vocab.score(a), Some(9 * 50));
        assert_eq!(vocab.score(b), Some(7 * 50));
        assert!(vocab.score(a) > vocab.score(b));
        assert_eq!(a, 257, "best compressor takes the first content id");
    }

    #[test]
    fn build_identity_when_target_equals_pool() {
        let docids = strings(&["ab ab"]);
        let cands = generate_candidates(&docids, 5, 1);
        let target = NUM_RESERVED + cands.len();
        let (vocab, stats) = build_vocabulary(&cands, &docids, target);
        assert_eq!(vocab.len(), target);
        assert_eq!(stats.iterations, 1);
        for c in &cands {
            assert!(vocab.id_of(&c.text).is_some());
        }
    }

    #[test]
    fn build_single_docid_keeps_whole_token() {
        let docids = strings(&["abc"]);
        let cands = generate_candidates(&docids, 3, 1);
        let (vocab, _) = build_vocabulary(&cands, &docids, 259);
        assert_eq!(vocab.len(), 259);
        let id = vocab.id_of("abc").expect("abc retained");
        assert_eq!(vocab.score(id), Some(3));
    }

    #[test]
    fn build_reports_small_pool() {
        let docids = strings(&["xy"]);
        let cands = generate_candidates(&docids, 2, 1);
        let (vocab, stats) = build_vocabulary(&cands, &docids, 10_000);
        assert_eq!(stats.actual, vocab.len());
        assert!(vocab.len() < 10_000);
        assert!(vocab.id_of("xy").is_some());
    }

    #[test]
    fn tokenize_prefers_longest_match() {
        let docids = strings(&["ab ab"]);
        let cands = generate_candidates(&docids, 5, 1);
        let (vocab, _) = build_vocabulary(&cands, &docids, NUM_RESERVED + cands.len());
        let ids = vocab.tokenize("ab ab");
        assert_eq!(ids.len(), 1);
        assert_eq!(vocab.describe(ids[0]), "ab ab");
    }

    #[test]
    fn tokenize_empty() {
        let (vocab, _) = build_vocabulary(&[], &[], NUM_RESERVED);
        assert!(vocab.tokenize("").is_empty());
    }

    #[test]
    fn tokenize_single_phrase_token() {
        let mut docids = Vec::new();
        for _ in 0..20 {
            docids.push("des moines iowa".to_string());
        }
        let cands = generate_candidates(&docids, 15, 20);
        let (vocab, _) = build_vocabulary(&cands, &docids, NUM_RESERVED + cands.len());
        let ids = vocab.tokenize("des moines iowa");
        assert_eq!(ids.len(), 1);
        assert_eq!(vocab.describe(ids[0]), "des moines iowa");
    }

    #[test]
    fn detokenize_roundtrip() {
        let docids = strings(&["red apple", "red car", "Ω mega"]);
        let cands = generate_candidates(&docids, 9, 1);
        let (vocab, _) = build_vocabulary(&cands, &docids, NUM_RESERVED + cands.len());
        for text in ["red apple", "", "Ω", "unseen δtext\twith tab", "red carred"] {
            let ids = vocab.tokenize(text);
            assert_eq!(vocab.detokenize(&ids).unwrap(), text);
        }
    }

    #[test]
    fn detokenize_rejects_unknown_id() {
        let (vocab, _) = build_vocabulary(&[], &[], NUM_RESERVED);
        assert!(vocab.detokenize(&[9999]).is_err());
    }

    #[test]
    fn byte_fallback_covers_unicode() {
        let (vocab, _) = build_vocabulary(&[], &[], NUM_RESERVED);
        let ids = vocab.tokenize("Ω");
        assert_eq!(ids.len(), "Ω".len()); // one token per UTF-8 byte
        assert!(ids.iter().all(|&id| (1..=256).contains(&id)));
        assert_eq!(vocab.detokenize(&ids).unwrap(), "Ω");
    }

    #[test]
    fn vocab_file_roundtrip_and_corruption() {
        let docids = strings(&["red apple", "red apple", "tab\ttoken", "tab\ttoken"]);
        let cands = generate_candidates(&docids, 9, 2);
        let (vocab, _) = build_vocabulary(&cands, &docids, NUM_RESERVED + cands.len());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        vocab.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(loaded.hash(), vocab.hash());
        assert_eq!(loaded.len(), vocab.len());
        for id in 0..vocab.len() as u32 {
            assert_eq!(loaded.token(id), vocab.token(id));
            assert_eq!(loaded.score(id), vocab.score(id));
        }

        // Flip one byte in the body: checksum must catch it.
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            Vocabulary::load(&path),
            Err(Error::Corrupt { .. })
        ));

        // Truncation must also fail, never partially load.
        vocab.save(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(Vocabulary::load(&path).is_err());
    }

    #[test]
    fn deterministic_construction() {
        let mut docids = Vec::new();
        for i in 0..40 {
            docids.push(format!("item {} of the set", i % 7));
            docids.push("red apple pie".to_string());
        }
        let cands = generate_candidates(&docids, 12, 2);
        let (v1, _) = build_vocabulary(&cands, &docids, 300);
        let (v2, _) = build_vocabulary(&cands, &docids, 300);
        assert_eq!(v1.hash(), v2.hash());
        assert_eq!(v1.canonical_bytes(), v2.canonical_bytes());
    }

    #[test]
    fn nested_targets_nest_vocabularies() {
        let mut docids = Vec::new();
        for i in 0..30 {
            docids.push(format!("alpha beta {}", i % 5));
            docids.push(format!("gamma delta {}", i % 3));
        }
        let cands = generate_candidates(&docids, 12, 2);
        let (small, _) = build_vocabulary(&cands, &docids, 280);
        let (large, _) = build_vocabulary(&cands, &docids, 300);
        for id in NUM_RESERVED as u32..small.len() as u32 {
            if let Some(Token::Text(t)) = small.token(id) {
                assert!(
                    large.id_of(t).is_some(),
                    "smaller vocabulary token {t:?} missing from larger"
                );
            }
        }
        // Construction-path monotonicity: the larger vocabulary never needs
        // more tokens on any corpus docid.
        for d in &docids {
            assert!(large.tokenize(d).len() <= small.tokenize(d).len());
        }
    }
}
