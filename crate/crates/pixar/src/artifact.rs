//! Binary artifact files.
//!
//! Common container: 4-byte magic, u32 version, the 32-byte vocabulary
//! hash, a payload, and a SHA-256 trailer over everything before it. Loads
//! verify the checksum before touching the payload, so truncated or
//! bit-flipped files fail cleanly instead of half-loading.
//!
//! Magics: `PIXM` model parameters, `PIXC` shortlist index, `PIXT` trie.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::shortlist::ShortlistIndex;
use crate::trie::{DocidTrie, TrieNode};

const MODEL_MAGIC: &[u8; 4] = b"PIXM";
const INDEX_MAGIC: &[u8; 4] = b"PIXC";
const TRIE_MAGIC: &[u8; 4] = b"PIXT";
const VERSION: u32 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(magic: &[u8; 4], vocab_hash: &[u8; 32]) -> Writer {
        let mut buf = Vec::new();
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(vocab_hash);
        Writer { buf }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn varint(&mut self, mut v: u64) {
        loop {
            let byte = (v & 0x7f) as u8;
            v >>= 7;
            if v == 0 {
                self.buf.push(byte);
                break;
            }
            self.buf.push(byte | 0x80);
        }
    }

    fn str(&mut self, s: &str) {
        self.varint(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn finish(mut self, path: &Path) -> Result<()> {
        let digest = Sha256::digest(&self.buf);
        self.buf.extend_from_slice(&digest);
        fs::write(path, &self.buf).map_err(|e| Error::io(path, e))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, msg: impl Into<String>) -> Error {
        Error::corrupt(self.path, msg.into())
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(self.corrupt(format!(
                "unexpected end of payload at byte {} (wanted {n} more)",
                self.at
            )));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn varint(&mut self) -> Result<u64> {
        let mut v = 0u64;
        let mut shift = 0;
        loop {
            let byte = self.u8()?;
            v |= u64::from(byte & 0x7f) << shift;
            if byte & 0x80 == 0 {
                return Ok(v);
            }
            shift += 7;
            if shift >= 64 {
                return Err(self.corrupt("varint overflow"));
            }
        }
    }

    fn str(&mut self) -> Result<String> {
        let len = self.varint()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.corrupt("invalid UTF-8 string"))
    }

    fn done(&self) -> Result<()> {
        if self.at != self.buf.len() {
            return Err(self.corrupt(format!(
                "{} trailing bytes after payload",
                self.buf.len() - self.at
            )));
        }
        Ok(())
    }
}

/// Verify checksum/magic/version and hand back (vocab_hash, payload).
fn open<'a>(bytes: &'a [u8], path: &Path, magic: &[u8; 4]) -> Result<([u8; 32], &'a [u8])> {
    let min = 4 + 4 + 32 + 32;
    if bytes.len() < min {
        return Err(Error::corrupt(path, "file too short"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != trailer {
        return Err(Error::corrupt(path, "checksum mismatch"));
    }
    if &body[0..4] != magic {
        return Err(Error::corrupt(
            path,
            format!(
                "bad magic {:?}, expected {:?}",
                &body[0..4],
                std::str::from_utf8(magic).unwrap()
            ),
        ));
    }
    let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::corrupt(
            path,
            format!("unsupported version {version}, expected {VERSION}"),
        ));
    }
    let mut vocab_hash = [0u8; 32];
    vocab_hash.copy_from_slice(&body[8..40]);
    Ok((vocab_hash, &body[40..]))
}

pub fn save_model(path: &Path, params: &ModelParams) -> Result<()> {
    let cfg = &params.config;
    let mut w = Writer::new(MODEL_MAGIC, &params.vocab_hash);
    w.u32(cfg.hidden_dim as u32);
    w.u32(cfg.n_blocks as u32);
    w.u32(cfg.n_heads as u32);
    w.u32(cfg.ff_dim as u32);
    w.u32(cfg.input_buckets as u32);
    w.u32(cfg.max_query_tokens as u32);
    w.u32(cfg.output_len as u32);
    w.u32(cfg.vocab_size as u32);
    w.u8(cfg.mask_pad as u8);
    w.f64(cfg.logit_clamp);
    w.u64(params.data.len() as u64);
    for &v in &params.data {
        w.f64(v);
    }
    w.finish(path)
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (vocab_hash, payload) = open(&bytes, path, MODEL_MAGIC)?;
    let mut r = Reader {
        buf: payload,
        at: 0,
        path,
    };
    let config = ModelConfig {
        hidden_dim: r.u32()? as usize,
        n_blocks: r.u32()? as usize,
        n_heads: r.u32()? as usize,
        ff_dim: r.u32()? as usize,
        input_buckets: r.u32()? as usize,
        max_query_tokens: r.u32()? as usize,
        output_len: r.u32()? as usize,
        vocab_size: r.u32()? as usize,
        mask_pad: r.u8()? != 0,
        logit_clamp: r.f64()?,
    };
    let n = r.u64()? as usize;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(r.f64()?);
    }
    r.done()?;
    ModelParams::from_data(config, data, vocab_hash)
        .map_err(|e| Error::corrupt(path, e.to_string()))
}

pub fn save_index(path: &Path, index: &ShortlistIndex) -> Result<()> {
    let mut w = Writer::new(INDEX_MAGIC, &index.vocab_hash);
    w.u32(index.num_centroids as u32);
    w.u32(index.set_size as u32);
    w.u32(index.probes as u32);
    w.u32(index.hidden_dim as u32);
    for &c in &index.centroids {
        w.f64(c);
    }
    for set in &index.token_sets {
        for &id in set {
            w.u32(id);
        }
    }
    w.finish(path)
}

pub fn load_index(path: &Path) -> Result<ShortlistIndex> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (vocab_hash, payload) = open(&bytes, path, INDEX_MAGIC)?;
    let mut r = Reader {
        buf: payload,
        at: 0,
        path,
    };
    let num_centroids = r.u32()? as usize;
    let set_size = r.u32()? as usize;
    let probes = r.u32()? as usize;
    let hidden_dim = r.u32()? as usize;
    if num_centroids == 0 || set_size == 0 || probes == 0 || probes > num_centroids || hidden_dim == 0
    {
        return Err(r.corrupt(format!(
            "implausible index dims centroids={num_centroids} set={set_size} probes={probes} dim={hidden_dim}"
        )));
    }
    let mut centroids = Vec::with_capacity(num_centroids * hidden_dim);
    for _ in 0..num_centroids * hidden_dim {
        centroids.push(r.f64()?);
    }
    let mut token_sets = Vec::with_capacity(num_centroids);
    for _ in 0..num_centroids {
        let mut set = Vec::with_capacity(set_size);
        for _ in 0..set_size {
            set.push(r.u32()?);
        }
        if !set.windows(2).all(|w| w[0] < w[1]) {
            return Err(r.corrupt("token set not strictly ascending"));
        }
        token_sets.push(set);
    }
    r.done()?;
    Ok(ShortlistIndex {
        num_centroids,
        set_size,
        probes,
        hidden_dim,
        centroids,
        token_sets,
        vocab_hash,
    })
}

pub fn save_trie(path: &Path, trie: &DocidTrie) -> Result<()> {
    let mut w = Writer::new(TRIE_MAGIC, &trie.vocab_hash);
    w.varint(trie.docids.len() as u64);
    for d in &trie.docids {
        w.str(d);
    }
    // Preorder with explicit stack: child count, terminal flag (+docid
    // index), then each child's token id followed by its subtree.
    let mut stack: Vec<(usize, usize)> = Vec::new(); // (node, next child slot)
    write_node_header(&mut w, &trie.nodes[0]);
    stack.push((0, 0));
    while let Some((node, child_at)) = stack.pop() {
        let n = &trie.nodes[node];
        if child_at < n.children.len() {
            let (token, child) = n.children[child_at];
            stack.push((node, child_at + 1));
            w.varint(u64::from(token));
            write_node_header(&mut w, &trie.nodes[child as usize]);
            stack.push((child as usize, 0));
        }
    }
    w.finish(path)
}

fn write_node_header(w: &mut Writer, node: &TrieNode) {
    w.varint(node.children.len() as u64);
    match node.terminal {
        Some(idx) => {
            w.u8(1);
            w.varint(u64::from(idx));
        }
        None => w.u8(0),
    }
}

pub fn load_trie(path: &Path) -> Result<DocidTrie> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (vocab_hash, payload) = open(&bytes, path, TRIE_MAGIC)?;
    let mut r = Reader {
        buf: payload,
        at: 0,
        path,
    };
    let num_docids = r.varint()? as usize;
    let mut docids = Vec::with_capacity(num_docids);
    for _ in 0..num_docids {
        docids.push(r.str()?);
    }

    let mut nodes: Vec<TrieNode> = Vec::new();
    let mut terminals_seen = vec![false; num_docids];
    let mut max_depth = 0usize;

    let root = read_node_header(&mut r, num_docids, &mut terminals_seen)?;
    let root_children = root.0;
    nodes.push(root.1);
    // (node index, remaining children, depth)
    let mut stack: Vec<(usize, u64, usize)> = vec![(0, root_children, 0)];
    while let Some((node, remaining, depth)) = stack.pop() {
        if remaining == 0 {
            continue;
        }
        stack.push((node, remaining - 1, depth));
        let token = r.varint()?;
        if token > u64::from(u32::MAX) {
            return Err(r.corrupt("token id overflow"));
        }
        if let Some(&(last, _)) = nodes[node].children.last() {
            if u64::from(last) >= token {
                return Err(r.corrupt("child token ids not ascending"));
            }
        }
        let (child_count, child) = read_node_header(&mut r, num_docids, &mut terminals_seen)?;
        let child_idx = nodes.len();
        if child_idx > u32::MAX as usize {
            return Err(r.corrupt("too many trie nodes"));
        }
        nodes[node].children.push((token as u32, child_idx as u32));
        nodes.push(child);
        max_depth = max_depth.max(depth + 1);
        stack.push((child_idx, child_count, depth + 1));
    }
    r.done()?;
    if !terminals_seen.iter().all(|&s| s) {
        return Err(Error::corrupt(path, "docid without terminal node"));
    }
    Ok(DocidTrie {
        nodes,
        docids,
        vocab_hash,
        max_depth,
    })
}

fn read_node_header(
    r: &mut Reader,
    num_docids: usize,
    terminals_seen: &mut [bool],
) -> Result<(u64, TrieNode)> {
    let child_count = r.varint()?;
    let flag = r.u8()?;
    let terminal = match flag {
        0 => None,
        1 => {
            let idx = r.varint()? as usize;
            if idx >= num_docids {
                return Err(r.corrupt(format!("terminal docid index {idx} out of range")));
            }
            if terminals_seen[idx] {
                return Err(r.corrupt(format!("docid index {idx} has two terminals")));
            }
            terminals_seen[idx] = true;
            Some(idx as u32)
        }
        other => return Err(r.corrupt(format!("bad terminal flag {other}"))),
    };
    Ok((
        child_count,
        TrieNode {
            children: Vec::with_capacity(child_count as usize),
            terminal,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::toy_config;
    use crate::shortlist::materialize_token_sets;
    use crate::vocab::{build_vocabulary, generate_candidates, NUM_RESERVED};

    fn fixture() -> (ModelParams, ShortlistIndex, DocidTrie) {
        let docids: Vec<String> = ["alpha beta", "alpha gamma", "delta", "ab"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let cands = generate_candidates(&docids, 10, 1);
        let (vocab, _) = build_vocabulary(&cands, &docids, NUM_RESERVED + cands.len());
        let trie = DocidTrie::build(&docids, &vocab);
        let s = crate::model::compute_output_len(&docids, &vocab);
        let params =
            ModelParams::init(toy_config(8, s, vocab.len()), vocab.hash(), 77).unwrap();
        let centroids: Vec<f64> = (0..4 * 8).map(|i| (i as f64 * 0.17).sin()).collect();
        let token_sets = materialize_token_sets(&params, &centroids, 4, 6);
        let index = ShortlistIndex {
            num_centroids: 4,
            set_size: 6,
            probes: 2,
            hidden_dim: 8,
            centroids,
            token_sets,
            vocab_hash: vocab.hash(),
        };
        (params, index, trie)
    }

    #[test]
    fn model_roundtrip_bit_exact() {
        let (params, _, _) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pixm");
        save_model(&path, &params).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.config, params.config);
        assert_eq!(loaded.vocab_hash, params.vocab_hash);
        assert_eq!(loaded.data, params.data); // f64 bit-exact via LE bytes
    }

    #[test]
    fn index_roundtrip_bit_exact() {
        let (_, index, _) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.pixc");
        save_index(&path, &index).unwrap();
        let loaded = load_index(&path).unwrap();
        assert_eq!(loaded.num_centroids, index.num_centroids);
        assert_eq!(loaded.set_size, index.set_size);
        assert_eq!(loaded.probes, index.probes);
        assert_eq!(loaded.centroids, index.centroids);
        assert_eq!(loaded.token_sets, index.token_sets);
    }

    #[test]
    fn trie_roundtrip_preserves_structure() {
        let (_, _, trie) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trie.pixt");
        save_trie(&path, &trie).unwrap();
        let loaded = load_trie(&path).unwrap();
        assert_eq!(loaded.docids, trie.docids);
        assert_eq!(loaded.max_depth, trie.max_depth);
        assert_eq!(loaded.nodes.len(), trie.nodes.len());
        for (a, b) in loaded.nodes.iter().zip(trie.nodes.iter()) {
            assert_eq!(a.children, b.children);
            assert_eq!(a.terminal, b.terminal);
        }
    }

    #[test]
    fn corruption_rejected_everywhere() {
        let (params, index, trie) = fixture();
        let dir = tempfile::tempdir().unwrap();

        let cases: Vec<(&str, Box<dyn Fn(&Path) -> Result<()>>, Box<dyn Fn(&Path) -> bool>)> = vec![
            (
                "model.pixm",
                Box::new(move |p: &Path| save_model(p, &params)),
                Box::new(|p: &Path| load_model(p).is_err()),
            ),
            (
                "index.pixc",
                Box::new(move |p: &Path| save_index(p, &index)),
                Box::new(|p: &Path| load_index(p).is_err()),
            ),
            (
                "trie.pixt",
                Box::new(move |p: &Path| save_trie(p, &trie)),
                Box::new(|p: &Path| load_trie(p).is_err()),
            ),
        ];
        for (name, save, load_fails) in cases {
            let path = dir.path().join(name);
            save(&path).unwrap();

            // Bit flip in the middle.
            let mut bytes = fs::read(&path).unwrap();
            let mid = bytes.len() / 2;
            bytes[mid] ^= 0x40;
            fs::write(&path, &bytes).unwrap();
            assert!(load_fails(&path), "{name}: bit flip accepted");

            // Truncation at several points.
            save(&path).unwrap();
            let bytes = fs::read(&path).unwrap();
            for frac in [0.25, 0.5, 0.9] {
                let cut = (bytes.len() as f64 * frac) as usize;
                fs::write(&path, &bytes[..cut]).unwrap();
                assert!(load_fails(&path), "{name}: truncation at {frac} accepted");
            }

            // Wrong magic (valid checksum): rewrite magic and re-checksum.
            let mut forged = bytes[..bytes.len() - 32].to_vec();
            forged[0..4].copy_from_slice(b"XXXX");
            let digest = Sha256::digest(&forged);
            forged.extend_from_slice(&digest);
            fs::write(&path, &forged).unwrap();
            assert!(load_fails(&path), "{name}: wrong magic accepted");
        }
    }

    #[test]
    fn save_is_deterministic() {
        let (params, _, _) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.pixm");
        let b = dir.path().join("b.pixm");
        save_model(&a, &params).unwrap();
        save_model(&b, &params).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }
}
