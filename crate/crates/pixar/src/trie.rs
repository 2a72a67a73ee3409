//! Prefix tree over tokenized docids.
//!
//! Every root-to-terminal path spells exactly one docid's token sequence.
//! Terminals may be interior nodes: one docid can be a token-prefix of
//! another, and decoding both emits at the terminal and keeps expanding.

use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Default)]
pub struct TrieNode {
    /// Children sorted by token id for binary-search lookup and canonical
    /// serialization order.
    pub children: Vec<(u32, u32)>,
    /// Index into the docid table when this node ends a docid.
    pub terminal: Option<u32>,
}

impl TrieNode {
    pub fn child(&self, token: u32) -> Option<u32> {
        self.children
            .binary_search_by_key(&token, |&(t, _)| t)
            .ok()
            .map(|i| self.children[i].1)
    }
}

#[derive(Debug, Clone)]
pub struct DocidTrie {
    /// Node 0 is the root.
    pub nodes: Vec<TrieNode>,
    /// Deduplicated docids, lexicographic order.
    pub docids: Vec<String>,
    pub vocab_hash: [u8; 32],
    /// Longest docid token sequence in the trie.
    pub max_depth: usize,
}

impl DocidTrie {
    /// Build from the corpus docid list; duplicates are deduplicated
    /// silently and the stored order is canonical (lexicographic), so the
    /// same docid set always yields the same trie.
    pub fn build(docids: &[String], vocab: &Vocabulary) -> DocidTrie {
        let mut unique: Vec<&str> = docids.iter().map(String::as_str).collect();
        unique.sort_unstable();
        unique.dedup();

        let mut nodes = vec![TrieNode::default()];
        let mut max_depth = 0;
        for (docid_idx, docid) in unique.iter().enumerate() {
            let tokens = vocab.tokenize(docid);
            max_depth = max_depth.max(tokens.len());
            let mut at = 0usize;
            for &tok in &tokens {
                at = match nodes[at].child(tok) {
                    Some(next) => next as usize,
                    None => {
                        let next = nodes.len() as u32;
                        nodes.push(TrieNode::default());
                        let pos = nodes[at]
                            .children
                            .binary_search_by_key(&tok, |&(t, _)| t)
                            .unwrap_err();
                        nodes[at].children.insert(pos, (tok, next));
                        next as usize
                    }
                };
            }
            // Distinct docids cannot share a path: tokenization is
            // injective (detokenize is its exact inverse).
            debug_assert!(nodes[at].terminal.is_none());
            nodes[at].terminal = Some(docid_idx as u32);
        }

        // Renumber nodes in preorder (children in token order) so indices
        // are canonical: a freshly built trie and a deserialized one agree
        // exactly, and node-index tie-breaks decode identically for both.
        let mut remap = vec![0u32; nodes.len()];
        let mut order = Vec::with_capacity(nodes.len());
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            remap[n] = order.len() as u32;
            order.push(n);
            for &(_, child) in nodes[n].children.iter().rev() {
                stack.push(child as usize);
            }
        }
        let nodes: Vec<TrieNode> = order
            .into_iter()
            .map(|old| {
                let mut node = nodes[old].clone();
                for c in node.children.iter_mut() {
                    c.1 = remap[c.1 as usize];
                }
                node
            })
            .collect();

        DocidTrie {
            nodes,
            docids: unique.into_iter().map(str::to_string).collect(),
            vocab_hash: vocab.hash(),
            max_depth,
        }
    }

    pub fn root(&self) -> &TrieNode {
        &self.nodes[0]
    }

    pub fn num_docids(&self) -> usize {
        self.docids.len()
    }

    /// Follow a token sequence from the root; the docid index if it ends
    /// exactly at a terminal.
    pub fn lookup(&self, tokens: &[u32]) -> Option<u32> {
        let mut at = 0usize;
        for &tok in tokens {
            at = self.nodes[at].child(tok)? as usize;
        }
        self.nodes[at].terminal
    }

    pub fn contains_docid(&self, docid: &str) -> bool {
        self.docids.binary_search_by(|d| d.as_str().cmp(docid)).is_ok()
    }

    /// Structural soundness check used by tests and after deserialization:
    /// every docid traces to its terminal and every terminal traces back.
    pub fn verify(&self, vocab: &Vocabulary) -> Result<()> {
        for (i, docid) in self.docids.iter().enumerate() {
            match self.lookup(&vocab.tokenize(docid)) {
                Some(idx) if idx as usize == i => {}
                other => {
                    return Err(Error::InvalidInput(format!(
                        "docid {docid:?} resolves to {other:?}, expected terminal {i}"
                    )))
                }
            }
        }
        let mut seen = vec![false; self.docids.len()];
        for node in &self.nodes {
            if let Some(t) = node.terminal {
                let t = t as usize;
                if t >= seen.len() || seen[t] {
                    return Err(Error::InvalidInput(format!(
                        "terminal {t} missing or duplicated in docid table"
                    )));
                }
                seen[t] = true;
            }
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::InvalidInput("unreachable docid in table".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{build_vocabulary, generate_candidates, NUM_RESERVED};

    fn vocab_for(docids: &[String]) -> Vocabulary {
        let cands = generate_candidates(docids, 12, 1);
        build_vocabulary(&cands, docids, NUM_RESERVED + cands.len()).0
    }

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn empty_corpus_gives_root_only() {
        let vocab = vocab_for(&[]);
        let trie = DocidTrie::build(&[], &vocab);
        assert_eq!(trie.nodes.len(), 1);
        assert_eq!(trie.num_docids(), 0);
        assert!(trie.root().terminal.is_none());
    }

    #[test]
    fn two_docids_share_prefix() {
        let docids = strings(&["a b", "a c"]);
        // Single-char tokens only, so paths are [a, ␠, b] and [a, ␠, c].
        let vocab = {
            let cands: Vec<_> = generate_candidates(&docids, 1, 1);
            build_vocabulary(&cands, &docids, NUM_RESERVED + cands.len()).0
        };
        let trie = DocidTrie::build(&docids, &vocab);
        trie.verify(&vocab).unwrap();
        assert_eq!(trie.num_docids(), 2);
        // Shared prefix "a ", then branch: nodes = root + 2 shared + 2 leaves.
        assert_eq!(trie.nodes.len(), 5);
        let a = vocab.id_of("a").unwrap();
        assert_eq!(trie.root().children.len(), 1);
        assert_eq!(trie.root().children[0].0, a);
    }

    #[test]
    fn duplicates_dedup_silently() {
        let docids = strings(&["same", "same", "same"]);
        let vocab = vocab_for(&docids);
        let trie = DocidTrie::build(&docids, &vocab);
        assert_eq!(trie.num_docids(), 1);
        trie.verify(&vocab).unwrap();
    }

    #[test]
    fn node_count_bounded_by_tokens() {
        let docids = strings(&["alpha beta", "alpha gamma", "delta"]);
        let vocab = vocab_for(&docids);
        let trie = DocidTrie::build(&docids, &vocab);
        let total_tokens: usize = trie.docids.iter().map(|d| vocab.tokenize(d).len()).sum();
        assert!(trie.nodes.len() <= total_tokens + 1);
        trie.verify(&vocab).unwrap();
    }

    #[test]
    fn interior_terminal_for_prefix_docid() {
        let docids = strings(&["ab", "ab ab"]);
        let vocab = {
            let cands = generate_candidates(&docids, 2, 1);
            build_vocabulary(&cands, &docids, NUM_RESERVED + cands.len()).0
        };
        let trie = DocidTrie::build(&docids, &vocab);
        trie.verify(&vocab).unwrap();
        let path = vocab.tokenize("ab");
        let mut at = 0usize;
        for t in path {
            at = trie.nodes[at].child(t).unwrap() as usize;
        }
        assert!(trie.nodes[at].terminal.is_some());
        assert!(!trie.nodes[at].children.is_empty(), "prefix docid keeps expanding");
    }

    #[test]
    fn build_is_input_order_independent() {
        let a = strings(&["x one", "y two", "z three"]);
        let b = strings(&["z three", "x one", "y two"]);
        let vocab = vocab_for(&a);
        let ta = DocidTrie::build(&a, &vocab);
        let tb = DocidTrie::build(&b, &vocab);
        assert_eq!(ta.docids, tb.docids);
        assert_eq!(ta.nodes.len(), tb.nodes.len());
    }
}
