//! Text utilities shared across file formats and the tokenizers: backslash
//! escaping and character classification.

/// Escape tab, newline and backslash so a token or field can live on one
/// line of a TSV-style file.
pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out
}

/// Inverse of [`escape`]. Returns `None` on a dangling or unknown escape.
pub fn unescape(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            _ => return None,
        }
    }
    Some(out)
}

/// Character class used by the candidate filters. Within one space-separated
/// segment of a token every character must share a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CharClass {
    Letter,
    Digit,
    Punct,
    Space,
}

pub fn char_class(c: char) -> CharClass {
    if c.is_whitespace() {
        CharClass::Space
    } else if c.is_alphabetic() {
        CharClass::Letter
    } else if c.is_numeric() {
        CharClass::Digit
    } else {
        CharClass::Punct
    }
}

/// Split a query into word tokens for the input side of the encoder:
/// maximal alphanumeric runs, plus each punctuation character on its own.
/// Whitespace separates and is dropped.
pub fn split_query_words(query: &str) -> Vec<&str> {
    let mut words = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in query.char_indices() {
        match char_class(c) {
            CharClass::Letter | CharClass::Digit => {
                if start.is_none() {
                    start = Some(i);
                }
            }
            CharClass::Space | CharClass::Punct => {
                if let Some(s) = start.take() {
                    words.push(&query[s..i]);
                }
                if char_class(c) == CharClass::Punct {
                    words.push(&query[i..i + c.len_utf8()]);
                }
            }
        }
    }
    if let Some(s) = start {
        words.push(&query[s..]);
    }
    words
}

/// FNV-1a over the word bytes; stable across platforms and runs, unlike the
/// std hasher.
pub fn stable_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escape_roundtrip() {
        for s in ["", "plain", "a\tb", "line\nbreak", "back\\slash", "\\t"] {
            assert_eq!(unescape(&escape(s)).as_deref(), Some(s));
        }
    }

    #[test]
    fn unescape_rejects_dangling() {
        assert_eq!(unescape("oops\\"), None);
        assert_eq!(unescape("bad\\x"), None);
    }

    #[test]
    fn query_words_split_punct() {
        assert_eq!(split_query_words("what's up"), vec!["what", "'", "s", "up"]);
        assert_eq!(split_query_words("route 66"), vec!["route", "66"]);
        assert_eq!(split_query_words(""), Vec::<&str>::new());
        assert_eq!(split_query_words("  spaced  "), vec!["spaced"]);
    }

    #[test]
    fn stable_hash_is_fixed() {
        // Frozen so a changed hash function can't silently invalidate trained models.
        assert_eq!(stable_hash(""), 0xcbf29ce484222325);
        assert_eq!(stable_hash("a"), 0xaf63dc4c8601ec8c);
    }
}
