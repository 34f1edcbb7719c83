//! Tokenization, vocabulary construction and fixed-length index encoding.

use std::collections::HashMap;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TextError {
    #[error("min_count must be at least 1")]
    MinCount,
    #[error("sequence length {len} is shorter than the widest window {window}")]
    TooShort { len: usize, window: usize },
    #[error("vocabulary file line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Lowercased whitespace tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Token-to-index map with `PAD = 0` and `UNK = 1` reserved.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_count: usize,
}

impl Vocab {
    /// Keeps tokens seen at least `min_count` times, ordered by descending
    /// frequency and then lexicographically.
    pub fn build<S: AsRef<str>>(
        corpus: impl IntoIterator<Item = impl IntoIterator<Item = S>>,
        min_count: usize,
    ) -> Result<Self, TextError> {
        if min_count == 0 {
            return Err(TextError::MinCount);
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for doc in corpus {
            for tok in doc {
                *counts.entry(tok.as_ref().to_string()).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count && t != PAD_TOKEN && t != UNK_TOKEN)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let tokens = [PAD_TOKEN.to_string(), UNK_TOKEN.to_string()]
            .into_iter()
            .chain(kept.into_iter().map(|(t, _)| t))
            .collect();
        Ok(Self::from_tokens(tokens, min_count))
    }

    fn from_tokens(tokens: Vec<String>, min_count: usize) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            tokens,
            index,
            min_count,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    /// Index of `token`, or [`UNK`] when absent.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Text form: a `#` header carrying `max_len` and `min_count`, then one
    /// `token<TAB>index` line per entry.
    pub fn to_text(&self, max_len: usize) -> String {
        let mut out = format!("#\tmax_len={max_len}\tmin_count={}\n", self.min_count);
        for (i, t) in self.tokens.iter().enumerate() {
            out.push_str(t);
            out.push('\t');
            out.push_str(&i.to_string());
            out.push('\n');
        }
        out
    }

    /// Parses [`Vocab::to_text`] output, returning the vocabulary and `max_len`.
    pub fn from_text(text: &str) -> Result<(Self, usize), TextError> {
        let err = |line: usize, reason: &str| TextError::Parse {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err(1, "missing header"))?;
        let mut max_len = None;
        let mut min_count = None;
        for field in header.split('\t').skip(1) {
            match field.split_once('=') {
                Some(("max_len", v)) => max_len = v.parse().ok(),
                Some(("min_count", v)) => min_count = v.parse().ok(),
                _ => return Err(err(1, &format!("unknown header field {field:?}"))),
            }
        }
        if !header.starts_with('#') {
            return Err(err(1, "header must start with '#'"));
        }
        let max_len = max_len.ok_or_else(|| err(1, "missing max_len"))?;
        let min_count = min_count.ok_or_else(|| err(1, "missing min_count"))?;

        let mut tokens = Vec::new();
        for (n, line) in lines.enumerate() {
            let line_no = n + 2;
            let (tok, idx) = line
                .split_once('\t')
                .ok_or_else(|| err(line_no, "expected token<TAB>index"))?;
            let idx: usize = idx.parse().map_err(|_| err(line_no, "bad index"))?;
            if idx != tokens.len() {
                return Err(err(line_no, "indices must be dense and ascending"));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(err(2, "first entries must be <pad> and <unk>"));
        }
        Ok((Self::from_tokens(tokens, min_count), max_len))
    }

    /// SHA-256 of the text form, hex encoded.
    pub fn fingerprint(&self, max_len: usize) -> String {
        let digest = Sha256::digest(self.to_text(max_len).as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Exactly `max_len` indices; positions from `true_length` on are [`PAD`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedTweet {
    pub ids: Vec<usize>,
    pub true_length: usize,
}

/// Maps tokens to indices, truncating to the first `max_len` tokens and
/// padding shorter sequences.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocab, max_len: usize) -> EncodedTweet {
    let true_length = tokens.len().min(max_len);
    let mut ids: Vec<usize> = tokens[..true_length]
        .iter()
        .map(|t| vocab.id(t.as_ref()))
        .collect();
    ids.resize(max_len, PAD);
    EncodedTweet { ids, true_length }
}

/// Checks that sequences of `max_len` fit the widest convolution window.
pub fn validate_length(max_len: usize, widest_window: usize) -> Result<(), TextError> {
    if max_len < widest_window || max_len == 0 {
        return Err(TextError::TooShort {
            len: max_len,
            window: widest_window,
        });
    }
    Ok(())
}

/// Nearest-rank 95th percentile of token counts (at least 1).
pub fn percentile_length(lengths: impl IntoIterator<Item = usize>, q: f64) -> usize {
    let mut v: Vec<usize> = lengths.into_iter().collect();
    if v.is_empty() {
        return 1;
    }
    v.sort_unstable();
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1].max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(docs: &[&[&str]]) -> Vec<Vec<String>> {
        docs.iter()
            .map(|d| d.iter().map(|s| s.to_string()).collect())
            .collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("I got Lost"), ["i", "got", "lost"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("umeda  station"), ["umeda", "station"]);
    }

    #[test]
    fn vocab_orders_by_frequency() {
        let v = Vocab::build(corpus(&[&["a", "b"], &["a"]]), 1).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(
            (v.id(PAD_TOKEN), v.id(UNK_TOKEN), v.id("a"), v.id("b")),
            (0, 1, 2, 3)
        );
        let v2 = Vocab::build(corpus(&[&["a", "b"], &["a"]]), 2).unwrap();
        assert_eq!(v2.get("b"), None);
        assert_eq!(v2.len(), 3);
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = Vocab::build(corpus(&[&["zeta", "alpha", "mid"]]), 1).unwrap();
        assert_eq!(v.token(2), Some("alpha"));
        assert_eq!(v.token(3), Some("mid"));
        assert_eq!(v.token(4), Some("zeta"));
    }

    #[test]
    fn empty_corpus_keeps_reserved_only() {
        let v = Vocab::build(Vec::<Vec<String>>::new(), 1).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(Vocab::build(corpus(&[&["a"]]), 0), Err(TextError::MinCount));
    }

    #[test]
    fn encode_pads_truncates_and_maps_unknowns() {
        let v = Vocab::build(corpus(&[&["a", "b"]]), 1).unwrap();
        let e = encode(&["a"], &v, 3);
        assert_eq!(e.ids, [v.id("a"), PAD, PAD]);
        assert_eq!(e.true_length, 1);
        assert_eq!(encode(&["zzz"], &v, 1).ids, [UNK]);
        let long: Vec<String> = (0..10)
            .map(|i| if i % 2 == 0 { "a" } else { "b" }.into())
            .collect();
        let e = encode(&long, &v, 5);
        assert_eq!(e.ids, [2, 3, 2, 3, 2]);
        assert_eq!(e.true_length, 5);
        assert!(validate_length(2, 5).is_err());
    }

    #[test]
    fn text_round_trip() {
        let v = Vocab::build(corpus(&[&["x", "y", "x", "z"]]), 1).unwrap();
        let text = v.to_text(17);
        assert!(text.starts_with("#\tmax_len=17\tmin_count=1\n<pad>\t0\n<unk>\t1\nx\t2\n"));
        let (back, len) = Vocab::from_text(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(len, 17);
        assert_eq!(v.fingerprint(17), back.fingerprint(17));
        assert!(Vocab::from_text("#\tmax_len=3\tmin_count=1\n<pad>\t0\n<unk>\t2\n").is_err());
    }

    #[test]
    fn percentile_nearest_rank() {
        assert_eq!(percentile_length(1..=100, 0.95), 95);
        assert_eq!(percentile_length([3], 0.95), 3);
        assert_eq!(percentile_length([], 0.95), 1);
    }
}
