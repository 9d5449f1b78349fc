use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{QtError, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Case-sensitive token/id bijection. Ids 0 and 1 are reserved for padding
/// and unknown tokens; content ids are assigned by descending frequency with
/// ties broken lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds from whitespace-tokenized text. Line structure is irrelevant here.
    pub fn build(text: &str, max_size: usize) -> Result<Self> {
        Self::build_from_tokens(text.split_whitespace(), max_size)
    }

    pub fn build_from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>, max_size: usize) -> Result<Self> {
        if max_size < 3 {
            return Err(QtError::Param(format!("vocabulary size must be >= 3, got {max_size}")));
        }
        let mut freq: HashMap<&str, u64> = HashMap::new();
        let mut total = 0u64;
        for t in tokens {
            *freq.entry(t).or_default() += 1;
            total += 1;
        }
        if freq.is_empty() {
            return Err(QtError::Input("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut ranked: Vec<(&str, u64)> = freq
            .into_iter()
            .filter(|(t, _)| *t != PAD_TOKEN && *t != UNK_TOKEN)
            .collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size - 2);

        let kept: u64 = ranked.iter().map(|(_, c)| c).sum();
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut counts = vec![0, total - kept];
        for (t, c) in ranked {
            tokens.push(t.to_string());
            counts.push(c);
        }
        Ok(Self::from_parts(tokens, counts))
    }

    fn from_parts(tokens: Vec<String>, counts: Vec<u64>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { tokens, counts, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn count(&self, id: u32) -> Option<u64> {
        self.counts.get(id as usize).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode_sentence<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<u32>> {
        if tokens.is_empty() {
            return Err(QtError::Input("cannot encode an empty sentence".into()));
        }
        Ok(tokens.iter().map(|t| self.id(t.as_ref())).collect())
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i).unwrap_or(UNK_TOKEN)).collect()
    }

    /// FNV-1a over the token list; used to detect corpora encoded with a
    /// different vocabulary.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for t in &self.tokens {
            for b in t.bytes().chain(std::iter::once(0xff)) {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// `token<TAB>id<TAB>count` lines sorted by id.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, (t, c)) in self.tokens.iter().zip(&self.counts).enumerate() {
            let _ = writeln!(out, "{t}\t{i}\t{c}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let parse = |msg: &str| QtError::Parse { line: line_no, msg: msg.to_string() };
            let mut fields = line.split('\t');
            let (Some(tok), Some(id), Some(count), None) = (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(parse("expected token<TAB>id<TAB>count"));
            };
            let id: usize = id.parse().map_err(|_| parse("bad id"))?;
            let count: u64 = count.parse().map_err(|_| parse("bad count"))?;
            if id != tokens.len() {
                return Err(parse("ids must be contiguous and sorted"));
            }
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(parse("token must be nonempty and contain no whitespace"));
            }
            tokens.push(tok.to_string());
            counts.push(count);
        }
        if tokens.len() < 3 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(QtError::Format("vocabulary must start with <pad>, <unk> and hold a content token".into()));
        }
        let vocab = Self::from_parts(tokens, counts);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(QtError::Format("duplicate token in vocabulary".into()));
        }
        Ok(vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_rule() {
        let v = Vocabulary::build("a a b", 4).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "a", "b"]);
        assert_eq!(v.count(2), Some(2));
    }

    #[test]
    fn keeps_most_frequent() {
        let text = "j j j j j j j j j j i i i i i i i i i h h h h h h h h g g g g g g g f f f f f f e e e e e d d d d c c c b b a";
        let v = Vocabulary::build(text, 5).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(&v.tokens()[2..], &["j", "i", "h"]);
        assert_eq!(v.count(UNK_ID), Some(28));
    }

    #[test]
    fn ties_are_lexicographic_and_case_sensitive() {
        let v = Vocabulary::build("b B a", 10).unwrap();
        assert_eq!(&v.tokens()[2..], &["B", "a", "b"]);
    }

    #[test]
    fn oov_encodes_to_unk() {
        let v = Vocabulary::build("a a b", 4).unwrap();
        assert_eq!(v.encode_sentence(&["a", "b"]).unwrap(), vec![2, 3]);
        assert_eq!(v.encode_sentence(&["z"]).unwrap(), vec![1]);
        assert_eq!(v.decode(&[1]), vec!["<unk>"]);
        assert!(matches!(v.encode_sentence::<&str>(&[]), Err(QtError::Input(_))));
    }

    #[test]
    fn errors() {
        assert!(matches!(Vocabulary::build("  \n ", 10), Err(QtError::Input(_))));
        assert!(matches!(Vocabulary::build("a", 2), Err(QtError::Param(_))));
    }

    #[test]
    fn tsv_round_trip_and_validation() {
        let v = Vocabulary::build("the cat sat on the mat", 100).unwrap();
        let tsv = v.to_tsv();
        assert!(tsv.starts_with("<pad>\t0\t0\n<unk>\t1\t0\nthe\t2\t2\n"));
        assert_eq!(Vocabulary::from_tsv(&tsv).unwrap(), v);
        assert!(matches!(Vocabulary::from_tsv("<pad>\t0\t0\n<unk>\t2\t0\n"), Err(QtError::Parse { line: 2, .. })));
        assert!(matches!(Vocabulary::from_tsv("x\t0\t0\n<unk>\t1\t0\na\t2\t1\n"), Err(QtError::Format(_))));
    }

    proptest::proptest! {
        #[test]
        fn decode_inverts_encode(words in proptest::collection::vec("[a-zA-Z]{1,4}", 1..40)) {
            let v = Vocabulary::build(&words.join(" "), 1000).unwrap();
            let ids = v.encode_sentence(&words).unwrap();
            proptest::prop_assert!(ids.iter().all(|&i| i >= 2));
            proptest::prop_assert_eq!(v.decode(&ids), words.iter().map(String::as_str).collect::<Vec<_>>());
        }
    }
}
