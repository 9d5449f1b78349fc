//! Sentence corpora, vocabulary, and contiguous minibatches.
//!
//! Input text is UTF-8 with one pre-segmented sentence per line; a blank
//! line ends a document. Tokens are whitespace-separated and case is kept.

mod batch;
mod vocab;

pub use batch::{minibatch_iter, prefetch, BatchPlan, Minibatch, MinibatchIter};
pub use vocab::{Vocabulary, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};

use std::ops::Range;

use crate::error::{QtError, Result};

pub const DEFAULT_MAX_SENTENCE_LEN: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

/// Splits raw text into documents of tokenized sentences.
pub fn parse_documents(text: &str) -> Vec<Vec<Vec<&str>>> {
    let mut docs = Vec::new();
    let mut current: Vec<Vec<&str>> = Vec::new();
    for line in text.lines() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            if !current.is_empty() {
                docs.push(std::mem::take(&mut current));
            }
        } else {
            current.push(toks);
        }
    }
    if !current.is_empty() {
        docs.push(current);
    }
    docs
}

/// Id-encoded sentences in source order, with document boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenizedCorpus {
    sentences: Vec<Vec<u32>>,
    /// Start index of each document; strictly increasing, first is 0.
    doc_starts: Vec<usize>,
    split: Split,
    vocab_fingerprint: u64,
    vocab_len: usize,
}

impl TokenizedCorpus {
    pub fn from_text(text: &str, vocab: &Vocabulary, split: Split, max_len: usize) -> Result<Self> {
        let docs = parse_documents(text);
        Self::from_documents(&docs, vocab, split, max_len)
    }

    pub fn from_documents<S: AsRef<str>>(
        docs: &[Vec<Vec<S>>],
        vocab: &Vocabulary,
        split: Split,
        max_len: usize,
    ) -> Result<Self> {
        if max_len == 0 {
            return Err(QtError::Param("maximum sentence length must be >= 1".into()));
        }
        let mut sentences = Vec::new();
        let mut doc_starts = Vec::new();
        for doc in docs.iter().filter(|d| !d.is_empty()) {
            doc_starts.push(sentences.len());
            for sent in doc {
                let mut ids = vocab.encode_sentence(sent)?;
                ids.truncate(max_len);
                sentences.push(ids);
            }
        }
        if sentences.is_empty() {
            return Err(QtError::Input("corpus holds no sentences".into()));
        }
        Ok(TokenizedCorpus {
            sentences,
            doc_starts,
            split,
            vocab_fingerprint: vocab.fingerprint(),
            vocab_len: vocab.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn sentence(&self, i: usize) -> &[u32] {
        &self.sentences[i]
    }

    pub fn sentences(&self) -> &[Vec<u32>] {
        &self.sentences
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn num_documents(&self) -> usize {
        self.doc_starts.len()
    }

    pub fn documents(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.doc_starts.iter().enumerate().map(move |(d, &start)| {
            let end = self.doc_starts.get(d + 1).copied().unwrap_or(self.sentences.len());
            start..end
        })
    }

    pub fn check_vocabulary(&self, vocab: &Vocabulary) -> Result<()> {
        if self.vocab_fingerprint != vocab.fingerprint() || self.vocab_len != vocab.len() {
            return Err(QtError::Config("corpus was encoded with a different vocabulary".into()));
        }
        Ok(())
    }

    /// Moves the trailing `fraction` of documents (at least one) into a
    /// validation corpus. A single-document corpus is split by sentences.
    pub fn split_validation(self, fraction: f64) -> Result<(TokenizedCorpus, TokenizedCorpus)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(QtError::Param(format!("validation fraction must be in (0, 1), got {fraction}")));
        }
        let n_docs = self.num_documents();
        let cut = if n_docs >= 2 {
            let n_val = ((n_docs as f64 * fraction).ceil() as usize).clamp(1, n_docs - 1);
            self.doc_starts[n_docs - n_val]
        } else {
            if self.len() < 2 {
                return Err(QtError::Config("corpus too small to hold out a validation split".into()));
            }
            let n_val = ((self.len() as f64 * fraction).ceil() as usize).clamp(1, self.len() - 1);
            self.len() - n_val
        };
        let TokenizedCorpus { mut sentences, doc_starts, vocab_fingerprint, vocab_len, .. } = self;
        let val_sentences = sentences.split_off(cut);
        let mut train_starts: Vec<usize> = doc_starts.iter().copied().filter(|&s| s < cut).collect();
        let mut val_starts: Vec<usize> = doc_starts.iter().filter(|&&s| s >= cut).map(|s| s - cut).collect();
        if val_starts.first() != Some(&0) {
            val_starts.insert(0, 0);
        }
        if train_starts.is_empty() {
            train_starts.push(0);
        }
        Ok((
            TokenizedCorpus {
                sentences,
                doc_starts: train_starts,
                split: Split::Train,
                vocab_fingerprint,
                vocab_len,
            },
            TokenizedCorpus {
                sentences: val_sentences,
                doc_starts: val_starts,
                split: Split::Validation,
                vocab_fingerprint,
                vocab_len,
            },
        ))
    }
}
