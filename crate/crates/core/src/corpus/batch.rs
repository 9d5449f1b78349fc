use std::sync::mpsc;
use std::thread;

use super::{TokenizedCorpus, PAD_ID};
use crate::error::{QtError, Result};
use crate::numkern::Rng;

/// A contiguous block of sentences. It is also the candidate pool for every
/// source sentence inside it.
#[derive(Clone, Debug, PartialEq)]
pub struct Minibatch {
    ids: Vec<u32>,
    lengths: Vec<usize>,
    indices: Vec<usize>,
    t_max: usize,
}

impl Minibatch {
    /// `t_max` of `None` uses the longest sentence.
    pub fn from_sentences<S: AsRef<[u32]>>(sentences: &[S], indices: Vec<usize>, t_max: Option<usize>) -> Result<Self> {
        if sentences.is_empty() {
            return Err(QtError::Input("empty minibatch".into()));
        }
        if indices.len() != sentences.len() {
            return Err(QtError::Shape(format!("{} indices for {} sentences", indices.len(), sentences.len())));
        }
        let longest = sentences.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
        let t_max = t_max.unwrap_or(longest);
        if t_max < longest {
            return Err(QtError::Shape(format!("t_max {t_max} shorter than longest sentence {longest}")));
        }
        let mut ids = vec![PAD_ID; sentences.len() * t_max];
        let mut lengths = Vec::with_capacity(sentences.len());
        for (i, s) in sentences.iter().enumerate() {
            let s = s.as_ref();
            if s.is_empty() {
                return Err(QtError::Input(format!("sentence {i} of the batch is empty")));
            }
            ids[i * t_max..i * t_max + s.len()].copy_from_slice(s);
            lengths.push(s.len());
        }
        Ok(Minibatch { ids, lengths, indices, t_max })
    }

    pub fn size(&self) -> usize {
        self.lengths.len()
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    /// Global corpus indices of the sentences.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Token ids of sentence `i` without padding.
    pub fn tokens(&self, i: usize) -> &[u32] {
        &self.ids[i * self.t_max..i * self.t_max + self.lengths[i]]
    }

    /// Padded id row of sentence `i`.
    pub fn padded_row(&self, i: usize) -> &[u32] {
        &self.ids[i * self.t_max..(i + 1) * self.t_max]
    }

    pub fn max_id(&self) -> u32 {
        self.ids.iter().copied().max().unwrap_or(PAD_ID)
    }
}

/// Start offsets of every full contiguous block inside a document.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    starts: Vec<usize>,
    batch_size: usize,
}

impl BatchPlan {
    pub fn new(corpus: &TokenizedCorpus, batch_size: usize) -> Result<Self> {
        if batch_size < 2 {
            return Err(QtError::Config(format!("batch size must be >= 2, got {batch_size}")));
        }
        let starts: Vec<usize> = corpus
            .documents()
            .flat_map(|doc| (doc.start..doc.end).step_by(batch_size).filter(move |s| s + batch_size <= doc.end))
            .collect();
        if starts.is_empty() {
            return Err(QtError::Config(format!("no document holds {batch_size} sentences")));
        }
        Ok(BatchPlan { starts, batch_size })
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Corpus order.
    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn shuffled(&self, rng: &mut Rng) -> Vec<usize> {
        let mut s = self.starts.clone();
        rng.shuffle(&mut s);
        s
    }

    pub fn batch_at(&self, corpus: &TokenizedCorpus, start: usize) -> Minibatch {
        let range = start..start + self.batch_size;
        let sents = &corpus.sentences()[range.clone()];
        // plan starts always address a full, nonempty block
        Minibatch::from_sentences(sents, range.collect(), None).expect("valid block")
    }
}

pub struct MinibatchIter<'a> {
    corpus: &'a TokenizedCorpus,
    plan: BatchPlan,
    order: std::vec::IntoIter<usize>,
}

impl Iterator for MinibatchIter<'_> {
    type Item = Minibatch;

    fn next(&mut self) -> Option<Minibatch> {
        let start = self.order.next()?;
        Some(self.plan.batch_at(self.corpus, start))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.order.size_hint()
    }
}

/// One epoch of contiguous minibatches with block starts shuffled by `epoch_rng`.
/// A trailing run shorter than `batch_size` in each document is dropped.
pub fn minibatch_iter<'a>(corpus: &'a TokenizedCorpus, batch_size: usize, epoch_rng: &mut Rng) -> Result<MinibatchIter<'a>> {
    let plan = BatchPlan::new(corpus, batch_size)?;
    let order = plan.shuffled(epoch_rng).into_iter();
    Ok(MinibatchIter { corpus, plan, order })
}

/// Runs `producer` on a helper thread feeding a bounded queue and hands items
/// to `consume` in production order. Stops early when `consume` errors.
pub fn prefetch<I, E, F>(producer: I, bound: usize, mut consume: F) -> std::result::Result<(), E>
where
    I: Iterator + Send,
    I::Item: Send,
    F: FnMut(I::Item) -> std::result::Result<(), E>,
{
    thread::scope(|scope| {
        let (tx, rx) = mpsc::sync_channel(bound.max(1));
        scope.spawn(move || {
            for item in producer {
                if tx.send(item).is_err() {
                    break;
                }
            }
        });
        for item in rx.iter() {
            consume(item)?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Split, Vocabulary};
    use std::collections::HashSet;

    fn corpus(doc_lens: &[usize]) -> TokenizedCorpus {
        let mut text = String::new();
        for (d, &n) in doc_lens.iter().enumerate() {
            for i in 0..n {
                text.push_str(&format!("d{d} s{i}\n"));
            }
            text.push('\n');
        }
        let v = Vocabulary::build(&text, 1000).unwrap();
        TokenizedCorpus::from_text(&text, &v, Split::Train, 100).unwrap()
    }

    #[test]
    fn single_document_partition() {
        let c = corpus(&[10]);
        let batches: Vec<_> = minibatch_iter(&c, 5, &mut Rng::new(1)).unwrap().collect();
        assert_eq!(batches.len(), 2);
        let mut covered: Vec<Vec<usize>> = batches.iter().map(|b| b.indices().to_vec()).collect();
        covered.sort();
        assert_eq!(covered, vec![vec![0, 1, 2, 3, 4], vec![5, 6, 7, 8, 9]]);
    }

    #[test]
    fn batch_size_one_rejected() {
        let c = corpus(&[10]);
        assert!(matches!(minibatch_iter(&c, 1, &mut Rng::new(1)), Err(QtError::Config(_))));
    }

    #[test]
    fn remainders_dropped_per_document() {
        let c = corpus(&[7, 3]);
        let batches: Vec<_> = minibatch_iter(&c, 4, &mut Rng::new(1)).unwrap().collect();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].indices(), &[0, 1, 2, 3]);
    }

    #[test]
    fn no_document_long_enough() {
        let c = corpus(&[3, 3]);
        assert!(matches!(minibatch_iter(&c, 4, &mut Rng::new(1)), Err(QtError::Config(_))));
    }

    #[test]
    fn batches_disjoint_in_document_and_deterministic() {
        let c = corpus(&[23, 5, 41, 9]);
        let docs: Vec<_> = c.documents().collect();
        let run = |seed| minibatch_iter(&c, 4, &mut Rng::new(seed)).unwrap().collect::<Vec<_>>();
        let a = run(9);
        assert_eq!(a, run(9));
        assert_ne!(a, run(10));
        let mut seen = HashSet::new();
        for b in &a {
            let doc = docs.iter().position(|d| d.contains(&b.indices()[0])).unwrap();
            for w in b.indices().windows(2) {
                assert_eq!(w[1], w[0] + 1);
            }
            assert!(b.indices().iter().all(|i| docs[doc].contains(i)));
            assert!(b.indices().iter().all(|&i| seen.insert(i)));
        }
        assert_eq!(a.len(), 5 + 1 + 10 + 2);
    }

    #[test]
    fn padding_layout() {
        let b = Minibatch::from_sentences(&[vec![5u32, 6, 7], vec![8]], vec![0, 1], Some(4)).unwrap();
        assert_eq!(b.padded_row(1), &[8, 0, 0, 0]);
        assert_eq!(b.tokens(0), &[5, 6, 7]);
        assert!(Minibatch::from_sentences(&[vec![5u32], vec![]], vec![0, 1], None).is_err());
        assert!(Minibatch::from_sentences(&[vec![5u32, 6]], vec![0], Some(1)).is_err());
    }

    #[test]
    fn prefetch_preserves_order() {
        let mut got = Vec::new();
        prefetch(0..1000, 3, |x| {
            got.push(x);
            Ok::<(), ()>(())
        })
        .unwrap();
        assert_eq!(got, (0..1000).collect::<Vec<_>>());
        let r = prefetch(0..1000, 2, |x| if x == 5 { Err(x) } else { Ok(()) });
        assert_eq!(r, Err(5));
    }
}
