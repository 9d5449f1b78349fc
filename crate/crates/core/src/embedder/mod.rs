//! Test-time sentence vectors and brute-force cosine retrieval.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::corpus::Minibatch;
use crate::error::{QtError, Result};
use crate::numkern::{dot, Mat, Real};
use crate::trainer::QtModel;

/// Sentence vectors `[f(s) g(s)]`, one row per id.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingCollection {
    ids: Vec<u64>,
    vectors: Mat<f64>,
    index: HashMap<u64, usize>,
}

impl EmbeddingCollection {
    pub fn new(ids: Vec<u64>, vectors: Mat<f64>) -> Result<Self> {
        if ids.is_empty() {
            return Err(QtError::Input("an embedding collection needs at least one vector".into()));
        }
        if ids.len() != vectors.rows() {
            return Err(QtError::Shape(format!("{} ids for {} vectors", ids.len(), vectors.rows())));
        }
        if !vectors.is_finite() {
            return Err(QtError::Numeric("embedding vectors must be finite".into()));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (row, &id) in ids.iter().enumerate() {
            if index.insert(id, row).is_some() {
                return Err(QtError::Input(format!("duplicate sentence id {id}")));
            }
        }
        Ok(EmbeddingCollection { ids, vectors, index })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn vectors(&self) -> &Mat<f64> {
        &self.vectors
    }

    pub fn vector(&self, id: u64) -> Result<&[f64]> {
        let row = self.index.get(&id).ok_or_else(|| QtError::Input(format!("unknown sentence id {id}")))?;
        Ok(self.vectors.row(*row))
    }
}

/// Encodes tokenized sentences in chunks of `batch_size`; row `i` gets id `i`.
pub fn embed_sentences<T: Real, S: AsRef<str>>(
    model: &QtModel<T>,
    sentences: &[Vec<S>],
    batch_size: usize,
) -> Result<EmbeddingCollection> {
    if sentences.is_empty() {
        return Err(QtError::Input("no sentences to embed".into()));
    }
    let max_len = model.config.max_sentence_len;
    let ids = sentences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut ids = model
                .vocab
                .encode_sentence(s)
                .map_err(|_| QtError::Input(format!("sentence {i} is empty")))?;
            ids.truncate(max_len);
            Ok(ids)
        })
        .collect::<Result<Vec<_>>>()?;

    let d = model.embedding_dim();
    let mut data = Vec::with_capacity(ids.len() * d);
    let step = batch_size.max(1);
    for (c, chunk) in ids.chunks(step).enumerate() {
        let batch = Minibatch::from_sentences(chunk, (c * step..c * step + chunk.len()).collect(), None)?;
        data.extend(model.embed(&batch)?.data().iter().map(|x| x.as_f64()));
    }
    EmbeddingCollection::new((0..ids.len() as u64).collect(), Mat::new(ids.len(), d, data)?)
}

/// Cosine similarity; zero vectors have no defined similarity.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return Err(QtError::Degenerate("cosine similarity of a zero vector is undefined".into()));
    }
    Ok(dot(a, b) / (na * nb))
}

/// Top `k` ids by descending cosine to `query`; ties go to the smaller id.
pub fn nearest_neighbors(coll: &EmbeddingCollection, query: &[f64], k: usize) -> Result<Vec<(u64, f64)>> {
    if k == 0 {
        return Err(QtError::Param("k must be >= 1".into()));
    }
    if query.len() != coll.dim() {
        return Err(QtError::Shape(format!("query has {} dims, collection has {}", query.len(), coll.dim())));
    }
    let mut scored = coll
        .ids
        .iter()
        .enumerate()
        .map(|(row, &id)| Ok((id, cosine(query, coll.vectors.row(row))?)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

/// Neighbors of `c + b - a`. The three inputs stay in the pool.
pub fn analogy_query(coll: &EmbeddingCollection, a: &[f64], b: &[f64], c: &[f64], k: usize) -> Result<Vec<(u64, f64)>> {
    if a.len() != b.len() || b.len() != c.len() {
        return Err(QtError::Shape("analogy vectors differ in dimension".into()));
    }
    let query: Vec<f64> = a.iter().zip(b).zip(c).map(|((a, b), c)| c + b - a).collect();
    nearest_neighbors(coll, &query, k)
}

pub fn format_embeddings(coll: &EmbeddingCollection) -> String {
    let mut s = format!("{} {}\n", coll.len(), coll.dim());
    for (row, id) in coll.ids.iter().enumerate() {
        let _ = write!(s, "{id}");
        for x in coll.vectors.row(row) {
            let _ = write!(s, " {x:.16e}");
        }
        s.push('\n');
    }
    s
}

pub fn parse_embeddings(text: &str) -> Result<EmbeddingCollection> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| QtError::Parse { line: 1, msg: "missing `N D` header".into() })?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| QtError::Parse { line: 1, msg: "header must be `N D`".into() })?;
    let [n, d] = dims[..] else {
        return Err(QtError::Parse { line: 1, msg: "header must be `N D`".into() });
    };
    let mut ids = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * d);
    for (i, line) in lines {
        let line_no = i + 1;
        let bad = |msg: &str| QtError::Parse { line: line_no, msg: msg.to_string() };
        let mut fields = line.split_whitespace();
        let id = fields.next().and_then(|t| t.parse::<u64>().ok()).ok_or_else(|| bad("bad sentence id"))?;
        let before = data.len();
        for f in fields {
            data.push(f.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| bad("bad vector entry"))?);
        }
        if data.len() - before != d {
            return Err(bad(&format!("expected {d} values, found {}", data.len() - before)));
        }
        ids.push(id);
    }
    if ids.len() != n {
        return Err(QtError::Format(format!("header promises {n} rows, body has {}", ids.len())));
    }
    EmbeddingCollection::new(ids, Mat::new(n, d, data)?)
}

pub fn export_embeddings(coll: &EmbeddingCollection, path: &Path) -> Result<()> {
    fs::write(path, format_embeddings(coll))?;
    Ok(())
}

pub fn import_embeddings(path: &Path) -> Result<EmbeddingCollection> {
    parse_embeddings(&fs::read_to_string(path)?)
}
