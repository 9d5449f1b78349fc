use std::io::BufRead;

use crate::corpus::{Vocabulary, PAD_ID};
use crate::error::{QtError, Result};
use crate::numkern::{init, InitScheme, Mat, Real, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainedTable<T> {
    pub embedding: Mat<T>,
    /// Fraction of content tokens (ids >= 2) found in the file.
    pub coverage: f64,
}

/// Reads `token v1 ... vD` lines. An optional `N D` header is skipped.
/// Rows for tokens absent from the file are drawn from U[-0.1, 0.1]; the pad
/// row stays zero.
pub fn load_pretrained_embeddings<T: Real, R: BufRead>(
    reader: R,
    vocab: &Vocabulary,
    rng: &mut Rng,
) -> Result<PretrainedTable<T>> {
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    let mut dim: Option<usize> = None;
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();
        if line_no == 1 && rest.len() == 1 && token.parse::<u64>().is_ok() && rest[0].parse::<u64>().is_ok() {
            continue;
        }
        if rest.is_empty() {
            return Err(QtError::Parse { line: line_no, msg: format!("token {token:?} has no vector") });
        }
        let values = rest
            .iter()
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| QtError::Parse { line: line_no, msg: "vector entries must be finite decimals".into() })?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(QtError::Format(format!(
                    "line {line_no} has {} values, earlier lines have {d}",
                    values.len()
                )))
            }
            _ => {}
        }
        if let Some(id) = vocab.get(token) {
            let slot = &mut rows[id as usize];
            if slot.is_none() {
                *slot = Some(values);
            }
        }
    }
    let dim = dim.ok_or_else(|| QtError::Format("pretrained file holds no vectors".into()))?;
    let mut embedding: Mat<T> = init(vocab.len(), dim, InitScheme::Uniform(-0.1, 0.1), rng)?;
    embedding.row_mut(PAD_ID as usize).fill(T::zero());
    let mut covered = 0usize;
    for (id, row) in rows.iter().enumerate() {
        if let Some(v) = row {
            if id >= 2 {
                covered += 1;
            }
            if id != PAD_ID as usize {
                for (o, &x) in embedding.row_mut(id).iter_mut().zip(v) {
                    *o = T::of(x);
                }
            }
        }
    }
    let content = vocab.len().saturating_sub(2).max(1);
    Ok(PretrainedTable { embedding, coverage: covered as f64 / content as f64 })
}
