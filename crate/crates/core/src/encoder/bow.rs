use super::RowGrad;
use crate::corpus::Minibatch;
use crate::error::{shape_err, QtError, Result};
use crate::numkern::{Mat, Real};

/// Mean-of-embeddings encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct BowParams<T> {
    pub embedding: Mat<T>,
}

#[derive(Clone, Debug)]
pub struct BowCache {
    tokens: Vec<Vec<u32>>,
    dim: usize,
}

pub(super) fn check_ids<T: Real>(embedding: &Mat<T>, batch: &Minibatch) -> Result<()> {
    if batch.max_id() as usize >= embedding.rows() {
        return Err(QtError::Input(format!(
            "token id {} outside embedding table of {} rows",
            batch.max_id(),
            embedding.rows()
        )));
    }
    Ok(())
}

pub fn bow_forward<T: Real>(params: &BowParams<T>, batch: &Minibatch) -> Result<(Mat<T>, BowCache)> {
    check_ids(&params.embedding, batch)?;
    let dim = params.embedding.cols();
    let mut out = Mat::zeros(batch.size(), dim);
    let mut tokens = Vec::with_capacity(batch.size());
    for i in 0..batch.size() {
        let toks = batch.tokens(i);
        if toks.is_empty() {
            return Err(QtError::Input(format!("sentence {i} is empty")));
        }
        let row = out.row_mut(i);
        for &t in toks {
            for (o, &e) in row.iter_mut().zip(params.embedding.row(t as usize)) {
                *o += e;
            }
        }
        let inv = T::one() / T::of(toks.len() as f64);
        row.iter_mut().for_each(|x| *x *= inv);
        tokens.push(toks.to_vec());
    }
    Ok((out, BowCache { tokens, dim }))
}

/// Every token of sentence `i` receives `d_out[i] / len(i)`.
pub fn bow_backward<T: Real>(cache: &BowCache, d_out: &Mat<T>) -> Result<RowGrad<T>> {
    if d_out.shape() != (cache.tokens.len(), cache.dim) {
        return Err(shape_err!(
            "BoW gradient {:?}, expected {:?}",
            d_out.shape(),
            (cache.tokens.len(), cache.dim)
        ));
    }
    let mut grad = RowGrad::new(cache.dim);
    for (i, toks) in cache.tokens.iter().enumerate() {
        let inv = T::one() / T::of(toks.len() as f64);
        let scaled: Vec<T> = d_out.row(i).iter().map(|&g| g * inv).collect();
        for &t in toks {
            grad.accumulate(t as usize, &scaled);
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> BowParams<f64> {
        BowParams {
            embedding: Mat::from_rows(&[[0.0, 0.0], [0.3, -0.2], [1.0, 0.0], [0.0, 1.0], [0.5, 0.25]]).unwrap(),
        }
    }

    fn batch(sents: &[&[u32]]) -> Minibatch {
        Minibatch::from_sentences(sents, (0..sents.len()).collect(), None).unwrap()
    }

    #[test]
    fn single_token_is_its_row() {
        let (out, _) = bow_forward(&params(), &batch(&[&[4]])).unwrap();
        assert_eq!(out.row(0), &[0.5, 0.25]);
    }

    #[test]
    fn mean_of_two_rows() {
        let (out, _) = bow_forward(&params(), &batch(&[&[2, 3]])).unwrap();
        assert_eq!(out.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn permutation_invariant() {
        let (a, _) = bow_forward(&params(), &batch(&[&[2, 3, 4, 1]])).unwrap();
        let (b, _) = bow_forward(&params(), &batch(&[&[4, 1, 3, 2]])).unwrap();
        let bits = |m: &Mat<f64>| m.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        // summation order differs, so compare to rounding
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-15);
        }
        let (c, _) = bow_forward(&params(), &batch(&[&[2, 3]])).unwrap();
        let (d, _) = bow_forward(&params(), &batch(&[&[3, 2]])).unwrap();
        assert_eq!(bits(&c), bits(&d));
    }

    #[test]
    fn out_of_range_id_rejected() {
        assert!(matches!(bow_forward(&params(), &batch(&[&[9]])), Err(QtError::Input(_))));
    }

    #[test]
    fn repeated_token_accumulates() {
        let (_, cache) = bow_forward(&params(), &batch(&[&[3, 3]])).unwrap();
        let d = Mat::from_rows(&[[0.4, -1.0]]).unwrap();
        let g = bow_backward(&cache, &d).unwrap();
        assert_eq!(g.entries(), &[(3, vec![0.4, -1.0])]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let (_, cache) = bow_forward(&params(), &batch(&[&[2, 3], &[4]])).unwrap();
        let g = bow_backward(&cache, &Mat::<f64>::zeros(2, 2)).unwrap();
        assert!(g.entries().iter().all(|(_, v)| v.iter().all(|&x| x == 0.0)));
        assert!(bow_backward(&cache, &Mat::<f64>::zeros(3, 2)).is_err());
    }
}
