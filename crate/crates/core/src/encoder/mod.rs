//! Sentence encoders with exact backward passes.
//!
//! Four kinds are provided: mean-of-embeddings (BoW), a unidirectional GRU,
//! a bidirectional GRU whose output is `[forward state, backward state]`,
//! and a multichannel encoder that concatenates two bidirectional GRUs, one
//! of which reads a frozen pretrained embedding table.
//!
//! Embedding gradients are returned as sparse `(row, vector)` pairs; every
//! other gradient is dense.

mod bow;
mod gru;
mod pretrained;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

pub use bow::{bow_backward, bow_forward, BowCache, BowParams};
pub use gru::{gru_backward, gru_cell, gru_forward, Direction, GruCache, GruCell, GruParams};
pub use pretrained::{load_pretrained_embeddings, PretrainedTable};

use crate::corpus::{Minibatch, PAD_ID};
use crate::error::{shape_err, QtError, Result};
use crate::numkern::{init, InitScheme, Mat, Real, Rng};
use gru::CELL_TENSOR_NAMES;

/// Sparse embedding gradient: accumulated rows in first-touch order.
#[derive(Clone, Debug, PartialEq)]
pub struct RowGrad<T> {
    cols: usize,
    entries: Vec<(usize, Vec<T>)>,
    index: HashMap<usize, usize>,
}

impl<T: Real> RowGrad<T> {
    pub fn new(cols: usize) -> Self {
        RowGrad { cols, entries: Vec::new(), index: HashMap::new() }
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[(usize, Vec<T>)] {
        &self.entries
    }

    pub fn accumulate(&mut self, row: usize, values: &[T]) {
        debug_assert_eq!(values.len(), self.cols);
        match self.index.get(&row) {
            Some(&pos) => self.entries[pos].1.iter_mut().zip(values).for_each(|(a, &b)| *a += b),
            None => {
                self.index.insert(row, self.entries.len());
                self.entries.push((row, values.to_vec()));
            }
        }
    }

    pub fn merge(&mut self, other: &RowGrad<T>) {
        for (row, v) in &other.entries {
            self.accumulate(*row, v);
        }
    }

    pub fn to_dense(&self, rows: usize) -> Result<Mat<T>> {
        let mut m = Mat::zeros(rows, self.cols);
        for (r, v) in &self.entries {
            if *r >= rows {
                return Err(shape_err!("gradient row {r} outside table of {rows} rows"));
            }
            m.row_mut(*r).iter_mut().zip(v).for_each(|(a, &b)| *a += b);
        }
        Ok(m)
    }
}

/// Gradient of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub enum Grad<T> {
    Dense(Mat<T>),
    Rows(RowGrad<T>),
}

impl<T: Real> Grad<T> {
    pub fn norm_sq(&self) -> f64 {
        match self {
            Grad::Dense(m) => m.data().iter().map(|x| x.as_f64().powi(2)).sum(),
            Grad::Rows(g) => g.entries.iter().flat_map(|(_, v)| v).map(|x| x.as_f64().powi(2)).sum(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Grad::Dense(m) => m.is_finite(),
            Grad::Rows(g) => g.entries.iter().all(|(_, v)| v.iter().all(|x| x.is_finite())),
        }
    }

    pub fn to_dense(&self, shape: (usize, usize)) -> Result<Mat<T>> {
        match self {
            Grad::Dense(m) if m.shape() == shape => Ok(m.clone()),
            Grad::Dense(m) => Err(shape_err!("gradient {:?} for tensor {:?}", m.shape(), shape)),
            Grad::Rows(g) if g.cols == shape.1 => g.to_dense(shape.0),
            Grad::Rows(g) => Err(shape_err!("row gradient width {} for tensor {:?}", g.cols, shape)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EncoderKind {
    Bow,
    Gru,
    BiGru,
    MultiChannel,
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Bow => "bow",
            EncoderKind::Gru => "gru",
            EncoderKind::BiGru => "bigru",
            EncoderKind::MultiChannel => "mc",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = QtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bow" => Ok(EncoderKind::Bow),
            "gru" => Ok(EncoderKind::Gru),
            "bigru" => Ok(EncoderKind::BiGru),
            "mc" | "multichannel" => Ok(EncoderKind::MultiChannel),
            _ => Err(QtError::Config(format!("unknown encoder kind {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiGruParams<T> {
    pub embedding: Mat<T>,
    pub fwd: GruCell<T>,
    pub bwd: GruCell<T>,
}

/// Two bidirectional channels. The `pretrained` channel's embedding table is
/// never updated.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiChannelParams<T> {
    pub trained: BiGruParams<T>,
    pub pretrained: BiGruParams<T>,
}

pub struct BiGruCache<T> {
    fwd: GruCache<T>,
    bwd: GruCache<T>,
    hidden: usize,
}

pub enum ForwardCache<T> {
    Bow(BowCache),
    Gru(GruCache<T>),
    BiGru(BiGruCache<T>),
    MultiChannel(BiGruCache<T>, BiGruCache<T>),
}

pub struct EncoderOutput<T> {
    pub output: Mat<T>,
    pub cache: ForwardCache<T>,
}

pub fn bigru_forward<T: Real>(params: &BiGruParams<T>, batch: &Minibatch) -> Result<(Mat<T>, BiGruCache<T>)> {
    let (hf, fwd) = gru::run(&params.embedding, &params.fwd, batch, Direction::Forward)?;
    let (hb, bwd) = gru::run(&params.embedding, &params.bwd, batch, Direction::Backward)?;
    Ok((hf.hcat(&hb)?, BiGruCache { fwd, bwd, hidden: params.fwd.hidden() }))
}

/// Returns `(forward cell grads, backward cell grads, embedding rows)`.
pub fn bigru_backward<T: Real>(
    params: &BiGruParams<T>,
    cache: &BiGruCache<T>,
    d_out: &Mat<T>,
) -> Result<(GruCell<T>, GruCell<T>, RowGrad<T>)> {
    if d_out.cols() != 2 * cache.hidden {
        return Err(shape_err!("bi-GRU gradient width {} vs {}", d_out.cols(), 2 * cache.hidden));
    }
    let (gf, mut emb) = gru::backprop(&params.fwd, &cache.fwd, &d_out.col_slice(0, cache.hidden)?)?;
    let (gb, emb_b) = gru::backprop(&params.bwd, &cache.bwd, &d_out.col_slice(cache.hidden, cache.hidden)?)?;
    emb.merge(&emb_b);
    Ok((gf, gb, emb))
}

pub fn multichannel_forward<T: Real>(
    params: &MultiChannelParams<T>,
    batch: &Minibatch,
) -> Result<(Mat<T>, BiGruCache<T>, BiGruCache<T>)> {
    let (a, ca) = bigru_forward(&params.trained, batch)?;
    let (b, cb) = bigru_forward(&params.pretrained, batch)?;
    Ok((a.hcat(&b)?, ca, cb))
}

fn bigru_grads<T: Real>(fwd: GruCell<T>, bwd: GruCell<T>, emb: Option<RowGrad<T>>, emb_cols: usize) -> Vec<Grad<T>> {
    let mut out = vec![Grad::Rows(emb.unwrap_or_else(|| RowGrad::new(emb_cols)))];
    out.extend(fwd.tensors().into_iter().map(|m| Grad::Dense(m.clone())));
    out.extend(bwd.tensors().into_iter().map(|m| Grad::Dense(m.clone())));
    out
}

/// Gradients in [`Encoder::tensors`] order. The frozen embedding gets an
/// empty row gradient.
pub fn multichannel_backward<T: Real>(
    params: &MultiChannelParams<T>,
    caches: (&BiGruCache<T>, &BiGruCache<T>),
    d_out: &Mat<T>,
) -> Result<Vec<Grad<T>>> {
    let w1 = 2 * caches.0.hidden;
    let w2 = 2 * caches.1.hidden;
    if d_out.cols() != w1 + w2 {
        return Err(shape_err!("multichannel gradient width {} vs {}", d_out.cols(), w1 + w2));
    }
    let (f1, b1, e1) = bigru_backward(&params.trained, caches.0, &d_out.col_slice(0, w1)?)?;
    let (f2, b2, _) = bigru_backward(&params.pretrained, caches.1, &d_out.col_slice(w1, w2)?)?;
    let mut grads = bigru_grads(f1, b1, Some(e1), params.trained.embedding.cols());
    grads.extend(bigru_grads(f2, b2, None, params.pretrained.embedding.cols()));
    Ok(grads)
}

/// A parameter tensor with its canonical name.
pub struct NamedTensor<'a, T> {
    pub name: String,
    pub value: &'a Mat<T>,
    pub frozen: bool,
}

/// Shape parameters for building a fresh encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub hidden: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Encoder<T> {
    Bow(BowParams<T>),
    Gru(GruParams<T>),
    BiGru(BiGruParams<T>),
    MultiChannel(MultiChannelParams<T>),
}

fn word_embedding<T: Real>(vocab_size: usize, dim: usize, rng: &mut Rng) -> Result<Mat<T>> {
    let mut e: Mat<T> = init(vocab_size, dim, InitScheme::Uniform(-0.1, 0.1), rng)?;
    e.row_mut(PAD_ID as usize).fill(T::zero());
    Ok(e)
}

fn bigru_init<T: Real>(embedding: Mat<T>, hidden: usize, rng: &mut Rng) -> Result<BiGruParams<T>> {
    let d = embedding.cols();
    Ok(BiGruParams { embedding, fwd: GruCell::init(d, hidden, rng)?, bwd: GruCell::init(d, hidden, rng)? })
}

impl<T: Real> Encoder<T> {
    /// `pretrained` is required for the multichannel kind and ignored otherwise.
    pub fn init(spec: EncoderSpec, rng: &mut Rng, pretrained: Option<&Mat<T>>) -> Result<Self> {
        if spec.vocab_size < 3 || spec.emb_dim == 0 || spec.hidden == 0 {
            return Err(QtError::Config(format!("invalid encoder dimensions {spec:?}")));
        }
        let emb = |rng: &mut Rng| word_embedding::<T>(spec.vocab_size, spec.emb_dim, rng);
        Ok(match spec.kind {
            EncoderKind::Bow => Encoder::Bow(BowParams { embedding: emb(rng)? }),
            EncoderKind::Gru => {
                let embedding = emb(rng)?;
                Encoder::Gru(GruParams { cell: GruCell::init(spec.emb_dim, spec.hidden, rng)?, embedding })
            }
            EncoderKind::BiGru => Encoder::BiGru(bigru_init(emb(rng)?, spec.hidden, rng)?),
            EncoderKind::MultiChannel => {
                let table = pretrained.ok_or_else(|| {
                    QtError::Config("multichannel encoder needs a pretrained embedding table".into())
                })?;
                if table.rows() != spec.vocab_size {
                    return Err(QtError::Config(format!(
                        "pretrained table has {} rows for a vocabulary of {}",
                        table.rows(),
                        spec.vocab_size
                    )));
                }
                let trained = bigru_init(emb(rng)?, spec.hidden, rng)?;
                let pretrained = bigru_init(table.clone(), spec.hidden, rng)?;
                Encoder::MultiChannel(MultiChannelParams { trained, pretrained })
            }
        })
    }

    pub fn kind(&self) -> EncoderKind {
        match self {
            Encoder::Bow(_) => EncoderKind::Bow,
            Encoder::Gru(_) => EncoderKind::Gru,
            Encoder::BiGru(_) => EncoderKind::BiGru,
            Encoder::MultiChannel(_) => EncoderKind::MultiChannel,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Encoder::Bow(p) => p.embedding.cols(),
            Encoder::Gru(p) => p.cell.hidden(),
            Encoder::BiGru(p) => 2 * p.fwd.hidden(),
            Encoder::MultiChannel(p) => 2 * p.trained.fwd.hidden() + 2 * p.pretrained.fwd.hidden(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            Encoder::Bow(p) => p.embedding.rows(),
            Encoder::Gru(p) => p.embedding.rows(),
            Encoder::BiGru(p) => p.embedding.rows(),
            Encoder::MultiChannel(p) => p.trained.embedding.rows(),
        }
    }

    pub fn forward(&self, batch: &Minibatch) -> Result<EncoderOutput<T>> {
        let (output, cache) = match self {
            Encoder::Bow(p) => {
                let (o, c) = bow_forward(p, batch)?;
                (o, ForwardCache::Bow(c))
            }
            Encoder::Gru(p) => {
                let (o, c) = gru_forward(p, batch, Direction::Forward)?;
                (o, ForwardCache::Gru(c))
            }
            Encoder::BiGru(p) => {
                let (o, c) = bigru_forward(p, batch)?;
                (o, ForwardCache::BiGru(c))
            }
            Encoder::MultiChannel(p) => {
                let (o, a, b) = multichannel_forward(p, batch)?;
                (o, ForwardCache::MultiChannel(a, b))
            }
        };
        Ok(EncoderOutput { output, cache })
    }

    /// Gradients aligned with [`Encoder::tensors`].
    pub fn backward(&self, cache: &ForwardCache<T>, d_out: &Mat<T>) -> Result<Vec<Grad<T>>> {
        match (self, cache) {
            (Encoder::Bow(_), ForwardCache::Bow(c)) => Ok(vec![Grad::Rows(bow_backward(c, d_out)?)]),
            (Encoder::Gru(p), ForwardCache::Gru(c)) => {
                let (cell, emb) = gru_backward(p, c, d_out)?;
                let mut out = vec![Grad::Rows(emb)];
                out.extend(cell.tensors().into_iter().map(|m| Grad::Dense(m.clone())));
                Ok(out)
            }
            (Encoder::BiGru(p), ForwardCache::BiGru(c)) => {
                let (f, b, e) = bigru_backward(p, c, d_out)?;
                Ok(bigru_grads(f, b, Some(e), p.embedding.cols()))
            }
            (Encoder::MultiChannel(p), ForwardCache::MultiChannel(a, b)) => multichannel_backward(p, (a, b), d_out),
            _ => Err(QtError::Shape("forward cache does not match encoder kind".into())),
        }
    }

    pub fn tensors(&self) -> Vec<NamedTensor<'_, T>> {
        fn push_bigru<'a, T: Real>(out: &mut Vec<NamedTensor<'a, T>>, prefix: &str, p: &'a BiGruParams<T>, frozen_emb: bool) {
            out.push(NamedTensor { name: format!("{prefix}emb"), value: &p.embedding, frozen: frozen_emb });
            for (dir, cell) in [("fwd", &p.fwd), ("bwd", &p.bwd)] {
                for (n, m) in CELL_TENSOR_NAMES.iter().zip(cell.tensors()) {
                    out.push(NamedTensor { name: format!("{prefix}{dir}.{n}"), value: m, frozen: false });
                }
            }
        }
        let mut out = Vec::new();
        match self {
            Encoder::Bow(p) => out.push(NamedTensor { name: "emb".into(), value: &p.embedding, frozen: false }),
            Encoder::Gru(p) => {
                out.push(NamedTensor { name: "emb".into(), value: &p.embedding, frozen: false });
                for (n, m) in CELL_TENSOR_NAMES.iter().zip(p.cell.tensors()) {
                    out.push(NamedTensor { name: n.to_string(), value: m, frozen: false });
                }
            }
            Encoder::BiGru(p) => push_bigru(&mut out, "", p, false),
            Encoder::MultiChannel(p) => {
                push_bigru(&mut out, "trained.", &p.trained, false);
                push_bigru(&mut out, "pretrained.", &p.pretrained, true);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat<T>> {
        fn push_bigru<'a, T: Real>(out: &mut Vec<&'a mut Mat<T>>, p: &'a mut BiGruParams<T>) {
            out.push(&mut p.embedding);
            out.extend(p.fwd.tensors_mut());
            out.extend(p.bwd.tensors_mut());
        }
        let mut out = Vec::new();
        match self {
            Encoder::Bow(p) => out.push(&mut p.embedding),
            Encoder::Gru(p) => {
                out.push(&mut p.embedding);
                out.extend(p.cell.tensors_mut());
            }
            Encoder::BiGru(p) => push_bigru(&mut out, p),
            Encoder::MultiChannel(p) => {
                push_bigru(&mut out, &mut p.trained);
                push_bigru(&mut out, &mut p.pretrained);
            }
        }
        out
    }

    /// Rebuilds an encoder from named tensors (as produced by [`Encoder::tensors`]).
    pub fn assemble(kind: EncoderKind, mut take: impl FnMut(&str) -> Result<Mat<T>>) -> Result<Self> {
        let enc = match kind {
            EncoderKind::Bow => Encoder::Bow(BowParams { embedding: take("emb")? }),
            EncoderKind::Gru => {
                let embedding = take("emb")?;
                Encoder::Gru(GruParams { embedding, cell: cell_from(&mut take, "")? })
            }
            EncoderKind::BiGru => Encoder::BiGru(bigru_from(&mut take, "")?),
            EncoderKind::MultiChannel => Encoder::MultiChannel(MultiChannelParams {
                trained: bigru_from(&mut take, "trained.")?,
                pretrained: bigru_from(&mut take, "pretrained.")?,
            }),
        };
        enc.validate()?;
        Ok(enc)
    }

    fn validate(&self) -> Result<()> {
        let check_bigru = |p: &BiGruParams<T>| -> Result<()> {
            for c in [&p.fwd, &p.bwd] {
                if c.input_dim() != p.embedding.cols() || c.hidden() != p.fwd.hidden() {
                    return Err(shape_err!("bi-GRU cell does not match its embedding"));
                }
                gru_cell(c, &Mat::zeros(1, c.input_dim()), &Mat::zeros(1, c.hidden()))?;
            }
            Ok(())
        };
        match self {
            Encoder::Bow(_) => Ok(()),
            Encoder::Gru(p) => {
                if p.cell.input_dim() != p.embedding.cols() {
                    return Err(shape_err!("GRU cell does not match its embedding"));
                }
                gru_cell(&p.cell, &Mat::zeros(1, p.cell.input_dim()), &Mat::zeros(1, p.cell.hidden())).map(|_| ())
            }
            Encoder::BiGru(p) => check_bigru(p),
            Encoder::MultiChannel(p) => {
                check_bigru(&p.trained)?;
                check_bigru(&p.pretrained)?;
                if p.trained.embedding.rows() != p.pretrained.embedding.rows() {
                    return Err(shape_err!("multichannel embedding tables disagree on vocabulary size"));
                }
                Ok(())
            }
        }
    }
}

fn cell_from<T: Real>(take: &mut impl FnMut(&str) -> Result<Mat<T>>, prefix: &str) -> Result<GruCell<T>> {
    let mut get = |n: &str| take(&format!("{prefix}{n}"));
    Ok(GruCell {
        w_z: get("w_z")?,
        w_r: get("w_r")?,
        w_h: get("w_h")?,
        u_z: get("u_z")?,
        u_r: get("u_r")?,
        u_h: get("u_h")?,
        b_z: get("b_z")?,
        b_r: get("b_r")?,
        b_h: get("b_h")?,
    })
}

fn bigru_from<T: Real>(take: &mut impl FnMut(&str) -> Result<Mat<T>>, prefix: &str) -> Result<BiGruParams<T>> {
    Ok(BiGruParams {
        embedding: take(&format!("{prefix}emb"))?,
        fwd: cell_from(take, &format!("{prefix}fwd."))?,
        bwd: cell_from(take, &format!("{prefix}bwd."))?,
    })
}
