//! C ABI over `qt-core`: load checkpoints, embed sentences, and query
//! embedding collections.
//!
//! Every fallible function returns a [`QtStatus`]. On failure the message is
//! available from [`qt_last_error`] until the next call on the same thread.
//! Handles are opaque and must be released with their matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use qt_core::embedder::{analogy_query, embed_sentences, import_embeddings, nearest_neighbors, EmbeddingCollection};
use qt_core::evalharness::{pearson, spearman};
use qt_core::trainer::load_checkpoint;
use qt_core::QtError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Shape = 3,
    Param = 4,
    Input = 5,
    Config = 6,
    Degenerate = 7,
    Numeric = 8,
    Parse = 9,
    Format = 10,
    Io = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

/// A trained sentence encoder.
pub struct QtModel {
    inner: qt_core::trainer::QtModel<f32>,
}

/// Sentence vectors with `u64` ids.
pub struct QtEmbeddings {
    inner: EmbeddingCollection,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(QtStatus, String);

impl From<QtError> for Failure {
    fn from(e: QtError) -> Self {
        let status = match &e {
            QtError::Shape(_) => QtStatus::Shape,
            QtError::Param(_) => QtStatus::Param,
            QtError::Input(_) => QtStatus::Input,
            QtError::Config(_) => QtStatus::Config,
            QtError::Degenerate(_) => QtStatus::Degenerate,
            QtError::Numeric(_) => QtStatus::Numeric,
            QtError::Parse { .. } => QtStatus::Parse,
            QtError::Format(_) => QtStatus::Format,
            QtError::Io(_) => QtStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> QtStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QtStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            QtStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(QtStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    non_null(p, what)?;
    CStr::from_ptr(p).to_str().map_err(|_| Failure(QtStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn sentences_arg(sentences: *const *const c_char, n: usize) -> Result<Vec<Vec<&'static str>>, Failure> {
    slice_arg(sentences, n, "sentences")?
        .iter()
        .map(|&s| Ok(str_arg(s, "sentence")?.split_whitespace().collect()))
        .collect()
}

unsafe fn write_hits(
    hits: &[(u64, f64)],
    out_ids: *mut u64,
    out_scores: *mut f64,
    out_count: *mut usize,
) -> Result<(), Failure> {
    non_null(out_ids, "out_ids")?;
    non_null(out_scores, "out_scores")?;
    non_null(out_count, "out_count")?;
    for (i, &(id, score)) in hits.iter().enumerate() {
        *out_ids.add(i) = id;
        *out_scores.add(i) = score;
    }
    *out_count = hits.len();
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn qt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qt_model_load(path: *const c_char, out: *mut *mut QtModel) -> QtStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = str_arg(path, "path")?;
        let ckpt = load_checkpoint(Path::new(path))?;
        *out = Box::into_raw(Box::new(QtModel { inner: ckpt.model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`qt_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qt_model_free(model: *mut QtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Sentence-vector dimension of the model.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn qt_model_dim(model: *const QtModel, out: *mut usize) -> QtStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        *out = (*model).inner.embedding_dim();
        Ok(())
    })
}

/// Encodes `n` whitespace-tokenized sentences into a new collection with ids
/// `0..n`.
///
/// # Safety
/// `sentences` must point to `n` NUL-terminated strings; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qt_model_embed(
    model: *const QtModel,
    sentences: *const *const c_char,
    n: usize,
    out: *mut *mut QtEmbeddings,
) -> QtStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        let sents = sentences_arg(sentences, n)?;
        let coll = embed_sentences(&(*model).inner, &sents, 64)?;
        *out = Box::into_raw(Box::new(QtEmbeddings { inner: coll }));
        Ok(())
    })
}

/// Reads an exported embedding file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qt_embeddings_load(path: *const c_char, out: *mut *mut QtEmbeddings) -> QtStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = str_arg(path, "path")?;
        *out = Box::into_raw(Box::new(QtEmbeddings { inner: import_embeddings(Path::new(path))? }));
        Ok(())
    })
}

/// # Safety
/// `emb` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qt_embeddings_free(emb: *mut QtEmbeddings) {
    if !emb.is_null() {
        drop(Box::from_raw(emb));
    }
}

/// Number of vectors and their dimension.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn qt_embeddings_shape(
    emb: *const QtEmbeddings,
    out_len: *mut usize,
    out_dim: *mut usize,
) -> QtStatus {
    guard(|| {
        non_null(emb, "emb")?;
        non_null(out_len, "out_len")?;
        non_null(out_dim, "out_dim")?;
        *out_len = (*emb).inner.len();
        *out_dim = (*emb).inner.dim();
        Ok(())
    })
}

/// Copies the vector for `id` into `out`, which holds `cap` doubles.
///
/// # Safety
/// `emb` must be valid and `out` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn qt_embeddings_vector(emb: *const QtEmbeddings, id: u64, out: *mut f64, cap: usize) -> QtStatus {
    guard(|| {
        non_null(emb, "emb")?;
        non_null(out, "out")?;
        let v = (*emb).inner.vector(id)?;
        if cap < v.len() {
            return Err(Failure(QtStatus::BufferTooSmall, format!("need {} doubles, got {cap}", v.len())));
        }
        ptr::copy_nonoverlapping(v.as_ptr(), out, v.len());
        Ok(())
    })
}

/// Top `k` ids by cosine to `query`, best first. The output arrays hold at
/// least `k` entries; `out_count` receives how many were written.
///
/// # Safety
/// `query` must hold `dim` doubles and the output arrays `k` entries.
#[no_mangle]
pub unsafe extern "C" fn qt_embeddings_nearest(
    emb: *const QtEmbeddings,
    query: *const f64,
    dim: usize,
    k: usize,
    out_ids: *mut u64,
    out_scores: *mut f64,
    out_count: *mut usize,
) -> QtStatus {
    guard(|| {
        non_null(emb, "emb")?;
        let q = slice_arg(query, dim, "query")?;
        let hits = nearest_neighbors(&(*emb).inner, q, k)?;
        write_hits(&hits, out_ids, out_scores, out_count)
    })
}

/// Top `k` ids by cosine to `c + b - a`, using the stored vectors of ids
/// `a`, `b` and `c`.
///
/// # Safety
/// The output arrays must hold `k` entries.
#[no_mangle]
pub unsafe extern "C" fn qt_embeddings_analogy(
    emb: *const QtEmbeddings,
    a: u64,
    b: u64,
    c: u64,
    k: usize,
    out_ids: *mut u64,
    out_scores: *mut f64,
    out_count: *mut usize,
) -> QtStatus {
    guard(|| {
        non_null(emb, "emb")?;
        let coll = &(*emb).inner;
        let hits = analogy_query(coll, coll.vector(a)?, coll.vector(b)?, coll.vector(c)?, k)?;
        write_hits(&hits, out_ids, out_scores, out_count)
    })
}

/// Pearson correlation of two length-`n` series.
///
/// # Safety
/// `x` and `y` must hold `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qt_pearson(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> QtStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = pearson(slice_arg(x, n, "x")?, slice_arg(y, n, "y")?)?;
        Ok(())
    })
}

/// Spearman rank correlation of two length-`n` series.
///
/// # Safety
/// `x` and `y` must hold `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qt_spearman(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> QtStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = spearman(slice_arg(x, n, "x")?, slice_arg(y, n, "y")?)?;
        Ok(())
    })
}
