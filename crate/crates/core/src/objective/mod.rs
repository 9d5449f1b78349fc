//! In-batch context classification losses.
//!
//! Every sentence of a minibatch is a candidate for every other sentence.
//! For a source `i` and context offset `o`, the target is candidate `i + o`;
//! targets falling outside the batch are skipped. The source itself is
//! always masked out of its own candidate pool.

use std::fmt;
use std::str::FromStr;

use crate::error::{shape_err, QtError, Result};
use crate::numkern::{sigmoid, softmax_rows, softplus, Mat, Real};

/// Relative positions of the sentences to predict.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextConfig {
    offsets: Vec<isize>,
}

impl Default for ContextConfig {
    fn default() -> Self {
        ContextConfig { offsets: vec![-1, 1] }
    }
}

impl ContextConfig {
    pub fn new(mut offsets: Vec<isize>) -> Result<Self> {
        offsets.sort_unstable();
        offsets.dedup();
        if offsets.is_empty() || offsets.contains(&0) {
            return Err(QtError::Config("context offsets must be nonempty and exclude 0".into()));
        }
        Ok(ContextConfig { offsets })
    }

    /// A window of `size` sentences centred on the source: size 3 predicts
    /// the previous and next sentence.
    pub fn from_window(size: usize) -> Result<Self> {
        if size < 3 || size.is_multiple_of(2) {
            return Err(QtError::Config(format!("context size must be odd and >= 3, got {size}")));
        }
        let half = (size as isize - 1) / 2;
        Self::new((-half..=half).filter(|&o| o != 0).collect())
    }

    pub fn offsets(&self) -> &[isize] {
        &self.offsets
    }

    /// `2 * max|offset| + 1` for symmetric configs.
    pub fn window_size(&self) -> usize {
        2 * self.offsets.iter().map(|o| o.unsigned_abs()).max().unwrap_or(0) + 1
    }
}

/// Candidate scores `S[i][j] = f(s_i)·g(s_j)` with a mask of excluded entries.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix<T> {
    scores: Mat<T>,
    mask: Vec<bool>,
}

impl<T: Real> ScoreMatrix<T> {
    /// Square scores with the diagonal masked.
    pub fn new(scores: Mat<T>) -> Result<Self> {
        let b = scores.rows();
        if scores.cols() != b {
            return Err(shape_err!("score matrix must be square, got {:?}", scores.shape()));
        }
        if b < 2 {
            return Err(QtError::Degenerate("a candidate pool needs at least 2 sentences".into()));
        }
        let mask = (0..b * b).map(|k| k / b == k % b).collect();
        Ok(ScoreMatrix { scores, mask })
    }

    /// Additional entries to mask (the diagonal stays masked).
    pub fn with_mask(scores: Mat<T>, extra: &[(usize, usize)]) -> Result<Self> {
        let mut s = Self::new(scores)?;
        let b = s.size();
        for &(i, j) in extra {
            if i >= b || j >= b {
                return Err(shape_err!("mask entry ({i}, {j}) outside {b}x{b}"));
            }
            s.mask[i * b + j] = true;
        }
        Ok(s)
    }

    pub fn size(&self) -> usize {
        self.scores.rows()
    }

    pub fn scores(&self) -> &Mat<T> {
        &self.scores
    }

    pub fn is_masked(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.size() + j]
    }

    /// Scores with masked entries set to `-inf`.
    pub fn masked(&self) -> Mat<T> {
        let mut m = self.scores.clone();
        for (x, &masked) in m.data_mut().iter_mut().zip(&self.mask) {
            if masked {
                *x = T::neg_infinity();
            }
        }
        m
    }

    /// `(source, target)` pairs the objective predicts.
    pub fn predictions(&self, ctx: &ContextConfig) -> Result<Vec<(usize, usize)>> {
        let b = self.size() as isize;
        let preds: Vec<(usize, usize)> = (0..b)
            .flat_map(|i| ctx.offsets().iter().map(move |&o| (i, i + o)))
            .filter(|&(_, t)| (0..b).contains(&t))
            .map(|(i, t)| (i as usize, t as usize))
            .filter(|&(i, t)| !self.is_masked(i, t))
            .collect();
        if preds.is_empty() {
            return Err(QtError::Degenerate("no source/target pair fits in the batch".into()));
        }
        Ok(preds)
    }
}

/// `S = F·Gᵀ` with the diagonal masked.
pub fn score_all<T: Real>(f: &Mat<T>, g: &Mat<T>) -> Result<ScoreMatrix<T>> {
    if f.shape() != g.shape() {
        return Err(shape_err!("source encodings {:?} vs candidate encodings {:?}", f.shape(), g.shape()));
    }
    ScoreMatrix::new(f.matmul_nt(g)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    /// Mean loss per prediction, in nats.
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: usize,
}

/// Fraction of predictions whose unique row argmax is the target. Ties count
/// as wrong.
pub fn context_accuracy<T: Real>(s: &ScoreMatrix<T>, ctx: &ContextConfig) -> Result<f64> {
    let preds = s.predictions(ctx)?;
    let b = s.size();
    let argmax: Vec<Option<usize>> = (0..b)
        .map(|i| {
            let mut best: Option<(usize, T)> = None;
            let mut tied = false;
            for j in (0..b).filter(|&j| !s.is_masked(i, j)) {
                let v = s.scores.get(i, j);
                match best {
                    Some((_, bv)) if v < bv => {}
                    Some((_, bv)) if v == bv => tied = true,
                    _ => {
                        best = Some((j, v));
                        tied = false;
                    }
                }
            }
            best.filter(|_| !tied).map(|(j, _)| j)
        })
        .collect();
    let correct = preds.iter().filter(|&&(i, t)| argmax[i] == Some(t)).count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Softmax cross-entropy over each source row's candidate pool, averaged over
/// predictions. Returns the report and `dLoss/dS`.
pub fn qt_loss<T: Real>(s: &ScoreMatrix<T>, ctx: &ContextConfig) -> Result<(LossReport, Mat<T>)> {
    let preds = s.predictions(ctx)?;
    let masked = s.masked();
    let p = softmax_rows(&masked)?;
    let b = s.size();

    let lse: Vec<f64> = (0..b)
        .map(|i| {
            let row = masked.row(i);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, x| m.max(x.as_f64()));
            max + row.iter().map(|x| (x.as_f64() - max).exp()).sum::<f64>().ln()
        })
        .collect();

    let n = preds.len() as f64;
    let inv = T::of(1.0 / n);
    let mut loss = 0.0;
    let mut ds = Mat::zeros(b, b);
    for &(i, t) in &preds {
        loss += lse[i] - s.scores.get(i, t).as_f64();
        for j in 0..b {
            let g = ds.get(i, j) + p.get(i, j) * inv;
            ds.set(i, j, g);
        }
        ds.set(i, t, ds.get(i, t) - inv);
    }
    let accuracy = context_accuracy(s, ctx)?;
    Ok((LossReport { loss: loss / n, accuracy, predictions: preds.len() }, ds))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AltObjective {
    /// Independent logistic classification of every candidate entry.
    Binary,
    /// Pairwise hinge with the given margin.
    Margin(f64),
}

/// The binary kind labels every unmasked entry of a row with a target as
/// positive (a target) or negative and averages the logistic loss over those
/// entries. The margin kind sums `max(0, m − S[i][t] + S[i][j])` over
/// non-target candidates `j` and averages over predictions.
pub fn alt_context_loss<T: Real>(
    s: &ScoreMatrix<T>,
    ctx: &ContextConfig,
    kind: AltObjective,
) -> Result<(LossReport, Mat<T>)> {
    let preds = s.predictions(ctx)?;
    let b = s.size();
    let mut ds = Mat::zeros(b, b);
    let mut loss = 0.0;
    let count = match kind {
        AltObjective::Binary => {
            let mut targets = vec![Vec::new(); b];
            for &(i, t) in &preds {
                targets[i].push(t);
            }
            let mut entries = 0usize;
            for (i, ts) in targets.iter().enumerate().filter(|(_, ts)| !ts.is_empty()) {
                for j in (0..b).filter(|&j| !s.is_masked(i, j)) {
                    let x = s.scores.get(i, j);
                    let positive = ts.contains(&j);
                    loss += if positive { softplus(-x) } else { softplus(x) }.as_f64();
                    let y = if positive { T::one() } else { T::zero() };
                    ds.set(i, j, sigmoid(x) - y);
                    entries += 1;
                }
            }
            entries
        }
        AltObjective::Margin(m) => {
            if !(m > 0.0) {
                return Err(QtError::Param(format!("margin must be positive, got {m}")));
            }
            let mt = T::of(m);
            for &(i, t) in &preds {
                let st = s.scores.get(i, t);
                for j in (0..b).filter(|&j| j != t && !s.is_masked(i, j)) {
                    let h = mt - st + s.scores.get(i, j);
                    if h > T::zero() {
                        loss += h.as_f64();
                        ds.set(i, j, ds.get(i, j) + T::one());
                        ds.set(i, t, ds.get(i, t) - T::one());
                    }
                }
            }
            preds.len()
        }
    };
    ds.scale(T::of(1.0 / count as f64));
    let accuracy = context_accuracy(s, ctx)?;
    Ok((LossReport { loss: loss / count as f64, accuracy, predictions: preds.len() }, ds))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ObjectiveKind {
    Qt,
    Binary,
    Margin,
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectiveKind::Qt => "qt",
            ObjectiveKind::Binary => "binary",
            ObjectiveKind::Margin => "margin",
        })
    }
}

impl FromStr for ObjectiveKind {
    type Err = QtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qt" => Ok(ObjectiveKind::Qt),
            "binary" => Ok(ObjectiveKind::Binary),
            "margin" => Ok(ObjectiveKind::Margin),
            _ => Err(QtError::Config(format!("unknown objective {s:?}"))),
        }
    }
}

/// Dispatches to [`qt_loss`] or [`alt_context_loss`].
pub fn evaluate_objective<T: Real>(
    s: &ScoreMatrix<T>,
    ctx: &ContextConfig,
    kind: ObjectiveKind,
    margin: f64,
) -> Result<(LossReport, Mat<T>)> {
    match kind {
        ObjectiveKind::Qt => qt_loss(s, ctx),
        ObjectiveKind::Binary => alt_context_loss(s, ctx, AltObjective::Binary),
        ObjectiveKind::Margin => alt_context_loss(s, ctx, AltObjective::Margin(margin)),
    }
}

/// Backpropagates `dS` through `S = F·Gᵀ`: returns `(dF, dG)`.
pub fn score_backward<T: Real>(ds: &Mat<T>, f: &Mat<T>, g: &Mat<T>) -> Result<(Mat<T>, Mat<T>)> {
    Ok((ds.matmul(g)?, ds.matmul_tn(f)?))
}
