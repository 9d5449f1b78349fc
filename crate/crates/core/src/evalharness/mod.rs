//! Downstream evaluation on frozen sentence vectors.
//!
//! Dataset files are tab-separated: `label<TAB>sentence` for single-sentence
//! classification, `label<TAB>sentence1<TAB>sentence2` for pair
//! classification and `score<TAB>sentence1<TAB>sentence2` for similarity.

mod probe;
mod stats;

pub use probe::{
    argmax_rows, fit_linear_probe, kfold_eval, kfold_partition, select_l2, split_eval, train_linear_probe, CvResult,
    LinearProbe, ProbeFit, ProbeOptions, DEFAULT_L2_GRID,
};
pub use stats::{average_ranks, pearson, spearman};

use std::fmt::Write as _;
use std::str::FromStr;

use crate::embedder::cosine;
use crate::error::{QtError, Result};
use crate::numkern::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Dev,
    Test,
}

/// Feature rows with integer labels in `0..classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub features: Mat<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Option<Vec<SplitTag>>,
}

impl LabeledDataset {
    /// The class count is one more than the largest label, and at least 2.
    pub fn new(features: Mat<f64>, labels: Vec<usize>, split: Option<Vec<SplitTag>>) -> Result<Self> {
        if labels.is_empty() {
            return Err(QtError::Input("empty dataset".into()));
        }
        if labels.len() != features.rows() {
            return Err(QtError::Shape(format!("{} labels for {} feature rows", labels.len(), features.rows())));
        }
        if split.as_ref().is_some_and(|s| s.len() != labels.len()) {
            return Err(QtError::Shape("split tags do not cover every example".into()));
        }
        if !features.is_finite() {
            return Err(QtError::Numeric("features must be finite".into()));
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
        Ok(LabeledDataset { features, labels, classes, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }

    /// Rows `idx` in that order; keeps the class count.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(QtError::Input("empty subset".into()));
        }
        let rows: Vec<&[f64]> = idx.iter().map(|&i| self.features.row(i)).collect();
        Ok(LabeledDataset {
            features: Mat::from_rows(&rows)?,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            split: self.split.as_ref().map(|s| idx.iter().map(|&i| s[i]).collect()),
        })
    }
}

/// Sentence vector pairs with a per-pair label or similarity score.
#[derive(Clone, Debug, PartialEq)]
pub struct PairDataset {
    pub u: Mat<f64>,
    pub v: Mat<f64>,
    pub targets: Vec<f64>,
}

impl PairDataset {
    pub fn new(u: Mat<f64>, v: Mat<f64>, targets: Vec<f64>) -> Result<Self> {
        if u.shape() != v.shape() || u.rows() != targets.len() {
            return Err(QtError::Shape(format!("pairs {:?} / {:?} with {} targets", u.shape(), v.shape(), targets.len())));
        }
        if !u.is_finite() || !v.is_finite() || targets.iter().any(|t| !t.is_finite()) {
            return Err(QtError::Numeric("pair data must be finite".into()));
        }
        Ok(PairDataset { u, v, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Pair features with the targets read as class labels.
    pub fn to_labeled(&self, mode: PairMode) -> Result<LabeledDataset> {
        let rows = (0..self.len())
            .map(|i| pair_features(self.u.row(i), self.v.row(i), mode))
            .collect::<Result<Vec<_>>>()?;
        let labels = self
            .targets
            .iter()
            .map(|&t| {
                if t >= 0.0 && t.fract() == 0.0 {
                    Ok(t as usize)
                } else {
                    Err(QtError::Input(format!("pair label {t} is not a class index")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        LabeledDataset::new(Mat::from_rows(&rows)?, labels, None)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PairMode {
    /// `[|u - v| ; u * v]`
    #[default]
    Heuristic,
    /// `[u ; v ; |u - v| ; u * v]`
    Concat,
}

impl FromStr for PairMode {
    type Err = QtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heuristic" => Ok(PairMode::Heuristic),
            "concat" => Ok(PairMode::Concat),
            _ => Err(QtError::Config(format!("unknown pair mode {s:?}"))),
        }
    }
}

pub fn pair_features(u: &[f64], v: &[f64], mode: PairMode) -> Result<Vec<f64>> {
    if u.len() != v.len() {
        return Err(QtError::Shape(format!("pair of dimension {} and {}", u.len(), v.len())));
    }
    let mut out = Vec::with_capacity(4 * u.len());
    if mode == PairMode::Concat {
        out.extend_from_slice(u);
        out.extend_from_slice(v);
    }
    out.extend(u.iter().zip(v).map(|(a, b)| (a - b).abs()));
    out.extend(u.iter().zip(v).map(|(a, b)| a * b));
    Ok(out)
}

/// Pearson and Spearman correlation between pair cosines and target scores.
pub fn similarity_correlation(pairs: &PairDataset) -> Result<(f64, f64)> {
    let cos = (0..pairs.len()).map(|i| cosine(pairs.u.row(i), pairs.v.row(i))).collect::<Result<Vec<_>>>()?;
    Ok((pearson(&cos, &pairs.targets)?, spearman(&cos, &pairs.targets)?))
}

/// Argmax of the validation-score weighted sum of per-model log-probabilities.
pub fn ensemble_predict(log_probs: &[Mat<f64>], val_scores: &[f64]) -> Result<Vec<usize>> {
    let first = log_probs.first().ok_or_else(|| QtError::Input("no models to ensemble".into()))?;
    if log_probs.len() != val_scores.len() {
        return Err(QtError::Shape(format!("{} models, {} validation scores", log_probs.len(), val_scores.len())));
    }
    if val_scores.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(QtError::Param("validation scores must be positive".into()));
    }
    if log_probs.iter().any(|m| m.shape() != first.shape()) {
        return Err(QtError::Shape("model predictions disagree on examples or classes".into()));
    }
    let total: f64 = val_scores.iter().sum();
    let mut acc = Mat::zeros(first.rows(), first.cols());
    for (m, s) in log_probs.iter().zip(val_scores) {
        let mut w = m.clone();
        w.scale(s / total);
        acc.add_assign(&w)?;
    }
    Ok(argmax_rows(&acc))
}

fn fields(line: &str, n: usize, line_no: usize) -> Result<Vec<&str>> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != n || f[1..].iter().any(|s| s.split_whitespace().next().is_none()) {
        return Err(QtError::Parse { line: line_no, msg: format!("expected {n} tab-separated nonempty fields") });
    }
    Ok(f)
}

fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// `label<TAB>sentence` lines.
pub fn parse_classification_tsv(text: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let rows: Vec<_> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f = fields(l, 2, i + 1)?;
            let y = f[0].trim().parse().map_err(|_| QtError::Parse { line: i + 1, msg: "bad label".into() })?;
            Ok((y, tokens(f[1])))
        })
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Err(QtError::Input("empty dataset file".into()));
    }
    Ok(rows)
}

/// `target<TAB>sentence1<TAB>sentence2` lines; the target is a label or a score.
pub fn parse_pair_tsv(text: &str) -> Result<Vec<(f64, Vec<String>, Vec<String>)>> {
    let rows: Vec<_> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f = fields(l, 3, i + 1)?;
            let t: f64 = f[0].trim().parse().map_err(|_| QtError::Parse { line: i + 1, msg: "bad target".into() })?;
            if !t.is_finite() {
                return Err(QtError::Parse { line: i + 1, msg: "target must be finite".into() });
            }
            Ok((t, tokens(f[1]), tokens(f[2])))
        })
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Err(QtError::Input("empty dataset file".into()));
    }
    Ok(rows)
}

/// One line per example of space-separated class log-probabilities.
pub fn format_log_probs(m: &Mat<f64>) -> String {
    let mut s = String::new();
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}

pub fn parse_log_probs(text: &str) -> Result<Mat<f64>> {
    let rows = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| QtError::Parse { line: i + 1, msg: format!("bad value {v:?}") }))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(QtError::Input("empty prediction file".into()));
    }
    if rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(QtError::Format("prediction rows differ in class count".into()));
    }
    Mat::from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_feature_arithmetic() {
        assert_eq!(pair_features(&[1.0, 2.0], &[3.0, -1.0], PairMode::Heuristic).unwrap(), [2.0, 3.0, 3.0, -2.0]);
        assert_eq!(
            pair_features(&[1.0, 2.0], &[3.0, -1.0], PairMode::Concat).unwrap(),
            [1.0, 2.0, 3.0, -1.0, 2.0, 3.0, 3.0, -2.0]
        );
        let u = [0.5, -3.0, 2.0];
        assert_eq!(pair_features(&u, &u, PairMode::Heuristic).unwrap(), [0.0, 0.0, 0.0, 0.25, 9.0, 4.0]);
        let v = [1.5, 0.25, -7.0];
        assert_eq!(pair_features(&u, &v, PairMode::Heuristic).unwrap(), pair_features(&v, &u, PairMode::Heuristic).unwrap());
        assert!(matches!(pair_features(&u, &[1.0], PairMode::Heuristic), Err(QtError::Shape(_))));
    }

    #[test]
    fn ensemble_hand_case() {
        // weights 0.75 / 0.25
        // ex0: 0.75*[ln .6, ln .4] + 0.25*[ln .1, ln .9] = [-0.9588, -0.7136] -> class 1
        // ex1: 0.75*[ln .9, ln .1] + 0.25*[ln .3, ln .7] = [-0.3800, -1.8161] -> class 0
        let a = Mat::from_rows(&[[0.6f64.ln(), 0.4f64.ln()], [0.9f64.ln(), 0.1f64.ln()]]).unwrap();
        let b = Mat::from_rows(&[[0.1f64.ln(), 0.9f64.ln()], [0.3f64.ln(), 0.7f64.ln()]]).unwrap();
        assert_eq!(ensemble_predict(&[a.clone(), b.clone()], &[3.0, 1.0]).unwrap(), [1, 0]);
        assert_eq!(ensemble_predict(&[a.clone(), b.clone()], &[30.0, 10.0]).unwrap(), [1, 0]);
        assert_eq!(ensemble_predict(std::slice::from_ref(&a), &[0.7]).unwrap(), argmax_rows(&a));
        assert_eq!(ensemble_predict(&[b.clone(), b.clone()], &[0.9, 0.1]).unwrap(), argmax_rows(&b));
        assert!(matches!(ensemble_predict(&[a.clone()], &[0.0]), Err(QtError::Param(_))));
        assert!(matches!(ensemble_predict(&[a, Mat::zeros(3, 2)], &[1.0, 1.0]), Err(QtError::Shape(_))));
    }

    #[test]
    fn similarity_affine_cosines() {
        let u = Mat::from_rows(&[[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]).unwrap();
        let v = Mat::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 0.2]]).unwrap();
        let cos: Vec<f64> = (0..4).map(|i| cosine(u.row(i), v.row(i)).unwrap()).collect();
        let scores: Vec<f64> = cos.iter().map(|c| 2.5 * c + 2.5).collect();
        let (p, s) = similarity_correlation(&PairDataset::new(u, v, scores).unwrap()).unwrap();
        assert!((p - 1.0).abs() < 1e-10 && (s - 1.0).abs() < 1e-10);
    }

    #[test]
    fn tsv_loaders() {
        let c = parse_classification_tsv("1\tgood movie\n\n0\tbad  one\n").unwrap();
        assert_eq!(c, vec![(1, tokens("good movie")), (0, tokens("bad one"))]);
        assert!(matches!(parse_classification_tsv("1\tok\nx\tno\n"), Err(QtError::Parse { line: 2, .. })));
        assert!(matches!(parse_classification_tsv("1\t \n"), Err(QtError::Parse { line: 1, .. })));
        let p = parse_pair_tsv("3.5\ta b\tc\n").unwrap();
        assert_eq!(p[0].0, 3.5);
        assert!(parse_pair_tsv("1\tonly one\n").is_err());
        assert!(parse_pair_tsv("").is_err());
    }

    #[test]
    fn log_prob_files_round_trip() {
        let m = Mat::from_rows(&[[-0.1, -2.3], [-1e-9, -20.5]]).unwrap();
        assert_eq!(parse_log_probs(&format_log_probs(&m)).unwrap(), m);
        assert!(parse_log_probs("0 1\n0\n").is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(LabeledDataset::new(Mat::zeros(2, 2), vec![0], None).is_err());
        assert!(LabeledDataset::new(Mat::zeros(2, 2), vec![0, 1], Some(vec![SplitTag::Train])).is_err());
        let d = LabeledDataset::new(Mat::zeros(3, 1), vec![0, 2, 2], None).unwrap();
        assert_eq!(d.class_counts(), [1, 0, 2]);
        let pairs = PairDataset::new(Mat::zeros(2, 2), Mat::zeros(2, 2), vec![0.5, 1.0]).unwrap();
        assert!(pairs.to_labeled(PairMode::Heuristic).is_err());
    }
}
