use super::LabeledDataset;
use crate::error::{QtError, Result};
use crate::numkern::{init, softmax_rows, InitScheme, Mat, Rng};

pub const DEFAULT_L2_GRID: [f64; 5] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];

/// Softmax regression `p(c | x) = softmax(W x + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    pub weights: Mat<f64>,
    pub bias: Vec<f64>,
    pub l2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeOptions {
    pub lr: f64,
    /// Stop once the gradient norm falls below this.
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions { lr: 0.05, tolerance: 1e-5, max_iters: 3000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeFit {
    pub probe: LinearProbe,
    /// Objective before each accepted step, then the final value.
    pub losses: Vec<f64>,
    pub converged: bool,
}

impl LinearProbe {
    pub fn classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn logits(&self, x: &Mat<f64>) -> Result<Mat<f64>> {
        let mut z = x.matmul_nt(&self.weights)?;
        for i in 0..z.rows() {
            for (v, b) in z.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(z)
    }

    pub fn log_probs(&self, x: &Mat<f64>) -> Result<Mat<f64>> {
        let mut z = self.logits(x)?;
        for i in 0..z.rows() {
            let row = z.row_mut(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        Ok(z)
    }

    pub fn predict(&self, x: &Mat<f64>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(x)?))
    }

    pub fn accuracy(&self, data: &LabeledDataset) -> Result<f64> {
        let pred = self.predict(&data.features)?;
        Ok(pred.iter().zip(&data.labels).filter(|(p, y)| p == y).count() as f64 / pred.len() as f64)
    }
}

/// First index of each row's maximum.
pub fn argmax_rows(m: &Mat<f64>) -> Vec<usize> {
    (0..m.rows())
        .map(|i| {
            m.row(i).iter().enumerate().fold(0, |best, (j, &v)| if v > m.get(i, best) { j } else { best })
        })
        .collect()
}

/// Mean cross-entropy plus `l2/2 ||W||²`, and its gradient.
fn objective(x: &Mat<f64>, y: &[usize], w: &Mat<f64>, b: &[f64], l2: f64) -> Result<(f64, Mat<f64>, Vec<f64>)> {
    let probe = LinearProbe { weights: w.clone(), bias: b.to_vec(), l2 };
    let z = probe.logits(x)?;
    let mut p = softmax_rows(&z)?;
    let n = x.rows() as f64;
    let mut loss = 0.0;
    for (i, &c) in y.iter().enumerate() {
        let row = z.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        loss += max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() - row[c];
        p.set(i, c, p.get(i, c) - 1.0);
    }
    p.scale(1.0 / n);
    let mut dw = p.matmul_tn(x)?;
    let mut reg = w.clone();
    reg.scale(l2);
    dw.add_assign(&reg)?;
    let db = p.col_sums().into_data();
    Ok((loss / n + 0.5 * l2 * w.frobenius_sq(), dw, db))
}

/// Full-batch Adam. A step that would raise the objective is retried with
/// the step size halved, so accepted losses never increase.
pub fn fit_linear_probe(data: &LabeledDataset, l2: f64, seed: u64, opts: ProbeOptions) -> Result<ProbeFit> {
    if !(l2 >= 0.0) || !l2.is_finite() {
        return Err(QtError::Param(format!("l2 must be a finite non-negative number, got {l2}")));
    }
    let present = data.class_counts().iter().filter(|&&n| n > 0).count();
    if present < 2 {
        return Err(QtError::Degenerate("a probe needs at least two classes in its training data".into()));
    }
    let (c, d) = (data.classes, data.features.cols());
    let mut rng = Rng::new(seed);
    let mut w: Mat<f64> = init(c, d, InitScheme::Uniform(-0.01, 0.01), &mut rng)?;
    let mut b = vec![0.0; c];
    let (beta1, beta2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut m = vec![0.0; c * d + c];
    let mut v = vec![0.0; c * d + c];

    let (mut loss, mut dw, mut db) = objective(&data.features, &data.labels, &w, &b, l2)?;
    let mut losses = vec![loss];
    let mut converged = false;
    for t in 1..=opts.max_iters {
        let grad: Vec<f64> = dw.data().iter().chain(&db).copied().collect();
        if grad.iter().map(|g| g * g).sum::<f64>().sqrt() < opts.tolerance {
            converged = true;
            break;
        }
        let (bc1, bc2) = (1.0 - beta1.powi(t as i32), 1.0 - beta2.powi(t as i32));
        let dir: Vec<f64> = grad
            .iter()
            .enumerate()
            .map(|(k, &g)| {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                (m[k] / bc1) / ((v[k] / bc2).sqrt() + eps)
            })
            .collect();

        let mut lr = opts.lr;
        let mut accepted = None;
        for _ in 0..40 {
            let mut w2 = w.clone();
            for (p, s) in w2.data_mut().iter_mut().zip(&dir) {
                *p -= lr * s;
            }
            let b2: Vec<f64> = b.iter().zip(&dir[c * d..]).map(|(p, s)| p - lr * s).collect();
            let next = objective(&data.features, &data.labels, &w2, &b2, l2)?;
            if next.0 <= loss {
                accepted = Some((w2, b2, next));
                break;
            }
            lr *= 0.5;
        }
        let Some((w2, b2, next)) = accepted else {
            converged = true;
            break;
        };
        w = w2;
        b = b2;
        (loss, dw, db) = next;
        losses.push(loss);
    }
    if !w.is_finite() {
        return Err(QtError::Numeric("probe weights diverged".into()));
    }
    Ok(ProbeFit { probe: LinearProbe { weights: w, bias: b, l2 }, losses, converged })
}

pub fn train_linear_probe(data: &LabeledDataset, l2: f64, seed: u64) -> Result<LinearProbe> {
    Ok(fit_linear_probe(data, l2, seed, ProbeOptions::default())?.probe)
}

/// Seeded partition of `0..n` into `k` folds whose sizes differ by at most one.
pub fn kfold_partition(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(QtError::Config(format!("cannot split {n} examples into {k} folds")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut perm);
    let mut folds = vec![Vec::new(); k];
    for (pos, i) in perm.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    Ok(folds)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvResult {
    pub mean: f64,
    pub std: f64,
    pub fold_accuracies: Vec<f64>,
    pub chosen_l2: Vec<f64>,
    /// Each example's class log-probabilities from the fold that held it out.
    pub log_probs: Mat<f64>,
}

/// Picks the grid value with the best accuracy on a held-out tenth of `train`.
/// Ties go to the earlier grid entry.
pub fn select_l2(train: &LabeledDataset, grid: &[f64], seed: u64) -> Result<f64> {
    if grid.is_empty() {
        return Err(QtError::Config("empty l2 grid".into()));
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let mut idx: Vec<usize> = (0..train.len()).collect();
    Rng::new(seed).shuffle(&mut idx);
    let n_dev = (train.len() / 10).max(1);
    let (dev_idx, fit_idx) = idx.split_at(n_dev);
    let (fit, dev) = (train.subset(fit_idx)?, train.subset(dev_idx)?);
    let mut best = (f64::NEG_INFINITY, grid[0]);
    for &l2 in grid {
        let acc = train_linear_probe(&fit, l2, seed)?.accuracy(&dev)?;
        if acc > best.0 {
            best = (acc, l2);
        }
    }
    Ok(best.1)
}

/// k-fold cross-validated test accuracy with per-fold l2 selection.
pub fn kfold_eval(data: &LabeledDataset, k: usize, grid: &[f64], seed: u64) -> Result<CvResult> {
    let folds = kfold_partition(data.len(), k, seed)?;
    let mut accs = Vec::with_capacity(k);
    let mut chosen = Vec::with_capacity(k);
    let mut log_probs = Mat::zeros(data.len(), data.classes);
    for (f, test_idx) in folds.iter().enumerate() {
        let train_idx: Vec<usize> =
            folds.iter().enumerate().filter(|&(g, _)| g != f).flat_map(|(_, idx)| idx.iter().copied()).collect();
        let (train, test) = (data.subset(&train_idx)?, data.subset(test_idx)?);
        let fold_seed = Rng::new(seed).fork(f as u64 + 1).next_u64();
        let l2 = select_l2(&train, grid, fold_seed)?;
        let probe = train_linear_probe(&train, l2, fold_seed)?;
        accs.push(probe.accuracy(&test)?);
        let lp = probe.log_probs(&test.features)?;
        for (r, &i) in test_idx.iter().enumerate() {
            log_probs.row_mut(i).copy_from_slice(lp.row(r));
        }
        chosen.push(l2);
    }
    let mean = accs.iter().sum::<f64>() / k as f64;
    let std = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / k as f64).sqrt();
    Ok(CvResult { mean, std, fold_accuracies: accs, chosen_l2: chosen, log_probs })
}

/// Train on the predefined train split, pick l2 on dev (or an inner split of
/// train when there is no dev), report test accuracy.
pub fn split_eval(data: &LabeledDataset, grid: &[f64], seed: u64) -> Result<(f64, f64)> {
    use super::SplitTag;
    let tags = data.split.as_ref().ok_or_else(|| QtError::Config("dataset has no predefined split".into()))?;
    let pick = |t: SplitTag| tags.iter().enumerate().filter(|&(_, &s)| s == t).map(|(i, _)| i).collect::<Vec<_>>();
    let (train_idx, dev_idx, test_idx) = (pick(SplitTag::Train), pick(SplitTag::Dev), pick(SplitTag::Test));
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(QtError::Config("predefined split needs train and test examples".into()));
    }
    let train = data.subset(&train_idx)?;
    let l2 = if dev_idx.is_empty() {
        select_l2(&train, grid, seed)?
    } else {
        let dev = data.subset(&dev_idx)?;
        let mut best = (f64::NEG_INFINITY, grid.first().copied().unwrap_or(1e-4));
        for &l2 in grid {
            let acc = train_linear_probe(&train, l2, seed)?.accuracy(&dev)?;
            if acc > best.0 {
                best = (acc, l2);
            }
        }
        best.1
    };
    Ok((train_linear_probe(&train, l2, seed)?.accuracy(&data.subset(&test_idx)?)?, l2))
}
