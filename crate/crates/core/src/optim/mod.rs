//! Adam with bias correction.

use crate::encoder::Grad;
use crate::error::{shape_err, QtError, Result};
use crate::numkern::{Mat, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 norm threshold; `None` disables clipping.
    pub clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip: None }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.clip.is_none_or(|c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(QtError::Config(format!("invalid Adam configuration {self:?}")))
        }
    }
}

/// First/second moments for each tensor plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    config: AdamConfig,
    t: u64,
    m: Vec<Mat<T>>,
    v: Vec<Mat<T>>,
}

impl<T: Real> Adam<T> {
    /// Zero moments shaped like `shapes`.
    pub fn new(config: AdamConfig, shapes: &[(usize, usize)]) -> Result<Self> {
        config.validate()?;
        let zeros = || shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect::<Vec<_>>();
        Ok(Adam { config, t: 0, m: zeros(), v: zeros() })
    }

    /// Restores saved state; `m` and `v` must pair up shape by shape.
    pub fn from_state(config: AdamConfig, t: u64, m: Vec<Mat<T>>, v: Vec<Mat<T>>) -> Result<Self> {
        config.validate()?;
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.shape() != b.shape()) {
            return Err(shape_err!("Adam moments do not pair up"));
        }
        Ok(Adam { config, t, m, v })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Mat<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Mat<T>] {
        &self.v
    }

    /// One update. `frozen[k]` tensors are skipped entirely (their moments
    /// stay put). Non-finite gradients abort the step before anything changes.
    pub fn step(&mut self, params: &mut [&mut Mat<T>], grads: &[Grad<T>], frozen: &[bool]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() || frozen.len() != params.len() {
            return Err(shape_err!(
                "{} params, {} grads, {} frozen flags for {} optimizer slots",
                params.len(),
                grads.len(),
                frozen.len(),
                self.m.len()
            ));
        }
        let mut dense = Vec::with_capacity(grads.len());
        for (k, ((p, g), &fz)) in params.iter().zip(grads).zip(frozen).enumerate() {
            if p.shape() != self.m[k].shape() {
                return Err(shape_err!("tensor {k} is {:?}, optimizer slot is {:?}", p.shape(), self.m[k].shape()));
            }
            if fz {
                dense.push(None);
                continue;
            }
            if !g.is_finite() {
                return Err(QtError::Numeric(format!("non-finite gradient for tensor {k}")));
            }
            dense.push(Some(g.to_dense(p.shape())?));
        }

        let mut scale = T::one();
        if let Some(threshold) = self.config.clip {
            let norm = dense.iter().flatten().map(|g| g.frobenius_sq().as_f64()).sum::<f64>().sqrt();
            if norm > threshold {
                scale = T::of(threshold / norm);
            }
        }

        self.t += 1;
        let c = &self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powf(self.t as f64));
        let bc2 = T::of(1.0 - c.beta2.powf(self.t as f64));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));

        for (k, g) in dense.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = params[k].data_mut();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i] * scale;
                m[i] = b1 * m[i] + one_b1 * gi;
                v[i] = b2 * v[i] + one_b2 * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::RowGrad;

    fn scalar(x: f64) -> Mat<f64> {
        Mat::filled(1, 1, x)
    }

    #[test]
    fn zero_gradient_changes_nothing() {
        let mut p = Mat::<f64>::from_rows(&[[1.0, -2.0]]).unwrap();
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::default(), &[(1, 2)]).unwrap();
        adam.step(&mut [&mut p], &[Grad::Dense(Mat::zeros(1, 2))], &[false]).unwrap();
        assert_eq!(p, before);
        assert!(adam.first_moments()[0].data().iter().all(|&x| x == 0.0));
        assert!(adam.second_moments()[0].data().iter().all(|&x| x == 0.0));
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        for g in [0.3, -4.0, 1e-3] {
            let mut p = scalar(0.0);
            let mut adam = Adam::new(AdamConfig::default(), &[(1, 1)]).unwrap();
            adam.step(&mut [&mut p], &[Grad::Dense(scalar(g))], &[false]).unwrap();
            let expected = 5e-4 * g.abs() / (g.abs() + 1e-8);
            assert!((p.get(0, 0).abs() - expected).abs() < 1e-12);
            assert_eq!(p.get(0, 0).signum(), -g.signum());
        }
    }

    #[test]
    fn quadratic_trajectory_matches_reference() {
        // independent straight-line script, minimizing p^2 from p0 = 1 with lr 0.1
        let reference = [
            0.9000000005,
            0.8004122286917928,
            0.7015862729460303,
            0.603939060573746,
            0.507963659264342,
            0.4142364559936619,
            0.3234207049391021,
            0.23626372452104188,
            0.1535845600703636,
            0.07624915560691221,
        ];
        let mut p = scalar(1.0);
        let mut adam = Adam::new(AdamConfig { lr: 0.1, ..Default::default() }, &[(1, 1)]).unwrap();
        for want in reference {
            let g = Grad::Dense(scalar(2.0 * p.get(0, 0)));
            adam.step(&mut [&mut p], &[g], &[false]).unwrap();
            assert!((p.get(0, 0) - want).abs() < 1e-8);
        }
    }

    #[test]
    fn frozen_tensor_untouched() {
        let mut a = Mat::<f32>::filled(2, 2, 0.5);
        let mut b = Mat::<f32>::filled(1, 3, 0.5);
        let frozen_before = a.clone();
        let mut adam = Adam::new(AdamConfig::default(), &[(2, 2), (1, 3)]).unwrap();
        for _ in 0..5 {
            let grads = [Grad::Dense(Mat::filled(2, 2, 1.0)), Grad::Dense(Mat::filled(1, 3, 1.0))];
            adam.step(&mut [&mut a, &mut b], &grads, &[true, false]).unwrap();
        }
        assert_eq!(a, frozen_before);
        assert_ne!(b.get(0, 0), 0.5);
    }

    #[test]
    fn row_gradients_are_densified() {
        let mut e = Mat::<f64>::zeros(4, 2);
        let mut rg = RowGrad::new(2);
        rg.accumulate(2, &[1.0, -1.0]);
        let mut adam = Adam::new(AdamConfig::default(), &[(4, 2)]).unwrap();
        adam.step(&mut [&mut e], &[Grad::Rows(rg)], &[false]).unwrap();
        assert!(e.row(0).iter().chain(e.row(1)).chain(e.row(3)).all(|&x| x == 0.0));
        assert!(e.get(2, 0) < 0.0 && e.get(2, 1) > 0.0);
    }

    #[test]
    fn clipping_below_threshold_is_exact_noop() {
        let g = Mat::<f64>::from_rows(&[[0.3, -0.4]]).unwrap();
        let run = |clip| {
            let mut p = Mat::<f64>::from_rows(&[[1.0, 1.0]]).unwrap();
            let mut adam = Adam::new(AdamConfig { clip, ..Default::default() }, &[(1, 2)]).unwrap();
            for _ in 0..3 {
                adam.step(&mut [&mut p], &[Grad::Dense(g.clone())], &[false]).unwrap();
            }
            (p, adam)
        };
        let (p0, a0) = run(None);
        let (p1, a1) = run(Some(0.5));
        assert_eq!(p0, p1);
        assert_eq!((a0.first_moments(), a0.second_moments()), (a1.first_moments(), a1.second_moments()));
        // above the threshold the moments see the rescaled gradient
        let (_, clipped) = run(Some(0.05));
        assert!((clipped.first_moments()[0].get(0, 0) - 0.03 * (1.0 - 0.9f64.powi(3))).abs() < 1e-12);
    }

    #[test]
    fn errors_leave_state_untouched() {
        let mut p = scalar(1.0);
        let mut adam = Adam::new(AdamConfig::default(), &[(1, 1)]).unwrap();
        let r = adam.step(&mut [&mut p], &[Grad::Dense(scalar(f64::NAN))], &[false]);
        assert!(matches!(r, Err(QtError::Numeric(_))));
        assert_eq!(adam.step_count(), 0);
        assert_eq!(p, scalar(1.0));
        let r = adam.step(&mut [&mut p], &[Grad::Dense(Mat::zeros(1, 2))], &[false]);
        assert!(matches!(r, Err(QtError::Shape(_))));
        assert!(Adam::<f64>::new(AdamConfig { beta1: 1.0, ..Default::default() }, &[]).is_err());
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = Mat::<f32>::from_rows(&[[0.1, 0.2, 0.3]]).unwrap();
            let mut adam = Adam::new(AdamConfig::default(), &[(1, 3)]).unwrap();
            for k in 0..20 {
                let g = Mat::from_rows(&[[k as f32 * 0.1, -0.5, 0.25]]).unwrap();
                adam.step(&mut [&mut p], &[Grad::Dense(g)], &[false]).unwrap();
            }
            p.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
