//! Dense matrices, elementwise math, initialization and the deterministic RNG.

mod mat;
mod rng;

pub use mat::{dot, sigmoid, softmax_rows, softplus, Mat, Real};
pub use rng::Rng;

use crate::error::{QtError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// `U[-L, L]` with `L = sqrt(6 / (rows + cols))`.
    XavierUniform,
    Uniform(f64, f64),
    Zeros,
    Ones,
}

/// Draws are taken in row-major order, one per entry, in `f64` and then cast.
pub fn init<T: Real>(rows: usize, cols: usize, scheme: InitScheme, rng: &mut Rng) -> Result<Mat<T>> {
    if rows == 0 || cols == 0 {
        return Err(QtError::Param(format!("cannot initialize a {rows}x{cols} matrix")));
    }
    let (lo, hi) = match scheme {
        InitScheme::Zeros => return Ok(Mat::zeros(rows, cols)),
        InitScheme::Ones => return Ok(Mat::filled(rows, cols, T::one())),
        InitScheme::XavierUniform => {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            (-limit, limit)
        }
        InitScheme::Uniform(a, b) => {
            if !(a < b) || !a.is_finite() || !b.is_finite() {
                return Err(QtError::Param(format!("uniform bounds must satisfy a < b, got [{a}, {b}]")));
            }
            (a, b)
        }
    };
    let data = (0..rows * cols).map(|_| T::of(rng.uniform(lo, hi))).collect();
    Mat::new(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_and_ones() {
        let mut rng = Rng::new(1);
        let z: Mat<f32> = init(2, 3, InitScheme::Zeros, &mut rng).unwrap();
        assert!(z.data().iter().all(|&x| x == 0.0));
        let o: Mat<f32> = init(2, 3, InitScheme::Ones, &mut rng).unwrap();
        assert!(o.data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn xavier_bound() {
        let mut rng = Rng::new(2);
        let m: Mat<f32> = init(100, 100, InitScheme::XavierUniform, &mut rng).unwrap();
        let limit = (6.0f64 / 200.0).sqrt() as f32;
        assert!(m.data().iter().all(|x| x.abs() <= limit));
        // the draw should actually span most of the interval
        let max = m.data().iter().fold(0.0f32, |a, x| a.max(x.abs()));
        assert!(max > 0.95 * limit);
    }

    #[test]
    fn uniform_sample_mean() {
        // sd of the mean of 1e5 U[-0.1, 0.1] draws is 0.1/sqrt(3e5) ~ 1.8e-4
        let mut rng = Rng::new(3);
        let m: Mat<f64> = init(1000, 100, InitScheme::Uniform(-0.1, 0.1), &mut rng).unwrap();
        let mean = m.data().iter().sum::<f64>() / m.data().len() as f64;
        assert!(mean.abs() < 0.005, "mean {mean}");
        assert!(m.data().iter().all(|x| (-0.1..0.1).contains(x)));
    }

    #[test]
    fn bad_bounds_rejected() {
        let mut rng = Rng::new(4);
        assert!(matches!(
            init::<f32>(2, 2, InitScheme::Uniform(0.1, -0.1), &mut rng),
            Err(QtError::Param(_))
        ));
        assert!(matches!(init::<f32>(0, 2, InitScheme::Zeros, &mut rng), Err(QtError::Param(_))));
    }

    #[test]
    fn init_reproducible() {
        for scheme in [InitScheme::XavierUniform, InitScheme::Uniform(-0.1, 0.1)] {
            let a: Mat<f32> = init(7, 9, scheme, &mut Rng::new(11)).unwrap();
            let b: Mat<f32> = init(7, 9, scheme, &mut Rng::new(11)).unwrap();
            let bits = |m: &Mat<f32>| m.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a), bits(&b));
        }
    }
}
