//! Random-hyperplane LSH: each bit is the sign of a projection onto an
//! i.i.d. Gaussian direction, so two vectors at angle θ disagree on a bit
//! with probability θ/π.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{HashError, HashModel, Method};
use crate::scalar::{lit, Real};
use crate::seed::{self, stream};

/// `d x k` Gaussian hyperplanes, zero mean, identity rotation.
pub fn fit_lsh<T: Real>(d: usize, k: usize, seed: u64) -> Result<HashModel<T>, HashError> {
    if k == 0 {
        return Err(HashError::EmptyCode);
    }
    let mut rng = seed::rng(seed, stream::LSH_PLANES);
    // row-major draw order so W does not depend on storage layout
    let mut draws = Vec::with_capacity(d * k);
    for _ in 0..d * k {
        let g: f64 = rng.sample(StandardNormal);
        draws.push(lit::<T>(g));
    }
    let w = DMatrix::from_row_slice(d, k, &draws);
    HashModel::from_parts(Method::Lsh, DVector::zeros(d), w, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featio::FeatureMatrix;
    use crate::hashlearn::encode;

    #[test]
    fn seeded() {
        let a = fit_lsh::<f64>(8, 16, 1).unwrap();
        assert_eq!(a, fit_lsh::<f64>(8, 16, 1).unwrap());
        assert_ne!(a.projection(), fit_lsh::<f64>(8, 16, 2).unwrap().projection());
        assert_eq!(a.rotation().into_owned(), DMatrix::identity(16, 16));
        assert!(a.mean().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn identical_vectors_collide() {
        for k in [1, 7, 64, 300] {
            let model = fit_lsh::<f64>(3, k, 9).unwrap();
            let x = FeatureMatrix::new(2, 3, vec![0.3, -1.0, 2.0, 0.3, -1.0, 2.0], 0).unwrap();
            let codes = encode(&model, &x).unwrap();
            assert_eq!(crate::codes::hamming(codes.row(0), codes.row(1)).unwrap(), 0);
        }
    }

    #[test]
    fn orthogonal_vectors_split_half_the_bits() {
        let k = 4096;
        let model = fit_lsh::<f64>(2, k, 4).unwrap();
        let x = FeatureMatrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0], 0).unwrap();
        let codes = encode(&model, &x).unwrap();
        let frac = crate::codes::hamming(codes.row(0), codes.row(1)).unwrap() as f64 / k as f64;
        assert!((frac - 0.5).abs() <= 0.02, "{frac}");
    }

    #[test]
    fn zero_bits_rejected() {
        assert_eq!(fit_lsh::<f64>(3, 0, 0).unwrap_err(), HashError::EmptyCode);
    }
}
