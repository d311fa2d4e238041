//! Iterative quantization: find an orthogonal `R` minimizing
//! `||B - V R||_F` over bipolar codes `B ∈ {-1, +1}`.
//!
//! Each iteration solves the orthogonal Procrustes problem for the current
//! codes (`R = P Qᵀ` from the SVD `Vᵀ B = P Σ Qᵀ`) and then re-binarizes
//! `B = sign(V R)`. Both steps minimize the same objective, so the recorded
//! loss never increases.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::HashError;
use crate::scalar::{is_finite, lit, Real};
use crate::seed::{self, stream};

#[derive(Debug, Clone)]
pub struct ItqFit<T: Real> {
    pub rotation: DMatrix<T>,
    /// `||B_t - V R_t||_F` after each iteration.
    pub loss_history: Vec<T>,
}

/// Bipolar sign with `sign(0) = -1`, matching bit 0 for a zero projection.
fn bipolar<T: Real>(z: &DMatrix<T>) -> DMatrix<T> {
    z.map(|v| if v > T::zero() { T::one() } else { -T::one() })
}

/// `||sign(V R) - V R||_F`.
pub fn quantization_loss<T: Real>(v: &DMatrix<T>, r: &DMatrix<T>) -> T {
    let z = v * r;
    (bipolar(&z) - z).norm()
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `diag(R)` folded into `Q`.
pub fn random_orthogonal<T: Real>(k: usize, seed: u64) -> DMatrix<T> {
    let mut rng = seed::rng(seed, stream::ITQ_INIT);
    let g = DMatrix::<f64>::from_fn(k, k, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q.map(lit)
}

fn procrustes<T: Real>(v: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let svd = (v.transpose() * b).svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    u * vt
}

/// ITQ from a seeded random orthogonal start.
pub fn fit_itq<T: Real>(v: &DMatrix<T>, iterations: usize, seed: u64) -> Result<ItqFit<T>, HashError> {
    let k = v.ncols();
    if k == 0 {
        return Err(HashError::EmptyCode);
    }
    fit_itq_from(v, random_orthogonal(k, seed), iterations)
}

/// ITQ from an explicit starting rotation.
pub fn fit_itq_from<T: Real>(v: &DMatrix<T>, start: DMatrix<T>, iterations: usize) -> Result<ItqFit<T>, HashError> {
    let k = v.ncols();
    if k == 0 {
        return Err(HashError::EmptyCode);
    }
    if iterations == 0 {
        return Err(HashError::NoIterations);
    }
    if start.shape() != (k, k) {
        return Err(HashError::InvalidModel(format!("start rotation is {:?}, expected {k}x{k}", start.shape())));
    }
    if !v.iter().all(|&x| is_finite(x)) {
        return Err(HashError::NonFinite);
    }
    let mut rotation = start;
    let mut codes = bipolar(&(v * &rotation));
    let mut loss_history = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        rotation = procrustes(v, &codes);
        let z = v * &rotation;
        codes = bipolar(&z);
        loss_history.push((&codes - z).norm());
    }
    Ok(ItqFit { rotation, loss_history })
}
