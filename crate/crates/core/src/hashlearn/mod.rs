//! Hash function learning and encoding.
//!
//! A [`HashModel`] maps a feature row `x` to `k` bits through
//! `sign((x - mean) W R)`. Supervised models ([`fit_ccaitq`]) take `W` from
//! canonical correlation analysis between features and similarity labels and
//! `R` from iterative quantization; unsupervised models ([`fit_lsh`]) use
//! random Gaussian hyperplanes with no centering and no rotation.

mod cca;
mod itq;
mod lsh;

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::codes::BinaryCodeSet;
use crate::dataset::SimilarityLabels;
use crate::featio::FeatureMatrix;
use crate::scalar::{cast, is_finite, lit, Real};

pub use cca::{default_reg, fit_cca, scaled_reg, CcaFit, DEFAULT_REG_FACTOR};
pub use itq::{fit_itq, fit_itq_from, quantization_loss, random_orthogonal, ItqFit};
pub use lsh::fit_lsh;

/// Default number of ITQ alternations.
pub const DEFAULT_ITQ_ITERATIONS: usize = 50;

#[derive(Debug, Error, PartialEq)]
pub enum HashError {
    #[error("code length must be at least 1")]
    EmptyCode,
    #[error("code length {k} exceeds the limit {limit} (min of feature and label dimensions)")]
    CodeTooLong { k: usize, limit: usize },
    #[error("{0} training rows but {1} label rows")]
    RowMismatch(usize, usize),
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("regularization must be finite and non-negative, got {0}")]
    BadReg(f64),
    #[error("covariance system is singular; increase regularization")]
    Singular,
    #[error("non-finite input")]
    NonFinite,
    #[error("model expects dimension {expected}, features have {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("iterations must be at least 1")]
    NoIterations,
    #[error("inconsistent model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Lsh,
    CcaItq,
}

impl Method {
    pub fn tag(self) -> u8 {
        match self {
            Method::Lsh => 0,
            Method::CcaItq => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Method::Lsh),
            1 => Some(Method::CcaItq),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Lsh => "lsh",
            Method::CcaItq => "ccaitq",
        }
    }
}

/// Largest entry of `|RᵀR - I|`.
pub fn orthogonality_error<T: Real>(r: &DMatrix<T>) -> T {
    let g = r.transpose() * r;
    let mut worst = T::zero();
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { T::one() } else { T::zero() };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

fn orthogonality_tol<T: Real>() -> T {
    lit::<T>(1e-8).max(T::default_epsilon() * lit(1e4))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashModel<T: Real> {
    method: Method,
    mean: DVector<T>,
    projection: DMatrix<T>,
    /// `None` is the identity.
    rotation: Option<DMatrix<T>>,
}

impl<T: Real> HashModel<T> {
    pub fn from_parts(
        method: Method,
        mean: DVector<T>,
        projection: DMatrix<T>,
        rotation: Option<DMatrix<T>>,
    ) -> Result<Self, HashError> {
        let (d, k) = projection.shape();
        if k == 0 {
            return Err(HashError::EmptyCode);
        }
        if mean.len() != d {
            return Err(HashError::InvalidModel(format!("mean has {} entries, W has {d} rows", mean.len())));
        }
        if method == Method::CcaItq && k > d {
            return Err(HashError::CodeTooLong { k, limit: d });
        }
        let finite = |s: &[T]| s.iter().all(|&v| is_finite(v));
        if !finite(mean.as_slice()) || !finite(projection.as_slice()) {
            return Err(HashError::NonFinite);
        }
        if let Some(r) = &rotation {
            if r.shape() != (k, k) {
                return Err(HashError::InvalidModel(format!("R is {:?}, expected {k}x{k}", r.shape())));
            }
            if !finite(r.as_slice()) {
                return Err(HashError::NonFinite);
            }
            if orthogonality_error(r) > orthogonality_tol() {
                return Err(HashError::InvalidModel("R is not orthogonal".into()));
            }
        }
        Ok(Self { method, mean, projection, rotation })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn bits(&self) -> usize {
        self.projection.ncols()
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    pub fn projection(&self) -> &DMatrix<T> {
        &self.projection
    }

    pub fn rotation(&self) -> Cow<'_, DMatrix<T>> {
        match &self.rotation {
            Some(r) => Cow::Borrowed(r),
            None => Cow::Owned(DMatrix::identity(self.bits(), self.bits())),
        }
    }

    pub fn cast<U: Real>(&self) -> HashModel<U> {
        HashModel {
            method: self.method,
            mean: self.mean.map(cast),
            projection: self.projection.map(cast),
            rotation: self.rotation.as_ref().map(|r| r.map(cast)),
        }
    }

    /// Real-valued pre-binarization outputs `(X - mean) W R`, one row per input.
    pub fn project(&self, x: &FeatureMatrix<T>) -> Result<DMatrix<T>, HashError> {
        if x.d() != self.dim() {
            return Err(HashError::DimensionMismatch { expected: self.dim(), got: x.d() });
        }
        let v = center(&x.to_matrix(), &self.mean) * &self.projection;
        Ok(match &self.rotation {
            Some(r) => v * r,
            None => v,
        })
    }
}

pub(crate) fn column_mean<T: Real>(x: &DMatrix<T>) -> DVector<T> {
    let n: T = lit(x.nrows() as f64);
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

pub(crate) fn center<T: Real>(x: &DMatrix<T>, mean: &DVector<T>) -> DMatrix<T> {
    let mut c = x.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    c
}

/// Bit `(i, j)` is set iff entry `(i, j)` of [`HashModel::project`] is
/// strictly positive.
pub fn encode<T: Real>(model: &HashModel<T>, x: &FeatureMatrix<T>) -> Result<BinaryCodeSet, HashError> {
    let z = model.project(x)?;
    Ok(BinaryCodeSet::from_fn(z.nrows(), z.ncols(), |i, j| z[(i, j)] > T::zero()).expect("k >= 1"))
}

/// CCA-ITQ training output with diagnostics.
#[derive(Debug, Clone)]
pub struct CcaItqFit<T: Real> {
    pub model: HashModel<T>,
    pub correlations: Vec<T>,
    pub loss_history: Vec<T>,
}

/// Supervised hashing: CCA directions scaled by their canonical
/// correlations, then rotated by ITQ.
pub fn fit_ccaitq<T: Real>(
    x: &FeatureMatrix<T>,
    labels: &SimilarityLabels,
    k: usize,
    reg: T,
    iterations: usize,
    seed: u64,
) -> Result<CcaItqFit<T>, HashError> {
    let cca = fit_cca(x, labels, k, reg)?;
    let xm = x.to_matrix();
    let mean = column_mean(&xm);
    let mut w = cca.directions.clone();
    for (j, mut col) in w.column_iter_mut().enumerate() {
        col *= cca.correlations[j];
    }
    let v = center(&xm, &mean) * &w;
    let itq = fit_itq(&v, iterations, seed)?;
    let model = HashModel::from_parts(Method::CcaItq, mean, w, Some(itq.rotation))?;
    Ok(CcaItqFit { model, correlations: cca.correlations, loss_history: itq.loss_history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::build_similarity_labels;
    use crate::dataset::synth_traversals;

    fn identity_model(mean: Vec<f64>) -> HashModel<f64> {
        let d = mean.len();
        HashModel::from_parts(Method::CcaItq, DVector::from_vec(mean), DMatrix::identity(d, d), None).unwrap()
    }

    #[test]
    fn sign_readout() {
        let model = identity_model(vec![0.0, 0.0]);
        let x = FeatureMatrix::new(1, 2, vec![0.5, -0.3], 0).unwrap();
        let codes = encode(&model, &x).unwrap();
        assert_eq!(codes.unpack(), vec![1, 0]);
    }

    #[test]
    fn zero_projection_is_bit_zero() {
        let model = identity_model(vec![1.0, 0.0]);
        let x = FeatureMatrix::new(1, 2, vec![1.0, 0.0], 0).unwrap();
        assert_eq!(encode(&model, &x).unwrap().unpack(), vec![0, 0]);
    }

    #[test]
    fn dimension_mismatch() {
        let model = identity_model(vec![0.0, 0.0]);
        let x = FeatureMatrix::new(1, 3, vec![0.5, -0.3, 1.0], 0).unwrap();
        assert_eq!(encode(&model, &x), Err(HashError::DimensionMismatch { expected: 2, got: 3 }));
    }

    #[test]
    fn model_validation() {
        let w = DMatrix::<f64>::identity(2, 2);
        let bad_r = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(HashModel::from_parts(Method::CcaItq, DVector::zeros(2), w.clone(), Some(bad_r)).is_err());
        assert!(HashModel::from_parts(Method::CcaItq, DVector::zeros(3), w.clone(), None).is_err());
        let wide = DMatrix::<f64>::zeros(2, 3);
        assert_eq!(
            HashModel::from_parts(Method::CcaItq, DVector::zeros(2), wide.clone(), None),
            Err(HashError::CodeTooLong { k: 3, limit: 2 })
        );
        assert!(HashModel::from_parts(Method::Lsh, DVector::zeros(2), wide, None).is_ok());
        assert_eq!(
            HashModel::from_parts(Method::Lsh, DVector::zeros(2), DMatrix::<f64>::zeros(2, 0), None),
            Err(HashError::EmptyCode)
        );
    }

    #[test]
    fn positive_scaling_invariance_without_mean() {
        let model = fit_lsh::<f64>(5, 40, 3).unwrap();
        let (db, _, _) = synth_traversals(20, 5, 0.0, 0.1, 2).unwrap();
        let scaled = FeatureMatrix::new(db.n(), db.d(), db.values().iter().map(|v| v * 3.7).collect(), 0).unwrap();
        assert_eq!(encode(&model, &db).unwrap(), encode(&model, &scaled).unwrap());
    }

    #[test]
    fn ccaitq_training_codes_match_final_itq_codes() {
        let (db, query, pair) = synth_traversals(80, 16, 1.0, 0.3, 5).unwrap();
        let s = pair.splits().clone();
        let x = db.slice_rows(s.train_db).vstack(&query.slice_rows(s.train_query)).unwrap();
        let labels = build_similarity_labels(&pair).unwrap();
        let fit = fit_ccaitq(&x, &labels, 8, default_reg(&x), 20, 11).unwrap();
        let codes = encode(&fit.model, &x).unwrap();
        // recompute the ITQ objective from the encoded bits
        let z = fit.model.project(&x).unwrap();
        let mut loss = 0.0;
        for i in 0..z.nrows() {
            for j in 0..z.ncols() {
                let b = if codes.bit(i, j) { 1.0 } else { -1.0 };
                loss += (b - z[(i, j)]).powi(2);
            }
        }
        let last = *fit.loss_history.last().unwrap();
        assert!((loss.sqrt() - last).abs() <= 1e-9 * last.max(1.0), "{} vs {last}", loss.sqrt());
        assert!(orthogonality_error(&fit.model.rotation()) <= 1e-8);
        assert_eq!(fit.model.bits(), 8);
    }

    #[test]
    fn more_iterations_never_worse() {
        let (db, query, pair) = synth_traversals(60, 12, 1.0, 0.3, 8).unwrap();
        let s = pair.splits().clone();
        let x = db.slice_rows(s.train_db).vstack(&query.slice_rows(s.train_query)).unwrap();
        let labels = build_similarity_labels(&pair).unwrap();
        let one = fit_ccaitq(&x, &labels, 6, default_reg(&x), 1, 4).unwrap();
        let many = fit_ccaitq(&x, &labels, 6, default_reg(&x), 50, 4).unwrap();
        assert!(many.loss_history.last().unwrap() <= one.loss_history.last().unwrap());
    }

    #[test]
    fn f32_pipeline_runs() {
        let (db, query, pair) = synth_traversals(40, 8, 1.0, 0.3, 1).unwrap();
        let s = pair.splits().clone();
        let x = db.slice_rows(s.train_db).vstack(&query.slice_rows(s.train_query)).unwrap().cast::<f32>();
        let labels = build_similarity_labels(&pair).unwrap();
        let fit = fit_ccaitq(&x, &labels, 4, default_reg(&x), 10, 0).unwrap();
        assert_eq!(encode(&fit.model, &x).unwrap().n(), x.n());
    }

    /// One-bit model on two well separated places; the oracle enumerates
    /// every labelling of the eight points and keeps the ones constant on
    /// each place and different across places.
    #[test]
    fn single_bit_separates_two_places() {
        let pts = [
            [3.0, 0.2], [3.3, -0.1], [2.8, 0.4], [3.1, 0.0],
            [-3.0, 0.1], [-2.9, -0.3], [-3.2, 0.2], [-3.1, -0.2],
        ];
        let place = [0, 0, 0, 0, 1, 1, 1, 1];
        let x = FeatureMatrix::from_rows(&pts.iter().map(|p| p.to_vec()).collect::<Vec<_>>()).unwrap();
        let rows = (0..8).map(|i| (0..8).filter(|&j| place[j] == place[i]).collect()).collect();
        let labels = SimilarityLabels::from_rows(8, rows).unwrap();
        let fit = fit_ccaitq(&x, &labels, 1, 1e-6, 50, 0).unwrap();
        let bits: Vec<u8> = encode(&fit.model, &x).unwrap().unpack();

        let separating: Vec<Vec<u8>> = (0u32..256)
            .map(|mask| (0..8).map(|i| (mask >> i & 1) as u8).collect::<Vec<u8>>())
            .filter(|b: &Vec<u8>| {
                (0..8).all(|i| (0..8).all(|j| (place[i] == place[j]) == (b[i] == b[j])))
            })
            .collect();
        assert_eq!(separating.len(), 2);
        assert!(separating.contains(&bits), "{bits:?}");
    }
}
