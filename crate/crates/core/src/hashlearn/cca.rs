//! Regularized canonical correlation analysis between a dense feature view
//! and a sparse binary label view.
//!
//! With `Cxx`, `Cyy`, `Cxy` the (co)variances of centered features and
//! labels, the feature directions solve
//!
//! ```text
//! (Cxx + r I)^-1 Cxy (Cyy + r I)^-1 Cyx w = ρ² w
//! ```
//!
//! The problem is symmetrized with a Cholesky factor of whichever side is
//! smaller and handed to a symmetric eigensolver. Directions are normalized
//! to unit regularized variance, `wᵀ (Cxx + r I) w = 1`.

use nalgebra::{DMatrix, SymmetricEigen};

use super::{center, column_mean, HashError};
use crate::dataset::SimilarityLabels;
use crate::featio::FeatureMatrix;
use crate::scalar::{is_finite, lit, to_f64, Real};

#[derive(Debug, Clone)]
pub struct CcaFit<T: Real> {
    /// `d x k`, one canonical direction per column.
    pub directions: DMatrix<T>,
    /// Non-increasing canonical correlations.
    pub correlations: Vec<T>,
}

/// Ridge factor of [`default_reg`].
pub const DEFAULT_REG_FACTOR: f64 = 1e-4;

/// `factor * trace(Cxx) / d`: a ridge expressed relative to the mean
/// feature variance.
///
/// When the label view has one column per training image, small factors
/// leave CCA free to find spurious correlations in low-variance noise
/// directions; factors near 1 shrink it towards the leading principal
/// subspace and generalize far better on small training sets.
pub fn scaled_reg<T: Real>(x: &FeatureMatrix<T>, factor: f64) -> T {
    let xm = x.to_matrix();
    let xc = center(&xm, &column_mean(&xm));
    let denom: T = lit(((x.n().max(2) - 1) * x.d().max(1)) as f64);
    xc.norm_squared() / denom * lit(factor)
}

/// `1e-4 * trace(Cxx) / d`.
pub fn default_reg<T: Real>(x: &FeatureMatrix<T>) -> T {
    scaled_reg(x, DEFAULT_REG_FACTOR)
}

/// `Yᵀ Xc / (n-1)`, `c x d`. Centering `Y` is unnecessary because the
/// columns of `Xc` sum to zero.
fn label_feature_cov<T: Real>(labels: &SimilarityLabels, xc: &DMatrix<T>, scale: T) -> DMatrix<T> {
    let mut out = DMatrix::<T>::zeros(labels.n_cols(), xc.ncols());
    for i in 0..labels.n_rows() {
        for &c in labels.row(i) {
            for j in 0..xc.ncols() {
                out[(c, j)] += xc[(i, j)];
            }
        }
    }
    out * scale
}

/// `(YᵀY - n ȳ ȳᵀ) / (n-1)`, accumulated from the nonzero pattern.
fn label_cov<T: Real>(labels: &SimilarityLabels, scale: T) -> DMatrix<T> {
    let c = labels.n_cols();
    let mut gram = DMatrix::<T>::zeros(c, c);
    let mut counts = vec![0usize; c];
    for i in 0..labels.n_rows() {
        let row = labels.row(i);
        for &a in row {
            counts[a] += 1;
            for &b in row {
                gram[(a, b)] += T::one();
            }
        }
    }
    let n: T = lit(labels.n_rows() as f64);
    for a in 0..c {
        for b in 0..c {
            let (ca, cb): (T, T) = (lit(counts[a] as f64), lit(counts[b] as f64));
            gram[(a, b)] -= ca * cb / n;
        }
    }
    gram * scale
}

fn add_ridge<T: Real>(m: &mut DMatrix<T>, r: T) {
    for i in 0..m.nrows() {
        m[(i, i)] += r;
    }
}

fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * lit::<T>(0.5)
}

/// Top-`k` canonical directions of the feature view.
///
/// `reg` ridges both `Cxx` and `Cyy`. See [`scaled_reg`] for choosing it
/// relative to the feature scale.
pub fn fit_cca<T: Real>(
    x: &FeatureMatrix<T>,
    labels: &SimilarityLabels,
    k: usize,
    reg: T,
) -> Result<CcaFit<T>, HashError> {
    let (n, d, c) = (x.n(), x.d(), labels.n_cols());
    if n != labels.n_rows() {
        return Err(HashError::RowMismatch(n, labels.n_rows()));
    }
    if k == 0 {
        return Err(HashError::EmptyCode);
    }
    if k > d.min(c) {
        return Err(HashError::CodeTooLong { k, limit: d.min(c) });
    }
    if n < 2 {
        return Err(HashError::TooFewRows(n));
    }
    if !is_finite(reg) || reg < T::zero() {
        return Err(HashError::BadReg(to_f64(reg)));
    }

    let xm = x.to_matrix();
    let xc = center(&xm, &column_mean(&xm));
    let scale = T::one() / lit((n - 1) as f64);
    let mut cxx = symmetrize(&(xc.transpose() * &xc * scale));
    let cyx = label_feature_cov(labels, &xc, scale);
    let mut cyy = label_cov(labels, scale);

    add_ridge(&mut cxx, reg);
    add_ridge(&mut cyy, reg);

    let chol_x = cxx.clone().cholesky().ok_or(HashError::Singular)?;
    let chol_y = cyy.clone().cholesky().ok_or(HashError::Singular)?;
    let cxy = cyx.transpose();

    let (directions, correlations) = if d <= c {
        // Lx⁻¹ Cxy Cyy⁻¹ Cyx Lx⁻ᵀ
        let lx = chol_x.l();
        let inner = &cxy * chol_y.solve(&cyx);
        let half = lx.solve_lower_triangular(&inner).ok_or(HashError::Singular)?;
        let m = symmetrize(&lx.solve_lower_triangular(&half.transpose()).ok_or(HashError::Singular)?);
        let (vecs, rho) = top_eigen(m, k);
        let w = lx.transpose().solve_upper_triangular(&vecs).ok_or(HashError::Singular)?;
        (w, rho)
    } else {
        // Ly⁻¹ Cyx Cxx⁻¹ Cxy Ly⁻ᵀ, mapped back through w = Cxx⁻¹ Cxy wy / ρ
        let ly = chol_y.l();
        let b = chol_x.solve(&cxy);
        let inner = &cyx * &b;
        let half = ly.solve_lower_triangular(&inner).ok_or(HashError::Singular)?;
        let m = symmetrize(&ly.solve_lower_triangular(&half.transpose()).ok_or(HashError::Singular)?);
        let (vecs, rho) = top_eigen(m, k);
        let wy = ly.transpose().solve_upper_triangular(&vecs).ok_or(HashError::Singular)?;
        let mut w = &b * wy;
        let floor: T = lit(1e-12);
        for (j, mut col) in w.column_iter_mut().enumerate() {
            if rho[j] > floor {
                col /= rho[j];
            } else {
                col.fill(T::zero());
            }
        }
        (w, rho)
    };

    let directions = fix_signs(directions);
    if !directions.iter().all(|&v| is_finite(v)) {
        return Err(HashError::Singular);
    }
    Ok(CcaFit { directions, correlations })
}

/// Top-`k` eigenpairs of a symmetric PSD matrix, eigenvalues mapped to
/// `sqrt(max(λ, 0))` and sorted non-increasing.
fn top_eigen<T: Real>(m: DMatrix<T>, k: usize) -> (DMatrix<T>, Vec<T>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let order = &order[..k];
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), k, |i, j| eig.eigenvectors[(i, order[j])]);
    let rho = order.iter().map(|&i| eig.eigenvalues[i].max(T::zero()).sqrt()).collect();
    (vecs, rho)
}

/// Flips each column so its largest-magnitude entry is positive.
fn fix_signs<T: Real>(mut w: DMatrix<T>) -> DMatrix<T> {
    for mut col in w.column_iter_mut() {
        let pivot = col.iter().copied().fold(T::zero(), |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < T::zero() {
            col.neg_mut();
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::seed::rng(seed, 0);
        DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
    }

    fn dense_labels(labels: &SimilarityLabels) -> DMatrix<f64> {
        let dense = labels.to_dense();
        DMatrix::from_fn(labels.n_rows(), labels.n_cols(), |i, j| dense[i][j] as f64)
    }

    /// Independent route: the full (d+c) block pencil
    /// `[0 Cxy; Cyx 0] v = ρ [Cxx+rx 0; 0 Cyy+ry] v`, reduced with the
    /// inverse square root of the block-diagonal side via its own
    /// eigendecomposition. Its positive eigenvalues are the correlations.
    fn block_oracle(x: &DMatrix<f64>, y: &DMatrix<f64>, rx: f64, ry: f64) -> Vec<f64> {
        let n = x.nrows();
        let z = {
            let mut z = DMatrix::zeros(n, x.ncols() + y.ncols());
            z.columns_mut(0, x.ncols()).copy_from(x);
            z.columns_mut(x.ncols(), y.ncols()).copy_from(y);
            z
        };
        let mean = column_mean(&z);
        let zc = center(&z, &mean);
        let cov = zc.transpose() * &zc / (n as f64 - 1.0);
        let (d, c) = (x.ncols(), y.ncols());
        let mut a = DMatrix::zeros(d + c, d + c);
        let mut b = DMatrix::zeros(d + c, d + c);
        a.view_mut((0, d), (d, c)).copy_from(&cov.view((0, d), (d, c)));
        a.view_mut((d, 0), (c, d)).copy_from(&cov.view((d, 0), (c, d)));
        b.view_mut((0, 0), (d, d)).copy_from(&cov.view((0, 0), (d, d)));
        b.view_mut((d, d), (c, c)).copy_from(&cov.view((d, d), (c, c)));
        for i in 0..d {
            b[(i, i)] += rx;
        }
        for i in d..d + c {
            b[(i, i)] += ry;
        }
        let eb = SymmetricEigen::new(b);
        let inv_sqrt = &eb.eigenvectors
            * DMatrix::from_diagonal(&eb.eigenvalues.map(|l| 1.0 / l.sqrt()))
            * eb.eigenvectors.transpose();
        let m = &inv_sqrt * a * &inv_sqrt;
        let mut ev: Vec<f64> = SymmetricEigen::new((&m + m.transpose()) * 0.5).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        ev
    }

    fn shared_latent_instance(seed: u64) -> (FeatureMatrix<f64>, SimilarityLabels) {
        // 50 x 4 features and 4 binary labels sharing one latent coordinate
        let mut rng = crate::seed::rng(seed, 1);
        let n = 50;
        let latent: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut feats = Vec::new();
        let mut rows = Vec::new();
        for &t in &latent {
            for j in 0..4 {
                let e: f64 = rng.sample(StandardNormal);
                feats.push(if j == 0 { 2.0 * t + 0.3 * e } else { e });
            }
            let row = (0..4)
                .filter(|_| {
                    let e: f64 = rng.sample(StandardNormal);
                    t + 0.5 * e > 0.0
                })
                .collect();
            rows.push(row);
        }
        (FeatureMatrix::new(n, 4, feats, 0).unwrap(), SimilarityLabels::from_rows(4, rows).unwrap())
    }

    #[test]
    fn matches_block_eigenproblem() {
        for seed in 0..3 {
            let (x, labels) = shared_latent_instance(seed);
            let reg = 1e-6;
            let fit = fit_cca(&x, &labels, 4, reg).unwrap();
            let xm = x.to_matrix();
            let y = dense_labels(&labels);
            let oracle = block_oracle(&xm, &y, reg, reg);
            for j in 0..4 {
                assert!((fit.correlations[j] - oracle[j]).abs() < 1e-8, "{:?} vs {:?}", fit.correlations, oracle);
            }
            assert!(fit.correlations[0] > 0.8);
            assert!(fit.correlations[0] > 2.0 * fit.correlations[1]);
        }
    }

    #[test]
    fn label_side_solve_matches_feature_side() {
        // c < d exercises the label-side branch; compare against the oracle
        let xm = gaussian(60, 8, 3);
        let rows = (0..60).map(|i| vec![i % 3]).collect();
        let labels = SimilarityLabels::from_rows(3, rows).unwrap();
        let x = FeatureMatrix::from_matrix(&xm).unwrap();
        let fit = fit_cca(&x, &labels, 3, 1e-3).unwrap();
        let y = dense_labels(&labels);
        let xc = center(&xm, &column_mean(&xm));
        let oracle = block_oracle(&xm, &y, 1e-3, 1e-3);
        for j in 0..2 {
            assert!((fit.correlations[j] - oracle[j]).abs() < 1e-8, "{:?} vs {:?}", fit.correlations, oracle);
        }
        // unit regularized variance
        let mut cxx = xc.transpose() * &xc / 59.0;
        add_ridge(&mut cxx, 1e-3);
        let gram = fit.directions.transpose() * cxx * &fit.directions;
        for j in 0..2 {
            assert!((gram[(j, j)] - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn self_correlated_views() {
        // labels are a one-hot binarization of the features themselves
        let xm = gaussian(200, 6, 5);
        let rows: Vec<Vec<usize>> =
            (0..200).map(|i| (0..6).filter(|&j| xm[(i, j)] > 0.0).collect()).collect();
        let labels = SimilarityLabels::from_rows(6, rows).unwrap();
        let bin = DMatrix::from_fn(200, 6, |i, j| if xm[(i, j)] > 0.0 { 1.0 } else { 0.0 });
        let x = FeatureMatrix::from_matrix(&bin).unwrap();
        let fit = fit_cca(&x, &labels, 6, 1e-8).unwrap();
        assert!(fit.correlations[0] >= 0.99, "{:?}", fit.correlations);
    }

    #[test]
    fn correlations_sorted_and_bounded() {
        let (x, labels) = shared_latent_instance(9);
        let fit = fit_cca(&x, &labels, 4, default_reg(&x)).unwrap();
        assert!(fit.correlations.windows(2).all(|w| w[0] >= w[1]));
        assert!(fit.correlations.iter().all(|&r| (0.0..=1.0 + 1e-6).contains(&r)));
    }

    #[test]
    fn scaled_reg_is_mean_variance() {
        let xm = gaussian(20, 3, 4);
        let x = FeatureMatrix::from_matrix(&xm).unwrap();
        let mut total = 0.0;
        for j in 0..3 {
            let mu = (0..20).map(|i| xm[(i, j)]).sum::<f64>() / 20.0;
            total += (0..20).map(|i| (xm[(i, j)] - mu).powi(2)).sum::<f64>() / 19.0;
        }
        assert!((scaled_reg(&x, 1.0) - total / 3.0).abs() < 1e-12);
        assert!((default_reg(&x) - 1e-4 * total / 3.0).abs() < 1e-15);
    }

    #[test]
    fn precondition_errors() {
        let (x, labels) = shared_latent_instance(0);
        assert_eq!(fit_cca(&x, &labels, 5, 1e-4).unwrap_err(), HashError::CodeTooLong { k: 5, limit: 4 });
        assert_eq!(fit_cca(&x, &labels, 0, 1e-4).unwrap_err(), HashError::EmptyCode);
        assert!(matches!(fit_cca(&x, &labels, 2, -1.0), Err(HashError::BadReg(_))));
        let short = SimilarityLabels::from_rows(4, vec![vec![0]; 10]).unwrap();
        assert_eq!(fit_cca(&x, &short, 2, 1e-4).unwrap_err(), HashError::RowMismatch(50, 10));
    }

    #[test]
    fn singular_without_ridge() {
        // a constant feature leaves an exact zero pivot in Cxx
        let mut xm = gaussian(30, 3, 2);
        xm.column_mut(1).fill(5.0);
        let x = FeatureMatrix::from_matrix(&xm).unwrap();
        let rows = (0..30).map(|i| vec![i % 3]).collect();
        let labels = SimilarityLabels::from_rows(3, rows).unwrap();
        assert_eq!(fit_cca(&x, &labels, 2, 0.0).unwrap_err(), HashError::Singular);
        assert!(fit_cca(&x, &labels, 2, 1e-3).is_ok());
    }
}
