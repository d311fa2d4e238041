//! Sequence alignment of a query traversal against the database with
//! dynamic time warping over a (contrast-enhanced) Hamming cost matrix.

use rayon::prelude::*;
use thiserror::Error;

use crate::codes::{hamming_unchecked, BinaryCodeSet};
use crate::scalar::{is_finite, lit, Real};

/// Default gamma of [`contrast_enhance`].
pub const DEFAULT_GAMMA: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum SeqError {
    #[error("code length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("cost matrix is empty")]
    Empty,
    #[error("gamma must be >= 1, got {0}")]
    BadGamma(f64),
    #[error("cost entries must be finite and non-negative")]
    BadCost,
    #[error("band {0} leaves no path from the first to the last cell")]
    BandTooNarrow(usize),
}

/// Row-major `rows x cols` costs, rows are query frames, columns database frames.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix<T> {
    rows: usize,
    cols: usize,
    cost: Vec<T>,
}

impl<T: Real> CostMatrix<T> {
    pub fn new(rows: usize, cols: usize, cost: Vec<T>) -> Result<Self, SeqError> {
        if cost.len() != rows * cols {
            return Err(SeqError::BadCost);
        }
        if cost.iter().any(|&c| !is_finite(c) || c < T::zero()) {
            return Err(SeqError::BadCost);
        }
        Ok(Self { rows, cols, cost })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[T] {
        &self.cost
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.cost[i * self.cols + j]
    }

    pub fn scale(&self, factor: T) -> Self {
        Self { rows: self.rows, cols: self.cols, cost: self.cost.iter().map(|&c| c * factor).collect() }
    }
}

/// `cost[i][j] = hamming(query_i, db_j)`.
pub fn cost_matrix<T: Real>(query: &BinaryCodeSet, db: &BinaryCodeSet) -> Result<CostMatrix<T>, SeqError> {
    if query.bits() != db.bits() {
        return Err(SeqError::LengthMismatch(query.bits(), db.bits()));
    }
    let cols = db.n();
    let cost: Vec<T> = (0..query.n())
        .into_par_iter()
        .flat_map_iter(|i| (0..cols).map(move |j| lit::<T>(hamming_unchecked(query.row(i), db.row(j)) as f64)))
        .collect();
    Ok(CostMatrix { rows: query.n(), cols, cost })
}

/// Min-max normalizes to `[0, 1]` and raises to `gamma`; a constant matrix
/// becomes all zeros.
pub fn contrast_enhance<T: Real>(c: &CostMatrix<T>, gamma: T) -> Result<CostMatrix<T>, SeqError> {
    if !is_finite(gamma) || gamma < T::one() {
        return Err(SeqError::BadGamma(crate::scalar::to_f64(gamma)));
    }
    let (lo, hi) = c
        .cost
        .iter()
        .fold((None::<T>, None::<T>), |(lo, hi), &v| (Some(lo.map_or(v, |l| l.min(v))), Some(hi.map_or(v, |h| h.max(v)))));
    let (lo, hi) = (lo.unwrap_or(T::zero()), hi.unwrap_or(T::zero()));
    let range = hi - lo;
    let cost = if range > T::zero() {
        c.cost.iter().map(|&v| ((v - lo) / range).powf(gamma)).collect()
    } else {
        vec![T::zero(); c.cost.len()]
    };
    Ok(CostMatrix { rows: c.rows, cols: c.cols, cost })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtwPath<T> {
    /// `(query_idx, db_idx)` from `(0, 0)` to `(rows-1, cols-1)`.
    pub steps: Vec<(usize, usize)>,
    pub total_cost: T,
}

/// Optimal monotone unit-step alignment over the full matrix.
pub fn dtw_align<T: Real>(c: &CostMatrix<T>) -> Result<DtwPath<T>, SeqError> {
    dtw_align_banded(c, None)
}

/// [`dtw_align`] restricted to cells within `band` columns of the
/// straight line from `(0, 0)` to `(rows-1, cols-1)`.
///
/// The cost of a path is the sum of every cell it enters. During backtrack
/// ties prefer the diagonal predecessor, then the one that advanced the
/// database index, then the one that advanced the query index.
pub fn dtw_align_banded<T: Real>(c: &CostMatrix<T>, band: Option<usize>) -> Result<DtwPath<T>, SeqError> {
    let (rows, cols) = (c.rows, c.cols);
    if rows == 0 || cols == 0 {
        return Err(SeqError::Empty);
    }
    let inside = |i: usize, j: usize| match band {
        None => true,
        Some(b) => {
            let center = if rows == 1 { 0.0 } else { i as f64 * (cols - 1) as f64 / (rows - 1) as f64 };
            (j as f64 - center).abs() <= b as f64
        }
    };
    // f64 accumulator keeps the recurrence exact for integer costs in f32
    let inf = f64::INFINITY;
    let mut acc = vec![inf; rows * cols];
    let at = |i: usize, j: usize| i * cols + j;
    for i in 0..rows {
        for j in 0..cols {
            if !inside(i, j) {
                continue;
            }
            let here = crate::scalar::to_f64(c.get(i, j));
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[at(i - 1, j - 1)] } else { inf };
                let left = if j > 0 { acc[at(i, j - 1)] } else { inf };
                let up = if i > 0 { acc[at(i - 1, j)] } else { inf };
                diag.min(left).min(up)
            };
            acc[at(i, j)] = best + here;
        }
    }
    let total = acc[at(rows - 1, cols - 1)];
    if !total.is_finite() {
        return Err(SeqError::BandTooNarrow(band.unwrap_or(0)));
    }

    let mut steps = Vec::with_capacity(rows + cols);
    let (mut i, mut j) = (rows - 1, cols - 1);
    steps.push((i, j));
    while (i, j) != (0, 0) {
        let diag = if i > 0 && j > 0 { acc[at(i - 1, j - 1)] } else { inf };
        let left = if j > 0 { acc[at(i, j - 1)] } else { inf };
        let up = if i > 0 { acc[at(i - 1, j)] } else { inf };
        if diag <= left && diag <= up {
            i -= 1;
            j -= 1;
        } else if left <= up {
            j -= 1;
        } else {
            i -= 1;
        }
        steps.push((i, j));
    }
    steps.reverse();
    Ok(DtwPath { steps, total_cost: lit(total) })
}

/// Database index assigned to each query frame: the last path step that
/// visits it.
pub fn align_to_matches<T>(path: &DtwPath<T>) -> Vec<usize> {
    let rows = path.steps.last().map_or(0, |&(i, _)| i + 1);
    let mut out = vec![0; rows];
    for &(i, j) in &path.steps {
        out[i] = j;
    }
    out
}
