//! Paired traversals with ground-truth frame matching, train/test splits,
//! supervision labels and the margin-based true-positive rule.

mod manifest;
mod synth;

use std::collections::BTreeSet;
use std::ops::{Range, RangeInclusive};

use thiserror::Error;

use crate::featio::FeatureMatrix;
use crate::scalar::Real;

pub use manifest::{load_traversal_pair, parse_manifest, FmSpec, FramesSpec, Manifest};
pub use synth::{corrupt_rows, synth_traversals, SynthConfig, Warp};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("fm has {got} entries but the query traversal has {expected} frames")]
    FmLength { expected: usize, got: usize },
    #[error("fm({query}) = {db} is outside the {db_len} database frames")]
    FmOutOfBounds { query: usize, db: usize, db_len: usize },
    #[error("{name} range {range:?} exceeds {len} frames")]
    RangeOutOfBounds { name: &'static str, range: Range<usize>, len: usize },
    #[error("train and test ranges overlap in the {0} traversal")]
    OverlappingSplit(&'static str),
    #[error("{0} training range is empty")]
    EmptyTrain(&'static str),
    #[error("{which} index {idx} is outside {len} frames")]
    IndexOutOfBounds { which: &'static str, idx: usize, len: usize },
    #[error("label row {row} has column {col} >= {n_cols}")]
    LabelColumn { row: usize, col: usize, n_cols: usize },
    #[error("{which} features have {got} rows but the traversal has {expected} frames")]
    FeatureRows { which: &'static str, expected: usize, got: usize },
    #[error("database features are {db}-D but query features are {query}-D")]
    FeatureDims { db: usize, query: usize },
    #[error("synthetic data: {0}")]
    Synth(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Frame-match specification before validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameMatch {
    /// Synchronized traversals: query frame `i` shows db frame `i`.
    Identity,
    Explicit(Vec<usize>),
}

/// Half-open train/test index ranges for both traversals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train_db: Range<usize>,
    pub train_query: Range<usize>,
    pub test_db: Range<usize>,
    pub test_query: Range<usize>,
}

/// Database and query traversals of one route with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TraversalPair {
    db_frames: Vec<u64>,
    query_frames: Vec<u64>,
    fm: Vec<usize>,
    margin: usize,
    splits: Splits,
    fps: f64,
}

fn disjoint(a: &Range<usize>, b: &Range<usize>) -> bool {
    a.is_empty() || b.is_empty() || a.end <= b.start || b.end <= a.start
}

fn window(center: usize, margin: usize, within: &Range<usize>) -> RangeInclusive<usize> {
    let lo = center.saturating_sub(margin).max(within.start);
    let hi = center.saturating_add(margin).min(within.end.saturating_sub(1));
    lo..=hi
}

impl TraversalPair {
    pub fn new(
        db_frames: Vec<u64>,
        query_frames: Vec<u64>,
        fm: FrameMatch,
        margin: usize,
        splits: Splits,
        fps: f64,
    ) -> Result<Self, DatasetError> {
        let (db_len, query_len) = (db_frames.len(), query_frames.len());
        let fm = match fm {
            FrameMatch::Identity => (0..query_len).collect(),
            FrameMatch::Explicit(v) => v,
        };
        if fm.len() != query_len {
            return Err(DatasetError::FmLength { expected: query_len, got: fm.len() });
        }
        if let Some((query, &db)) = fm.iter().enumerate().find(|(_, &j)| j >= db_len) {
            return Err(DatasetError::FmOutOfBounds { query, db, db_len });
        }
        for (name, range, len) in [
            ("train_db", &splits.train_db, db_len),
            ("test_db", &splits.test_db, db_len),
            ("train_query", &splits.train_query, query_len),
            ("test_query", &splits.test_query, query_len),
        ] {
            if range.start > range.end || range.end > len {
                return Err(DatasetError::RangeOutOfBounds { name, range: range.clone(), len });
            }
        }
        if !disjoint(&splits.train_db, &splits.test_db) {
            return Err(DatasetError::OverlappingSplit("database"));
        }
        if !disjoint(&splits.train_query, &splits.test_query) {
            return Err(DatasetError::OverlappingSplit("query"));
        }
        if !fps.is_finite() || fps < 0.0 {
            return Err(DatasetError::Manifest(format!("fps must be a non-negative number, got {fps}")));
        }
        Ok(Self { db_frames, query_frames, fm, margin, splits, fps })
    }

    /// Synchronized traversals of `n` frames each with `fm = identity`.
    pub fn synchronized(n: usize, margin: usize, splits: Splits) -> Result<Self, DatasetError> {
        let frames: Vec<u64> = (0..n as u64).collect();
        Self::new(frames.clone(), frames, FrameMatch::Identity, margin, splits, 1.0)
    }

    pub fn db_len(&self) -> usize {
        self.db_frames.len()
    }

    pub fn query_len(&self) -> usize {
        self.query_frames.len()
    }

    pub fn db_frames(&self) -> &[u64] {
        &self.db_frames
    }

    pub fn query_frames(&self) -> &[u64] {
        &self.query_frames
    }

    pub fn fm(&self) -> &[usize] {
        &self.fm
    }

    pub fn margin(&self) -> usize {
        self.margin
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    /// Ground-truth positives per query under the retrieval protocol.
    pub fn positives_per_query(&self) -> usize {
        2 * self.margin + 1
    }

    /// Same pair with a different margin.
    pub fn with_margin(mut self, margin: usize) -> Self {
        self.margin = margin;
        self
    }

    /// `|retrieved - fm(query)| <= margin`, indices in traversal coordinates.
    pub fn is_true_positive(&self, query_idx: usize, retrieved_db_idx: usize) -> Result<bool, DatasetError> {
        if query_idx >= self.query_len() {
            return Err(DatasetError::IndexOutOfBounds { which: "query", idx: query_idx, len: self.query_len() });
        }
        if retrieved_db_idx >= self.db_len() {
            return Err(DatasetError::IndexOutOfBounds {
                which: "database",
                idx: retrieved_db_idx,
                len: self.db_len(),
            });
        }
        Ok(self.fm[query_idx].abs_diff(retrieved_db_idx) <= self.margin)
    }

    /// Number of training rows: database training frames followed by query
    /// training frames.
    pub fn train_rows(&self) -> usize {
        self.splits.train_db.len() + self.splits.train_query.len()
    }
}

/// Sparse binary label matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimilarityLabels {
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
}

impl SimilarityLabels {
    /// Builds from per-row column lists; columns are sorted and deduplicated.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<usize>>) -> Result<Self, DatasetError> {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_unstable();
            row.dedup();
            if let Some(&col) = row.last().filter(|&&c| c >= n_cols) {
                return Err(DatasetError::LabelColumn { row: i, col, n_cols });
            }
            indices.extend(row);
            indptr.push(indices.len());
        }
        Ok(Self { n_cols, indptr, indices })
    }

    pub fn n_rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[self.indptr[i]..self.indptr[i + 1]]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.row(i).binary_search(&j).is_ok()
    }

    /// Dense row-major 0/1 copy, for small problems and tests.
    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        (0..self.n_rows())
            .map(|i| {
                let mut r = vec![0u8; self.n_cols];
                self.row(i).iter().for_each(|&j| r[j] = 1);
                r
            })
            .collect()
    }
}

/// One label per training image. Rows and columns are ordered as database
/// training frames, then query training frames.
///
/// A query image `i` is similar to query images `i ± margin` and to database
/// images `fm(i) ± margin`. A database image `j` is similar to database images
/// `j ± margin` and to query images `p ± margin` for every preimage `p` of `j`
/// under `fm`. Windows are clipped to the training ranges.
pub fn build_similarity_labels(pair: &TraversalPair) -> Result<SimilarityLabels, DatasetError> {
    let Splits { train_db, train_query, .. } = pair.splits();
    if train_db.is_empty() {
        return Err(DatasetError::EmptyTrain("database"));
    }
    if train_query.is_empty() {
        return Err(DatasetError::EmptyTrain("query"));
    }
    let m = pair.margin();
    let nd = train_db.len();
    let db_col = |j: usize| j - train_db.start;
    let query_col = |i: usize| nd + i - train_query.start;

    let mut preimages: Vec<Vec<usize>> = vec![Vec::new(); nd];
    for i in train_query.clone() {
        let j = pair.fm()[i];
        if train_db.contains(&j) {
            preimages[db_col(j)].push(i);
        }
    }

    let mut rows = Vec::with_capacity(pair.train_rows());
    for j in train_db.clone() {
        let mut cols: BTreeSet<usize> = window(j, m, train_db).map(db_col).collect();
        for &p in &preimages[db_col(j)] {
            cols.extend(window(p, m, train_query).map(query_col));
        }
        rows.push(cols.into_iter().collect());
    }
    for i in train_query.clone() {
        let mut cols: BTreeSet<usize> = window(i, m, train_query).map(query_col).collect();
        let matched = pair.fm()[i];
        cols.extend(window(matched, m, train_db).map(db_col));
        rows.push(cols.into_iter().collect());
    }
    SimilarityLabels::from_rows(pair.train_rows(), rows)
}

/// Checks that full-traversal feature matrices line up with `pair`.
pub fn check_features<T: Real>(pair: &TraversalPair, db: &FeatureMatrix<T>, query: &FeatureMatrix<T>) -> Result<(), DatasetError> {
    if db.n() != pair.db_len() {
        return Err(DatasetError::FeatureRows { which: "database", expected: pair.db_len(), got: db.n() });
    }
    if query.n() != pair.query_len() {
        return Err(DatasetError::FeatureRows { which: "query", expected: pair.query_len(), got: query.n() });
    }
    if db.d() != query.d() {
        return Err(DatasetError::FeatureDims { db: db.d(), query: query.d() });
    }
    Ok(())
}

/// Training rows in label order: database training frames, then query
/// training frames.
pub fn training_features<T: Real>(
    pair: &TraversalPair,
    db: &FeatureMatrix<T>,
    query: &FeatureMatrix<T>,
) -> Result<FeatureMatrix<T>, DatasetError> {
    check_features(pair, db, query)?;
    let s = pair.splits();
    let stacked = db.slice_rows(s.train_db.clone()).vstack(&query.slice_rows(s.train_query.clone()));
    Ok(stacked.expect("dimensions checked"))
}
