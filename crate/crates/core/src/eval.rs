//! Retrieval metrics: recall@1 within the margin, precision-recall over
//! retrieval depth, and storage accounting for features and codes.
//!
//! Every function here takes match results in traversal coordinates (see
//! [`MatchResult::offset`]).

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::codes::{search, BinaryCodeSet, CodeError, Hit, MatchResult};
use crate::dataset::{DatasetError, TraversalPair};
use crate::featio::FeatureMatrix;
use crate::scalar::{to_f64, Real};
use crate::seqmatch::{align_to_matches, contrast_enhance, cost_matrix, dtw_align, SeqError};

/// Depths written to the PR report unless overridden; [`ALL`] stands for
/// the whole test database.
pub const DEFAULT_DEPTHS: [usize; 8] = [1, 2, 5, 10, 20, 50, 100, ALL];
pub const ALL: usize = usize::MAX;

/// Clamps depths to `db_len` (so [`ALL`] becomes the database size), then
/// sorts and deduplicates.
pub fn resolve_depths(depths: &[usize], db_len: usize) -> Vec<usize> {
    let mut out: Vec<usize> = depths.iter().map(|&d| d.min(db_len)).collect();
    out.sort_unstable();
    out.dedup();
    out
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no queries to evaluate")]
    NoQueries,
    #[error("query {0} has no hits")]
    EmptyHits(usize),
    #[error("query {query} has {have} hits but depth {depth} was requested")]
    InsufficientDepth { query: usize, have: usize, depth: usize },
    #[error("depth must be at least 1")]
    ZeroDepth,
    #[error("{got} assignments for {expected} queries")]
    AssignmentLength { expected: usize, got: usize },
    #[error("codes cover {got} frames but the {which} traversal has {expected}")]
    CodeRows { which: &'static str, expected: usize, got: usize },
    #[error(transparent)]
    Code(#[from] CodeError),
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Searches the test queries against the test database, given codes for the
/// full traversals, and returns results in traversal coordinates.
pub fn code_matches(
    pair: &TraversalPair,
    db: &BinaryCodeSet,
    query: &BinaryCodeSet,
    depth: usize,
) -> Result<Vec<MatchResult>, EvalError> {
    if db.n() != pair.db_len() {
        return Err(EvalError::CodeRows { which: "database", expected: pair.db_len(), got: db.n() });
    }
    if query.n() != pair.query_len() {
        return Err(EvalError::CodeRows { which: "query", expected: pair.query_len(), got: query.n() });
    }
    let s = pair.splits();
    let hits = search(&db.slice_rows(s.test_db.clone()), &query.slice_rows(s.test_query.clone()), depth)?;
    Ok(hits.into_iter().map(|m| m.offset(s.test_query.start, s.test_db.start)).collect())
}

/// Cosine counterpart of [`code_matches`] on raw features.
pub fn feature_matches<T: Real>(
    pair: &TraversalPair,
    db: &FeatureMatrix<T>,
    query: &FeatureMatrix<T>,
    depth: usize,
) -> Result<Vec<MatchResult>, EvalError> {
    crate::dataset::check_features(pair, db, query)?;
    let s = pair.splits();
    let hits = cosine_search(&db.slice_rows(s.test_db.clone()), &query.slice_rows(s.test_query.clone()), depth)?;
    Ok(hits.into_iter().map(|m| m.offset(s.test_query.start, s.test_db.start)).collect())
}

/// DTW alignment of the test queries against the test database on the
/// Hamming cost matrix, optionally contrast-enhanced with `gamma`. Returns
/// one database frame per test query, in traversal coordinates.
pub fn dtw_assignment(
    pair: &TraversalPair,
    db: &BinaryCodeSet,
    query: &BinaryCodeSet,
    gamma: Option<f64>,
) -> Result<Vec<usize>, EvalError> {
    if db.n() != pair.db_len() {
        return Err(EvalError::CodeRows { which: "database", expected: pair.db_len(), got: db.n() });
    }
    if query.n() != pair.query_len() {
        return Err(EvalError::CodeRows { which: "query", expected: pair.query_len(), got: query.n() });
    }
    let s = pair.splits();
    let cost = cost_matrix::<f64>(&query.slice_rows(s.test_query.clone()), &db.slice_rows(s.test_db.clone()))?;
    let cost = match gamma {
        Some(g) => contrast_enhance(&cost, g)?,
        None => cost,
    };
    let path = dtw_align(&cost)?;
    Ok(align_to_matches(&path).into_iter().map(|j| j + s.test_db.start).collect())
}

/// Percentage of queries whose top hit is a true positive.
pub fn recall_at_1(pair: &TraversalPair, matches: &[MatchResult]) -> Result<f64, EvalError> {
    if matches.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let mut correct = 0usize;
    for m in matches {
        let top = m.top().ok_or(EvalError::EmptyHits(m.query_idx))?;
        if pair.is_true_positive(m.query_idx, top.db_idx)? {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / matches.len() as f64)
}

/// Percentage of queries `start + i` whose assigned database frame
/// `assignment[i]` is a true positive.
pub fn assignment_recall(pair: &TraversalPair, query_start: usize, assignment: &[usize]) -> Result<f64, EvalError> {
    if assignment.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let mut correct = 0usize;
    for (i, &j) in assignment.iter().enumerate() {
        if pair.is_true_positive(query_start + i, j)? {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / assignment.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub depth: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    /// `depth,precision,recall` lines.
    pub fn write_csv<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        writeln!(sink, "depth,precision,recall")?;
        for p in &self.points {
            writeln!(sink, "{},{},{}", p.depth, p.precision, p.recall)?;
        }
        Ok(())
    }
}

/// Averages `precision = m/depth` and `recall = m/(2*margin+1)` over queries,
/// where `m` counts true positives among the top `depth` hits. Depths are
/// sorted and deduplicated; the denominator is not reduced for queries whose
/// window is clipped at a traversal border.
pub fn pr_curve(pair: &TraversalPair, matches: &[MatchResult], depths: &[usize]) -> Result<PrCurve, EvalError> {
    if matches.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let mut depths = depths.to_vec();
    depths.sort_unstable();
    depths.dedup();
    if depths.first() == Some(&0) {
        return Err(EvalError::ZeroDepth);
    }
    let max_depth = depths.last().copied().unwrap_or(0);
    let positives = pair.positives_per_query();

    // per query: cumulative true-positive count at each requested depth
    let counts: Vec<Vec<usize>> = matches
        .iter()
        .map(|m| {
            if m.hits.len() < max_depth {
                return Err(EvalError::InsufficientDepth { query: m.query_idx, have: m.hits.len(), depth: max_depth });
            }
            let mut out = Vec::with_capacity(depths.len());
            let mut tp = 0usize;
            let mut next = depths.iter().peekable();
            for (rank, hit) in m.hits[..max_depth].iter().enumerate() {
                if pair.is_true_positive(m.query_idx, hit.db_idx)? {
                    tp += 1;
                }
                while next.peek() == Some(&&(rank + 1)) {
                    out.push(tp);
                    next.next();
                }
            }
            Ok(out)
        })
        .collect::<Result<_, EvalError>>()?;

    let q = matches.len();
    let points = depths
        .iter()
        .enumerate()
        .map(|(t, &depth)| {
            // integer numerators and denominators, divided once
            let m_sum = counts.iter().map(|c| c[t]).sum::<usize>() as f64;
            PrPoint { depth, precision: m_sum / (depth * q) as f64, recall: m_sum / (positives * q) as f64 }
        })
        .collect();
    Ok(PrCurve { points })
}

/// Exhaustive cosine-similarity retrieval on raw features; the real-valued
/// baseline the binary codes are compared against. Local row indices.
pub fn cosine_search<T: Real>(
    db: &FeatureMatrix<T>,
    queries: &FeatureMatrix<T>,
    depth: usize,
) -> Result<Vec<MatchResult>, EvalError> {
    if depth == 0 {
        return Err(EvalError::ZeroDepth);
    }
    let norm = |r: &[T]| r.iter().map(|&v| to_f64(v) * to_f64(v)).sum::<f64>().sqrt();
    let db_rows: Vec<(Vec<f64>, f64)> =
        db.rows().map(|r| (r.iter().map(|&v| to_f64(v)).collect(), norm(r))).collect();
    let depth = depth.min(db.n());
    Ok((0..queries.n())
        .into_par_iter()
        .map(|qi| {
            let q: Vec<f64> = queries.row(qi).iter().map(|&v| to_f64(v)).collect();
            let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut scored: Vec<(f64, usize)> = db_rows
                .iter()
                .enumerate()
                .map(|(j, (r, rn))| {
                    let dot: f64 = r.iter().zip(&q).map(|(a, b)| a * b).sum();
                    let denom = rn * qn;
                    let sim = if denom > 0.0 { dot / denom } else { 0.0 };
                    (-sim, j)
                })
                .collect();
            scored.sort_by(|a, b| a.partial_cmp(b).expect("finite similarity"));
            // Hamming-style distance slot carries the rank for raw retrieval
            let hits = scored[..depth].iter().enumerate().map(|(r, &(_, j))| Hit { distance: r as u32, db_idx: j }).collect();
            MatchResult { query_idx: qi, hits }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StorageSize {
    pub bits: u128,
    pub mebibytes: f64,
}

/// `bits = n * dim * bits_per_dim`, `MiB = bits / 8 / 2^20`.
pub fn storage_size(n_vectors: u64, dim: u64, bits_per_dim: u64) -> StorageSize {
    let bits = n_vectors as u128 * dim as u128 * bits_per_dim as u128;
    StorageSize { bits, mebibytes: bits as f64 / 8.0 / (1u64 << 20) as f64 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Splits;

    fn pair(n: usize, margin: usize) -> TraversalPair {
        TraversalPair::synchronized(n, margin, Splits { train_db: 0..0, train_query: 0..0, test_db: 0..n, test_query: 0..n })
            .unwrap()
    }

    fn single_hits(tops: &[(usize, usize)]) -> Vec<MatchResult> {
        tops.iter()
            .map(|&(q, d)| MatchResult { query_idx: q, hits: vec![Hit { distance: 0, db_idx: d }] })
            .collect()
    }

    #[test]
    fn recall_exact_hits() {
        let p = pair(20, 2);
        let m = single_hits(&(0..20).map(|i| (i, i)).collect::<Vec<_>>());
        assert_eq!(recall_at_1(&p, &m).unwrap(), 100.0);
    }

    #[test]
    fn recall_margin_zero_is_strict() {
        let p = pair(20, 0);
        let m = single_hits(&(0..20).map(|i| (i, if i % 2 == 0 { i + 1 } else { i - 1 })).collect::<Vec<_>>());
        assert_eq!(recall_at_1(&p, &m).unwrap(), 0.0);
    }

    #[test]
    fn recall_hand_tally() {
        let p = pair(30, 2);
        // 10 queries: offsets 0,1,2,3,-2,-3,5,0,2,-1 -> 7 within margin 2
        let offsets = [0i64, 1, 2, 3, -2, -3, 5, 0, 2, -1];
        let tops: Vec<(usize, usize)> =
            offsets.iter().enumerate().map(|(i, &o)| (10 + i, (10 + i as i64 + o) as usize)).collect();
        assert_eq!(recall_at_1(&p, &single_hits(&tops)).unwrap(), 70.0);
    }

    #[test]
    fn recall_errors() {
        let p = pair(5, 0);
        assert!(matches!(recall_at_1(&p, &[]), Err(EvalError::NoQueries)));
        let empty = vec![MatchResult { query_idx: 0, hits: vec![] }];
        assert!(matches!(recall_at_1(&p, &empty), Err(EvalError::EmptyHits(0))));
        assert!(matches!(recall_at_1(&p, &single_hits(&[(9, 0)])), Err(EvalError::Dataset(_))));
    }

    #[test]
    fn pr_formula_readout() {
        let p = pair(40, 5);
        assert_eq!(p.positives_per_query(), 11);
        let m = single_hits(&(10..30).map(|i| (i, i)).collect::<Vec<_>>());
        let curve = pr_curve(&p, &m, &[1]).unwrap();
        assert_eq!(curve.points[0].precision, 1.0);
        assert_eq!(curve.points[0].recall, 1.0 / 11.0);
        assert!(matches!(pr_curve(&p, &m, &[2]), Err(EvalError::InsufficientDepth { .. })));
        assert!(matches!(pr_curve(&p, &m, &[0, 1]), Err(EvalError::ZeroDepth)));
    }

    #[test]
    fn pr_full_depth_asymptote() {
        let n = 40;
        let p = pair(n, 5);
        let all: Vec<MatchResult> = (10..30)
            .map(|q| MatchResult { query_idx: q, hits: (0..n).map(|d| Hit { distance: 0, db_idx: d }).collect() })
            .collect();
        let curve = pr_curve(&p, &all, &[n]).unwrap();
        assert_eq!(curve.points[0].recall, 1.0);
        assert_eq!(curve.points[0].precision, 11.0 / n as f64);
    }

    #[test]
    fn csv_layout() {
        let curve = PrCurve { points: vec![PrPoint { depth: 1, precision: 1.0, recall: 0.5 }] };
        let mut out = Vec::new();
        curve.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "depth,precision,recall\n1,1,0.5\n");
    }

    #[test]
    fn cosine_prefers_direction() {
        let db = FeatureMatrix::new(3, 2, vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0], 0).unwrap();
        let q = FeatureMatrix::new(1, 2, vec![0.1, 5.0], 0).unwrap();
        let hits = &cosine_search(&db, &q, 3).unwrap()[0].hits;
        assert_eq!(hits.iter().map(|h| h.db_idx).collect::<Vec<_>>(), vec![1, 0, 2]);
    }

    #[test]
    fn depth_resolution() {
        assert_eq!(resolve_depths(&DEFAULT_DEPTHS, 40), vec![1, 2, 5, 10, 20, 40]);
        assert_eq!(resolve_depths(&[5, 1, 5], 3), vec![1, 3]);
    }

    fn random_rankings(n: usize, margin: usize, seed: u64) -> (TraversalPair, Vec<MatchResult>) {
        use rand::seq::SliceRandom;
        let p = pair(n, margin);
        let mut rng = crate::seed::rng(seed, 0);
        let matches = (0..n)
            .map(|q| {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng);
                MatchResult { query_idx: q, hits: order.into_iter().map(|d| Hit { distance: 0, db_idx: d }).collect() }
            })
            .collect();
        (p, matches)
    }

    proptest::proptest! {
        #[test]
        fn recall_grows_with_depth(n in 3usize..30, margin in 0usize..4, seed in 0u64..1000) {
            let (p, m) = random_rankings(n, margin, seed);
            let curve = pr_curve(&p, &m, &(1..=n).collect::<Vec<_>>()).unwrap();
            for w in curve.points.windows(2) {
                proptest::prop_assert!(w[1].recall >= w[0].recall);
            }
            for pt in &curve.points {
                proptest::prop_assert!((0.0..=1.0).contains(&pt.precision) && (0.0..=1.0).contains(&pt.recall));
            }
        }

        #[test]
        fn recall_at_1_is_precision_at_1(n in 3usize..30, margin in 0usize..4, seed in 0u64..1000) {
            let (p, m) = random_rankings(n, margin, seed);
            let p1 = pr_curve(&p, &m, &[1]).unwrap().points[0].precision;
            let r1 = recall_at_1(&p, &m).unwrap();
            proptest::prop_assert!((r1 - 100.0 * p1).abs() < 1e-9);
        }
    }

    #[test]
    fn storage_is_linear() {
        let base = storage_size(10, 20, 3);
        assert_eq!(storage_size(20, 20, 3).bits, 2 * base.bits);
        assert_eq!(storage_size(10, 40, 3).bits, 2 * base.bits);
        assert_eq!(storage_size(10, 20, 6).bits, 2 * base.bits);
        assert_eq!(storage_size(1, 1, 1 << 23).mebibytes, 1.0);
    }
}
