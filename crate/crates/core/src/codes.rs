//! Packed binary codes, Hamming distance and exhaustive retrieval.

use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodeError {
    #[error("code length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("bit value {0} at ({1}, {2}) is not 0 or 1")]
    NotABit(u8, usize, usize),
    #[error("expected {expected} words, got {got}")]
    WordCount { expected: usize, got: usize },
    #[error("row {0} has bits set beyond the code length")]
    DirtyTail(usize),
    #[error("code length must be at least 1")]
    EmptyCode,
    #[error("empty database")]
    EmptyDatabase,
    #[error("depth must be at least 1")]
    ZeroDepth,
}

/// `n` codes of `k` bits, row-major, `ceil(k/64)` little-endian-bit words per row.
/// Bit `j` of a row lives in word `j / 64` at position `j % 64`; unused high
/// bits of the last word are always zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryCodeSet {
    n: usize,
    k: usize,
    words: Vec<u64>,
}

#[inline]
pub fn words_per_code(k: usize) -> usize {
    k.div_ceil(64)
}

#[inline]
fn tail_mask(k: usize) -> u64 {
    match k % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

impl BinaryCodeSet {
    pub fn from_words(n: usize, k: usize, words: Vec<u64>) -> Result<Self, CodeError> {
        if k == 0 {
            return Err(CodeError::EmptyCode);
        }
        let wpr = words_per_code(k);
        if words.len() != n * wpr {
            return Err(CodeError::WordCount { expected: n * wpr, got: words.len() });
        }
        let mask = tail_mask(k);
        if let Some(row) = words.chunks_exact(wpr).position(|r| r[wpr - 1] & !mask != 0) {
            return Err(CodeError::DirtyTail(row));
        }
        Ok(Self { n, k, words })
    }

    /// Builds a code set from a bit predicate evaluated row by row.
    pub fn from_fn(n: usize, k: usize, mut bit: impl FnMut(usize, usize) -> bool) -> Result<Self, CodeError> {
        if k == 0 {
            return Err(CodeError::EmptyCode);
        }
        let wpr = words_per_code(k);
        let mut words = vec![0u64; n * wpr];
        for i in 0..n {
            let row = &mut words[i * wpr..(i + 1) * wpr];
            for j in 0..k {
                if bit(i, j) {
                    row[j / 64] |= 1u64 << (j % 64);
                }
            }
        }
        Ok(Self { n, k, words })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bits(&self) -> usize {
        self.k
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn words_per_code(&self) -> usize {
        words_per_code(self.k)
    }

    pub fn row(&self, i: usize) -> &[u64] {
        let wpr = self.words_per_code();
        &self.words[i * wpr..(i + 1) * wpr]
    }

    pub fn bit(&self, i: usize, j: usize) -> bool {
        self.row(i)[j / 64] >> (j % 64) & 1 == 1
    }

    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> BinaryCodeSet {
        let wpr = self.words_per_code();
        BinaryCodeSet { n: range.len(), k: self.k, words: self.words[range.start * wpr..range.end * wpr].to_vec() }
    }

    /// Size of the packed payload in bytes.
    pub fn storage_bytes(&self) -> usize {
        self.words.len() * 8
    }

    /// Row-major 0/1 matrix.
    pub fn unpack(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.n * self.k);
        for i in 0..self.n {
            out.extend((0..self.k).map(|j| self.bit(i, j) as u8));
        }
        out
    }
}

/// Packs a row-major `n x k` matrix of 0/1 values.
pub fn pack(n: usize, k: usize, bits: &[u8]) -> Result<BinaryCodeSet, CodeError> {
    if bits.len() != n * k {
        return Err(CodeError::LengthMismatch(bits.len(), n * k));
    }
    if let Some(pos) = bits.iter().position(|&b| b > 1) {
        return Err(CodeError::NotABit(bits[pos], pos / k, pos % k));
    }
    BinaryCodeSet::from_fn(n, k, |i, j| bits[i * k + j] == 1)
}

/// Number of differing bits between two packed rows.
#[inline]
pub fn hamming(a: &[u64], b: &[u64]) -> Result<u32, CodeError> {
    if a.len() != b.len() {
        return Err(CodeError::LengthMismatch(a.len(), b.len()));
    }
    Ok(hamming_unchecked(a, b))
}

#[inline]
pub(crate) fn hamming_unchecked(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Hit {
    pub distance: u32,
    pub db_idx: usize,
}

/// Ranked retrieval result for one query, ascending by `(distance, db_idx)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    pub query_idx: usize,
    pub hits: Vec<Hit>,
}

impl MatchResult {
    /// Moves local code-set indices into traversal frame indices.
    pub fn offset(mut self, query_offset: usize, db_offset: usize) -> Self {
        self.query_idx += query_offset;
        for h in &mut self.hits {
            h.db_idx += db_offset;
        }
        self
    }

    pub fn top(&self) -> Option<&Hit> {
        self.hits.first()
    }
}

/// Exhaustive scan returning the `depth` nearest codes; ties go to the
/// lower database index and `depth` is clamped to the database size.
pub fn top_k(db: &BinaryCodeSet, query: &[u64], depth: usize) -> Result<Vec<Hit>, CodeError> {
    if depth == 0 {
        return Err(CodeError::ZeroDepth);
    }
    if db.n == 0 {
        return Err(CodeError::EmptyDatabase);
    }
    if query.len() != db.words_per_code() {
        return Err(CodeError::LengthMismatch(query.len(), db.words_per_code()));
    }
    let mut hits: Vec<Hit> = (0..db.n)
        .map(|i| Hit { distance: hamming_unchecked(db.row(i), query), db_idx: i })
        .collect();
    let depth = depth.min(db.n);
    if depth < hits.len() {
        hits.select_nth_unstable(depth - 1);
        hits.truncate(depth);
    }
    hits.sort_unstable();
    Ok(hits)
}

/// Runs [`top_k`] for every query row in parallel.
pub fn search(db: &BinaryCodeSet, queries: &BinaryCodeSet, depth: usize) -> Result<Vec<MatchResult>, CodeError> {
    if db.k != queries.k {
        return Err(CodeError::LengthMismatch(queries.k, db.k));
    }
    (0..queries.n)
        .into_par_iter()
        .map(|q| Ok(MatchResult { query_idx: q, hits: top_k(db, queries.row(q), depth)? }))
        .collect()
}
