//! Binary persistence for feature matrices, hash models and code sets.
//!
//! All three formats are little-endian with a six byte magic:
//!
//! | file     | magic      | header                        | payload                          |
//! |----------|------------|-------------------------------|----------------------------------|
//! | features | `BPFV1\0`  | `u32 n, u32 d, u32 offset`    | `n*d` `f32`, row-major           |
//! | model    | `BPHM1\0`  | `u8 method, u32 d, u32 k`     | mean `d`, W `d*k`, R `k*k` `f64` |
//! | codes    | `BPBC1\0`  | `u32 n, u32 k`                | `n*ceil(k/64)` `u64`             |
//!
//! Matrices are stored row-major. Readers reject trailing bytes so that
//! `write(read(bytes)) == bytes` holds for every accepted input.

use std::io::{self, Read, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::codes::BinaryCodeSet;
use crate::hashlearn::{HashModel, Method};
use crate::scalar::{cast, is_finite, Real};

pub const FEATURE_MAGIC: &[u8; 6] = b"BPFV1\0";
pub const MODEL_MAGIC: &[u8; 6] = b"BPHM1\0";
pub const CODE_MAGIC: &[u8; 6] = b"BPBC1\0";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic")]
    BadMagic,
    #[error("truncated")]
    Truncated,
    #[error("trailing bytes after payload")]
    TrailingBytes,
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("unknown method tag {0}")]
    UnknownMethod(u8),
    #[error("empty code")]
    EmptyCode,
    #[error("invalid contents: {0}")]
    Invalid(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(io::Error),
}

impl From<io::Error> for FormatError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            FormatError::Truncated
        } else {
            FormatError::Io(e)
        }
    }
}

/// Dense row-major feature matrix, one descriptor per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    n: usize,
    d: usize,
    values: Vec<T>,
    /// Index of the first row within its traversal.
    pub frame_offset: usize,
}

impl<T: Real> FeatureMatrix<T> {
    pub fn new(n: usize, d: usize, values: Vec<T>, frame_offset: usize) -> Result<Self, FormatError> {
        if n.checked_mul(d) != Some(values.len()) {
            return Err(FormatError::Invalid(format!(
                "{} values do not fill a {n}x{d} matrix",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !is_finite(*v)) {
            return Err(FormatError::NonFinite(pos));
        }
        Ok(Self { n, d, values, frame_offset })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, FormatError> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(FormatError::Invalid("ragged rows".into()));
        }
        Self::new(rows.len(), d, rows.concat(), 0)
    }

    pub fn from_matrix(m: &DMatrix<T>) -> Result<Self, FormatError> {
        Self::new(m.nrows(), m.ncols(), m.transpose().as_slice().to_vec(), 0)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        // chunks_exact panics on zero width
        (0..self.n).map(move |i| self.row(i))
    }

    /// Copies rows `range` into a new matrix whose offset tracks the slice.
    pub fn slice_rows(&self, range: Range<usize>) -> FeatureMatrix<T> {
        assert!(range.end <= self.n, "row range {range:?} exceeds {} rows", self.n);
        FeatureMatrix {
            n: range.len(),
            d: self.d,
            values: self.values[range.start * self.d..range.end * self.d].to_vec(),
            frame_offset: self.frame_offset + range.start,
        }
    }

    /// Stacks `self` above `other`.
    pub fn vstack(&self, other: &FeatureMatrix<T>) -> Result<FeatureMatrix<T>, FormatError> {
        if self.d != other.d {
            return Err(FormatError::Invalid(format!("dimension mismatch: {} vs {}", self.d, other.d)));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Ok(FeatureMatrix { n: self.n + other.n, d: self.d, values, frame_offset: self.frame_offset })
    }

    pub fn to_matrix(&self) -> DMatrix<T> {
        DMatrix::from_row_slice(self.n, self.d, &self.values)
    }

    pub fn cast<U: Real>(&self) -> FeatureMatrix<U> {
        FeatureMatrix {
            n: self.n,
            d: self.d,
            values: self.values.iter().map(|&v| cast(v)).collect(),
            frame_offset: self.frame_offset,
        }
    }
}

fn read_magic<R: Read>(source: &mut R, magic: &[u8; 6]) -> Result<(), FormatError> {
    let mut buf = [0u8; 6];
    source.read_exact(&mut buf)?;
    if &buf != magic {
        return Err(FormatError::BadMagic);
    }
    Ok(())
}

fn read_u32<R: Read>(source: &mut R) -> Result<u32, FormatError> {
    let mut buf = [0u8; 4];
    source.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn to_u32(v: usize, what: &str) -> Result<u32, FormatError> {
    u32::try_from(v).map_err(|_| FormatError::Invalid(format!("{what} {v} exceeds u32")))
}

/// Reads exactly `len` bytes without trusting `len` for the allocation size.
fn read_payload<R: Read>(source: &mut R, len: u64) -> Result<Vec<u8>, FormatError> {
    let mut buf = Vec::new();
    source.take(len).read_to_end(&mut buf)?;
    if (buf.len() as u64) < len {
        return Err(FormatError::Truncated);
    }
    Ok(buf)
}

fn expect_eof<R: Read>(source: &mut R) -> Result<(), FormatError> {
    let mut probe = [0u8; 1];
    loop {
        match source.read(&mut probe) {
            Ok(0) => return Ok(()),
            Ok(_) => return Err(FormatError::TrailingBytes),
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
}

fn payload_len(count: u64, width: u64) -> Result<u64, FormatError> {
    count
        .checked_mul(width)
        .ok_or_else(|| FormatError::Invalid("payload size overflows".into()))
}

/// Writes `m` as `f32`; returns the number of bytes written.
pub fn write_features<T: Real, W: Write>(m: &FeatureMatrix<T>, sink: &mut W) -> Result<usize, FormatError> {
    let mut buf = Vec::with_capacity(18 + 4 * m.values.len());
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&to_u32(m.n, "row count")?.to_le_bytes());
    buf.extend_from_slice(&to_u32(m.d, "dimension")?.to_le_bytes());
    buf.extend_from_slice(&to_u32(m.frame_offset, "frame offset")?.to_le_bytes());
    for &v in &m.values {
        let v: f32 = cast(v);
        if !v.is_finite() {
            return Err(FormatError::Invalid("value overflows f32".into()));
        }
        buf.extend_from_slice(&v.to_le_bytes());
    }
    sink.write_all(&buf)?;
    Ok(buf.len())
}

pub fn read_features<R: Read>(source: &mut R) -> Result<FeatureMatrix<f32>, FormatError> {
    read_magic(source, FEATURE_MAGIC)?;
    let n = read_u32(source)? as usize;
    let d = read_u32(source)? as usize;
    let frame_offset = read_u32(source)? as usize;
    let bytes = read_payload(source, payload_len(n as u64 * d as u64, 4)?)?;
    expect_eof(source)?;
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    FeatureMatrix::new(n, d, values, frame_offset)
}

/// Imports one descriptor per line, values comma separated, no header.
pub fn read_features_csv<R: Read>(source: R) -> Result<FeatureMatrix<f32>, FormatError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(source);
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|field| {
                field
                    .parse::<f32>()
                    .map_err(|e| FormatError::Invalid(format!("line {}: {field:?}: {e}", line + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    FeatureMatrix::from_rows(&rows)
}

pub fn write_model<T: Real, W: Write>(model: &HashModel<T>, sink: &mut W) -> Result<usize, FormatError> {
    let (d, k) = (model.dim(), model.bits());
    let mut buf = Vec::with_capacity(15 + 8 * (d + d * k + k * k));
    buf.extend_from_slice(MODEL_MAGIC);
    buf.push(model.method().tag());
    buf.extend_from_slice(&to_u32(d, "dimension")?.to_le_bytes());
    buf.extend_from_slice(&to_u32(k, "code length")?.to_le_bytes());
    let mut put = |v: T| buf.extend_from_slice(&cast::<T, f64>(v).to_le_bytes());
    model.mean().iter().for_each(|&v| put(v));
    let w = model.projection();
    for i in 0..d {
        for j in 0..k {
            put(w[(i, j)]);
        }
    }
    let r = model.rotation();
    for i in 0..k {
        for j in 0..k {
            put(r[(i, j)]);
        }
    }
    sink.write_all(&buf)?;
    Ok(buf.len())
}

pub fn read_model<R: Read>(source: &mut R) -> Result<HashModel<f64>, FormatError> {
    read_magic(source, MODEL_MAGIC)?;
    let mut tag = [0u8; 1];
    source.read_exact(&mut tag)?;
    let method = Method::from_tag(tag[0]).ok_or(FormatError::UnknownMethod(tag[0]))?;
    let d = read_u32(source)? as usize;
    let k = read_u32(source)? as usize;
    if k == 0 {
        return Err(FormatError::EmptyCode);
    }
    let count = (d as u64)
        .checked_add(d as u64 * k as u64)
        .and_then(|c| c.checked_add(k as u64 * k as u64))
        .ok_or_else(|| FormatError::Invalid("payload size overflows".into()))?;
    let bytes = read_payload(source, payload_len(count, 8)?)?;
    expect_eof(source)?;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NonFinite(pos));
    }
    let mean = values[..d].to_vec();
    let w = DMatrix::from_row_slice(d, k, &values[d..d + d * k]);
    let r = DMatrix::from_row_slice(k, k, &values[d + d * k..]);
    HashModel::from_parts(method, mean.into(), w, Some(r)).map_err(|e| FormatError::Invalid(e.to_string()))
}

pub fn write_codes<W: Write>(codes: &BinaryCodeSet, sink: &mut W) -> Result<usize, FormatError> {
    let mut buf = Vec::with_capacity(14 + 8 * codes.words().len());
    buf.extend_from_slice(CODE_MAGIC);
    buf.extend_from_slice(&to_u32(codes.n(), "code count")?.to_le_bytes());
    buf.extend_from_slice(&to_u32(codes.bits(), "code length")?.to_le_bytes());
    for w in codes.words() {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    sink.write_all(&buf)?;
    Ok(buf.len())
}

pub fn read_codes<R: Read>(source: &mut R) -> Result<BinaryCodeSet, FormatError> {
    read_magic(source, CODE_MAGIC)?;
    let n = read_u32(source)? as usize;
    let k = read_u32(source)? as usize;
    if k == 0 {
        return Err(FormatError::EmptyCode);
    }
    let words_per_row = k.div_ceil(64) as u64;
    let bytes = read_payload(source, payload_len(n as u64 * words_per_row, 8)?)?;
    expect_eof(source)?;
    let words = bytes
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    BinaryCodeSet::from_words(n, k, words).map_err(|e| FormatError::Invalid(e.to_string()))
}

/// Format of a persisted file, identified by its magic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Features,
    Model,
    Codes,
}

pub fn sniff(bytes: &[u8]) -> Option<FileKind> {
    match bytes.get(..6)? {
        m if m == FEATURE_MAGIC => Some(FileKind::Features),
        m if m == MODEL_MAGIC => Some(FileKind::Model),
        m if m == CODE_MAGIC => Some(FileKind::Codes),
        _ => None,
    }
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix<f32>, FormatError> {
    let bytes = std::fs::read(path)?;
    read_features(&mut bytes.as_slice())
}

pub fn save_features<T: Real>(m: &FeatureMatrix<T>, path: impl AsRef<Path>) -> Result<usize, FormatError> {
    let mut buf = Vec::new();
    let n = write_features(m, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(n)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<HashModel<f64>, FormatError> {
    let bytes = std::fs::read(path)?;
    read_model(&mut bytes.as_slice())
}

pub fn save_model<T: Real>(model: &HashModel<T>, path: impl AsRef<Path>) -> Result<usize, FormatError> {
    let mut buf = Vec::new();
    let n = write_model(model, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(n)
}

pub fn load_codes(path: impl AsRef<Path>) -> Result<BinaryCodeSet, FormatError> {
    let bytes = std::fs::read(path)?;
    read_codes(&mut bytes.as_slice())
}

pub fn save_codes(codes: &BinaryCodeSet, path: impl AsRef<Path>) -> Result<usize, FormatError> {
    let mut buf = Vec::new();
    let n = write_codes(codes, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(n)
}
