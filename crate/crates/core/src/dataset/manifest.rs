//! TOML experiment manifests.
//!
//! ```toml
//! db_frames = 16000          # frame count, or an explicit id list
//! query_frames = 16000
//! fm = "identity"            # "identity", an index list, or a path to one index per line
//! margin = 5
//! train_db = [0, 10000]      # half-open [start, end)
//! train_query = [0, 10000]
//! test_db = [11000, 16000]
//! test_query = [11000, 16000]
//! fps = 2.0
//! db_features = "db.bpfv"    # optional
//! query_features = "query.bpfv"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatasetError, FrameMatch, Splits, TraversalPair};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FramesSpec {
    Count(u64),
    Ids(Vec<u64>),
}

impl FramesSpec {
    fn ids(&self) -> Vec<u64> {
        match self {
            FramesSpec::Count(n) => (0..*n).collect(),
            FramesSpec::Ids(ids) => ids.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FmSpec {
    /// `"identity"` or a path, relative paths resolved against the manifest.
    Named(String),
    List(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub db_frames: FramesSpec,
    pub query_frames: FramesSpec,
    pub fm: FmSpec,
    pub margin: usize,
    pub train_db: [usize; 2],
    pub train_query: [usize; 2],
    pub test_db: [usize; 2],
    pub test_query: [usize; 2],
    pub fps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub db_features: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_features: Option<PathBuf>,
}

fn range([start, end]: [usize; 2], name: &str) -> Result<std::ops::Range<usize>, DatasetError> {
    if start > end {
        return Err(DatasetError::Manifest(format!("{name} = [{start}, {end}] is reversed")));
    }
    Ok(start..end)
}

fn read_fm_file(path: &Path) -> Result<Vec<usize>, DatasetError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DatasetError::Manifest(format!("fm file {}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.trim()
                .parse()
                .map_err(|e| DatasetError::Manifest(format!("fm file {} line {}: {e}", path.display(), n + 1)))
        })
        .collect()
}

impl Manifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    /// Validates the manifest into a pair; `base` anchors relative paths.
    pub fn resolve(&self, base: &Path) -> Result<TraversalPair, DatasetError> {
        let fm = match &self.fm {
            FmSpec::Named(s) if s == "identity" => FrameMatch::Identity,
            FmSpec::Named(p) => FrameMatch::Explicit(read_fm_file(&base.join(p))?),
            FmSpec::List(v) => FrameMatch::Explicit(v.clone()),
        };
        let splits = Splits {
            train_db: range(self.train_db, "train_db")?,
            train_query: range(self.train_query, "train_query")?,
            test_db: range(self.test_db, "test_db")?,
            test_query: range(self.test_query, "test_query")?,
        };
        TraversalPair::new(self.db_frames.ids(), self.query_frames.ids(), fm, self.margin, splits, self.fps)
    }

    pub fn db_features_path(&self, base: &Path) -> Option<PathBuf> {
        self.db_features.as_ref().map(|p| base.join(p))
    }

    pub fn query_features_path(&self, base: &Path) -> Option<PathBuf> {
        self.query_features.as_ref().map(|p| base.join(p))
    }
}

pub fn parse_manifest(text: &str) -> Result<Manifest, DatasetError> {
    toml::from_str(text).map_err(|e| DatasetError::Manifest(e.message().to_string()))
}

/// Reads and validates a manifest file.
pub fn load_traversal_pair(path: impl AsRef<Path>) -> Result<(Manifest, TraversalPair), DatasetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| DatasetError::Manifest(format!("{}: {e}", path.display())))?;
    let manifest = parse_manifest(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let pair = manifest.resolve(base)?;
    Ok((manifest, pair))
}
