//! Compact binary codes for visual place recognition.
//!
//! Features from two traversals of a route are hashed to short binary codes
//! (random-hyperplane LSH, or CCA followed by iterative quantization trained
//! on place labels), searched by Hamming distance, scored with recall@1 and
//! precision-recall within a frame margin, and optionally aligned as a
//! sequence with dynamic time warping.
//!
//! The numeric core is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below name the common instantiations.

pub mod codes;
pub mod dataset;
pub mod eval;
pub mod featio;
pub mod gist;
pub mod hashlearn;
pub mod scalar;
pub mod seed;
pub mod seqmatch;

pub use codes::{BinaryCodeSet, Hit, MatchResult};
pub use dataset::{SimilarityLabels, Splits, TraversalPair};
pub use scalar::Real;

pub type FeatureMatrix32 = featio::FeatureMatrix<f32>;
pub type FeatureMatrix64 = featio::FeatureMatrix<f64>;
pub type HashModel32 = hashlearn::HashModel<f32>;
pub type HashModel64 = hashlearn::HashModel<f64>;
pub type CostMatrix32 = seqmatch::CostMatrix<f32>;
pub type CostMatrix64 = seqmatch::CostMatrix<f64>;
