//! Synthetic paired traversals.
//!
//! Each place has a latent vector drawn from a stationary AR(1) walk along
//! the route, so neighbouring frames look alike. The database traversal sees
//! `latent + noise`; the query traversal sees `S * latent + noise` where
//! `S = I + shift * U Vᵀ` is a fixed low-rank "season" transform.

use std::ops::Range;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{DatasetError, FrameMatch, Splits, TraversalPair};
use crate::featio::FeatureMatrix;
use crate::seed::{self, stream};

/// Velocity profile of the query traversal relative to the database.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Warp {
    /// Same speed, `fm = identity`.
    None,
    /// Query position `t + a (n-1)/(2π m) sin(2π m t/(n-1))` for `m` cycles;
    /// speed varies in `[1-a, 1+a]`, monotone for `a <= 1`.
    Sinusoidal { amplitude: f64, cycles: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_places: usize,
    pub dim: usize,
    pub appearance_shift: f64,
    pub noise: f64,
    pub seed: u64,
    pub margin: usize,
    /// AR(1) coefficient of the latent walk.
    pub smoothness: f64,
    /// Dimension of the place latent, embedded in feature space by a fixed
    /// random linear map; 0 means `dim` (no embedding).
    pub latent_dim: usize,
    /// Rank of the season transform; 0 picks `max(1, dim / 4)`.
    pub season_rank: usize,
    pub train_fraction: f64,
    pub warp: Warp,
}

impl SynthConfig {
    pub fn new(n_places: usize, dim: usize, appearance_shift: f64, noise: f64, seed: u64) -> Self {
        Self {
            n_places,
            dim,
            appearance_shift,
            noise,
            seed,
            margin: 2,
            smoothness: 0.7,
            latent_dim: (dim / 8).clamp(2, dim.max(2)),
            season_rank: 0,
            train_fraction: 0.5,
            warp: Warp::None,
        }
    }

    /// Database split by position; query split by the preimage under `fm`,
    /// so test queries are exactly the frames that depict test places.
    fn splits(&self, fm: &[usize]) -> Splits {
        let n = self.n_places;
        let train_end = ((n as f64 * self.train_fraction).round() as usize).clamp(1, n - 1);
        let gap = (self.margin + 1).max(n / 20);
        let test_start = (train_end + gap).min(n - 1);
        let first_query = |db: usize| fm.partition_point(|&p| p < db);
        Splits {
            train_db: 0..train_end,
            train_query: 0..first_query(train_end),
            test_db: test_start..n,
            test_query: first_query(test_start)..n,
        }
    }

    fn frame_match(&self) -> Vec<usize> {
        let n = self.n_places;
        match self.warp {
            Warp::None => (0..n).collect(),
            Warp::Sinusoidal { amplitude, cycles } => {
                let span = (n - 1) as f64;
                let w = std::f64::consts::TAU * cycles as f64;
                (0..n)
                    .map(|t| {
                        let t = t as f64;
                        let p = t + amplitude * span / w * (w * t / span).sin();
                        (p.round().max(0.0) as usize).min(n - 1)
                    })
                    .collect()
            }
        }
    }

    pub fn generate(&self) -> Result<(FeatureMatrix<f64>, FeatureMatrix<f64>, TraversalPair), DatasetError> {
        if self.n_places < 4 {
            return Err(DatasetError::Synth(format!("need at least 4 places, got {}", self.n_places)));
        }
        if self.dim < 2 {
            return Err(DatasetError::Synth(format!("need dimension >= 2, got {}", self.dim)));
        }
        if self.latent_dim > self.dim {
            return Err(DatasetError::Synth(format!("latent dimension {} exceeds {}", self.latent_dim, self.dim)));
        }
        if !(0.0..1.0).contains(&self.smoothness) {
            return Err(DatasetError::Synth(format!("smoothness {} not in [0, 1)", self.smoothness)));
        }
        if let Warp::Sinusoidal { amplitude, cycles } = self.warp {
            if !(0.0..=1.0).contains(&amplitude) {
                return Err(DatasetError::Synth(format!("warp amplitude {amplitude} not in [0, 1]")));
            }
            if cycles == 0 {
                return Err(DatasetError::Synth("warp needs at least one cycle".into()));
            }
        }
        if !(self.appearance_shift.is_finite() && self.noise.is_finite() && self.noise >= 0.0) {
            return Err(DatasetError::Synth("shift and noise must be finite, noise non-negative".into()));
        }
        let (n, d) = (self.n_places, self.dim);

        let r = if self.latent_dim == 0 { d } else { self.latent_dim };
        let mut rng = seed::rng(self.seed, stream::SYNTH_LATENT);
        let a = self.smoothness;
        let innovation = (1.0 - a * a).sqrt();
        let mut walk = DMatrix::<f64>::zeros(n, r);
        for t in 0..n {
            for j in 0..r {
                let e: f64 = rng.sample(StandardNormal);
                walk[(t, j)] = if t == 0 { e } else { a * walk[(t - 1, j)] + innovation * e };
            }
        }
        // unit expected variance per feature either way
        let latent = if r == d {
            walk
        } else {
            let mix = DMatrix::<f64>::from_fn(r, d, |_, _| rng.sample::<f64, _>(StandardNormal) / (r as f64).sqrt());
            walk * mix
        };

        let rank = if self.season_rank == 0 { (d / 4).max(1) } else { self.season_rank.min(d) };
        let mut rng = seed::rng(self.seed, stream::SYNTH_SEASON);
        let mut orthonormal = || {
            let g = DMatrix::<f64>::from_fn(d, rank, |_, _| rng.sample(StandardNormal));
            g.qr().q()
        };
        let (u, v) = (orthonormal(), orthonormal());
        let season = DMatrix::<f64>::identity(d, d) + &u * v.transpose() * self.appearance_shift;

        let fm = self.frame_match();
        let mut rng_db = seed::rng(self.seed, stream::SYNTH_NOISE_DB);
        let mut db = Vec::with_capacity(n * d);
        for t in 0..n {
            for j in 0..d {
                let e: f64 = rng_db.sample(StandardNormal);
                db.push(latent[(t, j)] + self.noise * e);
            }
        }
        let shifted = &latent * season.transpose();
        let mut rng_q = seed::rng(self.seed, stream::SYNTH_NOISE_QUERY);
        let mut query = Vec::with_capacity(n * d);
        for &p in &fm {
            for j in 0..d {
                let e: f64 = rng_q.sample(StandardNormal);
                query.push(shifted[(p, j)] + self.noise * e);
            }
        }

        let frames: Vec<u64> = (0..n as u64).collect();
        let splits = self.splits(&fm);
        let pair = TraversalPair::new(
            frames.clone(),
            frames,
            FrameMatch::Explicit(fm),
            self.margin,
            splits,
            1.0,
        )?;
        let db = FeatureMatrix::new(n, d, db, 0).map_err(|e| DatasetError::Synth(e.to_string()))?;
        let query = FeatureMatrix::new(n, d, query, 0).map_err(|e| DatasetError::Synth(e.to_string()))?;
        Ok((db, query, pair))
    }
}

/// Desk-scale paired traversals with default smoothness, margin and split.
pub fn synth_traversals(
    n_places: usize,
    dim: usize,
    appearance_shift: f64,
    noise: f64,
    seed: u64,
) -> Result<(FeatureMatrix<f64>, FeatureMatrix<f64>, TraversalPair), DatasetError> {
    SynthConfig::new(n_places, dim, appearance_shift, noise, seed).generate()
}

/// Replaces `rows` with Gaussian noise of the matrix's overall RMS scale,
/// simulating a segment where the camera saw nothing useful.
pub fn corrupt_rows(m: &FeatureMatrix<f64>, rows: Range<usize>, seed: u64) -> FeatureMatrix<f64> {
    let rms = if m.values().is_empty() {
        0.0
    } else {
        (m.values().iter().map(|v| v * v).sum::<f64>() / m.values().len() as f64).sqrt()
    };
    let mut rng = seed::rng(seed, stream::SYNTH_CORRUPT);
    let mut values = m.values().to_vec();
    for i in rows {
        for v in &mut values[i * m.d()..(i + 1) * m.d()] {
            let e: f64 = rng.sample(StandardNormal);
            *v = rms * e;
        }
    }
    FeatureMatrix::new(m.n(), m.d(), values, m.frame_offset).expect("finite noise")
}
