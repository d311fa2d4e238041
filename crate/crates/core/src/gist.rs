//! Gist-style global descriptor: a bank of frequency-domain Gabor filters
//! applied to a contrast-normalized image, with the energy of each filter
//! response averaged over a `g x g` grid.
//!
//! All filtering is circular (no padding), so a circular shift of the input
//! by whole grid cells permutes the pooled cells exactly.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::featio::{FeatureMatrix, FormatError};
use crate::scalar::{lit, to_f64, Real};

pub const DEFAULT_IMAGE_SIZE: usize = 256;
pub const DEFAULT_SCALES: usize = 4;
pub const DEFAULT_ORIENTATIONS: usize = 8;
pub const MIN_IMAGE_SIDE: usize = 32;

/// Floor of the divisive contrast normalization.
const CONTRAST_FLOOR: f64 = 0.2;
/// Cut-off (in cycles per image) of the high-pass prefilter.
const PREFILTER_CUTOFF: f64 = 4.0;

#[derive(Debug, Error)]
pub enum GistError {
    #[error("{orients} orientation counts given for {scales} scales")]
    LengthMismatch { scales: usize, orients: usize },
    #[error("scale {0} has no orientations")]
    NoOrientations(usize),
    #[error("image size {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("grid {grid} does not fit image size {image_size}")]
    BadGrid { grid: usize, image_size: usize },
    #[error("image is {width}x{height}, need at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}")]
    TooSmall { width: usize, height: usize },
    #[error("expected {expected} pixels, got {got}")]
    PixelCount { expected: usize, got: usize },
    #[error("non-finite pixel at {0}")]
    NonFinite(usize),
    #[error("no frames in {0}")]
    NoFrames(PathBuf),
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major luminance in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self, GistError> {
        if width < MIN_IMAGE_SIDE || height < MIN_IMAGE_SIDE {
            return Err(GistError::TooSmall { width, height });
        }
        if values.len() != width * height {
            return Err(GistError::PixelCount { expected: width * height, got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GistError::NonFinite(i));
        }
        Ok(Self { width, height, values })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Result<Self, GistError> {
        let values = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self::new(width, height, values)
    }

    /// Reads any 8-bit image the `image` crate decodes (PGM here) as luma.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, GistError> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| GistError::Image { path: path.to_path_buf(), source })?;
        let luma = img.to_luma8();
        let (w, h) = (luma.width() as usize, luma.height() as usize);
        Self::new(w, h, luma.into_raw().into_iter().map(|v| v as f32 / 255.0).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Bilinear resampling to `size x size` with pixel-centre alignment,
    /// ignoring aspect ratio. Returns the pixels unchanged when already square
    /// at the target size.
    pub fn resize_square(&self, size: usize) -> Vec<f64> {
        if self.width == size && self.height == size {
            return self.values.iter().map(|&v| v as f64).collect();
        }
        let sx = self.width as f64 / size as f64;
        let sy = self.height as f64 / size as f64;
        let axis = |i: usize, scale: f64, len: usize| {
            let p = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
            let lo = p.floor() as usize;
            (lo, (lo + 1).min(len - 1), p - lo as f64)
        };
        let mut out = Vec::with_capacity(size * size);
        for y in 0..size {
            let (y0, y1, fy) = axis(y, sy, self.height);
            for x in 0..size {
                let (x0, x1, fx) = axis(x, sx, self.width);
                let p = |xx, yy| self.get(xx, yy) as f64;
                let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
        out
    }
}

/// Frequency-domain transfer function tagged with its scale and orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaborFilter {
    pub scale: usize,
    pub orientation: usize,
    /// `image_size^2` non-negative gains in FFT order (row = vertical frequency).
    pub transfer: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaborBank {
    image_size: usize,
    grid: usize,
    filters: Vec<GaborFilter>,
}

/// Signed frequency of FFT bin `u` for an `n`-point transform.
fn signed_freq(u: usize, n: usize) -> f64 {
    if u < n / 2 {
        u as f64
    } else {
        u as f64 - n as f64
    }
}

/// Gain of the filter at `(scale, orientation)` of a bank with `orients`
/// orientations at that scale, for the signed frequency `(fx, fy)`.
pub fn gabor_gain(scale: usize, orientation: usize, orients: usize, n: usize, fx: f64, fy: f64) -> f64 {
    let peak = 0.3 / 1.85f64.powi(scale as i32);
    let angular = 16.0 * (orients * orients) as f64 / (32.0 * 32.0);
    let fr = (fx * fx + fy * fy).sqrt();
    let mut tr = fy.atan2(fx) + PI * orientation as f64 / orients as f64;
    if tr < -PI {
        tr += 2.0 * PI;
    } else if tr > PI {
        tr -= 2.0 * PI;
    }
    (-10.0 * 0.35 * (fr / n as f64 / peak - 1.0).powi(2) - 2.0 * angular * PI * tr * tr).exp()
}

/// Builds `sum(orients)` filters for an `image_size` square image pooled on
/// a `grid x grid` layout.
pub fn make_gabor_bank(scales: usize, orients: &[usize], image_size: usize, grid: usize) -> Result<GaborBank, GistError> {
    if orients.len() != scales {
        return Err(GistError::LengthMismatch { scales, orients: orients.len() });
    }
    if let Some(s) = orients.iter().position(|&o| o == 0) {
        return Err(GistError::NoOrientations(s));
    }
    if !image_size.is_power_of_two() || image_size < MIN_IMAGE_SIDE {
        return Err(GistError::NotPowerOfTwo(image_size));
    }
    if grid == 0 || grid > image_size {
        return Err(GistError::BadGrid { grid, image_size });
    }
    let n = image_size;
    let mut filters = Vec::new();
    for (scale, &or) in orients.iter().enumerate() {
        for orientation in 0..or {
            let mut transfer = Vec::with_capacity(n * n);
            for v in 0..n {
                for u in 0..n {
                    transfer.push(gabor_gain(scale, orientation, or, n, signed_freq(u, n), signed_freq(v, n)));
                }
            }
            filters.push(GaborFilter { scale, orientation, transfer });
        }
    }
    Ok(GaborBank { image_size, grid, filters })
}

impl GaborBank {
    /// 4 scales x 8 orientations at 256 px; grid 4 gives 512 dims, grid 8 gives 2048.
    pub fn with_grid(grid: usize) -> Result<Self, GistError> {
        make_gabor_bank(DEFAULT_SCALES, &[DEFAULT_ORIENTATIONS; DEFAULT_SCALES], DEFAULT_IMAGE_SIZE, grid)
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn filters(&self) -> &[GaborFilter] {
        &self.filters
    }

    pub fn dim(&self) -> usize {
        self.filters.len() * self.grid * self.grid
    }
}

struct Fft2<T: Real> {
    n: usize,
    forward: std::sync::Arc<dyn Fft<T>>,
    inverse: std::sync::Arc<dyn Fft<T>>,
}

impl<T: Real> Fft2<T> {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { n, forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
    }

    fn transpose(&self, buf: &mut [Complex<T>]) {
        let n = self.n;
        for i in 0..n {
            for j in i + 1..n {
                buf.swap(i * n + j, j * n + i);
            }
        }
    }

    fn run(&self, buf: &mut [Complex<T>], fft: &dyn Fft<T>) {
        fft.process(buf);
        self.transpose(buf);
        fft.process(buf);
        self.transpose(buf);
    }

    fn forward(&self, buf: &mut [Complex<T>]) {
        self.run(buf, self.forward.as_ref());
    }

    /// Normalized inverse.
    fn inverse(&self, buf: &mut [Complex<T>]) {
        self.run(buf, self.inverse.as_ref());
        let scale = lit::<T>(1.0 / (self.n * self.n) as f64);
        for v in buf.iter_mut() {
            *v = *v * scale;
        }
    }

    /// `ifft(fft(x) * gain)`.
    fn filter(&self, spectrum: &[Complex<T>], gain: &[f64]) -> Vec<Complex<T>> {
        let mut buf: Vec<Complex<T>> = spectrum.iter().zip(gain).map(|(&c, &g)| c * lit::<T>(g)).collect();
        self.inverse(&mut buf);
        buf
    }
}

fn gaussian_lowpass(n: usize) -> Vec<f64> {
    let s1 = PREFILTER_CUTOFF / 2f64.ln().sqrt();
    let mut g = Vec::with_capacity(n * n);
    for v in 0..n {
        for u in 0..n {
            let (fx, fy) = (signed_freq(u, n), signed_freq(v, n));
            g.push((-(fx * fx + fy * fy) / (s1 * s1)).exp());
        }
    }
    g
}

/// Log luminance, high-pass, then division by `floor + local std`.
fn prefilter<T: Real>(pixels: &[f64], fft: &Fft2<T>) -> Vec<Complex<T>> {
    let n = fft.n;
    let logged: Vec<f64> = pixels.iter().map(|&v| (1.0 + 255.0 * v).ln()).collect();
    let mean = logged.iter().sum::<f64>() / logged.len() as f64;
    let lowpass = gaussian_lowpass(n);

    let mut buf: Vec<Complex<T>> = logged.iter().map(|&v| Complex::new(lit(v - mean), T::zero())).collect();
    fft.forward(&mut buf);
    let smooth = fft.filter(&buf, &lowpass);
    let high: Vec<T> = logged.iter().zip(&smooth).map(|(&v, s)| lit::<T>(v - mean) - s.re).collect();

    let mut sq: Vec<Complex<T>> = high.iter().map(|&v| Complex::new(v * v, T::zero())).collect();
    fft.forward(&mut sq);
    let local_var = fft.filter(&sq, &lowpass);
    let floor = lit::<T>(CONTRAST_FLOOR);
    high.iter()
        .zip(&local_var)
        .map(|(&h, var)| Complex::new(h / (floor + var.re.abs().sqrt()), T::zero()))
        .collect()
}

/// Descriptor ordered filter-major, then grid cells row-major. All entries
/// are non-negative; a constant image yields zeros.
pub fn gist_descriptor<T: Real>(img: &GrayImage, bank: &GaborBank) -> Vec<T> {
    let fft = Fft2::<T>::new(bank.image_size);
    descriptor_with(img, bank, &fft)
}

fn descriptor_with<T: Real>(img: &GrayImage, bank: &GaborBank, fft: &Fft2<T>) -> Vec<T> {
    let n = bank.image_size;
    let g = bank.grid;
    let mut spectrum = prefilter(&img.resize_square(n), fft);
    fft.forward(&mut spectrum);

    let bounds: Vec<usize> = (0..=g).map(|c| c * n / g).collect();
    let mut out = Vec::with_capacity(bank.dim());
    for filter in &bank.filters {
        let response = fft.filter(&spectrum, &filter.transfer);
        for cy in 0..g {
            for cx in 0..g {
                let mut sum = T::zero();
                for y in bounds[cy]..bounds[cy + 1] {
                    for x in bounds[cx]..bounds[cx + 1] {
                        let c = response[y * n + x];
                        sum += (c.re * c.re + c.im * c.im).sqrt();
                    }
                }
                let count = (bounds[cy + 1] - bounds[cy]) * (bounds[cx + 1] - bounds[cx]);
                out.push(sum / lit::<T>(count as f64));
            }
        }
    }
    out
}

/// Descriptors for many images, one row per image, computed in parallel.
pub fn gist_features<T: Real>(images: &[GrayImage], bank: &GaborBank) -> Result<FeatureMatrix<T>, GistError> {
    let fft = Fft2::<T>::new(bank.image_size);
    let rows: Vec<Vec<T>> = images.par_iter().map(|img| descriptor_with(img, bank, &fft)).collect();
    if rows.is_empty() {
        return Ok(FeatureMatrix::new(0, bank.dim(), Vec::new(), 0)?);
    }
    Ok(FeatureMatrix::from_rows(&rows)?)
}

/// `*.pgm` files of a directory in lexicographic order.
pub fn list_frames(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, GistError> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
        .collect();
    if paths.is_empty() {
        return Err(GistError::NoFrames(dir.to_path_buf()));
    }
    paths.sort();
    Ok(paths)
}

/// Loads every frame of `dir` and returns their descriptors.
pub fn gist_dir<T: Real>(dir: impl AsRef<Path>, bank: &GaborBank) -> Result<FeatureMatrix<T>, GistError> {
    let images = list_frames(dir)?.par_iter().map(GrayImage::open).collect::<Result<Vec<_>, _>>()?;
    gist_features(&images, bank)
}

/// Mean over grid cells of each filter's pooled energy.
pub fn filter_energies<T: Real>(descriptor: &[T], bank: &GaborBank) -> Vec<f64> {
    let cells = bank.grid * bank.grid;
    descriptor.chunks(cells).map(|c| c.iter().map(|&v| to_f64(v)).sum::<f64>() / cells as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_bank(grid: usize) -> GaborBank {
        make_gabor_bank(4, &[8, 8, 8, 8], 64, grid).unwrap()
    }

    fn noise_image(n: usize, seed: u64) -> GrayImage {
        use rand::Rng;
        let mut rng = crate::seed::rng(seed, 0);
        GrayImage::new(n, n, (0..n * n).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn dimensions() {
        assert_eq!(GaborBank::with_grid(4).unwrap().dim(), 512);
        assert_eq!(GaborBank::with_grid(8).unwrap().dim(), 2048);
        let bank = make_gabor_bank(3, &[8, 6, 4], 64, 2).unwrap();
        assert_eq!(bank.filters().len(), 18);
        assert_eq!(bank.dim(), 72);
    }

    #[test]
    fn bank_preconditions() {
        assert!(matches!(make_gabor_bank(4, &[8, 8, 8], 256, 4), Err(GistError::LengthMismatch { scales: 4, orients: 3 })));
        assert!(matches!(make_gabor_bank(1, &[0], 64, 4), Err(GistError::NoOrientations(0))));
        assert!(matches!(make_gabor_bank(1, &[4], 100, 4), Err(GistError::NotPowerOfTwo(100))));
        assert!(matches!(make_gabor_bank(1, &[4], 64, 0), Err(GistError::BadGrid { .. })));
    }

    #[test]
    fn transfers_are_non_negative() {
        for f in small_bank(4).filters() {
            assert!(f.transfer.iter().all(|&g| g >= 0.0 && g.is_finite()));
        }
    }

    #[test]
    fn image_preconditions() {
        assert!(matches!(GrayImage::new(31, 40, vec![0.0; 31 * 40]), Err(GistError::TooSmall { .. })));
        assert!(matches!(GrayImage::new(32, 32, vec![0.0; 10]), Err(GistError::PixelCount { .. })));
        let mut v = vec![0.5; 32 * 32];
        v[7] = f32::NAN;
        assert!(matches!(GrayImage::new(32, 32, v), Err(GistError::NonFinite(7))));
    }

    #[test]
    fn constant_image_is_zero() {
        let img = GrayImage::new(48, 40, vec![0.37; 48 * 40]).unwrap();
        let d = gist_descriptor::<f64>(&img, &small_bank(4));
        assert_eq!(d.len(), 512);
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_negative_and_deterministic() {
        let bank = small_bank(4);
        let img = noise_image(80, 1);
        let a = gist_descriptor::<f64>(&img, &bank);
        assert_eq!(a.len(), 512);
        assert!(a.iter().all(|&v| v >= 0.0));
        assert!(a.iter().any(|&v| v > 0.0));
        assert_eq!(a, gist_descriptor::<f64>(&img, &bank));
        let f = gist_descriptor::<f32>(&img, &bank);
        assert!(f.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = noise_image(64, 2);
        let same = img.resize_square(64);
        assert!(same.iter().zip(img.values()).all(|(&a, &b)| a == b as f64));
        let flat = GrayImage::new(50, 33, vec![0.25; 50 * 33]).unwrap();
        assert!(flat.resize_square(64).iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn quadrant_swap_permutes_cells() {
        let n = 64;
        let g = 4;
        let bank = small_bank(g);
        let img = noise_image(n, 3);
        let swapped = GrayImage::from_fn(n, n, |x, y| img.get((x + n / 2) % n, (y + n / 2) % n)).unwrap();
        let a = gist_descriptor::<f64>(&img, &bank);
        let b = gist_descriptor::<f64>(&swapped, &bank);
        let cells = g * g;
        let scale = a.iter().cloned().fold(0.0, f64::max);
        for f in 0..bank.filters().len() {
            for cy in 0..g {
                for cx in 0..g {
                    let src = f * cells + ((cy + g / 2) % g) * g + (cx + g / 2) % g;
                    let dst = f * cells + cy * g + cx;
                    assert!((a[src] - b[dst]).abs() <= 1e-9 * scale, "filter {f} cell ({cy},{cx})");
                }
            }
        }
    }

    /// Index of the orientation at `scale` whose transfer function has the
    /// largest gain summed over the two spectral lines of a real grating.
    fn tuned_orientation(bank: &GaborBank, scale: usize, (fx, fy): (i64, i64)) -> usize {
        let n = bank.image_size() as i64;
        let idx = |u: i64, v: i64| (v.rem_euclid(n) * n + u.rem_euclid(n)) as usize;
        bank.filters()
            .iter()
            .filter(|f| f.scale == scale)
            .map(|f| (f.orientation, f.transfer[idx(fx, fy)] + f.transfer[idx(-fx, -fy)]))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
            .0
    }

    #[test]
    fn grating_orientation_matches_transfer_peak() {
        let n = 64;
        let bank = small_bank(2);
        let scale = 1;
        let cycles = (n as f64 * 0.3 / 1.85).round() as usize;
        let wave = |t: usize| 0.5 + 0.4 * (2.0 * PI * (cycles * t) as f64 / n as f64).cos() as f32;
        let horizontal = GrayImage::from_fn(n, n, |_, y| wave(y)).unwrap();
        let vertical = GrayImage::from_fn(n, n, |x, _| wave(x)).unwrap();

        let argmax_at_scale = |img: &GrayImage| {
            let e = filter_energies(&gist_descriptor::<f64>(img, &bank), &bank);
            bank.filters()
                .iter()
                .zip(&e)
                .filter(|(f, _)| f.scale == scale)
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
                .orientation
        };
        let h = argmax_at_scale(&horizontal);
        let v = argmax_at_scale(&vertical);
        assert_eq!(h, tuned_orientation(&bank, scale, (0, cycles as i64)));
        assert_eq!(v, tuned_orientation(&bank, scale, (cycles as i64, 0)));
        // 8 orientations span 180 degrees, so a quarter turn is 4 steps
        assert_eq!((h + 8 - v) % 8, 4);
    }

    #[test]
    fn pgm_directory() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(list_frames(dir.path()), Err(GistError::NoFrames(_))));
        for (name, level) in [("b.pgm", 200u8), ("a.pgm", 10u8)] {
            let buf = image::GrayImage::from_pixel(40, 36, image::Luma([level]));
            buf.save(dir.path().join(name)).unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let frames = list_frames(dir.path()).unwrap();
        assert_eq!(frames.iter().map(|p| p.file_name().unwrap().to_str().unwrap()).collect::<Vec<_>>(), ["a.pgm", "b.pgm"]);
        let img = GrayImage::open(&frames[1]).unwrap();
        assert_eq!((img.width(), img.height()), (40, 36));
        assert!(img.values().iter().all(|&v| (v - 200.0 / 255.0).abs() < 1e-7));
        let feats = gist_dir::<f32>(dir.path(), &small_bank(4)).unwrap();
        assert_eq!((feats.n(), feats.d()), (2, 512));
    }

    #[test]
    fn tiny_pgm_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        image::GrayImage::from_pixel(16, 16, image::Luma([1u8])).save(&path).unwrap();
        assert!(matches!(GrayImage::open(&path), Err(GistError::TooSmall { width: 16, height: 16 })));
    }
}
