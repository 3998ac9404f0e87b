//! Gray-level co-occurrence matrices and the GLCM mean / contrast features.
//!
//! Counting is directed: the pair `(q[p], q[p + offset])` is counted for every
//! reference position `p` whose neighbor lies inside the region. No
//! symmetrization is applied.
//!
//! Feature maps are computed from integer summed-area tables: both features are
//! sums over pixel pairs, so a window's value is obtained in O(1) once the
//! tables exist. [`compute_glcm`] builds the explicit matrix and is used for
//! sparse locations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::imagio::{quantize, FeatureMap, GrayImage, QuantizedImage};

/// Spatial displacement from a reference pixel to its neighbor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Offset {
    pub dx: i32,
    pub dy: i32,
}

impl Offset {
    pub const fn new(dx: i32, dy: i32) -> Self {
        Offset { dx, dy }
    }
}

impl Default for Offset {
    fn default() -> Self {
        Offset::new(1, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlcmConfig {
    /// Number of gray levels used for quantization.
    pub levels: usize,
    /// Side length of the square analysis window.
    pub window: usize,
    pub offset: Offset,
    /// Distance between window positions; `None` tiles the image (stride = window).
    pub stride: Option<usize>,
}

impl Default for GlcmConfig {
    fn default() -> Self {
        GlcmConfig { levels: 128, window: 100, offset: Offset::default(), stride: None }
    }
}

impl GlcmConfig {
    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.window)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.levels >= 2, || format!("glcm levels must be >= 2, got {}", self.levels))?;
        ensure(self.levels <= 65536, || format!("glcm levels must be <= 65536, got {}", self.levels))?;
        ensure(self.window >= 2, || format!("glcm window must be >= 2, got {}", self.window))?;
        ensure(self.stride() >= 1, || "glcm stride must be >= 1".to_string())?;
        ensure(
            (self.offset.dx.unsigned_abs() as usize) < self.window
                && (self.offset.dy.unsigned_abs() as usize) < self.window,
            || {
                format!(
                    "glcm offset ({}, {}) must be smaller than the window {}",
                    self.offset.dx, self.offset.dy, self.window
                )
            },
        )
    }
}

/// Directed co-occurrence counts for one region and offset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Glcm {
    levels: usize,
    counts: Vec<u64>,
    total: u64,
}

impl Glcm {
    /// Builds a matrix from raw `levels × levels` counts (row = reference level).
    pub fn from_counts(levels: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != levels * levels {
            return Err(Error::DimensionMismatch { expected: levels * levels, got: counts.len() });
        }
        let total = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyCooccurrence);
        }
        Ok(Glcm { levels, counts, total })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Unnormalized count `N(i, j)`.
    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.levels + j]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Number of pairs counted.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Normalized probability `P(i, j)`.
    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.count(i, j) as f64 / self.total as f64
    }

    /// The full normalized matrix, row-major.
    pub fn probabilities(&self) -> Vec<f64> {
        let t = self.total as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }
}

/// Counts ordered pairs at `offset` over the whole patch and normalizes.
pub fn compute_glcm(patch: &QuantizedImage, offset: Offset) -> Result<Glcm> {
    glcm_region(patch, 0, 0, patch.width(), patch.height(), offset)
}

/// Reference-pixel range along one axis for which `pos + d` stays in `[start, start + len)`.
fn pair_span(start: usize, len: usize, d: i32) -> (usize, usize) {
    let d_abs = d.unsigned_abs() as usize;
    if d_abs >= len {
        return (start, start);
    }
    if d >= 0 {
        (start, start + len - d_abs)
    } else {
        (start + d_abs, start + len)
    }
}

pub(crate) fn glcm_region(
    q: &QuantizedImage,
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    offset: Offset,
) -> Result<Glcm> {
    let levels = q.levels();
    let (xa, xb) = pair_span(x0, w, offset.dx);
    let (ya, yb) = pair_span(y0, h, offset.dy);
    if xa >= xb || ya >= yb {
        return Err(Error::EmptyCooccurrence);
    }
    let mut counts = vec![0u64; levels * levels];
    for y in ya..yb {
        let ny = (y as i64 + offset.dy as i64) as usize;
        for x in xa..xb {
            let nx = (x as i64 + offset.dx as i64) as usize;
            let i = q.get(x, y) as usize;
            let j = q.get(nx, ny) as usize;
            counts[i * levels + j] += 1;
        }
    }
    let total = ((xb - xa) * (yb - ya)) as u64;
    Ok(Glcm { levels, counts, total })
}

/// Expected reference gray level, `Σ i·P(i, j)`.
pub fn glcm_mean(g: &Glcm) -> f64 {
    let n = g.levels;
    let mut acc: u128 = 0;
    for i in 0..n {
        let row: u64 = g.counts[i * n..(i + 1) * n].iter().sum();
        acc += i as u128 * row as u128;
    }
    acc as f64 / g.total as f64
}

/// Expected squared gray-level difference, `Σ (i - j)²·P(i, j)`.
pub fn glcm_contrast(g: &Glcm) -> f64 {
    let n = g.levels;
    let mut acc: u128 = 0;
    for i in 0..n {
        for j in 0..n {
            let d = i.abs_diff(j) as u128;
            acc += d * d * g.counts[i * n + j] as u128;
        }
    }
    acc as f64 / g.total as f64
}

/// Mean and contrast of one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlcmFeatures {
    pub mean: f64,
    pub contrast: f64,
}

impl GlcmFeatures {
    pub fn of(g: &Glcm) -> Self {
        GlcmFeatures { mean: glcm_mean(g), contrast: glcm_contrast(g) }
    }
}

/// Placement of analysis windows over an image and the window each pixel takes its value from.
///
/// Pixel `x` is served by the window starting at
/// `clamp(stride * floor((x - window/2 + stride/2) / stride), 0, width - window)`,
/// which tiles the image when `stride == window` and centers the window on the
/// pixel when `stride == 1`. Rows follow the same rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileLayout {
    pub width: usize,
    pub height: usize,
    pub window: usize,
    /// Distinct window starts along x, ascending.
    pub starts_x: Vec<usize>,
    pub starts_y: Vec<usize>,
    col_of: Vec<usize>,
    row_of: Vec<usize>,
}

fn axis_assignment(len: usize, window: usize, stride: usize) -> (Vec<usize>, Vec<usize>) {
    let s = stride as i64;
    let last = (len - window) as i64;
    let per_pixel: Vec<usize> = (0..len as i64)
        .map(|x| (s * (x - (window / 2) as i64 + s / 2).div_euclid(s)).clamp(0, last) as usize)
        .collect();
    let mut starts = per_pixel.clone();
    starts.dedup();
    let index = per_pixel
        .iter()
        .map(|st| starts.binary_search(st).expect("start present"))
        .collect();
    (starts, index)
}

impl TileLayout {
    pub fn new(width: usize, height: usize, window: usize, stride: usize) -> Result<Self> {
        ensure(window >= 1 && stride >= 1, || "window and stride must be >= 1".to_string())?;
        ensure(width >= window && height >= window, || {
            format!("image {width}x{height} is smaller than the {window}x{window} glcm window")
        })?;
        let (starts_x, col_of) = axis_assignment(width, window, stride);
        let (starts_y, row_of) = axis_assignment(height, window, stride);
        Ok(TileLayout { width, height, window, starts_x, starts_y, col_of, row_of })
    }

    pub fn n_tiles(&self) -> usize {
        self.starts_x.len() * self.starts_y.len()
    }

    /// Tile index (row-major over distinct starts) serving pixel `(x, y)`.
    pub fn tile_of(&self, x: usize, y: usize) -> usize {
        self.row_of[y] * self.starts_x.len() + self.col_of[x]
    }

    /// Top-left corner of tile `t`.
    pub fn tile_origin(&self, t: usize) -> (usize, usize) {
        let nx = self.starts_x.len();
        (self.starts_x[t % nx], self.starts_y[t / nx])
    }

    /// Center pixel of tile `t`.
    pub fn tile_center(&self, t: usize) -> (usize, usize) {
        let (x, y) = self.tile_origin(t);
        (x + self.window / 2, y + self.window / 2)
    }

    /// Rasterizes a per-tile value to full image resolution.
    pub fn paint<T: Copy>(&self, per_tile: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(per_tile[self.tile_of(x, y)]);
            }
        }
        out
    }
}

/// Window-level GLCM features plus their full-resolution rasterization.
#[derive(Debug, Clone)]
pub struct GlcmMaps {
    pub mean: FeatureMap,
    pub contrast: FeatureMap,
    pub layout: TileLayout,
    /// Per-tile features, indexed like [`TileLayout::tile_of`].
    pub tiles: Vec<GlcmFeatures>,
}

/// Summed-area table with a zero guard row and column.
struct Integral {
    stride: usize,
    sums: Vec<u64>,
}

impl Integral {
    fn build(width: usize, height: usize, value: impl Fn(usize, usize) -> u64) -> Self {
        let stride = width + 1;
        let mut sums = vec![0u64; stride * (height + 1)];
        for y in 0..height {
            let mut row = 0u64;
            for x in 0..width {
                row += value(x, y);
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Integral { stride, sums }
    }

    /// Sum over `[xa, xb) × [ya, yb)`.
    fn rect(&self, xa: usize, xb: usize, ya: usize, yb: usize) -> u64 {
        let s = self.stride;
        self.sums[yb * s + xb] + self.sums[ya * s + xa] - self.sums[ya * s + xb] - self.sums[yb * s + xa]
    }
}

/// GLCM mean and contrast over every window position, rasterized to image size.
///
/// The image is quantized once with `cfg.levels` before windowing.
pub fn glcm_feature_maps(img: &GrayImage, cfg: &GlcmConfig) -> Result<GlcmMaps> {
    cfg.validate()?;
    let q = quantize(img, cfg.levels)?;
    glcm_feature_maps_quantized(&q, cfg, img.pitch_mm())
}

pub(crate) fn glcm_feature_maps_quantized(q: &QuantizedImage, cfg: &GlcmConfig, pitch_mm: f64) -> Result<GlcmMaps> {
    cfg.validate()?;
    let (w, h) = (q.width(), q.height());
    let layout = TileLayout::new(w, h, cfg.window, cfg.stride())?;
    let Offset { dx, dy } = cfg.offset;
    let neighbor = |x: usize, y: usize| -> Option<u16> {
        let nx = x as i64 + dx as i64;
        let ny = y as i64 + dy as i64;
        (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h).then(|| q.get(nx as usize, ny as usize))
    };
    let level_sum = Integral::build(w, h, |x, y| neighbor(x, y).map_or(0, |_| q.get(x, y) as u64));
    let sq_diff_sum = Integral::build(w, h, |x, y| {
        neighbor(x, y).map_or(0, |n| {
            let d = q.get(x, y).abs_diff(n) as u64;
            d * d
        })
    });

    let tiles: Vec<GlcmFeatures> = (0..layout.n_tiles())
        .into_par_iter()
        .map(|t| {
            let (x0, y0) = layout.tile_origin(t);
            let (xa, xb) = pair_span(x0, cfg.window, dx);
            let (ya, yb) = pair_span(y0, cfg.window, dy);
            let n = ((xb - xa) * (yb - ya)) as f64;
            GlcmFeatures {
                mean: level_sum.rect(xa, xb, ya, yb) as f64 / n,
                contrast: sq_diff_sum.rect(xa, xb, ya, yb) as f64 / n,
            }
        })
        .collect();

    let mean = layout.paint(&tiles.iter().map(|f| f.mean).collect::<Vec<_>>());
    let contrast = layout.paint(&tiles.iter().map(|f| f.contrast).collect::<Vec<_>>());
    Ok(GlcmMaps {
        mean: GrayImage::with_pitch(w, h, mean, pitch_mm)?,
        contrast: GrayImage::with_pitch(w, h, contrast, pitch_mm)?,
        layout,
        tiles,
    })
}

/// The window of side `window` centered on `(x, y)`, intersected with the image.
pub fn clipped_window(x: usize, y: usize, window: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
    let half = (window / 2) as i64;
    let xa = (x as i64 - half).max(0) as usize;
    let ya = (y as i64 - half).max(0) as usize;
    let xb = ((x as i64 - half + window as i64) as usize).min(width);
    let yb = ((y as i64 - half + window as i64) as usize).min(height);
    (xa, ya, xb - xa, yb - ya)
}

/// GLCM features on the window centered at each point, clipped to the image.
pub fn glcm_at_points(img: &GrayImage, points: &[(usize, usize)], cfg: &GlcmConfig) -> Result<Vec<GlcmFeatures>> {
    cfg.validate()?;
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let q = quantize(img, cfg.levels)?;
    glcm_at_points_quantized(&q, points, cfg)
}

pub(crate) fn glcm_at_points_quantized(
    q: &QuantizedImage,
    points: &[(usize, usize)],
    cfg: &GlcmConfig,
) -> Result<Vec<GlcmFeatures>> {
    points
        .par_iter()
        .map(|&(x, y)| {
            if x >= q.width() || y >= q.height() {
                return Err(Error::Data(format!("point ({x}, {y}) outside {}x{} image", q.width(), q.height())));
            }
            let (x0, y0, w, h) = clipped_window(x, y, cfg.window, q.width(), q.height());
            glcm_region(q, x0, y0, w, h, cfg.offset).map(|g| GlcmFeatures::of(&g))
        })
        .collect()
}
