//! Gabor kernels and the filter-bank feature stack.
//!
//! A kernel is an isotropic Gaussian envelope with the FWHM convention
//! `exp(-4 ln2 r² / Ws²)` multiplied by an oriented cosine carrier
//! `cos(2π fc (dx cosθ + dy sinθ) + φ)`, sampled on an odd `support × support`
//! grid centered on the middle pixel.
//!
//! [`apply_bank`] cross-correlates the image with each kernel ("same" size,
//! zero padding). Because the envelope is separable and the carrier splits by the
//! angle-sum identity, each kernel is the difference of two rank-one kernels;
//! correlation is therefore done as two separable passes per term.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::imagio::{FeatureMap, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaborParams {
    /// Envelope full width at half maximum, in pixels.
    pub ws: f64,
    /// Carrier frequency in cycles per pixel.
    pub fc: f64,
    pub theta: f64,
    pub phi: f64,
    /// Kernel side length (odd).
    pub support: usize,
}

impl GaborParams {
    pub fn validate(&self) -> Result<()> {
        ensure(self.ws.is_finite() && self.ws > 0.0, || format!("gabor ws must be > 0, got {}", self.ws))?;
        ensure(self.fc.is_finite() && self.fc >= 0.0, || format!("gabor fc must be >= 0, got {}", self.fc))?;
        ensure(self.theta.is_finite() && self.phi.is_finite(), || "gabor theta/phi must be finite".to_string())?;
        ensure(self.support >= 3 && self.support % 2 == 1, || {
            format!("gabor support must be odd and >= 3, got {}", self.support)
        })
    }

    fn half(&self) -> usize {
        self.support / 2
    }

    fn envelope(&self, d: f64) -> f64 {
        (-4.0 * std::f64::consts::LN_2 * d * d / (self.ws * self.ws)).exp()
    }
}

/// A square correlation kernel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub size: usize,
    pub data: Vec<f64>,
}

impl Kernel {
    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.size + u]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Samples the Gabor function on a `support × support` grid centered on the middle pixel.
pub fn make_kernel(p: &GaborParams) -> Result<Kernel> {
    p.validate()?;
    let c = p.half() as f64;
    let (sin_t, cos_t) = p.theta.sin_cos();
    let two_pi_f = 2.0 * PI * p.fc;
    let mut data = Vec::with_capacity(p.support * p.support);
    for v in 0..p.support {
        let dy = v as f64 - c;
        for u in 0..p.support {
            let dx = u as f64 - c;
            let r2 = dx * dx + dy * dy;
            let env = (-4.0 * std::f64::consts::LN_2 * r2 / (p.ws * p.ws)).exp();
            data.push(env * (two_pi_f * (dx * cos_t + dy * sin_t) + p.phi).cos());
        }
    }
    Ok(Kernel { size: p.support, data })
}

/// Ordered list of Gabor filters; serialized as a bare JSON array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GaborBankConfig {
    pub filters: Vec<GaborParams>,
}

impl GaborBankConfig {
    /// Four orientations (0, π/4, π/2, 3π/4) sized to a target of the given diameter:
    /// `ws = diameter`, `fc = 1 / (2 diameter)`, `φ = 0`, `support = 2 diameter + 1`.
    ///
    /// With this carrier the positive central lobe is one diameter wide and no
    /// second positive lobe fits inside the support.
    pub fn for_target_diameter(diameter: f64) -> Self {
        let support = 2 * diameter.round().max(1.0) as usize + 1;
        let filters = [0.0, FRAC_PI_4, FRAC_PI_2, 3.0 * FRAC_PI_4]
            .into_iter()
            .map(|theta| GaborParams { ws: diameter, fc: 1.0 / (2.0 * diameter), theta, phi: 0.0, support })
            .collect();
        GaborBankConfig { filters }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(!self.filters.is_empty(), || "gabor bank must contain at least one filter".to_string())?;
        self.filters.iter().try_for_each(GaborParams::validate)
    }

    /// Largest kernel support in the bank.
    pub fn max_support(&self) -> usize {
        self.filters.iter().map(|f| f.support).max().unwrap_or(0)
    }

    /// Common envelope width; the mean when filters differ.
    pub fn ws(&self) -> f64 {
        self.filters.iter().map(|f| f.ws).sum::<f64>() / self.filters.len().max(1) as f64
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.filters.iter().enumerate().map(|(i, f)| format!("gabor{}_theta{:.4}", i, f.theta)).collect()
    }
}

impl Default for GaborBankConfig {
    fn default() -> Self {
        GaborBankConfig::for_target_diameter(50.0)
    }
}

/// Equally sized feature maps with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub channels: Vec<FeatureMap>,
    pub names: Vec<String>,
}

impl FeatureStack {
    pub fn new(channels: Vec<FeatureMap>, names: Vec<String>) -> Result<Self> {
        ensure(channels.len() == names.len(), || "one name per channel required".to_string())?;
        if let Some(first) = channels.first() {
            ensure(
                channels.iter().all(|c| c.width() == first.width() && c.height() == first.height()),
                || "feature stack channels must share dimensions".to_string(),
            )?;
        }
        Ok(FeatureStack { channels, names })
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.channels.first().map_or(0, |c| c.width())
    }

    pub fn height(&self) -> usize {
        self.channels.first().map_or(0, |c| c.height())
    }

    /// Values of all channels at `(x, y)`.
    pub fn sample(&self, x: usize, y: usize) -> Vec<f64> {
        self.channels.iter().map(|c| c.get(x, y)).collect()
    }

    /// Per-pixel maximum over channels.
    pub fn max_map(&self) -> Result<FeatureMap> {
        let first = &self.channels[0];
        let data = (0..first.data().len())
            .map(|i| self.channels.iter().map(|c| c.data()[i]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        GrayImage::with_pitch(first.width(), first.height(), data, first.pitch_mm())
    }

    /// Absolute-value responses.
    pub fn rectified(&self) -> Result<Self> {
        let channels = self.channels.iter().map(|c| c.map(f64::abs)).collect::<Result<_>>()?;
        Ok(FeatureStack { channels, names: self.names.clone() })
    }
}

/// 1-D zero-padded correlation along rows (`horizontal`) or columns.
fn correlate_rows(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let half = taps.len() / 2;
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let mut padded = vec![0.0; w + 2 * half];
        padded[half..half + w].copy_from_slice(&src[y * w..(y + 1) * w]);
        for (k, &t) in taps.iter().enumerate() {
            row.iter_mut().zip(&padded[k..k + w]).for_each(|(o, v)| *o += t * v);
        }
    });
    out
}

fn correlate_cols(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let half = taps.len() / 2;
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (k, &t) in taps.iter().enumerate() {
            let Some(sy) = (y + k).checked_sub(half).filter(|&sy| sy < h) else { continue };
            row.iter_mut().zip(&src[sy * w..(sy + 1) * w]).for_each(|(o, v)| *o += t * v);
        }
    });
    out
}

/// Cross-correlates `img` with the kernel of `p`, same output size, zero padding.
pub fn correlate_gabor(img: &GrayImage, p: &GaborParams) -> Result<FeatureMap> {
    p.validate()?;
    ensure(p.support <= img.width() && p.support <= img.height(), || {
        format!("gabor support {} exceeds image {}x{}", p.support, img.width(), img.height())
    })?;
    let half = p.half() as f64;
    let (sin_t, cos_t) = p.theta.sin_cos();
    let a = 2.0 * PI * p.fc * cos_t;
    let b = 2.0 * PI * p.fc * sin_t;
    let offsets: Vec<f64> = (0..p.support).map(|k| k as f64 - half).collect();
    // cos(a·dx + b·dy + φ) = cos(a·dx)·cos(b·dy + φ) − sin(a·dx)·sin(b·dy + φ)
    let x_cos: Vec<f64> = offsets.iter().map(|&d| p.envelope(d) * (a * d).cos()).collect();
    let x_sin: Vec<f64> = offsets.iter().map(|&d| p.envelope(d) * (a * d).sin()).collect();
    let y_cos: Vec<f64> = offsets.iter().map(|&d| p.envelope(d) * (b * d + p.phi).cos()).collect();
    let y_sin: Vec<f64> = offsets.iter().map(|&d| p.envelope(d) * (b * d + p.phi).sin()).collect();

    let (w, h) = (img.width(), img.height());
    let tmp_c = correlate_rows(img.data(), w, h, &x_cos);
    let tmp_s = correlate_rows(img.data(), w, h, &x_sin);
    let mut out = correlate_cols(&tmp_c, w, h, &y_cos);
    let sub = correlate_cols(&tmp_s, w, h, &y_sin);
    out.iter_mut().zip(&sub).for_each(|(o, s)| *o -= s);
    GrayImage::with_pitch(w, h, out, img.pitch_mm())
}

/// One correlation channel per filter, in bank order.
pub fn apply_bank(img: &GrayImage, bank: &GaborBankConfig) -> Result<FeatureStack> {
    bank.validate()?;
    let channels = bank.filters.par_iter().map(|p| correlate_gabor(img, p)).collect::<Result<Vec<_>>>()?;
    FeatureStack::new(channels, bank.channel_names())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(theta: f64, phi: f64) -> GaborParams {
        GaborParams { ws: 6.0, fc: 0.15, theta, phi, support: 15 }
    }

    #[test]
    fn center_is_one() {
        for theta in [0.0, 0.3, 2.0] {
            let k = make_kernel(&params(theta, 0.0)).unwrap();
            assert_eq!(k.get(7, 7), 1.0);
        }
    }

    #[test]
    fn half_turn_symmetry() {
        for theta in [0.0, 0.7, FRAC_PI_2, 2.5] {
            let a = make_kernel(&params(theta, 0.0)).unwrap();
            let b = make_kernel(&params(theta + PI, 0.0)).unwrap();
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn half_maximum_at_half_width() {
        // r² = Ws²/4 on the grid: Ws = 10 → r = 5 along an axis
        let p = GaborParams { ws: 10.0, fc: 0.0, theta: 0.0, phi: 0.0, support: 21 };
        let k = make_kernel(&p).unwrap();
        assert!((k.get(15, 10) - 0.5).abs() < 1e-15);
        assert!((k.get(10, 5) - 0.5).abs() < 1e-15);
        // 3-4-5 triangle
        assert!((k.get(13, 14) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn invalid_params() {
        assert!(make_kernel(&GaborParams { support: 4, ..params(0.0, 0.0) }).is_err());
        assert!(make_kernel(&GaborParams { ws: 0.0, ..params(0.0, 0.0) }).is_err());
        assert!(make_kernel(&GaborParams { fc: -1.0, ..params(0.0, 0.0) }).is_err());
    }

    #[test]
    fn support_larger_than_image() {
        let img = GrayImage::filled(10, 20, 1.0).unwrap();
        assert!(correlate_gabor(&img, &params(0.0, 0.0)).is_err());
    }

    #[test]
    fn impulse_reproduces_kernel() {
        let img = GrayImage::from_fn(31, 31, |x, y| if (x, y) == (15, 15) { 1.0 } else { 0.0 }).unwrap();
        let bank = GaborBankConfig { filters: vec![params(0.4, 0.0), params(1.1, 0.9)] };
        let stack = apply_bank(&img, &bank).unwrap();
        for (ch, p) in stack.channels.iter().zip(&bank.filters) {
            let k = make_kernel(p).unwrap();
            for y in 0..31 {
                for x in 0..31 {
                    // correlation with a delta is the point-reflected kernel
                    let (u, v) = (22 - x as i64, 22 - y as i64);
                    let expect = if (0..15).contains(&u) && (0..15).contains(&v) {
                        k.get(u as usize, v as usize)
                    } else {
                        0.0
                    };
                    assert!((ch.get(x, y) - expect).abs() < 1e-12, "({x},{y})");
                }
            }
        }
    }

    #[test]
    fn constant_image_interior_is_constant_times_kernel_sum() {
        let c = 3.5;
        let img = GrayImage::filled(40, 40, c).unwrap();
        let p = params(0.9, 0.0);
        let k = make_kernel(&p).unwrap();
        let out = correlate_gabor(&img, &p).unwrap();
        for y in 7..33 {
            for x in 7..33 {
                assert!((out.get(x, y) - c * k.sum()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn default_bank_shape() {
        let bank = GaborBankConfig::default();
        assert_eq!(bank.filters.len(), 4);
        assert_eq!(bank.max_support(), 101);
        assert!(bank.filters.iter().all(|f| f.ws == 50.0 && f.fc == 0.01 && f.phi == 0.0));
        let json = serde_json::to_string(&bank).unwrap();
        assert!(json.starts_with('['));
        assert_eq!(serde_json::from_str::<GaborBankConfig>(&json).unwrap(), bank);
    }
}
