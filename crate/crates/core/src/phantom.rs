//! Seeded synthetic test slices: a lumpy background of Gaussian blobs with an
//! inserted spiculated lesion at a known position.
//!
//! This is a stand-in target for exercising the pipelines, not an X-ray or
//! anatomy simulator. Blob `i` draws its parameters from
//! [`CounterRng`](crate::rng::CounterRng) item `i`, and blobs are accumulated in
//! ascending index order at every pixel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::imagio::GrayImage;
use crate::rng::CounterRng;

const STREAM_BLOBS: u64 = 1;
const STREAM_LESION: u64 = 2;
const STREAM_PLACEMENT: u64 = 3;
/// Spicules extend this fraction of the radius beyond the disk edge.
pub const SPICULE_LENGTH_FRACTION: f64 = 0.8;
/// Background level the blobs sit on.
const BASE_LEVEL: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityClass {
    Fatty,
    Scattered,
    Heterogeneous,
}

impl DensityClass {
    pub const ALL: [DensityClass; 3] = [DensityClass::Fatty, DensityClass::Scattered, DensityClass::Heterogeneous];

    /// Multipliers applied to `(n_blobs, blob_amp)`.
    pub fn preset(self) -> (f64, f64) {
        match self {
            DensityClass::Fatty => (0.5, 0.6),
            DensityClass::Scattered => (1.0, 1.0),
            DensityClass::Heterogeneous => (1.6, 1.4),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DensityClass::Fatty => "fatty",
            DensityClass::Scattered => "scattered",
            DensityClass::Heterogeneous => "heterogeneous",
        }
    }
}

impl std::str::FromStr for DensityClass {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        DensityClass::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| crate::Error::InvalidConfig(format!("density must be fatty|scattered|heterogeneous, got {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LesionSpec {
    /// Center `(x, y)` in pixels.
    pub center: (f64, f64),
    pub radius: f64,
    /// Peak intensity added at the lesion center.
    pub contrast: f64,
    pub spicules: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Blob count before the density preset is applied.
    pub n_blobs: usize,
    pub blob_sigma: f64,
    /// Blob amplitude before the density preset is applied.
    pub blob_amp: f64,
    pub density_class: DensityClass,
    pub lesion: LesionSpec,
    pub pitch_mm: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            width: 512,
            height: 512,
            seed: 0,
            n_blobs: 300,
            blob_sigma: 10.0,
            blob_amp: 0.15,
            density_class: DensityClass::Scattered,
            lesion: LesionSpec { center: (256.0, 256.0), radius: 25.0, contrast: 1.0, spicules: 8 },
            // 10 mm lesion radius at 25 px
            pitch_mm: 0.4,
        }
    }
}

impl PhantomSpec {
    /// Member `seed` of the evaluation suite: density cycles through the presets and
    /// the lesion center is drawn uniformly from `[100, size - 100)` on both axes.
    pub fn suite_member(seed: u64) -> Self {
        let base = PhantomSpec::default();
        let rng = CounterRng::new(seed, STREAM_PLACEMENT);
        let lo = 100.0;
        let cx = rng.range(0, 0, lo, base.width as f64 - lo).floor();
        let cy = rng.range(0, 1, lo, base.height as f64 - lo).floor();
        PhantomSpec {
            seed,
            density_class: DensityClass::ALL[(seed % 3) as usize],
            lesion: LesionSpec { center: (cx, cy), ..base.lesion },
            ..base
        }
    }

    /// Lesion extent including spicules.
    pub fn lesion_extent(&self) -> f64 {
        let spike = if self.lesion.spicules > 0 { SPICULE_LENGTH_FRACTION * self.lesion.radius } else { 0.0 };
        self.lesion.radius + spike
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.width >= 1 && self.height >= 1, || "phantom dimensions must be >= 1".to_string())?;
        ensure(self.blob_sigma > 0.0, || format!("blob_sigma must be > 0, got {}", self.blob_sigma))?;
        ensure(self.pitch_mm > 0.0, || format!("pitch_mm must be > 0, got {}", self.pitch_mm))?;
        ensure(self.lesion.radius > 0.0, || format!("lesion radius must be > 0, got {}", self.lesion.radius))?;
        let e = self.lesion_extent();
        let (cx, cy) = self.lesion.center;
        ensure(
            cx - e >= 0.0 && cy - e >= 0.0 && cx + e <= (self.width - 1) as f64 && cy + e <= (self.height - 1) as f64,
            || {
                format!(
                    "lesion at ({cx}, {cy}) with extent {e} does not fit inside {}x{}",
                    self.width, self.height
                )
            },
        )
    }
}

/// Ground-truth description of the inserted lesion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub center: (f64, f64),
    pub radius: f64,
    pub density_class: DensityClass,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    x: f64,
    y: f64,
    inv_two_s2: f64,
    amp: f64,
    reach: f64,
}

fn blobs(spec: &PhantomSpec) -> Vec<Blob> {
    let (n_mul, a_mul) = spec.density_class.preset();
    let n = (spec.n_blobs as f64 * n_mul).round() as u64;
    let rng = CounterRng::new(spec.seed, STREAM_BLOBS);
    (0..n)
        .map(|i| {
            let sigma = spec.blob_sigma * rng.range(i, 2, 0.6, 1.4);
            Blob {
                x: rng.range(i, 0, 0.0, spec.width as f64),
                y: rng.range(i, 1, 0.0, spec.height as f64),
                inv_two_s2: 1.0 / (2.0 * sigma * sigma),
                amp: spec.blob_amp * a_mul * rng.range(i, 3, 0.5, 1.5),
                reach: 4.0 * sigma,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Spicule {
    cos: f64,
    sin: f64,
    amp: f64,
}

fn lesion_value(spec: &LesionSpec, spicules: &[Spicule], x: f64, y: f64) -> f64 {
    if spec.contrast == 0.0 {
        return 0.0;
    }
    let (dx, dy) = (x - spec.center.0, y - spec.center.1);
    let r = (dx * dx + dy * dy).sqrt();
    let big_r = spec.radius;
    // mildly decaying disk with a one-pixel anti-aliased rim
    let rim = (big_r - r + 0.5).clamp(0.0, 1.0);
    let rr = (r / big_r).min(1.0);
    let mut v = spec.contrast * (1.0 - 0.2 * rr * rr) * rim;
    let len = SPICULE_LENGTH_FRACTION * big_r;
    for s in spicules {
        let along = dx * s.cos + dy * s.sin;
        if along < 0.8 * big_r || along > big_r + len {
            continue;
        }
        let across = -dx * s.sin + dy * s.cos;
        let fade = 1.0 - ((along - big_r).max(0.0) / len);
        v += s.amp * fade * (-across * across / 2.0).exp();
    }
    v
}

/// Renders the phantom. Pixel values are rounded to `f32` precision so that the
/// raw-f32 file format stores them exactly.
pub fn generate(spec: &PhantomSpec) -> Result<(GrayImage, GroundTruth)> {
    spec.validate()?;
    let blobs = blobs(spec);
    let lrng = CounterRng::new(spec.seed, STREAM_LESION);
    let spicules: Vec<Spicule> = (0..spec.lesion.spicules as u64)
        .map(|i| {
            let angle = std::f64::consts::TAU * (i as f64 + lrng.range(i, 0, -0.3, 0.3)) / spec.lesion.spicules as f64;
            Spicule { cos: angle.cos(), sin: angle.sin(), amp: 0.5 * spec.lesion.contrast * lrng.range(i, 1, 0.6, 1.0) }
        })
        .collect();

    let (w, h) = (spec.width, spec.height);
    let mut data = vec![0.0; w * h];
    data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let fy = y as f64;
        let active: Vec<&Blob> = blobs.iter().filter(|b| (b.y - fy).abs() <= b.reach).collect();
        for (x, out) in row.iter_mut().enumerate() {
            let fx = x as f64;
            let mut v = BASE_LEVEL;
            for b in &active {
                if (b.x - fx).abs() <= b.reach {
                    let d2 = (b.x - fx).powi(2) + (b.y - fy).powi(2);
                    v += b.amp * (-d2 * b.inv_two_s2).exp();
                }
            }
            v += lesion_value(&spec.lesion, &spicules, fx, fy);
            *out = v as f32 as f64;
        }
    });
    let img = GrayImage::with_pitch(w, h, data, spec.pitch_mm)?;
    let truth = GroundTruth {
        center: spec.lesion.center,
        radius: spec.lesion.radius,
        density_class: spec.density_class,
        seed: spec.seed,
    };
    Ok((img, truth))
}
