//! Validation computations: feature correlation, candidate agreement and gaze
//! containment.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::gabor::{apply_bank, FeatureStack};
use crate::glcm::{glcm_at_points_quantized, glcm_feature_maps_quantized, GlcmFeatures};
use crate::imagio::{quantize, GrayImage};
use crate::peaks::CandidateSet;
use crate::pipelines::{initial_candidates, RunConfig};

/// Sample Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    if a.len() < 3 {
        return Err(Error::Data(format!("pearson needs at least 3 samples, got {}", a.len())));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("an input has zero variance".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// A scalar feature sampled at a site.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    GlcmMean,
    GlcmContrast,
    /// Largest response over all Gabor channels.
    GaborMax,
    /// Response of one Gabor channel.
    Gabor(usize),
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feature::GlcmMean => f.write_str("glcm_mean"),
            Feature::GlcmContrast => f.write_str("glcm_contrast"),
            Feature::GaborMax => f.write_str("gabor_max"),
            Feature::Gabor(i) => write!(f, "gabor{i}"),
        }
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glcm_mean" => Ok(Feature::GlcmMean),
            "glcm_contrast" => Ok(Feature::GlcmContrast),
            "gabor_max" => Ok(Feature::GaborMax),
            _ => s
                .strip_prefix("gabor")
                .and_then(|i| i.parse().ok())
                .map(Feature::Gabor)
                .ok_or_else(|| {
                    Error::InvalidConfig(format!("feature must be glcm_mean|glcm_contrast|gabor_max|gabor<i>, got {s:?}"))
                }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// One site per GLCM tile, at the tile center.
    PerTile,
    /// One site per initial Gabor candidate.
    PerCandidate,
}

impl FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-tile" => Ok(Sampling::PerTile),
            "per-candidate" => Ok(Sampling::PerCandidate),
            _ => Err(Error::InvalidConfig(format!("sampling must be per-tile|per-candidate, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub r: f64,
    pub n: usize,
    pub pair: (String, String),
    pub sampling: Sampling,
}

/// Feature values at a set of sites of one image.
#[derive(Debug, Clone, Default)]
pub struct SiteFeatures {
    pub points: Vec<(usize, usize)>,
    pub glcm: Vec<GlcmFeatures>,
    /// Gabor responses per site, one entry per channel.
    pub gabor: Vec<Vec<f64>>,
}

impl SiteFeatures {
    pub fn values(&self, f: Feature) -> Result<Vec<f64>> {
        if let Feature::Gabor(i) = f {
            let channels = self.gabor.first().map_or(0, Vec::len);
            ensure(self.gabor.is_empty() || i < channels, || {
                format!("gabor channel {i} out of range (bank has {channels})")
            })?;
        }
        Ok(match f {
            Feature::GlcmMean => self.glcm.iter().map(|g| g.mean).collect(),
            Feature::GlcmContrast => self.glcm.iter().map(|g| g.contrast).collect(),
            Feature::GaborMax => self.gabor.iter().map(|s| s.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect(),
            Feature::Gabor(i) => self.gabor.iter().map(|s| s[i]).collect(),
        })
    }

    fn extend(&mut self, other: SiteFeatures) {
        self.points.extend(other.points);
        self.glcm.extend(other.glcm);
        self.gabor.extend(other.gabor);
    }
}

fn sample_stack(stack: &FeatureStack, points: &[(usize, usize)]) -> Vec<Vec<f64>> {
    points.iter().map(|&(x, y)| stack.sample(x, y)).collect()
}

/// Samples GLCM and Gabor features at the sites chosen by `sampling`.
pub fn sample_features(img: &GrayImage, cfg: &RunConfig, sampling: Sampling) -> Result<SiteFeatures> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    let q = quantize(img, cfg.glcm.levels)?;
    match sampling {
        Sampling::PerTile => {
            let maps = glcm_feature_maps_quantized(&q, &cfg.glcm, img.pitch_mm())?;
            let stack = apply_bank(img, &cfg.gabor)?;
            let points: Vec<_> = (0..maps.layout.n_tiles()).map(|t| maps.layout.tile_center(t)).collect();
            Ok(SiteFeatures { gabor: sample_stack(&stack, &points), glcm: maps.tiles, points })
        }
        Sampling::PerCandidate => {
            let (_, initial) = initial_candidates(img, &cfg)?;
            let points = initial.points();
            let glcm = glcm_at_points_quantized(&q, &points, &cfg.glcm)?;
            let gabor = initial.candidates.iter().map(|c| c.scores.clone()).collect();
            Ok(SiteFeatures { points, glcm, gabor })
        }
    }
}

/// Pearson correlation of two features over sites pooled from every image.
pub fn pooled_feature_correlation(
    images: &[GrayImage],
    cfg: &RunConfig,
    pair: (Feature, Feature),
    sampling: Sampling,
) -> Result<CorrelationReport> {
    let mut all = SiteFeatures::default();
    for img in images {
        all.extend(sample_features(img, cfg, sampling)?);
    }
    let n = all.points.len();
    if n < 3 {
        return Err(Error::Data(format!("need at least 3 sampling sites, got {n}")));
    }
    let r = pearson(&all.values(pair.0)?, &all.values(pair.1)?)?;
    Ok(CorrelationReport { r, n, pair: (pair.0.to_string(), pair.1.to_string()), sampling })
}

pub fn feature_correlation(
    img: &GrayImage,
    cfg: &RunConfig,
    pair: (Feature, Feature),
    sampling: Sampling,
) -> Result<CorrelationReport> {
    pooled_feature_correlation(std::slice::from_ref(img), cfg, pair, sampling)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeRecord {
    pub observer_id: String,
    pub t_ms: f64,
    pub x: f64,
    pub y: f64,
    pub valid: bool,
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

/// Reads gaze samples with header `observer_id,t_ms,x,y,valid`.
///
/// Time must be non-decreasing per observer and valid samples must have finite
/// coordinates. `valid` accepts `1/0/true/false`.
pub fn read_gaze_csv(r: impl Read) -> Result<Vec<GazeRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = rdr.headers().map_err(|e| Error::Data(format!("gaze csv: {e}")))?.clone();
    let expected = ["observer_id", "t_ms", "x", "y", "valid"];
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Data(format!("gaze csv header must be {}", expected.join(","))));
    }
    let mut out: Vec<GazeRecord> = Vec::new();
    let mut last_t: BTreeMap<String, f64> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Data(format!("gaze csv line {line}: {e}")))?;
        let num = |j: usize| -> Result<f64> {
            let s = rec.get(j).unwrap_or("");
            if s.is_empty() {
                return Ok(f64::NAN);
            }
            s.parse().map_err(|_| Error::Data(format!("gaze csv line {line}: bad number {s:?}")))
        };
        let valid = parse_bool(rec.get(4).unwrap_or(""))
            .ok_or_else(|| Error::Data(format!("gaze csv line {line}: bad valid flag")))?;
        let g = GazeRecord { observer_id: rec[0].to_string(), t_ms: num(1)?, x: num(2)?, y: num(3)?, valid };
        if !g.t_ms.is_finite() {
            return Err(Error::Data(format!("gaze csv line {line}: time must be finite")));
        }
        if g.valid && !(g.x.is_finite() && g.y.is_finite()) {
            return Err(Error::Data(format!("gaze csv line {line}: valid sample with non-finite coordinates")));
        }
        if let Some(&t) = last_t.get(&g.observer_id) {
            if g.t_ms < t {
                return Err(Error::Data(format!(
                    "gaze csv line {line}: time decreases for observer {:?}",
                    g.observer_id
                )));
            }
        }
        last_t.insert(g.observer_id.clone(), g.t_ms);
        out.push(g);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverGaze {
    pub observer_id: String,
    pub mean: (f64, f64),
    pub samples: usize,
    pub inside: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeReport {
    pub fraction: f64,
    pub radius: f64,
    pub early_window_ms: f64,
    pub observers: Vec<ObserverGaze>,
}

/// Fraction of observers whose mean early gaze point lies within `radius` of some
/// candidate. Observers are reported in id order.
pub fn gaze_containment(gaze: &[GazeRecord], set: &CandidateSet, radius: f64, early_window_ms: f64) -> Result<GazeReport> {
    ensure(radius > 0.0, || format!("gaze radius must be > 0, got {radius}"))?;
    let mut acc: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for g in gaze.iter().filter(|g| g.valid && g.t_ms <= early_window_ms) {
        let e = acc.entry(&g.observer_id).or_insert((0.0, 0.0, 0));
        e.0 += g.x;
        e.1 += g.y;
        e.2 += 1;
    }
    if acc.is_empty() {
        return Err(Error::Data(format!("no valid gaze records within {early_window_ms} ms")));
    }
    let r2 = radius * radius;
    let observers: Vec<ObserverGaze> = acc
        .into_iter()
        .map(|(id, (sx, sy, n))| {
            let mean = (sx / n as f64, sy / n as f64);
            let inside = set.iter().any(|c| c.dist2(mean.0, mean.1) <= r2);
            ObserverGaze { observer_id: id.to_string(), mean, samples: n, inside }
        })
        .collect();
    let fraction = observers.iter().filter(|o| o.inside).count() as f64 / observers.len() as f64;
    Ok(GazeReport { fraction, radius, early_window_ms, observers })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    /// `matched / |a|`; null when `a` is empty.
    pub precision: Option<f64>,
    /// `matched / |b|`; null when `b` is empty.
    pub recall: Option<f64>,
    /// Matched index pairs `(i in a, j in b)`.
    pub matched: Vec<(usize, usize)>,
    pub tol: f64,
}

/// Greedy matching: candidates of `a` in descending score order each take the
/// nearest unmatched candidate of `b` within `tol`.
pub fn candidate_agreement(a: &CandidateSet, b: &CandidateSet, tol: f64) -> Result<Agreement> {
    ensure(tol >= 0.0, || format!("agreement tolerance must be >= 0, got {tol}"))?;
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&i, &j| {
        let (ci, cj) = (&a.candidates[i], &a.candidates[j]);
        cj.primary_score().total_cmp(&ci.primary_score()).then(ci.key().cmp(&cj.key()))
    });
    let mut taken = vec![false; b.len()];
    let mut matched = Vec::new();
    let tol2 = tol * tol;
    for i in order {
        let ca = &a.candidates[i];
        let best = b
            .candidates
            .iter()
            .enumerate()
            .filter(|(j, _)| !taken[*j])
            .map(|(j, cb)| (j, cb.dist2(ca.x as f64, ca.y as f64)))
            .filter(|&(_, d)| d <= tol2)
            .min_by(|p, q| p.1.total_cmp(&q.1).then(p.0.cmp(&q.0)));
        if let Some((j, _)) = best {
            taken[j] = true;
            matched.push((i, j));
        }
    }
    let m = matched.len() as f64;
    Ok(Agreement {
        precision: (!a.is_empty()).then(|| m / a.len() as f64),
        recall: (!b.is_empty()).then(|| m / b.len() as f64),
        matched,
        tol,
    })
}
