//! Candidate-selection pipelines.
//!
//! * Pipeline A: cluster GLCM tiles, paint the lesion cluster into a mask, keep
//!   Gabor maxima inside the mask.
//! * Pipeline B: cluster Gabor maxima on four Gabor scores plus GLCM mean and
//!   contrast measured at each maximum, keep the lesion cluster.
//! * Threshold: keep Gabor maxima whose scores exceed a lower threshold.
//!
//! Every pipeline only removes candidates; `final ⊆ initial` by
//! `(x, y, source_channel)`.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::gabor::{apply_bank, FeatureStack, GaborBankConfig};
use crate::glcm::{glcm_at_points_quantized, glcm_feature_maps_quantized, GlcmConfig, TileLayout};
use crate::gmm::{self, ClusterLabels, GmmConfig, GmmModel};
use crate::imagio::{quantize, save_pgm8_bytes, GrayImage};
use crate::peaks::{bank_maxima, threshold_candidates, CandidateSet, ChannelRule};
use crate::rng::derive_seed;

pub const TAG_MASK: &str = "mask-pass";
pub const TAG_GMM: &str = "gmm-keep";

#[derive(Default, Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeaksConfig {
    /// Border band excluded from candidate search; default is half the largest kernel support.
    pub margin: Option<usize>,
    /// Minimum candidate spacing; default is half the bank's envelope width.
    pub min_separation: Option<f64>,
    /// Search maxima of absolute responses instead of signed ones.
    pub rectify: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    /// Absolute threshold. Takes precedence over `percentile`.
    pub tau: Option<f64>,
    /// Threshold at this percentile (0–100) of the initial primary scores.
    pub percentile: f64,
    pub channel_rule: ChannelRule,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig { tau: None, percentile: 50.0, channel_rule: ChannelRule::Max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub glcm: GlcmConfig,
    pub gabor: GaborBankConfig,
    pub gmm_a: GmmConfig,
    pub gmm_b: GmmConfig,
    pub peaks: PeaksConfig,
    pub threshold: ThresholdConfig,
    /// Known lesion position `(x, y)`; enables evaluation-mode cluster selection.
    pub lesion_hint: Option<(f64, f64)>,
    /// Root seed; GMM seeds are derived from it by label.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            glcm: GlcmConfig::default(),
            gabor: GaborBankConfig::default(),
            gmm_a: GmmConfig::with_k(5),
            gmm_b: GmmConfig::with_k(3),
            peaks: PeaksConfig::default(),
            threshold: ThresholdConfig::default(),
            lesion_hint: None,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.glcm.validate()?;
        self.gabor.validate()?;
        self.gmm_a.validate()?;
        self.gmm_b.validate()?;
        if let Some(m) = self.peaks.min_separation {
            ensure(m >= 0.0 && m.is_finite(), || format!("min_separation must be >= 0, got {m}"))?;
        }
        ensure((0.0..=100.0).contains(&self.threshold.percentile), || {
            format!("threshold percentile must lie in [0, 100], got {}", self.threshold.percentile)
        })?;
        if let Some(t) = self.threshold.tau {
            ensure(!t.is_nan(), || "threshold tau must not be NaN".to_string())?;
        }
        Ok(())
    }

    pub fn margin(&self) -> usize {
        self.peaks.margin.unwrap_or(self.gabor.max_support() / 2)
    }

    pub fn min_separation(&self) -> f64 {
        self.peaks.min_separation.unwrap_or(self.gabor.ws() / 2.0)
    }

    /// Copy with derived defaults filled in and GMM seeds derived from `seed`.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.peaks.margin = Some(self.margin());
        c.peaks.min_separation = Some(self.min_separation());
        c.glcm.stride = Some(self.glcm.stride());
        c.gmm_a.seed = derive_seed(self.seed, "gmm_a");
        c.gmm_b.seed = derive_seed(self.seed, "gmm_b");
        c
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("run config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Boolean raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Mask { width, height, bits: vec![value; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect()
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        save_pgm8_bytes(self.width, self.height, &self.to_u8(), path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    /// The cluster at the supplied lesion hint.
    Hint,
    /// Highest mean Gabor score, background excluded.
    Blind,
}

/// Where the clustered samples live, for resolving a lesion hint.
#[derive(Debug, Clone, Copy)]
pub enum LabelDomain<'a> {
    /// One sample per GLCM tile.
    Tiles(&'a TileLayout),
    /// One sample per point, inside a `width × height` image.
    Points { points: &'a [(usize, usize)], width: usize, height: usize },
}

impl LabelDomain<'_> {
    fn dims(&self) -> (usize, usize) {
        match self {
            LabelDomain::Tiles(l) => (l.width, l.height),
            LabelDomain::Points { width, height, .. } => (*width, *height),
        }
    }
}

/// Per-sample features used by blind cluster selection.
#[derive(Debug, Clone, Default)]
pub struct ClusterContext {
    pub gabor_score: Vec<f64>,
    pub glcm_mean: Vec<f64>,
}

fn cluster_means(labels: &[usize], k: usize, values: &[f64]) -> Vec<Option<f64>> {
    let mut sum = vec![0.0; k];
    let mut n = vec![0usize; k];
    for (&l, &v) in labels.iter().zip(values) {
        sum[l] += v;
        n[l] += 1;
    }
    sum.iter().zip(&n).map(|(&s, &c)| (c > 0).then(|| s / c as f64)).collect()
}

/// Index of the cluster holding the lesion.
///
/// With a hint, the label of the tile containing it (tiles) or of the point nearest
/// to it (points). Without one, the background cluster (lowest mean GLCM mean) is
/// set aside and the cluster with the highest mean Gabor score wins.
pub fn select_lesion_cluster(
    labels: &[usize],
    k: usize,
    domain: LabelDomain<'_>,
    hint: Option<(f64, f64)>,
    ctx: &ClusterContext,
) -> Result<(usize, SelectionMode)> {
    if labels.is_empty() {
        return Err(Error::Data("cannot select a cluster from empty labels".into()));
    }
    let mode = if hint.is_some() { SelectionMode::Hint } else { SelectionMode::Blind };
    if let Some((hx, hy)) = hint {
        let (w, h) = domain.dims();
        ensure(hx >= 0.0 && hy >= 0.0 && hx < w as f64 && hy < h as f64, || {
            format!("lesion hint ({hx}, {hy}) lies outside the {w}x{h} image")
        })?;
    }
    if k <= 1 {
        return Ok((0, mode));
    }
    if let Some((hx, hy)) = hint {
        let label = match domain {
            LabelDomain::Tiles(layout) => labels[layout.tile_of(hx as usize, hy as usize)],
            LabelDomain::Points { points, .. } => {
                let nearest = points
                    .iter()
                    .enumerate()
                    .map(|(i, &(x, y))| (i, (x as f64 - hx).powi(2) + (y as f64 - hy).powi(2)))
                    .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                    .map(|(i, _)| i)
                    .ok_or_else(|| Error::Data("no points to match the lesion hint".into()))?;
                labels[nearest]
            }
        };
        return Ok((label, mode));
    }
    let glcm = cluster_means(labels, k, &ctx.glcm_mean);
    let gabor = cluster_means(labels, k, &ctx.gabor_score);
    let background = (0..k)
        .filter_map(|c| glcm[c].map(|m| (c, m)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(c, _)| c);
    let best = (0..k)
        .filter(|&c| Some(c) != background)
        .filter_map(|c| gabor[c].map(|g| (c, g)))
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(c, _)| c);
    Ok((best.or(background).unwrap_or(0), mode))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineKind {
    A,
    B,
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub pipeline: PipelineKind,
    pub initial: CandidateSet,
    #[serde(rename = "final")]
    pub final_set: CandidateSet,
    /// Pixel mask of the lesion cluster (pipeline A); written separately as PGM.
    #[serde(skip)]
    pub mask: Option<Mask>,
    pub mask_pixels: Option<usize>,
    pub labels: Option<ClusterLabels>,
    pub model: Option<GmmModel>,
    pub lesion_cluster: Option<usize>,
    pub selection_mode: Option<SelectionMode>,
    /// Threshold actually applied (threshold pipeline).
    pub tau: Option<f64>,
    pub config_echo: RunConfig,
    pub warnings: Vec<String>,
    /// Wall-clock per stage; excluded from the serialized report.
    #[serde(skip)]
    pub timings: BTreeMap<String, f64>,
}

impl PipelineReport {
    fn new(kind: PipelineKind, cfg: &RunConfig, initial: CandidateSet) -> Self {
        PipelineReport {
            pipeline: kind,
            final_set: initial.with_candidates(Vec::new()),
            initial,
            mask: None,
            mask_pixels: None,
            labels: None,
            model: None,
            lesion_cluster: None,
            selection_mode: None,
            tau: None,
            config_echo: cfg.clone(),
            warnings: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct Timer(BTreeMap<String, f64>, Instant);

impl Timer {
    fn new() -> Self {
        Timer(BTreeMap::new(), Instant::now())
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.0.insert(stage.to_string(), (now - self.1).as_secs_f64() * 1e3);
        self.1 = now;
    }
}

fn check_image(img: &GrayImage, cfg: &RunConfig) -> Result<()> {
    let s = cfg.gabor.max_support();
    ensure(img.width() >= s && img.height() >= s, || {
        format!("image {}x{} is smaller than the gabor support {s}", img.width(), img.height())
    })
}

/// Gabor stack (optionally rectified) and its maxima.
pub fn initial_candidates(img: &GrayImage, cfg: &RunConfig) -> Result<(FeatureStack, CandidateSet)> {
    let stack = apply_bank(img, &cfg.gabor)?;
    let search = if cfg.peaks.rectify { stack.rectified()? } else { stack.clone() };
    let mut initial = bank_maxima(&search, cfg.margin(), cfg.min_separation())?;
    if cfg.peaks.rectify {
        // scores always report the signed responses
        for c in &mut initial.candidates {
            c.scores = stack.sample(c.x, c.y);
        }
    }
    Ok((stack, initial))
}

/// Keeps candidates inside `mask`.
pub fn screen_with_mask(initial: &CandidateSet, mask: &Mask) -> CandidateSet {
    let kept = initial
        .candidates
        .iter()
        .filter(|c| mask.get(c.x, c.y))
        .cloned()
        .map(|mut c| {
            c.tag(TAG_MASK);
            c
        })
        .collect();
    initial.with_candidates(kept)
}

pub fn pipeline_a(img: &GrayImage, cfg: &RunConfig) -> Result<PipelineReport> {
    pipeline_a_with_mask(img, cfg, None)
}

/// Pipeline A; `mask_override` replaces the cluster mask for the screening step.
pub fn pipeline_a_with_mask(img: &GrayImage, cfg: &RunConfig, mask_override: Option<&Mask>) -> Result<PipelineReport> {
    cfg.validate()?;
    check_image(img, cfg)?;
    let cfg = cfg.resolved();
    let mut timer = Timer::new();

    let q = quantize(img, cfg.glcm.levels)?;
    let maps = glcm_feature_maps_quantized(&q, &cfg.glcm, img.pitch_mm())?;
    timer.lap("glcm");

    let (stack, initial) = initial_candidates(img, &cfg)?;
    timer.lap("gabor");

    let layout = &maps.layout;
    let samples: Vec<Vec<f64>> = maps.tiles.iter().map(|f| vec![f.mean, f.contrast]).collect();
    let model = gmm::fit(&samples, &cfg.gmm_a)?;
    let labels = gmm::predict(&model, &samples)?;
    timer.lap("gmm");

    // strongest Gabor response among the pixels each tile serves
    let max_map = stack.max_map()?;
    let mut tile_gabor = vec![f64::NEG_INFINITY; layout.n_tiles()];
    for y in 0..img.height() {
        for x in 0..img.width() {
            let t = layout.tile_of(x, y);
            tile_gabor[t] = tile_gabor[t].max(max_map.get(x, y));
        }
    }
    let ctx = ClusterContext { gabor_score: tile_gabor, glcm_mean: maps.tiles.iter().map(|f| f.mean).collect() };
    let (lesion, mode) =
        select_lesion_cluster(&labels.labels, model.k(), LabelDomain::Tiles(layout), cfg.lesion_hint, &ctx)?;
    let mask = Mask {
        width: img.width(),
        height: img.height(),
        bits: layout.paint(&labels.labels.iter().map(|&l| l == lesion).collect::<Vec<_>>()),
    };

    let mut initial = initial;
    for c in &mut initial.candidates {
        c.cluster = Some(labels.labels[layout.tile_of(c.x, c.y)]);
    }
    let screen = mask_override.unwrap_or(&mask);
    let final_set = screen_with_mask(&initial, screen);
    timer.lap("screen");

    let mut report = PipelineReport::new(PipelineKind::A, &cfg, initial);
    if screen.count() == 0 {
        report.warnings.push("lesion mask is empty; no candidates kept".into());
    }
    report.warnings.extend(model.warnings.iter().cloned());
    report.final_set = final_set;
    report.mask_pixels = Some(screen.count());
    report.mask = Some(screen.clone());
    report.labels = Some(labels);
    report.model = Some(model);
    report.lesion_cluster = Some(lesion);
    report.selection_mode = Some(mode);
    report.timings = timer.0;
    Ok(report)
}

pub fn pipeline_b(img: &GrayImage, cfg: &RunConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    check_image(img, cfg)?;
    let cfg = cfg.resolved();
    let mut timer = Timer::new();

    let (_, initial) = initial_candidates(img, &cfg)?;
    timer.lap("gabor");
    let points = initial.points();
    let q = quantize(img, cfg.glcm.levels)?;
    let texture = glcm_at_points_quantized(&q, &points, &cfg.glcm)?;
    timer.lap("glcm");

    let mut report = PipelineReport::new(PipelineKind::B, &cfg, initial);
    if report.initial.len() < cfg.gmm_b.k {
        report.warnings.push(format!(
            "only {} initial candidates for k={}; keeping all",
            report.initial.len(),
            cfg.gmm_b.k
        ));
        let kept = report.initial.candidates.iter().cloned().map(|mut c| {
            c.tag(TAG_GMM);
            c
        });
        report.final_set = report.initial.with_candidates(kept.collect());
        report.timings = timer.0;
        return Ok(report);
    }

    let samples: Vec<Vec<f64>> = report
        .initial
        .candidates
        .iter()
        .zip(&texture)
        .map(|(c, t)| {
            let mut row = c.scores.clone();
            row.push(t.mean);
            row.push(t.contrast);
            row
        })
        .collect();
    let model = gmm::fit(&samples, &cfg.gmm_b)?;
    let labels = gmm::predict(&model, &samples)?;
    timer.lap("gmm");

    let ctx = ClusterContext {
        gabor_score: report.initial.candidates.iter().map(|c| c.primary_score()).collect(),
        glcm_mean: texture.iter().map(|t| t.mean).collect(),
    };
    let domain = LabelDomain::Points { points: &points, width: img.width(), height: img.height() };
    let (lesion, mode) = select_lesion_cluster(&labels.labels, model.k(), domain, cfg.lesion_hint, &ctx)?;

    for (c, &l) in report.initial.candidates.iter_mut().zip(&labels.labels) {
        c.cluster = Some(l);
    }
    let kept = report
        .initial
        .candidates
        .iter()
        .filter(|c| c.cluster == Some(lesion))
        .cloned()
        .map(|mut c| {
            c.tag(TAG_GMM);
            c
        })
        .collect();
    report.final_set = report.initial.with_candidates(kept);
    report.warnings.extend(model.warnings.iter().cloned());
    report.labels = Some(labels);
    report.model = Some(model);
    report.lesion_cluster = Some(lesion);
    report.selection_mode = Some(mode);
    timer.lap("select");
    report.timings = timer.0;
    Ok(report)
}

/// Linear-interpolated percentile (`p` in [0, 100]) of `values`.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p.clamp(0.0, 100.0) / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

pub fn pipeline_threshold(img: &GrayImage, cfg: &RunConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    check_image(img, cfg)?;
    let cfg = cfg.resolved();
    let mut timer = Timer::new();
    let (_, initial) = initial_candidates(img, &cfg)?;
    timer.lap("gabor");
    let scores: Vec<f64> = initial.candidates.iter().map(|c| c.primary_score()).collect();
    let tau = cfg
        .threshold
        .tau
        .or_else(|| percentile(&scores, cfg.threshold.percentile))
        .unwrap_or(f64::NEG_INFINITY);
    let final_set = threshold_candidates(&initial, tau, cfg.threshold.channel_rule);
    timer.lap("threshold");
    let mut report = PipelineReport::new(PipelineKind::Threshold, &cfg, initial);
    report.final_set = final_set;
    // JSON has no infinities; an unbounded threshold is reported as null
    report.tau = tau.is_finite().then_some(tau);
    report.timings = timer.0;
    Ok(report)
}

pub fn run_pipeline(kind: PipelineKind, img: &GrayImage, cfg: &RunConfig) -> Result<PipelineReport> {
    match kind {
        PipelineKind::A => pipeline_a(img, cfg),
        PipelineKind::B => pipeline_b(img, cfg),
        PipelineKind::Threshold => pipeline_threshold(img, cfg),
    }
}
