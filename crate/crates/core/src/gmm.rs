//! Gaussian mixture clustering fitted by expectation-maximization.
//!
//! Fitting is deterministic for a given `(samples, config)`. Initial centers
//! come from k-means++ where each sample's random draw is a hash of the seed,
//! the round and the sample's own values, so reordering the samples does not
//! change which centers are picked. All reductions run in sample order.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng::{mix64, unit_f64};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
/// Components whose weight drops below this are re-seeded.
const COLLAPSE_WEIGHT: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceType {
    Full,
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop when the relative change of the log-likelihood falls below this.
    pub tol: f64,
    pub covariance: CovarianceType,
    /// Added to every covariance diagonal after each M-step.
    pub reg: f64,
    pub seed: u64,
    /// Fit on per-dimension z-scores.
    pub standardize: bool,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            k: 5,
            max_iters: 200,
            tol: 1e-6,
            covariance: CovarianceType::Full,
            reg: 1e-6,
            seed: 0,
            standardize: true,
        }
    }
}

impl GmmConfig {
    pub fn with_k(k: usize) -> Self {
        GmmConfig { k, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.k >= 1, || format!("gmm k must be >= 1, got {}", self.k))?;
        ensure(self.tol > 0.0, || format!("gmm tol must be > 0, got {}", self.tol))?;
        ensure(self.reg >= 0.0 && self.reg.is_finite(), || format!("gmm reg must be >= 0, got {}", self.reg))
    }
}

/// Per-dimension affine map `z = (x - shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    fn identity(d: usize) -> Self {
        Scaler { shift: vec![0.0; d], scale: vec![1.0; d] }
    }

    /// Population mean and standard deviation; zero-spread dimensions keep scale 1.
    fn fit(samples: &[Vec<f64>], warnings: &mut Vec<String>) -> Self {
        let n = samples.len() as f64;
        let d = samples[0].len();
        let mut shift = vec![0.0; d];
        for s in samples {
            for (m, v) in shift.iter_mut().zip(s) {
                *m += v;
            }
        }
        shift.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for s in samples {
            for ((acc, v), m) in var.iter_mut().zip(s).zip(&shift) {
                *acc += (v - m) * (v - m);
            }
        }
        let scale = var
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let sd = (v / n).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    warnings.push(format!("dimension {j} has zero variance; scale fixed to 1"));
                    1.0
                }
            })
            .collect();
        Scaler { shift, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.shift).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.shift).zip(&self.scale).map(|((v, m), s)| v * s + m).collect()
    }
}

/// A fitted mixture. Means and covariances live in the scaled feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major `D × D` matrices.
    pub covariances: Vec<Vec<f64>>,
    pub covariance: CovarianceType,
    pub scaler: Scaler,
    pub final_loglik: f64,
    pub iterations_run: usize,
    pub converged: bool,
    /// Log-likelihood of each successive parameter set.
    pub loglik_trace: Vec<f64>,
    /// Trace indices whose parameters came from a step that re-seeded a collapsed component.
    pub reseeded_at: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Hard and soft assignments of samples to components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabels {
    pub labels: Vec<usize>,
    pub responsibilities: Vec<Vec<f64>>,
}

impl ClusterLabels {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn k(&self) -> usize {
        self.responsibilities.first().map_or(0, Vec::len)
    }

    /// Writes `index,label,maxresp` rows.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "index,label,maxresp")?;
        for (i, (l, r)) in self.labels.iter().zip(&self.responsibilities).enumerate() {
            writeln!(w, "{},{},{}", i, l, r[*l])?;
        }
        Ok(())
    }
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.scaler.shift.len()
    }

    /// Component means mapped back to the input feature units.
    pub fn means_original(&self) -> Vec<Vec<f64>> {
        self.means.iter().map(|m| self.scaler.invert(m)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        crate::imagio::write_file(path, self.to_json().as_bytes())
    }
}

/// Lower-triangular Cholesky factor of a row-major SPD matrix.
fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Cached per-component terms for log-density evaluation.
struct Component {
    log_weight: f64,
    mean: Vec<f64>,
    chol: Vec<f64>,
    log_norm: f64,
}

impl Component {
    fn new(weight: f64, mean: &[f64], cov: &[f64]) -> Result<Self> {
        let d = mean.len();
        let chol = cholesky(cov, d).ok_or_else(|| Error::Data("covariance is not positive definite".into()))?;
        let log_det: f64 = (0..d).map(|i| 2.0 * chol[i * d + i].ln()).sum();
        Ok(Component {
            log_weight: weight.ln(),
            mean: mean.to_vec(),
            chol,
            log_norm: -0.5 * (d as f64 * LN_2PI + log_det),
        })
    }

    /// `log w + log N(x | μ, Σ)`.
    fn log_joint(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let d = self.mean.len();
        // forward substitution L y = x - μ
        let mut maha = 0.0;
        for i in 0..d {
            let mut s = x[i] - self.mean[i];
            for (l, y) in self.chol[i * d..i * d + i].iter().zip(&scratch[..i]) {
                s -= l * y;
            }
            scratch[i] = s / self.chol[i * d + i];
            maha += scratch[i] * scratch[i];
        }
        self.log_weight + self.log_norm - 0.5 * maha
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// E-step: per-sample log joint rows (in place) and their log-sum-exp.
fn e_step(components: &[Component], z: &[Vec<f64>], log_resp: &mut [Vec<f64>]) -> Vec<f64> {
    let d = z.first().map_or(0, Vec::len);
    let mut scratch = vec![0.0; d];
    z.iter()
        .zip(log_resp.iter_mut())
        .map(|(x, row)| {
            for (r, c) in row.iter_mut().zip(components) {
                *r = c.log_joint(x, &mut scratch);
            }
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|r| *r -= lse);
            lse
        })
        .collect()
}

fn covariance_of(z: &[Vec<f64>], weights: Option<&[f64]>, mean: &[f64], total: f64, kind: CovarianceType) -> Vec<f64> {
    let d = mean.len();
    let mut cov = vec![0.0; d * d];
    for (i, x) in z.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        for a in 0..d {
            let da = x[a] - mean[a];
            match kind {
                CovarianceType::Full => {
                    for b in 0..=a {
                        cov[a * d + b] += w * da * (x[b] - mean[b]);
                    }
                }
                CovarianceType::Diagonal => cov[a * d + a] += w * da * da,
            }
        }
    }
    for a in 0..d {
        for b in 0..=a {
            let v = cov[a * d + b] / total;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    cov
}

fn add_ridge(cov: &mut [f64], d: usize, reg: f64) {
    for a in 0..d {
        cov[a * d + a] += reg;
    }
}

/// Hash of a sample's exact bit pattern.
fn sample_key(x: &[f64]) -> u64 {
    x.iter().fold(0x243f_6a88_85a3_08d3, |h, v| mix64(h ^ v.to_bits()))
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// k-means++ seeding via exponential races: sample `i` draws `u_i` from a hash of
/// `(seed, round, values)` and the center is the minimizer of `-ln(u_i) / D²_i`,
/// an exact draw with probability proportional to `D²` that ignores sample order.
fn kmeanspp(z: &[Vec<f64>], raw: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let keys: Vec<u64> = raw.iter().map(|x| sample_key(x)).collect();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut d2 = vec![f64::INFINITY; z.len()];
    for round in 0..k as u64 {
        let round_key = mix64(seed ^ mix64(round.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        let any_spread = d2.iter().any(|&v| v > 0.0);
        let mut best: Option<(f64, usize)> = None;
        for i in 0..z.len() {
            let weight = if round == 0 || !any_spread { 1.0 } else { d2[i] };
            if weight <= 0.0 {
                continue;
            }
            let u = unit_f64(mix64(keys[i] ^ round_key));
            let score = -u.ln() / weight;
            let better = match best {
                None => true,
                Some((s, j)) => score < s || (score == s && lexicographic(&raw[i], &raw[j]).is_lt()),
            };
            if better {
                best = Some((score, i));
            }
        }
        let pick = best.expect("non-empty samples").1;
        let c = z[pick].clone();
        for (i, x) in z.iter().enumerate() {
            let dist: f64 = x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
            d2[i] = d2[i].min(dist);
        }
        centers.push(c);
    }
    centers
}

fn check_samples(samples: &[Vec<f64>]) -> Result<usize> {
    let d = samples.first().map_or(0, Vec::len);
    ensure(d >= 1, || "samples must have at least one dimension".to_string())?;
    for s in samples {
        if s.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: s.len() });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite sample value".into()));
        }
    }
    Ok(d)
}

/// Fits a `cfg.k`-component mixture to the rows of `samples`.
pub fn fit(samples: &[Vec<f64>], cfg: &GmmConfig) -> Result<GmmModel> {
    cfg.validate()?;
    let n = samples.len();
    if n < cfg.k {
        return Err(Error::Data(format!("gmm needs at least k={} samples, got {n}", cfg.k)));
    }
    let d = check_samples(samples)?;
    let mut warnings = Vec::new();
    let scaler = if cfg.standardize { Scaler::fit(samples, &mut warnings) } else { Scaler::identity(d) };
    let z: Vec<Vec<f64>> = samples.iter().map(|s| scaler.apply(s)).collect();
    let k = cfg.k;

    let global_mean: Vec<f64> = {
        let mut m = vec![0.0; d];
        for x in &z {
            m.iter_mut().zip(x).for_each(|(a, v)| *a += v);
        }
        m.iter_mut().for_each(|a| *a /= n as f64);
        m
    };
    let mut global_cov = covariance_of(&z, None, &global_mean, n as f64, cfg.covariance);
    add_ridge(&mut global_cov, d, cfg.reg);
    if cholesky(&global_cov, d).is_none() {
        // all samples coincide and reg = 0
        add_ridge(&mut global_cov, d, 1e-6);
        warnings.push("degenerate sample covariance; initial ridge 1e-6 applied".into());
    }

    let mut weights = vec![1.0 / k as f64; k];
    let mut means = kmeanspp(&z, samples, k, cfg.seed);
    let mut covs = vec![global_cov.clone(); k];

    let mut log_resp = vec![vec![0.0; k]; n];
    let mut trace = Vec::new();
    let mut reseeded_at = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut reseeded_last = false;

    loop {
        let components =
            (0..k).map(|c| Component::new(weights[c], &means[c], &covs[c])).collect::<Result<Vec<_>>>()?;
        let per_sample = e_step(&components, &z, &mut log_resp);
        let ll: f64 = per_sample.iter().sum();
        if reseeded_last {
            reseeded_at.push(trace.len());
        }
        trace.push(ll);
        if let [.., prev, cur] = trace[..] {
            if (cur - prev).abs() <= cfg.tol * prev.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
        if iterations >= cfg.max_iters {
            break;
        }

        // M-step
        reseeded_last = false;
        let resp: Vec<Vec<f64>> = log_resp.iter().map(|r| r.iter().map(|v| v.exp()).collect()).collect();
        for c in 0..k {
            let col: Vec<f64> = resp.iter().map(|r| r[c]).collect();
            let nk: f64 = col.iter().sum();
            if nk / (n as f64) < COLLAPSE_WEIGHT {
                // re-seed at the sample the mixture explains worst
                let worst = (0..n)
                    .min_by(|&a, &b| per_sample[a].total_cmp(&per_sample[b]).then(a.cmp(&b)))
                    .expect("n >= 1");
                means[c] = z[worst].clone();
                covs[c] = global_cov.clone();
                weights[c] = 1.0 / n as f64;
                reseeded_last = true;
                warnings.push(format!("component {c} collapsed at iteration {iterations}; re-seeded"));
                continue;
            }
            let mut mean = vec![0.0; d];
            for (x, &r) in z.iter().zip(&col) {
                mean.iter_mut().zip(x).for_each(|(m, v)| *m += r * v);
            }
            mean.iter_mut().for_each(|m| *m /= nk);
            let mut cov = covariance_of(&z, Some(&col), &mean, nk, cfg.covariance);
            add_ridge(&mut cov, d, cfg.reg);
            weights[c] = nk / n as f64;
            means[c] = mean;
            covs[c] = cov;
        }
        let wsum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= wsum);
        iterations += 1;
    }

    Ok(GmmModel {
        weights,
        means,
        covariances: covs,
        covariance: cfg.covariance,
        scaler,
        final_loglik: *trace.last().expect("at least one E-step"),
        iterations_run: iterations,
        converged,
        loglik_trace: trace,
        reseeded_at,
        warnings,
    })
}

/// Responsibilities and argmax labels (ties go to the lowest component index).
pub fn predict(model: &GmmModel, samples: &[Vec<f64>]) -> Result<ClusterLabels> {
    let d = model.dim();
    for s in samples {
        if s.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: s.len() });
        }
    }
    let components = (0..model.k())
        .map(|c| Component::new(model.weights[c], &model.means[c], &model.covariances[c]))
        .collect::<Result<Vec<_>>>()?;
    let z: Vec<Vec<f64>> = samples.iter().map(|s| model.scaler.apply(s)).collect();
    let mut log_resp = vec![vec![0.0; model.k()]; z.len()];
    e_step(&components, &z, &mut log_resp);
    let responsibilities: Vec<Vec<f64>> = log_resp
        .iter()
        .map(|row| {
            let r: Vec<f64> = row.iter().map(|v| v.exp()).collect();
            let s: f64 = r.iter().sum();
            r.into_iter().map(|v| v / s).collect()
        })
        .collect();
    let labels = log_resp.iter().map(|row| argmax_lowest(row)).collect();
    Ok(ClusterLabels { labels, responsibilities })
}
