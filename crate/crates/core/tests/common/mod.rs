//! Brute-force reference implementations shared by the integration tests and
//! the acceptance harness. Each one is written straight from the definition,
//! without reusing library internals.
#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use fixsearch::gabor::GaborParams;
use fixsearch::imagio::GrayImage;
use rand::Rng;

/// Co-occurrence counts by enumerating every pixel pair `(p, p + offset)`.
pub fn brute_glcm(q: &[u16], w: usize, h: usize, levels: usize, dx: i32, dy: i32) -> Vec<u64> {
    let mut counts = vec![0u64; levels * levels];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let (x2, y2) = (x + dx as i64, y + dy as i64);
            if x2 < 0 || y2 < 0 || x2 >= w as i64 || y2 >= h as i64 {
                continue;
            }
            let i = q[(y * w as i64 + x) as usize] as usize;
            let j = q[(y2 * w as i64 + x2) as usize] as usize;
            counts[i * levels + j] += 1;
        }
    }
    counts
}

/// `Σ i·p(i, j)` and `Σ (i − j)²·p(i, j)` from normalized probabilities.
pub fn brute_mean_contrast(counts: &[u64], levels: usize) -> (f64, f64) {
    let total: u64 = counts.iter().sum();
    let (mut mean, mut contrast) = (0.0, 0.0);
    for i in 0..levels {
        for j in 0..levels {
            let p = counts[i * levels + j] as f64 / total as f64;
            mean += i as f64 * p;
            contrast += ((i as f64 - j as f64).powi(2)) * p;
        }
    }
    (mean, contrast)
}

/// Kernel value at offset `(dx, dy)` from the kernel center.
pub fn gabor_value(p: &GaborParams, dx: f64, dy: f64) -> f64 {
    let r2 = dx * dx + dy * dy;
    let env = (-4.0 * std::f64::consts::LN_2 * r2 / (p.ws * p.ws)).exp();
    env * (2.0 * std::f64::consts::PI * p.fc * (dx * p.theta.cos() + dy * p.theta.sin()) + p.phi).cos()
}

/// Direct double-loop cross-correlation with zero padding.
pub fn naive_correlate(img: &GrayImage, p: &GaborParams) -> Vec<f64> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let half = (p.support / 2) as i64;
    let mut out = vec![0.0; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for v in -half..=half {
                for u in -half..=half {
                    let (sx, sy) = (x + u, y + v);
                    if sx >= 0 && sy >= 0 && sx < w && sy < h {
                        acc += gabor_value(p, u as f64, v as f64) * img.get(sx as usize, sy as usize);
                    }
                }
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    out
}

/// Regional maxima by flooding each 8-connected equal-value component and
/// checking its outer boundary. Returns representative pixels: the rounded
/// centroid if it belongs to the plateau, else the member nearest to the
/// centroid (ties: smallest y, then x).
pub fn exhaustive_maxima(v: &[f64], w: usize, h: usize) -> BTreeSet<(usize, usize)> {
    let mut seen = vec![false; w * h];
    let mut out = BTreeSet::new();
    for start in 0..w * h {
        if seen[start] {
            continue;
        }
        let level = v[start];
        let mut comp = vec![];
        let mut is_max = true;
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(p) = queue.pop_front() {
            comp.push(p);
            let (px, py) = ((p % w) as i64, (p / w) as i64);
            for ny in py - 1..=py + 1 {
                for nx in px - 1..=px + 1 {
                    if (nx, ny) == (px, py) || nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if v[q] == level {
                        if !seen[q] {
                            seen[q] = true;
                            queue.push_back(q);
                        }
                    } else if v[q] > level {
                        is_max = false;
                    }
                }
            }
        }
        if !is_max {
            continue;
        }
        let n = comp.len() as f64;
        let cx = comp.iter().map(|&p| (p % w) as f64).sum::<f64>() / n;
        let cy = comp.iter().map(|&p| (p / w) as f64).sum::<f64>() / n;
        let (rx, ry) = (cx.round() as usize, cy.round() as usize);
        if comp.contains(&(ry * w + rx)) {
            out.insert((rx, ry));
            continue;
        }
        let best = comp
            .iter()
            .map(|&p| {
                let (x, y) = (p % w, p / w);
                ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2), y, x)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)))
            .unwrap();
        out.insert((best.2, best.1));
    }
    out
}

pub fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> GrayImage {
    GrayImage::from_fn(w, h, |_, _| rng.random_range(-1.0..1.0)).unwrap()
}

/// Standard normal draw by Box-Muller.
pub fn normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// `n` samples around `center` with isotropic standard deviation `sd`.
pub fn cloud(rng: &mut impl Rng, center: &[f64], sd: f64, n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| center.iter().map(|c| c + sd * normal(rng)).collect()).collect()
}

/// Sample mean and population covariance (row-major).
pub fn mean_cov(x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = x[0].len();
    let n = x.len() as f64;
    let mean: Vec<f64> = (0..d).map(|a| x.iter().map(|r| r[a]).sum::<f64>() / n).collect();
    let mut cov = vec![0.0; d * d];
    for a in 0..d {
        for b in 0..d {
            cov[a * d + b] = x.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / n;
        }
    }
    (mean, cov)
}
