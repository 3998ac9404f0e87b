//! Fixation-candidate extraction from feature maps.
//!
//! A regional maximum is an 8-connected plateau of equal values that is
//! strictly greater than every pixel bordering it. Plateaus are found by
//! flooding the map from the top: pixels are visited in descending value
//! order, equal-valued neighbors are merged with a union-find, and a plateau is
//! rejected as soon as one of its pixels touches an already-flooded (higher)
//! pixel. This is the watershed of the negated map restricted to its minima.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gabor::FeatureStack;
use crate::imagio::FeatureMap;

pub const TAG_INITIAL: &str = "initial";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub x: usize,
    pub y: usize,
    /// One score per feature channel, sampled at `(x, y)`.
    pub scores: Vec<f64>,
    /// Channel whose maximum produced this candidate.
    pub source_channel: usize,
    pub cluster: Option<usize>,
    pub stage_tags: Vec<String>,
}

impl Candidate {
    pub fn new(x: usize, y: usize, scores: Vec<f64>, source_channel: usize) -> Self {
        Candidate { x, y, scores, source_channel, cluster: None, stage_tags: vec![TAG_INITIAL.to_string()] }
    }

    /// Largest channel score; used for ordering and suppression.
    pub fn primary_score(&self) -> f64 {
        self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Identity used by the subset laws.
    pub fn key(&self) -> (usize, usize, usize) {
        (self.x, self.y, self.source_channel)
    }

    pub fn dist2(&self, x: f64, y: f64) -> f64 {
        let dx = self.x as f64 - x;
        let dy = self.y as f64 - y;
        dx * dx + dy * dy
    }

    pub fn tag(&mut self, t: &str) {
        self.stage_tags.push(t.to_string());
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    pub width: usize,
    pub height: usize,
    pub margin: usize,
    /// Set when the input had no structure (one plateau covering the map).
    pub degenerate: bool,
    pub warnings: Vec<String>,
}

impl CandidateSet {
    pub fn empty(width: usize, height: usize, margin: usize) -> Self {
        CandidateSet { candidates: Vec::new(), width, height, margin, degenerate: false, warnings: Vec::new() }
    }

    pub fn push(&mut self, c: Candidate) {
        self.candidates.push(c);
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Candidate> {
        self.candidates.iter()
    }

    pub fn points(&self) -> Vec<(usize, usize)> {
        self.candidates.iter().map(|c| (c.x, c.y)).collect()
    }

    /// Descending primary score, then `y`, `x` and source channel ascending.
    pub fn sort(&mut self) {
        self.candidates.sort_by(canonical_order);
    }

    /// Same metadata, different members.
    pub fn with_candidates(&self, candidates: Vec<Candidate>) -> Self {
        CandidateSet { candidates, warnings: self.warnings.clone(), ..*self }
    }

    /// True when every member of `self` appears in `other` by `(x, y, source_channel)`.
    pub fn is_subset_of(&self, other: &CandidateSet) -> bool {
        self.candidates.iter().all(|c| other.candidates.iter().any(|o| o.key() == c.key()))
    }

    /// Writes `x,y,source_channel,score_0..score_{C-1},cluster,stage_tags`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let channels = self.candidates.iter().map(|c| c.scores.len()).max().unwrap_or(0);
        let mut header = String::from("x,y,source_channel");
        for i in 0..channels {
            let _ = write!(header, ",score_{i}");
        }
        header.push_str(",cluster,stage_tags");
        writeln!(w, "{header}")?;
        for c in &self.candidates {
            let mut line = format!("{},{},{}", c.x, c.y, c.source_channel);
            for i in 0..channels {
                match c.scores.get(i) {
                    Some(s) => write!(line, ",{s}").unwrap(),
                    None => line.push(','),
                }
            }
            match c.cluster {
                Some(k) => write!(line, ",{k}").unwrap(),
                None => line.push(','),
            }
            let _ = write!(line, ",{}", c.stage_tags.join(";"));
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Reads the format produced by [`CandidateSet::write_csv`].
    pub fn read_csv(r: impl BufRead, width: usize, height: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let headers = rdr.headers().map_err(|e| Error::Data(format!("candidate csv: {e}")))?.clone();
        let n_scores = headers.iter().filter(|h| h.starts_with("score_")).count();
        if headers.len() != n_scores + 5 || &headers[0] != "x" || &headers[1] != "y" {
            return Err(Error::Data(format!("candidate csv: unexpected header {headers:?}")));
        }
        let mut set = CandidateSet::empty(width, height, 0);
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Data(format!("candidate csv: {e}")))?;
            let parse = |i: usize| -> Result<&str> { Ok(rec.get(i).unwrap_or("")) };
            let num = |i: usize| -> Result<usize> {
                parse(i)?.parse().map_err(|_| Error::Data(format!("candidate csv: bad integer {:?}", &rec[i])))
            };
            let scores = (0..n_scores)
                .map(|i| {
                    let s = parse(3 + i)?;
                    s.parse::<f64>().map_err(|_| Error::Data(format!("candidate csv: bad score {s:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let cluster_field = parse(3 + n_scores)?;
            let cluster = if cluster_field.is_empty() { None } else { Some(num(3 + n_scores)?) };
            let tags_field = parse(4 + n_scores)?;
            let stage_tags =
                if tags_field.is_empty() { Vec::new() } else { tags_field.split(';').map(str::to_string).collect() };
            set.push(Candidate { x: num(0)?, y: num(1)?, scores, source_channel: num(2)?, cluster, stage_tags });
        }
        Ok(set)
    }
}

fn canonical_order(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    b.primary_score()
        .total_cmp(&a.primary_score())
        .then(a.y.cmp(&b.y))
        .then(a.x.cmp(&b.x))
        .then(a.source_channel.cmp(&b.source_channel))
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n as u32).collect() }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] as usize != i {
            let gp = self.parent[self.parent[i] as usize];
            self.parent[i] = gp;
            i = gp as usize;
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller index becomes root: deterministic regardless of visit order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo as u32;
        }
    }
}

const NEIGHBORS: [(i64, i64); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// Pixel-index lists of every regional-maximum plateau, each sorted ascending,
/// ordered by their first pixel.
pub fn regional_maximum_plateaus(map: &FeatureMap) -> Vec<Vec<usize>> {
    let (w, h) = (map.width(), map.height());
    let v = map.data();
    let n = w * h;
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&a, &b| v[b as usize].total_cmp(&v[a as usize]).then(a.cmp(&b)));

    let mut uf = UnionFind::new(n);
    let mut flooded = vec![false; n];
    let mut touches_higher = vec![false; n];
    let mut plateaus = Vec::new();

    let mut start = 0;
    while start < n {
        let level = v[order[start] as usize];
        let mut end = start;
        while end < n && v[order[end] as usize] == level {
            end += 1;
        }
        let group = &order[start..end];
        for &p in group {
            flooded[p as usize] = true;
        }
        for &p in group {
            let p = p as usize;
            let (px, py) = ((p % w) as i64, (p / w) as i64);
            for (dx, dy) in NEIGHBORS {
                let (qx, qy) = (px + dx, py + dy);
                if qx < 0 || qy < 0 || qx >= w as i64 || qy >= h as i64 {
                    continue;
                }
                let q = qy as usize * w + qx as usize;
                if !flooded[q] {
                    continue;
                }
                if v[q] == level {
                    uf.union(p, q);
                } else {
                    touches_higher[p] = true;
                }
            }
        }
        if let [p] = group {
            if !touches_higher[*p as usize] {
                plateaus.push(vec![*p as usize]);
            }
            start = end;
            continue;
        }
        // fold the per-pixel flags onto plateau roots
        let mut members: std::collections::BTreeMap<usize, (bool, Vec<usize>)> = Default::default();
        for &p in group {
            let p = p as usize;
            let root = uf.find(p);
            let e = members.entry(root).or_insert((false, Vec::new()));
            e.0 |= touches_higher[p];
            e.1.push(p);
        }
        for (_, (higher, mut pixels)) in members {
            if !higher {
                pixels.sort_unstable();
                plateaus.push(pixels);
            }
        }
        start = end;
    }
    plateaus.sort_by_key(|p| p[0]);
    plateaus
}

/// The plateau pixel at the rounded centroid, or the plateau pixel nearest to the
/// centroid (ties: smallest `y`, then `x`) when the rounded point falls outside.
pub fn plateau_representative(pixels: &[usize], width: usize) -> (usize, usize) {
    let n = pixels.len() as f64;
    let cx = pixels.iter().map(|&p| (p % width) as f64).sum::<f64>() / n;
    let cy = pixels.iter().map(|&p| (p / width) as f64).sum::<f64>() / n;
    let (rx, ry) = (cx.round() as usize, cy.round() as usize);
    if pixels.binary_search(&(ry * width + rx)).is_ok() {
        return (rx, ry);
    }
    let mut best = (f64::INFINITY, 0usize);
    for &p in pixels {
        let (x, y) = ((p % width) as f64, (p / width) as f64);
        let d = (x - cx).powi(2) + (y - cy).powi(2);
        // pixels are ascending in (y, x), so strict < keeps the first tie
        if d < best.0 {
            best = (d, p);
        }
    }
    (best.1 % width, best.1 / width)
}

fn inside_margin(x: usize, y: usize, w: usize, h: usize, margin: usize) -> bool {
    x >= margin && y >= margin && x + margin < w && y + margin < h
}

/// Greedy suppression over a canonically sorted list: a candidate closer than
/// `min_separation` to an already kept one is dropped.
fn suppress(sorted: Vec<Candidate>, min_separation: f64) -> Vec<Candidate> {
    if min_separation <= 0.0 {
        return sorted;
    }
    let lim = min_separation * min_separation;
    let mut kept: Vec<Candidate> = Vec::with_capacity(sorted.len());
    for c in sorted {
        if kept.iter().all(|k| k.dist2(c.x as f64, c.y as f64) >= lim) {
            kept.push(c);
        }
    }
    kept
}

/// Regional maxima of one map as candidates with a single score.
pub fn regional_maxima(map: &FeatureMap, margin: usize, min_separation: f64) -> CandidateSet {
    let (w, h) = (map.width(), map.height());
    let mut set = CandidateSet::empty(w, h, margin);
    let plateaus = regional_maximum_plateaus(map);
    if plateaus.len() == 1 && plateaus[0].len() == w * h {
        set.degenerate = true;
        set.warnings.push("constant map: no regional maxima".into());
        return set;
    }
    let mut cands: Vec<Candidate> = plateaus
        .iter()
        .map(|p| plateau_representative(p, w))
        .filter(|&(x, y)| inside_margin(x, y, w, h, margin))
        .map(|(x, y)| Candidate::new(x, y, vec![map.get(x, y)], 0))
        .collect();
    cands.sort_by(canonical_order);
    set.candidates = suppress(cands, min_separation);
    set
}

/// Regional maxima of every channel, scored on all channels, suppressed across channels.
pub fn bank_maxima(stack: &FeatureStack, margin: usize, min_separation: f64) -> Result<CandidateSet> {
    if stack.is_empty() {
        return Err(Error::InvalidConfig("feature stack must not be empty".into()));
    }
    let (w, h) = (stack.width(), stack.height());
    let per_channel: Vec<CandidateSet> =
        stack.channels.par_iter().map(|ch| regional_maxima(ch, margin, min_separation)).collect();
    let mut set = CandidateSet::empty(w, h, margin);
    set.degenerate = per_channel.iter().all(|s| s.degenerate);
    let mut all = Vec::new();
    for (c, chan) in per_channel.into_iter().enumerate() {
        set.warnings.extend(chan.warnings.into_iter().map(|m| format!("channel {c}: {m}")));
        for cand in chan.candidates {
            all.push(Candidate::new(cand.x, cand.y, stack.sample(cand.x, cand.y), c));
        }
    }
    all.sort_by(canonical_order);
    set.candidates = suppress(all, min_separation);
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelRule {
    /// Some channel exceeds the threshold.
    Any,
    /// Every channel exceeds the threshold.
    All,
    /// The largest channel score exceeds the threshold.
    Max,
}

impl std::str::FromStr for ChannelRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "any" => Ok(ChannelRule::Any),
            "all" => Ok(ChannelRule::All),
            "max" => Ok(ChannelRule::Max),
            _ => Err(Error::InvalidConfig(format!("channel rule must be any|all|max, got {s:?}"))),
        }
    }
}

pub const TAG_THRESHOLD: &str = "threshold-pass";

/// Keeps candidates whose scores exceed `tau` under `rule`; order is preserved.
pub fn threshold_candidates(set: &CandidateSet, tau: f64, rule: ChannelRule) -> CandidateSet {
    let keep = |c: &Candidate| match rule {
        ChannelRule::Any => c.scores.iter().any(|&s| s > tau),
        ChannelRule::All => !c.scores.is_empty() && c.scores.iter().all(|&s| s > tau),
        ChannelRule::Max => c.primary_score() > tau,
    };
    let kept = set
        .candidates
        .iter()
        .filter(|c| keep(c))
        .cloned()
        .map(|mut c| {
            c.tag(TAG_THRESHOLD);
            c
        })
        .collect();
    set.with_candidates(kept)
}
