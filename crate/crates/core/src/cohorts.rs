//! Contrastive cohort discovery over histograms of baseline predictions.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Additive smoothing applied to every bin before taking KL.
pub const KL_SMOOTHING: f64 = 1e-10;
pub const DEFAULT_BINS: usize = 64;
pub const DEFAULT_MIN_COUNT: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredHistogram {
    pub counts: Vec<u64>,
    pub total: u64,
    pub normalized: Vec<f64>,
}

impl PredHistogram {
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::Degenerate("histogram with no mass".into()));
        }
        let normalized = counts.iter().map(|c| *c as f64 / total as f64).collect();
        Ok(Self {
            counts: counts.to_vec(),
            total,
            normalized,
        })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }
}

/// Uniform-width bins over `[0, 1]`; a prediction of exactly 1 lands in
/// the last bin.
pub fn histogram(preds: &[f64], bins: usize) -> Result<PredHistogram> {
    if preds.is_empty() {
        return Err(Error::Degenerate("empty prediction list".into()));
    }
    if bins < 2 {
        return Err(Error::contract("histogram needs at least 2 bins"));
    }
    let mut counts = vec![0u64; bins];
    for &p in preds {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::contract(format!("prediction {p} outside [0, 1]")));
        }
        let idx = ((p * bins as f64) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    PredHistogram::from_counts(&counts)
}

fn check_bins(p: &PredHistogram, q: &PredHistogram) -> Result<()> {
    if p.bins() != q.bins() {
        return Err(Error::contract(format!(
            "bin count mismatch: {} vs {}",
            p.bins(),
            q.bins()
        )));
    }
    Ok(())
}

fn smoothed(p: &PredHistogram) -> Vec<f64> {
    let z = 1.0 + KL_SMOOTHING * p.bins() as f64;
    p.normalized.iter().map(|v| (v + KL_SMOOTHING) / z).collect()
}

/// `Σ pᵢ ln(pᵢ/qᵢ)` on smoothed histograms (natural log).
pub fn kl(p: &PredHistogram, q: &PredHistogram) -> Result<f64> {
    check_bins(p, q)?;
    let (ps, qs) = (smoothed(p), smoothed(q));
    let d: f64 = ps.iter().zip(&qs).map(|(a, b)| a * (a / b).ln()).sum();
    Ok(d.max(0.0))
}

/// Square root of the base-2 Jensen-Shannon divergence; lies in `[0, 1]`.
pub fn js_distance(p: &PredHistogram, q: &PredHistogram) -> Result<f64> {
    check_bins(p, q)?;
    let term = |a: f64, m: f64| if a > 0.0 { a * (a / m).log2() } else { 0.0 };
    let mut js = 0.0;
    for (&a, &b) in p.normalized.iter().zip(&q.normalized) {
        let m = 0.5 * (a + b);
        js += 0.5 * term(a, m) + 0.5 * term(b, m);
    }
    Ok(js.clamp(0.0, 1.0).sqrt())
}

/// Earth mover's distance on `[0, 1]`: `Σᵢ |CDF_p(i) − CDF_q(i)| · width`.
pub fn wasserstein1(p: &PredHistogram, q: &PredHistogram) -> Result<f64> {
    check_bins(p, q)?;
    let width = 1.0 / p.bins() as f64;
    let (mut cp, mut cq, mut acc) = (0.0, 0.0, 0.0);
    for (a, b) in p.normalized.iter().zip(&q.normalized) {
        cp += a;
        cq += b;
        acc += (cp - cq).abs();
    }
    Ok(acc * width)
}

pub fn cosine_sim(p: &PredHistogram, q: &PredHistogram) -> Result<f64> {
    check_bins(p, q)?;
    let dot: f64 = p.normalized.iter().zip(&q.normalized).map(|(a, b)| a * b).sum();
    let np = p.normalized.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nq = q.normalized.iter().map(|v| v * v).sum::<f64>().sqrt();
    if np == 0.0 || nq == 0.0 {
        return Err(Error::Degenerate("cosine similarity of a zero vector".into()));
    }
    Ok((dot / (np * nq)).clamp(0.0, 1.0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DivergenceMetric {
    Kl,
    #[default]
    Js,
    Wasserstein,
    Cosine,
}

impl DivergenceMetric {
    pub const ALL: [DivergenceMetric; 4] = [Self::Kl, Self::Js, Self::Wasserstein, Self::Cosine];

    pub fn eval(self, p: &PredHistogram, q: &PredHistogram) -> Result<f64> {
        match self {
            Self::Kl => kl(p, q),
            Self::Js => js_distance(p, q),
            Self::Wasserstein => wasserstein1(p, q),
            Self::Cosine => cosine_sim(p, q),
        }
    }

    /// Cosine is a similarity, so discovery minimizes it.
    pub fn is_similarity(self) -> bool {
        self == Self::Cosine
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Kl => "kl",
            Self::Js => "js",
            Self::Wasserstein => "wasserstein",
            Self::Cosine => "cosine",
        }
    }
}

impl fmt::Display for DivergenceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DivergenceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kl" => Ok(Self::Kl),
            "js" | "jensen-shannon" => Ok(Self::Js),
            "wasserstein" | "w1" => Ok(Self::Wasserstein),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::config(format!("unknown divergence metric {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub kl_head_tail: f64,
    pub kl_tail_head: f64,
    pub js_distance: f64,
    pub wasserstein1: f64,
    pub cosine_similarity: f64,
}

impl PairMetrics {
    pub fn compute(head: &PredHistogram, tail: &PredHistogram) -> Result<Self> {
        Ok(Self {
            kl_head_tail: kl(head, tail)?,
            kl_tail_head: kl(tail, head)?,
            js_distance: js_distance(head, tail)?,
            wasserstein1: wasserstein1(head, tail)?,
            cosine_similarity: cosine_sim(head, tail)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcludedSegment {
    pub segment: u32,
    pub count: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub metric: DivergenceMetric,
    pub bins: usize,
    /// Segment ids labelling the rows and columns of `matrix`.
    pub segments: Vec<u32>,
    pub matrix: Vec<Vec<f64>>,
    pub head: u32,
    pub tail: u32,
    pub pair_metrics: PairMetrics,
    pub mean_prediction: BTreeMap<u32, f64>,
    pub excluded: Vec<ExcludedSegment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl DivergenceReport {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Selects the segment pair whose prediction histograms diverge most under
/// `metric` (least similar for cosine).
///
/// Pairs are scanned in lexicographic order and only replaced on a strict
/// improvement, so ties go to the lowest `(i, j)`. Segments with fewer than
/// `min_count` predictions are excluded and listed in the report.
#[allow(clippy::needless_range_loop)]
pub fn discover(
    preds_by_segment: &BTreeMap<u32, Vec<f64>>,
    metric: DivergenceMetric,
    bins: usize,
    min_count: usize,
) -> Result<DivergenceReport> {
    let mut excluded = Vec::new();
    let mut segments = Vec::new();
    let mut hists = Vec::new();
    let mut mean_prediction = BTreeMap::new();
    for (&seg, preds) in preds_by_segment {
        if preds.len() < min_count {
            excluded.push(ExcludedSegment {
                segment: seg,
                count: preds.len(),
                reason: format!("fewer than {min_count} predictions"),
            });
            continue;
        }
        hists.push(histogram(preds, bins)?);
        mean_prediction.insert(seg, preds.iter().sum::<f64>() / preds.len() as f64);
        segments.push(seg);
    }
    let n = segments.len();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "discovery needs at least 2 populated segments, found {n}"
        )));
    }
    let mut matrix = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                matrix[i][j] = if metric.is_similarity() { 1.0 } else { 0.0 };
            } else if j > i || metric == DivergenceMetric::Kl {
                matrix[i][j] = metric.eval(&hists[i], &hists[j])?;
            } else {
                matrix[i][j] = matrix[j][i];
            }
        }
    }
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..n {
        for j in (i + 1)..n {
            let score = if metric == DivergenceMetric::Kl {
                matrix[i][j].max(matrix[j][i])
            } else {
                matrix[i][j]
            };
            let better = match best {
                None => true,
                Some((_, _, b)) if metric.is_similarity() => score < b,
                Some((_, _, b)) => score > b,
            };
            if better {
                best = Some((i, j, score));
            }
        }
    }
    let (i, j, _) = best.expect("n >= 2");
    let (mi, mj) = (mean_prediction[&segments[i]], mean_prediction[&segments[j]]);
    let (h, t) = if mj > mi { (j, i) } else { (i, j) };
    Ok(DivergenceReport {
        metric,
        bins,
        pair_metrics: PairMetrics::compute(&hists[h], &hists[t])?,
        head: segments[h],
        tail: segments[t],
        segments,
        matrix,
        mean_prediction,
        excluded,
        config_hash: None,
    })
}
