//! Normalized entropy, per-segment NE reports, and distribution statistics
//! for the attention matrix.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{bce, Matrix};

/// Cross-entropy of `preds` over the cross-entropy of the constant predictor
/// that outputs the empirical positive rate. Natural log; predictions are
/// clamped to `[1e-12, 1 - 1e-12]`.
pub fn normalized_entropy(preds: &[f64], labels: &[u8]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::UndefinedNe("no samples".into()));
    }
    let n = labels.len() as f64;
    let positives = labels.iter().filter(|y| **y == 1).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::UndefinedNe("labels are all one class".into()));
    }
    let mean = positives as f64 / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&p, &y) in preds.iter().zip(labels) {
        let y = f64::from(y);
        num += bce(p, y);
        den += bce(mean, y);
    }
    Ok((num / n) / (den / n))
}

/// `(treatment − baseline) / baseline`; negative is an improvement.
pub fn ne_diff(ne_treatment: f64, ne_baseline: f64) -> Result<f64> {
    if ne_baseline == 0.0 || !ne_baseline.is_finite() {
        return Err(Error::Degenerate(format!("baseline NE {ne_baseline}")));
    }
    Ok((ne_treatment - ne_baseline) / ne_baseline)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentNe {
    pub count: usize,
    pub positives: usize,
    pub plr: f64,
    /// `None` when the segment has a single label class.
    pub ne: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ne_baseline: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ne_diff: Option<f64>,
}

impl SegmentNe {
    fn compute(preds: &[f64], labels: &[u8]) -> Result<Self> {
        let positives = labels.iter().filter(|y| **y == 1).count();
        let ne = match normalized_entropy(preds, labels) {
            Ok(v) => Some(v),
            Err(Error::UndefinedNe(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            count: labels.len(),
            positives,
            plr: if labels.is_empty() { 0.0 } else { positives as f64 / labels.len() as f64 },
            ne,
            ne_baseline: None,
            ne_diff: None,
        })
    }

    fn attach_baseline(&mut self, base: &SegmentNe) -> Result<()> {
        self.ne_baseline = base.ne;
        self.ne_diff = match (self.ne, base.ne) {
            (Some(t), Some(b)) => Some(ne_diff(t, b)?),
            _ => None,
        };
        Ok(())
    }
}

/// The Overall / Head / Tail NE_diff row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeDiffSummary {
    pub overall: Option<f64>,
    pub head: Option<f64>,
    pub tail: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NEReport {
    pub name: String,
    pub overall: SegmentNe,
    pub segments: BTreeMap<u32, SegmentNe>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ne_diff: Option<NeDiffSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl NEReport {
    pub fn segment_ne(&self, segment: u32) -> Option<f64> {
        self.segments.get(&segment).and_then(|s| s.ne)
    }

    /// Names the head and tail cohorts and fills in the NE_diff summary when
    /// a baseline is attached.
    pub fn with_cohorts(mut self, head: u32, tail: u32) -> Self {
        self.head = Some(head);
        self.tail = Some(tail);
        self.refresh_summary();
        self
    }

    fn refresh_summary(&mut self) {
        if self.baseline.is_none() {
            return;
        }
        let seg = |s: Option<u32>| s.and_then(|id| self.segments.get(&id)).and_then(|v| v.ne_diff);
        self.ne_diff = Some(NeDiffSummary {
            overall: self.overall.ne_diff,
            head: seg(self.head),
            tail: seg(self.tail),
        });
    }

    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.10}")).unwrap_or_default();
        let mut out = String::from("segment,count,positives,plr,ne,ne_baseline,ne_diff,defined\n");
        let rows = std::iter::once(("overall".to_string(), &self.overall))
            .chain(self.segments.iter().map(|(k, v)| (k.to_string(), v)));
        for (name, s) in rows {
            out.push_str(&format!(
                "{name},{},{},{:.10},{},{},{},{}\n",
                s.count,
                s.positives,
                s.plr,
                fmt(s.ne),
                fmt(s.ne_baseline),
                fmt(s.ne_diff),
                s.ne.is_some()
            ));
        }
        out
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Overall and per-segment NE. With a baseline report, every defined
/// segment also gets `ne_baseline` and `ne_diff`.
pub fn segment_ne_report(
    name: &str,
    preds: &[f64],
    labels: &[u8],
    cohort_ids: &[u32],
    baseline: Option<&NEReport>,
) -> Result<NEReport> {
    if preds.len() != labels.len() || labels.len() != cohort_ids.len() {
        return Err(Error::contract(format!(
            "misaligned inputs: {} preds, {} labels, {} cohort ids",
            preds.len(),
            labels.len(),
            cohort_ids.len()
        )));
    }
    let mut overall = SegmentNe::compute(preds, labels)?;
    let mut grouped: BTreeMap<u32, (Vec<f64>, Vec<u8>)> = BTreeMap::new();
    for ((&p, &y), &c) in preds.iter().zip(labels).zip(cohort_ids) {
        let e = grouped.entry(c).or_default();
        e.0.push(p);
        e.1.push(y);
    }
    let mut segments = BTreeMap::new();
    for (c, (p, y)) in grouped {
        segments.insert(c, SegmentNe::compute(&p, &y)?);
    }
    if let Some(base) = baseline {
        overall.attach_baseline(&base.overall)?;
        for (c, seg) in &mut segments {
            if let Some(b) = base.segments.get(c) {
                seg.attach_baseline(b)?;
            }
        }
    }
    let mut report = NEReport {
        name: name.to_string(),
        overall,
        segments,
        baseline: baseline.map(|b| b.name.clone()),
        head: None,
        tail: None,
        ne_diff: None,
        config_hash: None,
    };
    report.refresh_summary();
    Ok(report)
}

pub const DEFAULT_TAU: f64 = 0.01;
pub const DEFAULT_STATS_BINS: usize = 64;
/// Half-width of the fixed histogram range for attention entries.
pub const DEFAULT_STATS_RANGE: f64 = 1.0;
pub const TAU_SWEEP: [f64; 5] = [0.001, 0.003, 0.01, 0.03, 0.1];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionStats {
    pub tau: f64,
    pub near_zero_fraction: f64,
    /// `(τ, near_zero_fraction(τ))` over [`TAU_SWEEP`].
    pub tau_sweep: Vec<(f64, f64)>,
    /// Shannon entropy in bits of the normalized histogram.
    pub entropy_bits: f64,
    pub std_dev: f64,
    pub excess_kurtosis: f64,
    pub max_abs: f64,
    /// Half-width of the histogram range; entries beyond it fall in the
    /// edge bins.
    pub range: f64,
    pub histogram: Vec<f64>,
}

/// Bin index of `v` among `bins` equal bins over `[-range, range]`,
/// mirrored so that `v` and `-v` land in mirror-image bins.
pub fn symmetric_bin(v: f64, range: f64, bins: usize) -> usize {
    if range <= 0.0 {
        return bins / 2;
    }
    let right = (((v.abs() + range) / (2.0 * range)) * bins as f64).floor();
    let right = (right.max(0.0) as usize).min(bins - 1);
    if v < 0.0 {
        bins - 1 - right
    } else {
        right
    }
}

pub fn near_zero_fraction(values: &[f64], tau: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|v| v.abs() < tau).count() as f64 / values.len() as f64
}

/// Normalized histogram over a caller-chosen symmetric range.
pub fn symmetric_histogram(values: &[f64], range: f64, bins: usize) -> Vec<f64> {
    let mut counts = vec![0usize; bins];
    for v in values {
        counts[symmetric_bin(*v, range, bins)] += 1;
    }
    let n = values.len().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

pub fn shannon_bits(probs: &[f64]) -> f64 {
    let h: f64 = probs.iter().filter(|p| **p > 0.0).map(|p| -p * p.log2()).sum();
    h.max(0.0)
}

/// Statistics of `Y` with its histogram on a fixed grid of `bins` equal bins
/// over `[-range, range]`, so that runs and steps share bin edges.
pub fn attention_stats(y: &Matrix, tau: f64, bins: usize, range: f64) -> Result<AttentionStats> {
    if y.is_empty() {
        return Err(Error::Degenerate("empty attention matrix".into()));
    }
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::contract("tau must be positive"));
    }
    if bins < 8 {
        return Err(Error::contract("attention histogram needs at least 8 bins"));
    }
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::contract("histogram range must be positive"));
    }
    let values = y.as_slice();
    let histogram = symmetric_histogram(values, range, bins);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    // A constant matrix has no defined kurtosis; report 0.
    let excess_kurtosis = if m2 > 0.0 { m4 / (m2 * m2) - 3.0 } else { 0.0 };
    Ok(AttentionStats {
        tau,
        near_zero_fraction: near_zero_fraction(values, tau),
        tau_sweep: TAU_SWEEP.iter().map(|t| (*t, near_zero_fraction(values, *t))).collect(),
        entropy_bits: shannon_bits(&histogram),
        std_dev: m2.sqrt(),
        excess_kurtosis,
        max_abs: y.max_abs(),
        range,
        histogram,
    })
}

/// Statistics of one snapshot, keyed by training step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub stats: AttentionStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub step: usize,
    pub entropy_a: f64,
    pub entropy_b: f64,
    pub delta_entropy: f64,
    pub near_zero_a: f64,
    pub near_zero_b: f64,
    pub delta_near_zero: f64,
    pub std_a: f64,
    pub std_b: f64,
    pub delta_std: f64,
}

/// Per-step deltas are `b − a`; the verdicts describe the final step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub entropy_higher: bool,
    pub sparsity_lower: bool,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "step,entropy_a,entropy_b,delta_entropy,near_zero_a,near_zero_b,delta_near_zero,std_a,std_b,delta_std\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10}\n",
                r.step,
                r.entropy_a,
                r.entropy_b,
                r.delta_entropy,
                r.near_zero_a,
                r.near_zero_b,
                r.delta_near_zero,
                r.std_a,
                r.std_b,
                r.delta_std
            ));
        }
        out
    }
}

pub fn compare_stats(a: &[StepStats], b: &[StepStats]) -> Result<Comparison> {
    let steps_a: Vec<usize> = a.iter().map(|s| s.step).collect();
    let steps_b: Vec<usize> = b.iter().map(|s| s.step).collect();
    if steps_a != steps_b {
        return Err(Error::contract(format!(
            "snapshot schedules differ: {steps_a:?} vs {steps_b:?}"
        )));
    }
    if a.is_empty() {
        return Err(Error::Degenerate("no snapshots to compare".into()));
    }
    let rows: Vec<ComparisonRow> = a
        .iter()
        .zip(b)
        .map(|(x, y)| ComparisonRow {
            step: x.step,
            entropy_a: x.stats.entropy_bits,
            entropy_b: y.stats.entropy_bits,
            delta_entropy: y.stats.entropy_bits - x.stats.entropy_bits,
            near_zero_a: x.stats.near_zero_fraction,
            near_zero_b: y.stats.near_zero_fraction,
            delta_near_zero: y.stats.near_zero_fraction - x.stats.near_zero_fraction,
            std_a: x.stats.std_dev,
            std_b: y.stats.std_dev,
            delta_std: y.stats.std_dev - x.stats.std_dev,
        })
        .collect();
    let last = rows.last().expect("nonempty");
    Ok(Comparison {
        entropy_higher: last.entropy_b > last.entropy_a,
        sparsity_lower: last.near_zero_b < last.near_zero_a,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    /// Independent oracle: the formula written out term by term.
    fn ne_oracle(preds: &[f64], labels: &[u8]) -> f64 {
        let n = preds.len() as f64;
        let ybar = labels.iter().map(|y| f64::from(*y)).sum::<f64>() / n;
        let mut num = 0.0;
        let mut den = 0.0;
        for (p, y) in preds.iter().zip(labels) {
            let p = p.clamp(1e-12, 1.0 - 1e-12);
            let y = f64::from(*y);
            num += y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            den += y * ybar.ln() + (1.0 - y) * (1.0 - ybar).ln();
        }
        (-num / n) / (-den / n)
    }

    #[test]
    fn ne_examples() {
        let labels = [1, 0, 0, 0];
        assert!((normalized_entropy(&[0.25; 4], &labels).unwrap() - 1.0).abs() < 1e-12);
        let preds = [0.9, 0.1, 0.1, 0.1];
        let expected = (-(0.9f64).ln() * 4.0 / 4.0) / (-(0.25f64.ln() + 3.0 * 0.75f64.ln()) / 4.0);
        let got = normalized_entropy(&preds, &labels).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - ne_oracle(&preds, &labels)).abs() < 1e-12);
        let near = [1.0 - 1e-9, 1e-9, 1e-9, 1e-9];
        assert!(normalized_entropy(&near, &labels).unwrap() < 0.01);
    }

    #[test]
    fn ne_errors() {
        assert!(matches!(normalized_entropy(&[0.5, 0.5], &[1, 1]), Err(Error::UndefinedNe(_))));
        assert!(matches!(normalized_entropy(&[0.5, 0.5], &[0, 0]), Err(Error::UndefinedNe(_))));
        assert!(matches!(normalized_entropy(&[0.5], &[0, 1]), Err(Error::Contract(_))));
    }

    #[test]
    fn ne_diff_examples() {
        assert_eq!(ne_diff(0.8, 0.8).unwrap(), 0.0);
        assert!((ne_diff(0.9972, 1.0).unwrap() - -0.0028).abs() < 1e-12);
        assert!(ne_diff(1.1, 1.0).unwrap() > 0.0);
        assert!(ne_diff(1.0, 0.0).is_err());
    }

    #[test]
    fn segment_report_single_segment() {
        let preds = [0.2, 0.7, 0.1, 0.4];
        let labels = [0, 1, 0, 1];
        let r = segment_ne_report("m", &preds, &labels, &[3; 4], None).unwrap();
        assert_eq!(r.segments[&3].ne, r.overall.ne);
        assert_eq!(r.overall.ne.unwrap().to_bits(), normalized_entropy(&preds, &labels).unwrap().to_bits());
    }

    #[test]
    fn segment_report_flags_single_class() {
        let r = segment_ne_report("m", &[0.2, 0.7, 0.1, 0.4], &[0, 1, 0, 0], &[0, 0, 1, 1], None).unwrap();
        assert!(r.segments[&0].ne.is_some());
        assert!(r.segments[&1].ne.is_none());
        assert!(r.to_csv().lines().any(|l| l.starts_with("1,") && l.ends_with(",false")));
        assert!(segment_ne_report("m", &[0.2], &[0, 1], &[0, 0], None).is_err());
    }

    #[test]
    fn segment_report_ne_diff_fixture() {
        let mut rng = Rng::new(3);
        let n = 400;
        let cohorts: Vec<u32> = (0..n).map(|i| (i % 2) as u32).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.bernoulli(0.3))).collect();
        let base: Vec<f64> = (0..n).map(|_| 0.2 + 0.2 * rng.uniform()).collect();
        // Treatment sharpens segment 1 only.
        let treat: Vec<f64> = base
            .iter()
            .zip(&labels)
            .zip(&cohorts)
            .map(|((p, y), c)| if *c == 1 { 0.5 * p + 0.5 * f64::from(*y) * 0.8 + 0.05 } else { *p })
            .collect();
        let rb = segment_ne_report("base", &base, &labels, &cohorts, None).unwrap();
        let rt = segment_ne_report("treat", &treat, &labels, &cohorts, Some(&rb))
            .unwrap()
            .with_cohorts(1, 0);
        let d0 = rt.segments[&0].ne_diff.unwrap();
        let d1 = rt.segments[&1].ne_diff.unwrap();
        let overall = rt.overall.ne_diff.unwrap();
        assert_eq!(d0, 0.0);
        assert!(d1 < 0.0);
        assert!(overall < d0 && overall > d1);
        let direct = ne_diff(ne_oracle(&treat, &labels), ne_oracle(&base, &labels)).unwrap();
        assert!((overall - direct).abs() < 1e-12);
        let summary = rt.ne_diff.unwrap();
        assert_eq!(summary.head, Some(d1));
        assert_eq!(summary.tail, Some(d0));
    }

    #[test]
    fn attention_stats_zero() {
        let s = attention_stats(&Matrix::zeros(4, 4), 0.01, 64, 1.0).unwrap();
        assert_eq!(s.near_zero_fraction, 1.0);
        assert_eq!(s.entropy_bits, 0.0);
        assert!(attention_stats(&Matrix::zeros(0, 0), 0.01, 64, 1.0).is_err());
        assert!(attention_stats(&Matrix::zeros(2, 2), 0.0, 64, 1.0).is_err());
        assert!(attention_stats(&Matrix::zeros(2, 2), 0.01, 4, 1.0).is_err());
        assert!(attention_stats(&Matrix::zeros(2, 2), 0.01, 64, 0.0).is_err());
    }

    #[test]
    fn fixed_grid_tracks_spread() {
        let mut rng = Rng::new(3);
        let y = Matrix::new(16, 16, (0..256).map(|_| 0.05 * rng.normal()).collect()).unwrap();
        let narrow = attention_stats(&y, 0.01, 64, 1.0).unwrap();
        let wide = attention_stats(&y.scale(3.0), 0.01, 64, 1.0).unwrap();
        assert!(wide.entropy_bits > narrow.entropy_bits);
        assert!((wide.max_abs - 3.0 * narrow.max_abs).abs() < 1e-12);
        // Entries past the range land in the edge bins.
        let s = attention_stats(&Matrix::new(1, 2, vec![-5.0, 7.0]).unwrap(), 0.01, 8, 1.0).unwrap();
        assert_eq!(s.histogram[0], 0.5);
        assert_eq!(s.histogram[7], 0.5);
    }

    #[test]
    fn attention_stats_uniform_grid() {
        for bins in [8usize, 9, 64] {
            let centers: Vec<f64> = (0..bins).map(|i| -1.0 + (i as f64 + 0.5) * 2.0 / bins as f64).collect();
            let y = Matrix::new(1, bins, centers).unwrap();
            let s = attention_stats(&y, 0.01, bins, 1.0).unwrap();
            assert!((s.entropy_bits - (bins as f64).log2()).abs() < 1e-12, "bins {bins}");
        }
    }

    #[test]
    fn attention_stats_moments() {
        let vals = [0.0, 0.0, 0.0, 0.0, 0.5, -0.5, 0.5, -0.5];
        let s = attention_stats(&Matrix::new(2, 4, vals.to_vec()).unwrap(), 0.01, 64, 1.0).unwrap();
        assert_eq!(s.near_zero_fraction, 0.5);
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let m2 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let m4 = vals.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        assert!((s.excess_kurtosis - (m4 / (m2 * m2) - 3.0)).abs() < 1e-12);
        assert!((s.excess_kurtosis - -1.0).abs() < 1e-12);
        assert!((s.std_dev - m2.sqrt()).abs() < 1e-15);
    }

    fn step_stats(step: usize, y: &Matrix) -> StepStats {
        StepStats {
            step,
            stats: attention_stats(y, 0.01, 64, 1.0).unwrap(),
        }
    }

    #[test]
    fn compare_self_and_wider() {
        let mut rng = Rng::new(8);
        let narrow = Matrix::new(8, 8, (0..64).map(|_| 0.02 * rng.normal()).collect()).unwrap();
        let series = vec![step_stats(0, &narrow), step_stats(10, &narrow)];
        let c = compare_stats(&series, &series).unwrap();
        assert!(c.rows.iter().all(|r| r.delta_entropy == 0.0 && r.delta_near_zero == 0.0 && r.delta_std == 0.0));
        assert!(!c.entropy_higher && !c.sparsity_lower);

        // A peaked matrix (one outlier, the rest tiny) against an evenly spread one.
        let mut peaked = vec![0.001; 64];
        peaked[0] = 1.0;
        let spread: Vec<f64> = (0..64).map(|i| -1.0 + (i as f64 + 0.5) / 32.0).collect();
        let a = vec![step_stats(0, &narrow), step_stats(10, &Matrix::new(8, 8, peaked).unwrap())];
        let b = vec![step_stats(0, &narrow), step_stats(10, &Matrix::new(8, 8, spread).unwrap())];
        let c = compare_stats(&a, &b).unwrap();
        assert!(c.entropy_higher && c.sparsity_lower);
        assert!(compare_stats(&a, &b[..1]).is_err());
    }

    proptest! {
        #[test]
        fn ne_matches_oracle_and_is_permutation_invariant(seed in any::<u64>(), n in 2usize..60) {
            let mut rng = Rng::new(seed);
            let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.bernoulli(0.4))).collect();
            labels[0] = 0;
            labels[1] = 1;
            let preds: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            let ne = normalized_entropy(&preds, &labels).unwrap();
            prop_assert!(ne > 0.0);
            prop_assert!((ne - ne_oracle(&preds, &labels)).abs() <= 1e-12 * ne.max(1.0));
            let mut idx: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut idx);
            let p2: Vec<f64> = idx.iter().map(|i| preds[*i]).collect();
            let l2: Vec<u8> = idx.iter().map(|i| labels[*i]).collect();
            prop_assert!((normalized_entropy(&p2, &l2).unwrap() - ne).abs() <= 1e-12 * ne.max(1.0));
            let ybar = labels.iter().map(|y| f64::from(*y)).sum::<f64>() / n as f64;
            prop_assert!((normalized_entropy(&vec![ybar; n], &labels).unwrap() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn near_zero_monotone_and_entropy_sign_invariant(seed in any::<u64>(), t1 in 1e-4f64..0.5, dt in 0.0f64..0.5) {
            let mut rng = Rng::new(seed);
            let y = Matrix::new(6, 5, (0..30).map(|_| 0.1 * rng.normal()).collect()).unwrap();
            let a = attention_stats(&y, t1, 64, 1.0).unwrap();
            let b = attention_stats(&y, t1 + dt, 64, 1.0).unwrap();
            prop_assert!(a.near_zero_fraction <= b.near_zero_fraction);
            prop_assert!((0.0..=1.0).contains(&a.near_zero_fraction));
            prop_assert!(a.entropy_bits >= 0.0 && a.entropy_bits <= 6.0 + 1e-12);
            let flipped = attention_stats(&y.scale(-1.0), t1, 64, 1.0).unwrap();
            prop_assert!((flipped.entropy_bits - a.entropy_bits).abs() <= 1e-12);
            let mut mirrored = a.histogram.clone();
            mirrored.reverse();
            prop_assert_eq!(flipped.histogram, mirrored);
        }
    }
}
