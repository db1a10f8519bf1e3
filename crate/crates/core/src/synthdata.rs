//! Synthetic impressions with planted heterogeneous cohorts.
//!
//! Each sample draws a segment `c` from the segment prior and a latent
//! factor vector `z ~ N(0, I)`. Slot 0 carries the segment id; the next
//! slots quantize one latent coordinate each; any remaining slots are
//! uniform distractors. The label is `y ~ Bernoulli(σ(a_c + w_c·z))`, where
//! the intercept `a_c` is calibrated so that the segment's positive rate is
//! exactly the planted `b_c`, and the weight vectors `w_c` rotate across
//! the axis so neighbouring segments have similar but not identical
//! conditional distributions.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Sample;
use crate::numerics::{sigmoid, Rng};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub axis_name: String,
    pub num_segments: usize,
    pub head_segments: Vec<u32>,
    pub tail_segments: Vec<u32>,
}

impl CohortSpec {
    pub fn new(axis_name: impl Into<String>, num_segments: usize, head: u32, tail: u32) -> Self {
        Self {
            axis_name: axis_name.into(),
            num_segments,
            head_segments: vec![head],
            tail_segments: vec![tail],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.head_segments.iter().chain(&self.tail_segments);
        if let Some(bad) = all.clone().find(|s| **s as usize >= self.num_segments) {
            return Err(Error::config(format!(
                "segment {bad} out of range for {} segments",
                self.num_segments
            )));
        }
        if self.head_segments.iter().any(|h| self.tail_segments.contains(h)) {
            return Err(Error::config("head and tail cohorts must be disjoint"));
        }
        if self.head_segments.is_empty() || self.tail_segments.is_empty() {
            return Err(Error::config("head and tail cohorts must be nonempty"));
        }
        Ok(())
    }

    pub fn is_head(&self, cohort: u32) -> bool {
        self.head_segments.contains(&cohort)
    }

    pub fn is_tail(&self, cohort: u32) -> bool {
        self.tail_segments.contains(&cohort)
    }
}

/// `(y · 𝕀(head), y · 𝕀(tail))`.
pub fn derive_aux_labels(y: u8, cohort: u32, spec: &CohortSpec) -> (u8, u8) {
    (
        y * u8::from(spec.is_head(cohort)),
        y * u8::from(spec.is_tail(cohort)),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub num_samples: usize,
    pub num_segments: usize,
    /// Target positive-label ratio per segment.
    pub base_rates: Vec<f64>,
    /// Segment prior; must sum to 1 within 1e-9.
    pub segment_prior: Vec<f64>,
    pub latent_dim: usize,
    pub num_slots: usize,
    /// Vocabulary of every non-cohort slot. The cohort slot's vocabulary is
    /// `num_segments`.
    pub vocab_size: usize,
    /// Norm of every segment's weight vector `w_c`.
    pub signal_scale: f64,
    /// Total rotation (radians) of `w_c` from the first to the last segment.
    pub dispersion: f64,
    pub axis_name: String,
    /// Cohorts used for the stored aux labels. `None` means the planted
    /// extremes: highest base rate is head, lowest is tail.
    pub cohorts: Option<CohortSpec>,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self::planted(10, 0.10, 5.0, 100_000, 0)
    }
}

impl GenConfig {
    /// Geometric base-rate ladder from `head_rate` (segment 0) down to
    /// `head_rate / ratio` (last segment), uniform prior.
    pub fn planted(num_segments: usize, head_rate: f64, ratio: f64, num_samples: usize, seed: u64) -> Self {
        let n = num_segments.max(1);
        let base_rates = (0..n)
            .map(|c| {
                let t = if n > 1 { c as f64 / (n - 1) as f64 } else { 0.0 };
                head_rate * ratio.powf(-t)
            })
            .collect();
        Self {
            num_samples,
            num_segments: n,
            base_rates,
            segment_prior: vec![1.0 / n as f64; n],
            latent_dim: 4,
            num_slots: 6,
            vocab_size: 16,
            signal_scale: 1.5,
            dispersion: std::f64::consts::FRAC_PI_2,
            axis_name: "user_value".into(),
            cohorts: None,
            seed,
        }
    }

    /// Same prior and base rate everywhere and no latent signal.
    pub fn homogeneous(num_segments: usize, rate: f64, num_samples: usize, seed: u64) -> Self {
        Self {
            base_rates: vec![rate; num_segments],
            signal_scale: 0.0,
            ..Self::planted(num_segments, rate, 1.0, num_samples, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_segments == 0 {
            return Err(Error::config("num_segments must be positive"));
        }
        if self.base_rates.len() != self.num_segments || self.segment_prior.len() != self.num_segments {
            return Err(Error::config("base_rates and segment_prior need one entry per segment"));
        }
        if let Some(b) = self.base_rates.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::config(format!("base rate {b} must lie strictly inside (0, 1)")));
        }
        if self.segment_prior.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::config("segment prior entries must be nonnegative"));
        }
        let total: f64 = self.segment_prior.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("segment prior sums to {total}, expected 1")));
        }
        if self.num_slots < 2 {
            return Err(Error::config("num_slots must be at least 2"));
        }
        if self.vocab_size == 0 || self.latent_dim == 0 {
            return Err(Error::config("vocab_size and latent_dim must be positive"));
        }
        if !(self.signal_scale.is_finite() && self.signal_scale >= 0.0) || !self.dispersion.is_finite() {
            return Err(Error::config("signal_scale and dispersion must be finite"));
        }
        if self.num_segments > u32::MAX as usize || self.vocab_size > u32::MAX as usize {
            return Err(Error::config("vocabulary too large"));
        }
        if self.num_segments >= 2 {
            self.cohort_spec().validate()?;
        }
        Ok(())
    }

    /// Vocabulary per slot as the model sees it.
    pub fn vocab_sizes(&self) -> Vec<usize> {
        let mut v = vec![self.vocab_size; self.num_slots];
        v[0] = self.num_segments;
        v
    }

    pub fn planted_pair(&self) -> (u32, u32) {
        let by_rate = |a: &(usize, &f64), b: &(usize, &f64)| a.1.total_cmp(b.1);
        // Ties: lowest id for head, highest id for tail, so the pair stays
        // disjoint on a flat ladder.
        let head = self
            .base_rates
            .iter()
            .enumerate()
            .rev()
            .max_by(by_rate)
            .map_or(0, |(i, _)| i);
        let tail = self
            .base_rates
            .iter()
            .enumerate()
            .rev()
            .min_by(by_rate)
            .map_or(0, |(i, _)| i);
        (head as u32, tail as u32)
    }

    pub fn cohort_spec(&self) -> CohortSpec {
        self.cohorts.clone().unwrap_or_else(|| {
            let (head, tail) = self.planted_pair();
            CohortSpec::new(self.axis_name.clone(), self.num_segments, head, tail)
        })
    }

    /// Per-segment weight vectors `w_c`.
    pub fn segment_weights(&self) -> Vec<Vec<f64>> {
        let l = self.latent_dim;
        let mut rng = Rng::split(self.seed, "segment-weights");
        let mut u: Vec<f64> = (0..l).map(|_| rng.normal()).collect();
        normalize(&mut u);
        let mut v: Vec<f64> = (0..l).map(|_| rng.normal()).collect();
        if l > 1 {
            let proj: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (vi, ui) in v.iter_mut().zip(&u) {
                *vi -= proj * ui;
            }
            normalize(&mut v);
        } else {
            v = vec![0.0];
        }
        let n = self.num_segments;
        (0..n)
            .map(|c| {
                let t = if n > 1 { c as f64 / (n - 1) as f64 - 0.5 } else { 0.0 };
                let phi = self.dispersion * t;
                u.iter()
                    .zip(&v)
                    .map(|(a, b)| self.signal_scale * (phi.cos() * a + phi.sin() * b))
                    .collect()
            })
            .collect()
    }

    /// Intercepts `a_c` with `E_z[σ(a_c + w_c·z)] = b_c`.
    pub fn intercepts(&self) -> Vec<f64> {
        self.segment_weights()
            .iter()
            .zip(&self.base_rates)
            .map(|(w, &b)| calibrate_intercept(b, w.iter().map(|x| x * x).sum::<f64>().sqrt()))
            .collect()
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// `E[σ(a + s·t)]` for `t ~ N(0, 1)` by trapezoid quadrature on `[-10, 10]`.
pub fn expected_sigmoid(a: f64, s: f64) -> f64 {
    if s == 0.0 {
        return sigmoid(a);
    }
    const STEPS: usize = 2000;
    let h = 20.0 / STEPS as f64;
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = 0.0;
    for i in 0..=STEPS {
        let t = -10.0 + i as f64 * h;
        let w = if i == 0 || i == STEPS { 0.5 } else { 1.0 };
        acc += w * norm * (-0.5 * t * t).exp() * sigmoid(a + s * t);
    }
    acc * h
}

fn calibrate_intercept(rate: f64, scale: f64) -> f64 {
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected_sigmoid(mid, scale) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Quantizes a latent coordinate into `vocab` equal-width bins on `[-3, 3]`;
/// the outer bins absorb the tails.
fn quantize(z: f64, vocab: usize) -> u32 {
    let t = ((z + 3.0) / 6.0 * vocab as f64).floor();
    t.clamp(0.0, (vocab - 1) as f64) as u32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub count: usize,
    pub positives: usize,
    pub plr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: GenConfig,
    pub cohorts: CohortSpec,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn summary(&self) -> BTreeMap<u32, SegmentSummary> {
        segment_summary(&self.samples)
    }

    /// Recomputes every aux label for a new cohort pair.
    pub fn relabel(&mut self, spec: &CohortSpec) -> Result<()> {
        spec.validate()?;
        if spec.num_segments != self.config.num_segments {
            return Err(Error::config(format!(
                "cohort spec has {} segments, dataset has {}",
                spec.num_segments, self.config.num_segments
            )));
        }
        for s in &mut self.samples {
            (s.y_head, s.y_tail) = derive_aux_labels(s.y, s.cohort, spec);
        }
        self.cohorts = spec.clone();
        Ok(())
    }

    /// First `1 - holdout` fraction for training, the rest held out.
    pub fn split_holdout(&self, holdout: f64) -> (&[Sample], &[Sample]) {
        let n = self.samples.len();
        let cut = n - ((n as f64) * holdout.clamp(0.0, 1.0)).round() as usize;
        self.samples.split_at(cut)
    }
}

pub fn segment_summary(samples: &[Sample]) -> BTreeMap<u32, SegmentSummary> {
    let mut out: BTreeMap<u32, SegmentSummary> = BTreeMap::new();
    for s in samples {
        let e = out.entry(s.cohort).or_insert(SegmentSummary {
            count: 0,
            positives: 0,
            plr: 0.0,
        });
        e.count += 1;
        e.positives += usize::from(s.y);
    }
    for e in out.values_mut() {
        e.plr = e.positives as f64 / e.count as f64;
    }
    out
}

pub fn generate(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let weights = cfg.segment_weights();
    let intercepts = cfg.intercepts();
    let cohorts = cfg.cohort_spec();
    let mut rng = Rng::split(cfg.seed, "samples");
    let observed = cfg.latent_dim.min(cfg.num_slots - 1);
    let mut z = vec![0.0; cfg.latent_dim];
    let mut samples = Vec::with_capacity(cfg.num_samples);
    for _ in 0..cfg.num_samples {
        let c = rng.categorical(&cfg.segment_prior);
        z.iter_mut().for_each(|v| *v = rng.normal());
        let mut indices = Vec::with_capacity(cfg.num_slots);
        indices.push(c as u32);
        indices.extend(z[..observed].iter().map(|v| quantize(*v, cfg.vocab_size)));
        while indices.len() < cfg.num_slots {
            indices.push(rng.below(cfg.vocab_size) as u32);
        }
        let logit = intercepts[c] + weights[c].iter().zip(&z).map(|(w, v)| w * v).sum::<f64>();
        let y = u8::from(rng.bernoulli(sigmoid(logit)));
        let (y_head, y_tail) = derive_aux_labels(y, c as u32, &cohorts);
        samples.push(Sample {
            indices,
            cohort: c as u32,
            y,
            y_head,
            y_tail,
        });
    }
    Ok(Dataset {
        config: cfg.clone(),
        cohorts,
        samples,
    })
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: GenConfig,
    cohorts: CohortSpec,
    plr: BTreeMap<u32, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

/// Newline-delimited JSON: one header line, then one record per sample.
pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write_dataset_tagged(ds, path, None)
}

/// Like [`write_dataset`], recording an experiment config hash in the header.
pub fn write_dataset_tagged(ds: &Dataset, path: &Path, config_hash: Option<&str>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = Header {
        config: ds.config.clone(),
        cohorts: ds.cohorts.clone(),
        plr: ds.summary().into_iter().map(|(k, v)| (k, v.plr)).collect(),
        config_hash: config_hash.map(str::to_owned),
    };
    let io = |e| Error::io(path, e);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(io)?;
    let mut line = String::with_capacity(64);
    for s in &ds.samples {
        use std::fmt::Write as _;
        line.clear();
        line.push_str("{\"f\":[");
        for (i, idx) in s.indices.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            let _ = write!(line, "{idx}");
        }
        let _ = writeln!(line, "],\"c\":{},\"y\":{},\"yh\":{},\"yt\":{}}}", s.cohort, s.y, s.y_head, s.y_tail);
        w.write_all(line.as_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    read_dataset_with_hash(path).map(|(ds, _)| ds)
}

/// Reads a dataset and the config hash recorded in its header, if any.
pub fn read_dataset_with_hash(path: &Path) -> Result<(Dataset, Option<String>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::with_capacity(1 << 16, file);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header".into()))?
        .map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_str(&header_line).map_err(|e| parse_err(1, format!("header: {e}")))?;
    header
        .config
        .validate()
        .map_err(|e| parse_err(1, format!("header config: {e}")))?;
    let vocab = header.config.vocab_sizes();
    let mut samples = Vec::new();
    for (n, line) in lines.enumerate() {
        let lineno = n + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        validate_record(&s, &vocab, header.config.num_segments).map_err(|m| parse_err(lineno, m))?;
        samples.push(s);
    }
    Ok((
        Dataset {
            config: header.config,
            cohorts: header.cohorts,
            samples,
        },
        header.config_hash,
    ))
}

fn validate_record(s: &Sample, vocab: &[usize], num_segments: usize) -> std::result::Result<(), String> {
    if s.indices.len() != vocab.len() {
        return Err(format!("{} indices, expected {}", s.indices.len(), vocab.len()));
    }
    for (slot, (&i, &v)) in s.indices.iter().zip(vocab).enumerate() {
        if i as usize >= v {
            return Err(format!("slot {slot}: index {i} out of range for vocab {v}"));
        }
    }
    if s.cohort as usize >= num_segments {
        return Err(format!("cohort {} out of range", s.cohort));
    }
    if s.y > 1 || s.y_head > 1 || s.y_tail > 1 {
        return Err("labels must be 0 or 1".into());
    }
    if s.y_head > s.y || s.y_tail > s.y || s.y_head * s.y_tail != 0 {
        return Err("aux labels violate y_head <= y, y_tail <= y, y_head * y_tail = 0".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, seed: u64) -> GenConfig {
        GenConfig::planted(4, 0.2, 5.0, n, seed)
    }

    #[test]
    fn aux_label_cases() {
        let spec = CohortSpec::new("axis", 5, 0, 4);
        assert_eq!(derive_aux_labels(1, 0, &spec), (1, 0));
        assert_eq!(derive_aux_labels(1, 4, &spec), (0, 1));
        assert_eq!(derive_aux_labels(1, 2, &spec), (0, 0));
        for c in 0..5 {
            assert_eq!(derive_aux_labels(0, c, &spec), (0, 0));
        }
    }

    #[test]
    fn cohort_spec_validation() {
        assert!(CohortSpec::new("a", 3, 0, 2).validate().is_ok());
        assert!(CohortSpec::new("a", 3, 1, 1).validate().is_err());
        assert!(CohortSpec::new("a", 3, 0, 3).validate().is_err());
    }

    #[test]
    fn rejects_degenerate_rates() {
        let mut cfg = small(10, 0);
        cfg.base_rates[1] = 0.0;
        assert!(generate(&cfg).is_err());
        cfg.base_rates[1] = 1.0;
        assert!(generate(&cfg).is_err());
        let mut cfg = small(10, 0);
        cfg.segment_prior[0] = 0.5;
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn concentrated_prior() {
        let mut cfg = small(500, 3);
        cfg.segment_prior = vec![0.0, 0.0, 1.0, 0.0];
        let ds = generate(&cfg).unwrap();
        assert!(ds.samples.iter().all(|s| s.cohort == 2 && s.indices[0] == 2));
    }

    #[test]
    fn calibration_hits_target_rate() {
        for (b, s) in [(0.02, 1.5), (0.1, 1.5), (0.5, 3.0), (0.3, 0.0)] {
            let a = calibrate_intercept(b, s);
            assert!((expected_sigmoid(a, s) - b).abs() < 1e-10);
        }
        // Quadrature against the closed-form mean at a = 0: E[σ(s t)] = 1/2.
        assert!((expected_sigmoid(0.0, 2.0) - 0.5).abs() < 1e-12);
    }

    fn assert_plr_near_rates(ds: &Dataset) {
        for (c, seg) in ds.summary() {
            let b = ds.config.base_rates[c as usize];
            let sigma = (b * (1.0 - b) / seg.count as f64).sqrt();
            assert!(
                (seg.plr - b).abs() <= 3.0 * sigma,
                "segment {c}: plr {} vs {b} (3σ = {})",
                seg.plr,
                3.0 * sigma
            );
        }
    }

    #[test]
    fn zero_signal_matches_base_rates() {
        let mut cfg = small(200_000, 11);
        cfg.signal_scale = 0.0;
        assert_plr_near_rates(&generate(&cfg).unwrap());
    }

    #[test]
    fn calibrated_signal_matches_base_rates() {
        assert_plr_near_rates(&generate(&small(200_000, 12)).unwrap());
    }

    #[test]
    fn default_planted_contrast() {
        let ds = generate(&GenConfig::planted(10, 0.10, 5.0, 200_000, 1)).unwrap();
        let summary = ds.summary();
        let (h, t) = ds.config.planted_pair();
        assert_eq!((h, t), (0, 9));
        let ratio = summary[&h].plr / summary[&t].plr;
        assert!((4.0..=6.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn label_algebra_and_determinism() {
        let a = generate(&small(5_000, 7)).unwrap();
        let b = generate(&small(5_000, 7)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.samples, generate(&small(5_000, 8)).unwrap().samples);
        for s in &a.samples {
            assert!(s.y_head <= s.y && s.y_tail <= s.y && s.y_head * s.y_tail == 0);
        }
    }

    #[test]
    fn cohort_slot_recovers_cohort() {
        // Bayes classifier on slot 0: the majority cohort for each value.
        let ds = generate(&small(20_000, 2)).unwrap();
        let mut counts: BTreeMap<(u32, u32), usize> = BTreeMap::new();
        for s in &ds.samples {
            *counts.entry((s.indices[0], s.cohort)).or_default() += 1;
        }
        let mut best: BTreeMap<u32, (u32, usize)> = BTreeMap::new();
        for ((v, c), n) in counts {
            let e = best.entry(v).or_insert((c, 0));
            if n > e.1 {
                *e = (c, n);
            }
        }
        let correct = ds.samples.iter().filter(|s| best[&s.indices[0]].0 == s.cohort).count();
        assert_eq!(correct, ds.len());
    }

    #[test]
    fn relabel_rederives() {
        let mut ds = generate(&small(2_000, 4)).unwrap();
        let spec = CohortSpec::new("user_value", 4, 1, 2);
        ds.relabel(&spec).unwrap();
        for s in &ds.samples {
            assert_eq!((s.y_head, s.y_tail), derive_aux_labels(s.y, s.cohort, &spec));
        }
        assert!(ds.relabel(&CohortSpec::new("user_value", 5, 1, 2)).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        let ds = generate(&small(1_000, 5)).unwrap();
        write_dataset(&ds, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, ds);
        let path2 = dir.path().join("ds2.jsonl");
        write_dataset(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn file_validation_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        let ds = generate(&small(3, 5)).unwrap();
        write_dataset(&ds, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let header = text.lines().next().unwrap();

        let bad_index = format!("{header}\n{{\"f\":[0,99,0,0,0,0],\"c\":0,\"y\":0,\"yh\":0,\"yt\":0}}\n");
        std::fs::write(&path, bad_index).unwrap();
        match read_dataset(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }

        let mut lines: Vec<&str> = text.lines().collect();
        lines[2] = "{not json";
        std::fs::write(&path, lines.join("\n")).unwrap();
        match read_dataset(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }

        let bad_algebra = format!("{header}\n{{\"f\":[0,1,1,1,1,1],\"c\":0,\"y\":0,\"yh\":1,\"yt\":0}}\n");
        std::fs::write(&path, bad_algebra).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn holdout_split_is_positional() {
        let ds = generate(&small(100, 1)).unwrap();
        let (train, eval) = ds.split_holdout(0.2);
        assert_eq!(train.len(), 80);
        assert_eq!(eval, &ds.samples[80..]);
    }
}
