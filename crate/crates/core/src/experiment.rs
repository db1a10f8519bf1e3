//! End-to-end experiment configuration and the pipeline stages that the CLI
//! chains together: generate, train, discover, evaluate, analyze.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohorts::{discover, DivergenceMetric, DivergenceReport, DEFAULT_BINS, DEFAULT_MIN_COUNT};
use crate::error::{Error, Result};
use crate::metrics::{
    compare_stats, segment_ne_report, Comparison, NEReport, StepStats, DEFAULT_STATS_BINS, DEFAULT_STATS_RANGE,
    DEFAULT_TAU,
};
use crate::model::{predict, ModelConfig, ModelParams, Sample};
use crate::numerics::derive_seed;
use crate::synthdata::{generate, CohortSpec, Dataset, GenConfig};
use crate::trainer::{train, TrainConfig, TrainOutput};

/// Model hyperparameters; vocabularies come from the generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub embed_dim: usize,
    pub compress_dim: usize,
    pub head_hidden: Vec<usize>,
    pub init_scale: f64,
    pub attention_init_scale: Option<f64>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            compress_dim: 8,
            head_hidden: vec![16],
            init_scale: 0.1,
            attention_init_scale: Some(0.001),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSelection {
    pub metric: DivergenceMetric,
    pub bins: usize,
    pub min_count: usize,
    /// Explicit cohorts; when both are set discovery is not needed for C2AL.
    pub head: Option<u32>,
    pub tail: Option<u32>,
}

impl Default for CohortSelection {
    fn default() -> Self {
        Self {
            metric: DivergenceMetric::Js,
            bins: DEFAULT_BINS,
            min_count: DEFAULT_MIN_COUNT,
            head: None,
            tail: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub tau: f64,
    pub bins: usize,
    /// Half-width of the attention histogram grid.
    pub range: f64,
    /// Trailing fraction of the dataset held out for evaluation.
    pub holdout: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            bins: DEFAULT_STATS_BINS,
            range: DEFAULT_STATS_RANGE,
            holdout: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub gen: GenConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub cohorts: CohortSelection,
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
    /// When set, overrides the generator, init and shuffle seeds.
    pub seed: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            gen: GenConfig::default(),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            cohorts: CohortSelection::default(),
            eval: EvalConfig::default(),
            output_dir: PathBuf::from("c2al-out"),
            seed: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// The default experiment with every seed derived from `seed`.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed: Some(seed),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.model_config().validate()?;
        self.train.validate()?;
        if self.cohorts.bins == 0 {
            return Err(Error::config("cohort histogram bins must be positive"));
        }
        if let (Some(h), Some(t)) = (self.cohorts.head, self.cohorts.tail) {
            self.spec_for(h, t).validate()?;
        }
        if !(self.eval.holdout > 0.0 && self.eval.holdout < 1.0) {
            return Err(Error::config("eval.holdout must lie in (0, 1)"));
        }
        if self.eval.tau.is_nan() || self.eval.tau <= 0.0 || self.eval.bins < 8 {
            return Err(Error::config("eval.tau must be positive and eval.bins at least 8"));
        }
        if !(self.eval.range > 0.0 && self.eval.range.is_finite()) {
            return Err(Error::config("eval.range must be positive"));
        }
        Ok(())
    }

    /// Copy with the global seed pushed down into every stage.
    pub fn resolved(&self) -> Self {
        let mut cfg = self.clone();
        if let Some(seed) = self.seed {
            cfg.gen.seed = derive_seed(seed, "gen");
            cfg.train.init_seed = derive_seed(seed, "init");
            cfg.train.shuffle_seed = derive_seed(seed, "shuffle");
        }
        cfg
    }

    /// SHA-256 of the canonical JSON of the resolved config, output
    /// directory excluded.
    pub fn config_hash(&self) -> String {
        let mut cfg = self.resolved();
        cfg.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&cfg).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut m = ModelConfig::new(self.gen.vocab_sizes(), self.model.embed_dim, self.model.compress_dim);
        m.head_hidden = self.model.head_hidden.clone();
        m.init_scale = self.model.init_scale;
        m.attention_init_scale = self.model.attention_init_scale;
        m
    }

    pub fn spec_for(&self, head: u32, tail: u32) -> CohortSpec {
        CohortSpec::new(self.gen.axis_name.clone(), self.gen.num_segments, head, tail)
    }

    /// The configured head/tail pair, if both ids are given.
    pub fn explicit_cohorts(&self) -> Option<CohortSpec> {
        match (self.cohorts.head, self.cohorts.tail) {
            (Some(h), Some(t)) => Some(self.spec_for(h, t)),
            _ => None,
        }
    }
}

pub fn gen_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    generate(&cfg.resolved().gen)
}

/// Trains on the leading split. `cohorts` is required exactly for C2AL and
/// replaces the aux labels stored in the dataset.
pub fn train_variant(cfg: &ExperimentConfig, data: &Dataset, cohorts: Option<&CohortSpec>) -> Result<TrainOutput> {
    let cfg = cfg.resolved();
    let (train_split, _) = data.split_holdout(cfg.eval.holdout);
    let model_cfg = cfg.model_config();
    match cohorts {
        None => train(train_split, &cfg.train.clone().baseline(), &model_cfg),
        Some(spec) => {
            spec.validate()?;
            let mut tc = cfg.train.clone();
            tc.c2al_enabled = true;
            let relabeled = relabel_samples(train_split, spec);
            train(&relabeled, &tc, &model_cfg)
        }
    }
}

pub fn relabel_samples(samples: &[Sample], spec: &CohortSpec) -> Vec<Sample> {
    samples
        .iter()
        .map(|s| {
            let (y_head, y_tail) = crate::synthdata::derive_aux_labels(s.y, s.cohort, spec);
            Sample {
                y_head,
                y_tail,
                ..s.clone()
            }
        })
        .collect()
}

/// Primary predictions grouped by cohort id.
pub fn predictions_by_segment(samples: &[Sample], params: &ModelParams) -> Result<BTreeMap<u32, Vec<f64>>> {
    let preds = predict(samples, params)?;
    let mut out: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (p, s) in preds.into_iter().zip(samples) {
        out.entry(s.cohort).or_default().push(p);
    }
    Ok(out)
}

/// Cohort discovery from baseline predictions on the training split.
pub fn discover_cohorts(
    cfg: &ExperimentConfig,
    data: &Dataset,
    baseline: &ModelParams,
    metric: DivergenceMetric,
) -> Result<DivergenceReport> {
    let (train_split, _) = data.split_holdout(cfg.eval.holdout);
    let by_segment = predictions_by_segment(train_split, baseline)?;
    let mut report = discover(&by_segment, metric, cfg.cohorts.bins, cfg.cohorts.min_count)?;
    report.config_hash = Some(cfg.config_hash());
    Ok(report)
}

/// NE report of `params` on the held-out split.
pub fn evaluate(
    cfg: &ExperimentConfig,
    data: &Dataset,
    name: &str,
    params: &ModelParams,
    baseline: Option<&NEReport>,
    cohorts: Option<&CohortSpec>,
) -> Result<NEReport> {
    let (_, holdout) = data.split_holdout(cfg.eval.holdout);
    let preds = predict(holdout, params)?;
    let labels: Vec<u8> = holdout.iter().map(|s| s.y).collect();
    let ids: Vec<u32> = holdout.iter().map(|s| s.cohort).collect();
    let mut report = segment_ne_report(name, &preds, &labels, &ids, baseline)?;
    if let Some(spec) = cohorts {
        if let (Some(&h), Some(&t)) = (spec.head_segments.first(), spec.tail_segments.first()) {
            report = report.with_cohorts(h, t);
        }
    }
    report.config_hash = Some(cfg.config_hash());
    Ok(report)
}

pub fn compare_runs(cfg: &ExperimentConfig, baseline: &TrainOutput, c2al: &TrainOutput) -> Result<Comparison> {
    let a: Vec<StepStats> = baseline.snapshots.step_stats(cfg.eval.tau, cfg.eval.bins, cfg.eval.range)?;
    let b: Vec<StepStats> = c2al.snapshots.step_stats(cfg.eval.tau, cfg.eval.bins, cfg.eval.range)?;
    compare_stats(&a, &b)
}

/// Everything one seed of the default experiment produces.
#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub seed: u64,
    pub planted: (u32, u32),
    pub js_report: DivergenceReport,
    pub wasserstein_report: DivergenceReport,
    pub baseline: TrainOutput,
    pub c2al: TrainOutput,
    pub baseline_ne: NEReport,
    pub c2al_ne: NEReport,
    pub comparison: Comparison,
}

impl SeedOutcome {
    pub fn c2al_entropy_gain(&self) -> f64 {
        let s = &self.c2al.snapshots.snapshots;
        s.last().expect("final").stats.entropy_bits - s[0].stats.entropy_bits
    }
}

/// Generate, train the baseline, discover with JS (and Wasserstein for the
/// record), train C2AL on the JS pair, and evaluate both.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<SeedOutcome> {
    cfg.validate()?;
    let data = gen_dataset(cfg)?;
    let baseline = train_variant(cfg, &data, None)?;
    let js_report = discover_cohorts(cfg, &data, &baseline.params, DivergenceMetric::Js)?;
    let wasserstein_report = discover_cohorts(cfg, &data, &baseline.params, DivergenceMetric::Wasserstein)?;
    let spec = cfg
        .explicit_cohorts()
        .unwrap_or_else(|| cfg.spec_for(js_report.head, js_report.tail));
    let c2al = train_variant(cfg, &data, Some(&spec))?;
    let baseline_ne = evaluate(cfg, &data, "baseline", &baseline.params, None, Some(&spec))?;
    let c2al_ne = evaluate(cfg, &data, "c2al", &c2al.params, Some(&baseline_ne), Some(&spec))?;
    let comparison = compare_runs(cfg, &baseline, &c2al)?;
    Ok(SeedOutcome {
        seed: cfg.seed.unwrap_or(cfg.gen.seed),
        planted: cfg.resolved().gen.planted_pair(),
        js_report,
        wasserstein_report,
        baseline,
        c2al,
        baseline_ne,
        c2al_ne,
        comparison,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn hash_tracks_resolved_config() {
        let a = ExperimentConfig::with_seed(1);
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.config_hash(), b.config_hash());
        assert_ne!(a.config_hash(), ExperimentConfig::with_seed(2).config_hash());
        assert_eq!(a.config_hash().len(), 64);
        let r = a.resolved();
        assert_eq!(r.gen.seed, derive_seed(1, "gen"));
        assert_ne!(r.train.init_seed, r.train.shuffle_seed);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(ExperimentConfig::from_json("{"), Err(Error::Config(_))));
        assert!(ExperimentConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"eval": {"holdout": 1.5}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"cohorts": {"head": 2, "tail": 2}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"train": {"lambda_head": -1}}"#).is_err());
    }

    #[test]
    fn small_pipeline_runs() {
        let mut cfg = ExperimentConfig::with_seed(3);
        cfg.gen.num_samples = 4000;
        cfg.gen.num_segments = 4;
        cfg.gen = GenConfig {
            seed: cfg.gen.seed,
            ..GenConfig::planted(4, 0.2, 5.0, 4000, 0)
        };
        cfg.model.embed_dim = 4;
        cfg.model.compress_dim = 2;
        cfg.train.num_steps = 50;
        cfg.train.batch_size = 16;
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.baseline.snapshots.steps(), out.c2al.snapshots.steps());
        assert!(out.c2al_ne.ne_diff.is_some());
        assert!(!out.baseline.params.has_aux() && out.c2al.params.has_aux());
    }
}
