//! Minibatch optimization of the cohort-contrastive objective, the split of
//! the shared-parameter gradient into primary and auxiliary parts, and the
//! attention snapshot series recorded during training.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{attention_stats, AttentionStats, StepStats, DEFAULT_STATS_BINS, DEFAULT_STATS_RANGE, DEFAULT_TAU};
use crate::model::{
    backward_shared, forward_sample, save_checkpoint, ForwardTrace, Labels, ModelConfig, ModelParams,
    Sample, Shared,
};
use crate::numerics::{bce, bce_grad, dot, norm, Matrix, Rng};

/// Below this primary-gradient norm the projection is reported as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        Self::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            Self::Sgd { lr } | Self::Adam { lr, .. } => lr,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Sgd { lr } => lr > 0.0,
            Self::Adam { lr, beta1, beta2, eps } => {
                lr > 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_head: f64,
    pub lambda_tail: f64,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub num_steps: usize,
    /// Defaults to 5% of `num_steps`.
    pub snapshot_every: Option<usize>,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    pub c2al_enabled: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_head: 0.1,
            lambda_tail: 0.1,
            optimizer: OptimizerConfig::default(),
            batch_size: 128,
            num_steps: 8000,
            snapshot_every: None,
            init_seed: 1,
            shuffle_seed: 2,
            c2al_enabled: true,
        }
    }
}

impl TrainConfig {
    pub fn baseline(mut self) -> Self {
        self.c2al_enabled = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_head >= 0.0 && self.lambda_tail >= 0.0) {
            return Err(Error::config("aux loss weights must be nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.snapshot_every == Some(0) {
            return Err(Error::config("snapshot_every must be positive"));
        }
        self.optimizer.validate()
    }

    pub fn snapshot_interval(&self) -> usize {
        self.snapshot_every.unwrap_or((self.num_steps / 20).max(1))
    }

    /// Steps at which snapshots are taken: 0, every interval, and the last step.
    pub fn snapshot_steps(&self) -> Vec<usize> {
        let every = self.snapshot_interval();
        let mut steps: Vec<usize> = (0..=self.num_steps).step_by(every).collect();
        if *steps.last().expect("step 0") != self.num_steps {
            steps.push(self.num_steps);
        }
        steps
    }

    fn aux_active(&self) -> bool {
        self.c2al_enabled && (self.lambda_head != 0.0 || self.lambda_tail != 0.0)
    }
}

/// Per-sample loss terms. `head` and `tail` are the unweighted aux losses.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub primary: f64,
    pub head: f64,
    pub tail: f64,
    /// `d total / d logit` for each head, aux entries already scaled by λ.
    pub dlogit_primary: f64,
    pub dlogit_head: Option<f64>,
    pub dlogit_tail: Option<f64>,
}

pub fn c2al_loss(trace: &ForwardTrace, labels: Labels, lambda_head: f64, lambda_tail: f64) -> Result<LossTerms> {
    if !(lambda_head >= 0.0 && lambda_tail >= 0.0) {
        return Err(Error::contract(format!(
            "aux weights must be nonnegative, got {lambda_head} and {lambda_tail}"
        )));
    }
    let p = trace.primary.prob;
    let mut out = LossTerms {
        primary: bce(p, labels.y),
        dlogit_primary: bce_grad(p, labels.y),
        ..LossTerms::default()
    };
    out.total = out.primary;
    if let Some(h) = &trace.head {
        out.head = bce(h.prob, labels.y_head);
        out.total += lambda_head * out.head;
        out.dlogit_head = Some(lambda_head * bce_grad(h.prob, labels.y_head));
    }
    if let Some(t) = &trace.tail {
        out.tail = bce(t.prob, labels.y_tail);
        out.total += lambda_tail * out.tail;
        out.dlogit_tail = Some(lambda_tail * bce_grad(t.prob, labels.y_tail));
    }
    Ok(out)
}

/// Batch-mean losses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub total: f64,
    pub primary: f64,
    pub head: f64,
    pub tail: f64,
}

/// Gradients of one batch, kept apart by origin.
#[derive(Clone, Debug)]
pub struct BatchGrads {
    pub loss: BatchLoss,
    /// Head-parameter gradients; the shared part of this container is unused.
    pub heads: ModelParams,
    pub primary: Shared,
    /// λ-weighted contribution of both aux losses to the shared gradient.
    pub aux: Option<Shared>,
}

impl BatchGrads {
    /// Gradient of the full objective over all parameters.
    pub fn total(&self, aux_active: bool) -> ModelParams {
        let mut g = self.heads.clone();
        g.shared = self.primary.clone();
        if aux_active {
            if let Some(aux) = &self.aux {
                g.shared.add_assign(aux);
            }
        }
        g
    }
}

/// Forward and backward over `batch`, accumulating in sample order and then
/// dividing by the batch size. The two aux heads' upstream `dG` are summed
/// per sample before the shared backward pass.
pub fn batch_gradients(batch: &[Sample], params: &ModelParams, cfg: &TrainConfig) -> Result<BatchGrads> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let with_aux = cfg.c2al_enabled;
    if with_aux && !params.has_aux() {
        return Err(Error::contract("C2AL training needs aux heads"));
    }
    let (d, k) = params.shared.attention.shape();
    let mut heads = params.zeros_like();
    let mut primary = Shared::zeros(&params.config);
    let mut aux = with_aux.then(|| Shared::zeros(&params.config));
    let mut loss = BatchLoss::default();
    for sample in batch {
        let trace = forward_sample(&sample.indices, params, with_aux)?;
        let terms = c2al_loss(&trace, sample.labels(), cfg.lambda_head, cfg.lambda_tail)?;
        loss.total += terms.total;
        loss.primary += terms.primary;
        loss.head += terms.head;
        loss.tail += terms.tail;

        let dg = params.primary.backward(&trace.primary, terms.dlogit_primary, &mut heads.primary);
        backward_shared(&trace, params, &Matrix::new(d, k, dg)?, &mut primary)?;
        let Some(aux) = aux.as_mut() else { continue };
        let mut dg_aux = vec![0.0; d * k];
        let parts = [
            (params.head_aux.as_ref(), trace.head.as_ref(), terms.dlogit_head, heads.head_aux.as_mut()),
            (params.tail_aux.as_ref(), trace.tail.as_ref(), terms.dlogit_tail, heads.tail_aux.as_mut()),
        ];
        for (mlp, tr, dlogit, grads) in parts {
            if let (Some(mlp), Some(tr), Some(dlogit), Some(grads)) = (mlp, tr, dlogit, grads) {
                let dg = mlp.backward(tr, dlogit, grads);
                dg_aux.iter_mut().zip(&dg).for_each(|(a, b)| *a += b);
            }
        }
        backward_shared(&trace, params, &Matrix::new(d, k, dg_aux)?, aux)?;
    }
    let inv = 1.0 / batch.len() as f64;
    loss.total *= inv;
    loss.primary *= inv;
    loss.head *= inv;
    loss.tail *= inv;
    for t in heads.tensors_mut() {
        t.iter_mut().for_each(|v| *v *= inv);
    }
    primary.scale_in_place(inv);
    if let Some(a) = aux.as_mut() {
        a.scale_in_place(inv);
    }
    Ok(BatchGrads {
        loss,
        heads,
        primary,
        aux,
    })
}

/// `θ_S` gradients flattened in [`Shared::flatten`] order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradBundle {
    pub g_primary: Vec<f64>,
    pub g_aux: Vec<f64>,
    /// The head-cohort and tail-cohort parts of `g_aux`, when computed.
    pub g_head: Option<Vec<f64>>,
    pub g_tail: Option<Vec<f64>>,
    pub norm_primary: f64,
    pub norm_aux: f64,
}

impl GradBundle {
    pub fn new(primary: &Shared, aux: Option<&Shared>) -> Self {
        let g_primary = primary.flatten();
        let g_aux = aux.map_or_else(|| vec![0.0; g_primary.len()], Shared::flatten);
        Self {
            norm_primary: norm(&g_primary),
            norm_aux: norm(&g_aux),
            g_primary,
            g_aux,
            g_head: None,
            g_tail: None,
        }
    }
}

/// `G_primary` and `G_aux` over `θ_S` for one batch, plus the per-head parts
/// of `G_aux` from two extra passes with one λ zeroed.
pub fn shared_grads(batch: &[Sample], params: &ModelParams, cfg: &TrainConfig) -> Result<GradBundle> {
    let g = batch_gradients(batch, params, cfg)?;
    let mut bundle = GradBundle::new(&g.primary, g.aux.as_ref());
    if cfg.c2al_enabled {
        let only = |lambda_head, lambda_tail| -> Result<Vec<f64>> {
            let c = TrainConfig {
                lambda_head,
                lambda_tail,
                ..cfg.clone()
            };
            let g = batch_gradients(batch, params, &c)?;
            Ok(g.aux.expect("aux enabled").flatten())
        };
        bundle.g_head = Some(only(cfg.lambda_head, 0.0)?);
        bundle.g_tail = Some(only(0.0, cfg.lambda_tail)?);
    }
    Ok(bundle)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub parallel: Vec<f64>,
    pub orthogonal: Vec<f64>,
    /// Cosine between `G_aux` and `G_primary`; 0 when either is zero.
    pub cosine: f64,
    pub norm_parallel: f64,
    pub norm_orthogonal: f64,
    pub degenerate: bool,
}

impl Decomposition {
    /// `‖(parallel + orthogonal) − G_aux‖ / ‖G_aux‖`, or the absolute
    /// residual when `G_aux` is zero.
    pub fn reconstruction_error(&self, g_aux: &[f64]) -> f64 {
        let resid: Vec<f64> = self
            .parallel
            .iter()
            .zip(&self.orthogonal)
            .zip(g_aux)
            .map(|((p, o), a)| p + o - a)
            .collect();
        let n = norm(g_aux);
        if n > 0.0 {
            norm(&resid) / n
        } else {
            norm(&resid)
        }
    }

    /// `|⟨orthogonal, G_primary⟩| / (‖orthogonal‖·‖G_primary‖)`. An
    /// orthogonal part at rounding level (below `1e-12·(‖parallel‖ +
    /// ‖orthogonal‖)`) has no meaningful direction and scores 0.
    pub fn orthogonality(&self, g_primary: &[f64]) -> f64 {
        let denom = self.norm_orthogonal * norm(g_primary);
        let floor = 1e-12 * (self.norm_parallel + self.norm_orthogonal);
        if denom > 0.0 && self.norm_orthogonal > floor {
            dot(&self.orthogonal, g_primary).abs() / denom
        } else {
            0.0
        }
    }
}

pub fn decompose(bundle: &GradBundle) -> Decomposition {
    decompose_vectors(&bundle.g_aux, &bundle.g_primary)
}

pub fn decompose_vectors(aux: &[f64], primary: &[f64]) -> Decomposition {
    let np = norm(primary);
    let na = norm(aux);
    if np <= DEGENERATE_NORM {
        return Decomposition {
            parallel: vec![0.0; aux.len()],
            orthogonal: aux.to_vec(),
            cosine: 0.0,
            norm_parallel: 0.0,
            norm_orthogonal: na,
            degenerate: true,
        };
    }
    let ip = dot(aux, primary);
    let coef = ip / (np * np);
    let parallel: Vec<f64> = primary.iter().map(|p| coef * p).collect();
    let orthogonal: Vec<f64> = aux.iter().zip(&parallel).map(|(a, p)| a - p).collect();
    let cosine = if na > 0.0 { (ip / (na * np)).clamp(-1.0, 1.0) } else { 0.0 };
    Decomposition {
        norm_parallel: norm(&parallel),
        norm_orthogonal: norm(&orthogonal),
        parallel,
        orthogonal,
        cosine,
        degenerate: false,
    }
}

/// Per-parameter optimizer state, laid out like [`ModelParams::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    config: OptimizerConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every tensor in `params` with the matching gradient.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
            return Err(Error::contract("parameter and gradient layouts differ"));
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != grads.len() {
            return Err(Error::contract("optimizer state layout changed"));
        }
        self.step += 1;
        match self.config {
            OptimizerConfig::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (x, d) in p.iter_mut().zip(g.iter()) {
                        *x -= lr * d;
                    }
                }
            }
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    for i in 0..p.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let mhat = m[i] / c1;
                        let vhat = v[i] / c2;
                        p[i] -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    /// Index of the update just applied, starting at 1.
    pub step: usize,
    pub loss: BatchLoss,
    pub grad_norm_primary: f64,
    pub grad_norm_aux: f64,
    /// `None` for runs without aux heads.
    pub cosine: Option<f64>,
    pub degenerate: bool,
    pub reconstruction_error: f64,
    pub orthogonality: f64,
}

impl StepDiagnostics {
    pub fn flag(&self) -> &'static str {
        match (self.cosine, self.degenerate) {
            (None, _) => "none",
            (Some(_), true) => "degenerate",
            (Some(_), false) => "ok",
        }
    }
}

/// Applies one optimizer step for `batch`. `step` numbers the update for
/// diagnostics and error reports.
pub fn train_step(
    params: &mut ModelParams,
    batch: &[Sample],
    cfg: &TrainConfig,
    opt: &mut OptimizerState,
    step: usize,
) -> Result<StepDiagnostics> {
    let grads = batch_gradients(batch, params, cfg)?;
    let total = grads.total(cfg.aux_active());
    if !total.is_finite() || !grads.loss.total.is_finite() {
        return Err(Error::NonFinite { step });
    }
    let diag = if cfg.c2al_enabled {
        let bundle = GradBundle::new(&grads.primary, grads.aux.as_ref());
        let dec = decompose(&bundle);
        StepDiagnostics {
            step,
            loss: grads.loss,
            grad_norm_primary: bundle.norm_primary,
            grad_norm_aux: bundle.norm_aux,
            cosine: Some(dec.cosine),
            degenerate: dec.degenerate,
            reconstruction_error: dec.reconstruction_error(&bundle.g_aux),
            orthogonality: dec.orthogonality(&bundle.g_primary),
        }
    } else {
        StepDiagnostics {
            step,
            loss: grads.loss,
            grad_norm_primary: norm(&grads.primary.flatten()),
            grad_norm_aux: 0.0,
            cosine: None,
            degenerate: false,
            reconstruction_error: 0.0,
            orthogonality: 0.0,
        }
    };
    let g = total.tensors();
    opt.step(&mut params.tensors_mut(), &g)?;
    if !params.is_finite() {
        return Err(Error::NonFinite { step });
    }
    Ok(diag)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub params: ModelParams,
    pub stats: AttentionStats,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SnapshotSeries {
    pub snapshots: Vec<Snapshot>,
}

impl SnapshotSeries {
    fn push(&mut self, step: usize, params: &ModelParams) -> Result<()> {
        if self.snapshots.last().is_some_and(|s| s.step >= step) {
            return Err(Error::contract("snapshot steps must increase"));
        }
        self.snapshots.push(Snapshot {
            step,
            params: params.clone(),
            stats: attention_stats(params.attention(), DEFAULT_TAU, DEFAULT_STATS_BINS, DEFAULT_STATS_RANGE)?,
        });
        Ok(())
    }

    pub fn steps(&self) -> Vec<usize> {
        self.snapshots.iter().map(|s| s.step).collect()
    }

    pub fn step_stats(&self, tau: f64, bins: usize, range: f64) -> Result<Vec<StepStats>> {
        self.snapshots
            .iter()
            .map(|s| {
                Ok(StepStats {
                    step: s.step,
                    stats: attention_stats(s.params.attention(), tau, bins, range)?,
                })
            })
            .collect()
    }

    /// Writes `step_<N>.c2al` per snapshot and `stats.csv`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stats: Vec<StepStats> = self
            .snapshots
            .iter()
            .map(|s| StepStats {
                step: s.step,
                stats: s.stats.clone(),
            })
            .collect();
        for s in &self.snapshots {
            save_checkpoint(&s.params, &dir.join(format!("step_{}.c2al", s.step)))?;
        }
        let path = dir.join("stats.csv");
        std::fs::write(&path, stats_csv(&stats)).map_err(|e| Error::io(&path, e))
    }
}

pub fn stats_csv(stats: &[StepStats]) -> String {
    let mut out = String::from("step,tau,near_zero_fraction,entropy_bits,std_dev,excess_kurtosis,max_abs,range");
    if let Some(first) = stats.first() {
        for (tau, _) in &first.stats.tau_sweep {
            let _ = write!(out, ",near_zero@{tau}");
        }
    }
    out.push('\n');
    for s in stats {
        let st = &s.stats;
        let _ = write!(
            out,
            "{},{},{:.10},{:.10},{:.10},{:.10},{:.10},{}",
            s.step, st.tau, st.near_zero_fraction, st.entropy_bits, st.std_dev, st.excess_kurtosis, st.max_abs, st.range
        );
        for (_, f) in &st.tau_sweep {
            let _ = write!(out, ",{f:.10}");
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub snapshots: SnapshotSeries,
    pub log: Vec<StepDiagnostics>,
}

impl TrainOutput {
    pub fn log_csv(&self) -> String {
        log_csv(&self.log)
    }
}

pub fn log_csv(log: &[StepDiagnostics]) -> String {
    let mut out = String::from(
        "step,loss_total,loss_primary,loss_head,loss_tail,grad_norm_primary,grad_norm_aux,cos_aux_primary,decomposition_flag\n",
    );
    for r in log {
        let cos = r.cosine.map(|c| format!("{c:.10}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{:.10},{:.10},{:.10},{:.10},{:.10e},{:.10e},{},{}",
            r.step,
            r.loss.total,
            r.loss.primary,
            r.loss.head,
            r.loss.tail,
            r.grad_norm_primary,
            r.grad_norm_aux,
            cos,
            r.flag()
        );
    }
    out
}

/// Deterministic batch order: the sample indices are reshuffled with
/// Fisher-Yates at the start of each pass; a pass ends when fewer than
/// `batch_size` unseen samples remain.
struct Batcher {
    rng: Rng,
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
}

impl Batcher {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        Self {
            rng: Rng::split(seed, "shuffle"),
            order: (0..n).collect(),
            cursor: n,
            batch: batch.min(n),
        }
    }

    fn next(&mut self) -> &[usize] {
        if self.cursor + self.batch > self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.cursor = 0;
        }
        let start = self.cursor;
        self.cursor += self.batch;
        &self.order[start..self.cursor]
    }
}

pub fn train(samples: &[Sample], cfg: &TrainConfig, model_cfg: &ModelConfig) -> Result<TrainOutput> {
    let params = ModelParams::init(model_cfg, cfg.init_seed, cfg.c2al_enabled)?;
    train_from(params, samples, cfg)
}

/// Like [`train`] but starting from given parameters.
pub fn train_from(mut params: ModelParams, samples: &[Sample], cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    if cfg.c2al_enabled != params.has_aux() {
        return Err(Error::contract("aux heads must be present exactly when C2AL is enabled"));
    }
    if samples.is_empty() && cfg.num_steps > 0 {
        return Err(Error::config("no training samples"));
    }
    crate::model::validate_batch(samples, &params.config)?;
    let schedule = cfg.snapshot_steps();
    let mut next_snapshot = schedule.iter().copied().peekable();
    let mut snapshots = SnapshotSeries::default();
    let mut log = Vec::with_capacity(cfg.num_steps);
    let mut opt = OptimizerState::new(cfg.optimizer);
    let mut batcher = Batcher::new(samples.len(), cfg.batch_size, cfg.shuffle_seed);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for step in 0..=cfg.num_steps {
        if next_snapshot.peek() == Some(&step) {
            snapshots.push(step, &params)?;
            next_snapshot.next();
        }
        if step == cfg.num_steps {
            break;
        }
        batch.clear();
        batch.extend(batcher.next().iter().map(|&i| samples[i].clone()));
        log.push(train_step(&mut params, &batch, cfg, &mut opt, step + 1)?);
    }
    Ok(TrainOutput { params, snapshots, log })
}

/// Mean primary BCE of `params` over `samples`.
pub fn eval_loss(samples: &[Sample], params: &ModelParams) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::contract("empty evaluation set"));
    }
    let preds = crate::model::predict(samples, params)?;
    Ok(preds.iter().zip(samples).map(|(p, s)| bce(*p, f64::from(s.y))).sum::<f64>() / samples.len() as f64)
}
