//! Embedding lookup, the bilinear FM-attention interaction `G = X Xᵀ Y`,
//! and the per-head MLPs that read `flatten(G)`.
//!
//! Shared parameters are the embedding tables and `Y`. Every head is an MLP
//! with ReLU hidden layers and a single sigmoid logit; the two auxiliary
//! heads are structurally identical to the primary head and can be stripped
//! without touching anything the primary head depends on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gram, matmul, sigmoid, Matrix, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_slots: usize,
    pub vocab_sizes: Vec<usize>,
    pub embed_dim: usize,
    pub compress_dim: usize,
    pub head_hidden: Vec<usize>,
    pub init_scale: f64,
    /// Standard deviation for `Y`; falls back to `init_scale`.
    #[serde(default)]
    pub attention_init_scale: Option<f64>,
}

impl ModelConfig {
    pub fn new(vocab_sizes: Vec<usize>, embed_dim: usize, compress_dim: usize) -> Self {
        Self {
            num_slots: vocab_sizes.len(),
            vocab_sizes,
            embed_dim,
            compress_dim,
            head_hidden: vec![16],
            init_scale: 0.1,
            attention_init_scale: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_slots < 2 {
            return Err(Error::config("num_slots must be at least 2"));
        }
        if self.vocab_sizes.len() != self.num_slots {
            return Err(Error::config(format!(
                "{} vocab sizes for {} slots",
                self.vocab_sizes.len(),
                self.num_slots
            )));
        }
        if self.vocab_sizes.contains(&0) {
            return Err(Error::config("vocab sizes must be at least 1"));
        }
        if self.embed_dim < 2 {
            return Err(Error::config("embed_dim must be at least 2"));
        }
        if self.compress_dim < 1 {
            return Err(Error::config("compress_dim must be at least 1"));
        }
        if self.head_hidden.contains(&0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        let scales = [Some(self.init_scale), self.attention_init_scale];
        if scales.iter().flatten().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::config("init scales must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn attention_scale(&self) -> f64 {
        self.attention_init_scale.unwrap_or(self.init_scale)
    }

    /// Width of the head input, `d·k`.
    pub fn head_input(&self) -> usize {
        self.embed_dim * self.compress_dim
    }

    /// Layer widths of every head, input through the single logit.
    pub fn head_shape(&self) -> Vec<usize> {
        let mut shape = Vec::with_capacity(self.head_hidden.len() + 2);
        shape.push(self.head_input());
        shape.extend_from_slice(&self.head_hidden);
        shape.push(1);
        shape
    }

    pub fn shared_len(&self) -> usize {
        self.vocab_sizes.iter().sum::<usize>() * self.embed_dim
            + self.embed_dim * self.compress_dim
    }
}

/// One impression: an active index per slot plus its labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    #[serde(rename = "f")]
    pub indices: Vec<u32>,
    #[serde(rename = "c")]
    pub cohort: u32,
    pub y: u8,
    #[serde(rename = "yh")]
    pub y_head: u8,
    #[serde(rename = "yt")]
    pub y_tail: u8,
}

impl Sample {
    pub fn labels(&self) -> Labels {
        Labels {
            y: f64::from(self.y),
            y_head: f64::from(self.y_head),
            y_tail: f64::from(self.y_tail),
        }
    }
}

/// A minibatch is a contiguous run of samples.
pub type SparseBatch<'a> = &'a [Sample];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Labels {
    pub y: f64,
    pub y_head: f64,
    pub y_tail: f64,
}

pub fn validate_batch(batch: SparseBatch<'_>, config: &ModelConfig) -> Result<()> {
    for (n, s) in batch.iter().enumerate() {
        validate_indices(&s.indices, config).map_err(|e| match e {
            Error::Contract(msg) => Error::contract(format!("sample {n}: {msg}")),
            other => other,
        })?;
        if s.y > 1 || s.y_head > 1 || s.y_tail > 1 {
            return Err(Error::contract(format!("sample {n}: labels must be 0 or 1")));
        }
    }
    Ok(())
}

fn validate_indices(indices: &[u32], config: &ModelConfig) -> Result<()> {
    if indices.len() != config.num_slots {
        return Err(Error::contract(format!(
            "{} indices for {} slots",
            indices.len(),
            config.num_slots
        )));
    }
    for (slot, (&idx, &vocab)) in indices.iter().zip(&config.vocab_sizes).enumerate() {
        if idx as usize >= vocab {
            return Err(Error::contract(format!(
                "slot {slot}: index {idx} out of range for vocab {vocab}"
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `out × in`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations kept from a head's forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadTrace {
    /// `inputs[l]` is the input vector to layer `l`; `inputs[0]` is flatten(G).
    pub inputs: Vec<Vec<f64>>,
    pub logit: f64,
    pub prob: f64,
}

impl Mlp {
    /// Kaiming-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn init(shape: &[usize], rng: &mut Rng) -> Self {
        let layers = shape
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let std = (2.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.normal() * std).collect();
                Dense {
                    weights: Matrix::new(fan_out, fan_in, data).expect("layer shape"),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let layers = shape
            .windows(2)
            .map(|w| Dense {
                weights: Matrix::zeros(w[1], w[0]),
                bias: vec![0.0; w[1]],
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        let mut shape: Vec<usize> = self.layers.iter().map(|l| l.weights.cols()).collect();
        if let Some(last) = self.layers.last() {
            shape.push(last.weights.rows());
        }
        shape
    }

    pub fn forward(&self, input: &[f64]) -> HeadTrace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = input.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = layer.bias.clone();
            for (o, out_v) in out.iter_mut().enumerate() {
                let w_row = layer.weights.row(o);
                *out_v += w_row.iter().zip(&current).map(|(w, x)| w * x).sum::<f64>();
            }
            if l != last {
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            inputs.push(std::mem::replace(&mut current, out));
        }
        let logit = current[0];
        HeadTrace {
            inputs,
            logit,
            prob: sigmoid(logit),
        }
    }

    /// Accumulates parameter gradients for upstream `dlogit` into `grads`
    /// and returns the gradient with respect to the head input.
    pub fn backward(&self, trace: &HeadTrace, dlogit: f64, grads: &mut Mlp) -> Vec<f64> {
        let mut upstream = vec![dlogit];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &trace.inputs[l];
            let g = &mut grads.layers[l];
            for (o, &u) in upstream.iter().enumerate() {
                g.bias[o] += u;
                let g_row = g.weights.row_mut(o);
                for (gw, x) in g_row.iter_mut().zip(input) {
                    *gw += u * x;
                }
            }
            let mut down = vec![0.0; layer.weights.cols()];
            for (o, &u) in upstream.iter().enumerate() {
                for (d, w) in down.iter_mut().zip(layer.weights.row(o)) {
                    *d += u * w;
                }
            }
            if l > 0 {
                // `input` is the ReLU output of layer l-1; zero means inactive.
                for (d, x) in down.iter_mut().zip(input) {
                    if *x <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            upstream = down;
        }
        upstream
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub fn param_count(&self) -> usize {
        self.tensors().map(<[f64]>::len).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Primary,
    Head,
    Tail,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

/// Shared parameters `θ_S`, or a gradient over them.
#[derive(Clone, Debug, PartialEq)]
pub struct Shared {
    /// One `(vocab × d)` table per slot.
    pub embeddings: Vec<Matrix>,
    /// `d × k`.
    pub attention: Matrix,
}

impl Shared {
    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            embeddings: config
                .vocab_sizes
                .iter()
                .map(|&v| Matrix::zeros(v, config.embed_dim))
                .collect(),
            attention: Matrix::zeros(config.embed_dim, config.compress_dim),
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.embeddings
            .iter()
            .map(Matrix::as_slice)
            .chain(std::iter::once(self.attention.as_slice()))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.embeddings
            .iter_mut()
            .map(Matrix::as_mut_slice)
            .chain(std::iter::once(self.attention.as_mut_slice()))
    }

    /// Embeddings by slot, then `Y`, all row-major.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().flat_map(|t| t.iter().copied()).collect()
    }

    pub fn len(&self) -> usize {
        self.tensors().map(<[f64]>::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add_assign(&mut self, other: &Shared) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for t in self.tensors_mut() {
            for v in t {
                *v *= s;
            }
        }
    }
}

/// Full parameter set. The same structure doubles as a gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub shared: Shared,
    pub primary: Mlp,
    pub head_aux: Option<Mlp>,
    pub tail_aux: Option<Mlp>,
}

impl ModelParams {
    /// Draws every parameter group from its own substream of `seed`, so the
    /// shared parameters and the primary head do not depend on whether the
    /// auxiliary heads exist.
    pub fn init(config: &ModelConfig, seed: u64, with_aux: bool) -> Result<Self> {
        config.validate()?;
        let mut emb_rng = Rng::split(seed, "embeddings");
        let embeddings = config
            .vocab_sizes
            .iter()
            .map(|&v| {
                let data = (0..v * config.embed_dim)
                    .map(|_| emb_rng.normal() * config.init_scale)
                    .collect();
                Matrix::new(v, config.embed_dim, data)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut att_rng = Rng::split(seed, "attention");
        let att_scale = config.attention_scale();
        let attention = Matrix::new(
            config.embed_dim,
            config.compress_dim,
            (0..config.embed_dim * config.compress_dim)
                .map(|_| att_rng.normal() * att_scale)
                .collect(),
        )?;
        let shape = config.head_shape();
        let primary = Mlp::init(&shape, &mut Rng::split(seed, "head.primary"));
        let (head_aux, tail_aux) = if with_aux {
            (
                Some(Mlp::init(&shape, &mut Rng::split(seed, "head.head"))),
                Some(Mlp::init(&shape, &mut Rng::split(seed, "head.tail"))),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            config: config.clone(),
            shared: Shared {
                embeddings,
                attention,
            },
            primary,
            head_aux,
            tail_aux,
        })
    }

    pub fn zeros(config: &ModelConfig, with_aux: bool) -> Self {
        let shape = config.head_shape();
        Self {
            config: config.clone(),
            shared: Shared::zeros(config),
            primary: Mlp::zeros(&shape),
            head_aux: with_aux.then(|| Mlp::zeros(&shape)),
            tail_aux: with_aux.then(|| Mlp::zeros(&shape)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            shared: Shared::zeros(&self.config),
            primary: self.primary.zeros_like(),
            head_aux: self.head_aux.as_ref().map(Mlp::zeros_like),
            tail_aux: self.tail_aux.as_ref().map(Mlp::zeros_like),
        }
    }

    pub fn has_aux(&self) -> bool {
        self.head_aux.is_some() && self.tail_aux.is_some()
    }

    pub fn attention(&self) -> &Matrix {
        &self.shared.attention
    }

    /// Every parameter tensor in checkpoint order: embeddings by slot, `Y`,
    /// then the primary, head and tail MLPs layer by layer (weights, bias).
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.shared.tensors().collect();
        out.extend(self.primary.tensors());
        for head in [&self.head_aux, &self.tail_aux].into_iter().flatten() {
            out.extend(head.tensors());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.shared.tensors_mut().collect();
        out.extend(self.primary.tensors_mut());
        for head in [&mut self.head_aux, &mut self.tail_aux].into_iter().flatten() {
            out.extend(head.tensors_mut());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().into_iter().flatten().copied().collect()
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::contract(format!(
                "flat vector of {} for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn head(&self, kind: HeadKind) -> Option<&Mlp> {
        match kind {
            HeadKind::Primary => Some(&self.primary),
            HeadKind::Head => self.head_aux.as_ref(),
            HeadKind::Tail => self.tail_aux.as_ref(),
        }
    }

    pub fn head_mut(&mut self, kind: HeadKind) -> Option<&mut Mlp> {
        match kind {
            HeadKind::Primary => Some(&mut self.primary),
            HeadKind::Head => self.head_aux.as_mut(),
            HeadKind::Tail => self.tail_aux.as_mut(),
        }
    }
}

/// Drops the auxiliary heads. Idempotent.
pub fn strip_aux(params: &ModelParams) -> ModelParams {
    ModelParams {
        config: params.config.clone(),
        shared: params.shared.clone(),
        primary: params.primary.clone(),
        head_aux: None,
        tail_aux: None,
    }
}

/// Column `j` of the result is row `indices[j]` of embedding table `j`.
pub fn embed(indices: &[u32], params: &ModelParams) -> Result<Matrix> {
    validate_indices(indices, &params.config)?;
    Ok(embed_unchecked(indices, &params.shared, params.config.embed_dim))
}

fn embed_unchecked(indices: &[u32], shared: &Shared, d: usize) -> Matrix {
    let m = indices.len();
    let mut x = Matrix::zeros(d, m);
    for (j, (&idx, table)) in indices.iter().zip(&shared.embeddings).enumerate() {
        for (r, v) in table.row(idx as usize).iter().enumerate() {
            x.set(r, j, *v);
        }
    }
    x
}

/// `G = (X Xᵀ) Y`.
pub fn fm_attention_forward(x: &Matrix, y: &Matrix) -> Result<Matrix> {
    if x.rows() != y.rows() {
        return Err(Error::contract(format!(
            "attention: X is {}x{}, Y is {}x{}",
            x.rows(),
            x.cols(),
            y.rows(),
            y.cols()
        )));
    }
    matmul(&gram(x), y)
}

/// Given `dG = ∂L/∂G`, returns `(∂L/∂X, ∂L/∂Y)` with
/// `∂L/∂Y = (X Xᵀ) dG` and `∂L/∂X = (dG Yᵀ + Y dGᵀ) X`.
pub fn fm_attention_backward(x: &Matrix, y: &Matrix, dg: &Matrix) -> Result<(Matrix, Matrix)> {
    if x.rows() != y.rows() || dg.shape() != y.shape() {
        return Err(Error::contract(format!(
            "attention backward: X {:?}, Y {:?}, dG {:?}",
            x.shape(),
            y.shape(),
            dg.shape()
        )));
    }
    let gram_x = gram(x);
    let dy = matmul(&gram_x, dg)?;
    Ok((attention_dx(x, y, dg)?, dy))
}

fn attention_dx(x: &Matrix, y: &Matrix, dg: &Matrix) -> Result<Matrix> {
    let m = matmul(dg, &y.transpose())?;
    let sym = m.add(&m.transpose())?;
    matmul(&sym, x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub indices: Vec<u32>,
    pub x: Matrix,
    pub gram_x: Matrix,
    pub g: Matrix,
    pub primary: HeadTrace,
    pub head: Option<HeadTrace>,
    pub tail: Option<HeadTrace>,
}

impl ForwardTrace {
    pub fn prob(&self, kind: HeadKind) -> Option<f64> {
        self.head_trace(kind).map(|t| t.prob)
    }

    pub fn head_trace(&self, kind: HeadKind) -> Option<&HeadTrace> {
        match kind {
            HeadKind::Primary => Some(&self.primary),
            HeadKind::Head => self.head.as_ref(),
            HeadKind::Tail => self.tail.as_ref(),
        }
    }
}

/// Forward pass for one sample. Aux heads are evaluated when `with_aux`
/// is set and they exist.
pub fn forward_sample(indices: &[u32], params: &ModelParams, with_aux: bool) -> Result<ForwardTrace> {
    validate_indices(indices, &params.config)?;
    let x = embed_unchecked(indices, &params.shared, params.config.embed_dim);
    let gram_x = gram(&x);
    let g = matmul(&gram_x, &params.shared.attention)?;
    let flat = g.as_slice();
    let primary = params.primary.forward(flat);
    let (head, tail) = if with_aux {
        (
            params.head_aux.as_ref().map(|h| h.forward(flat)),
            params.tail_aux.as_ref().map(|h| h.forward(flat)),
        )
    } else {
        (None, None)
    };
    Ok(ForwardTrace {
        indices: indices.to_vec(),
        x,
        gram_x,
        g,
        primary,
        head,
        tail,
    })
}

pub fn forward(batch: SparseBatch<'_>, params: &ModelParams, mode: Mode) -> Result<Vec<ForwardTrace>> {
    let with_aux = match mode {
        Mode::Train if !params.has_aux() => {
            return Err(Error::contract("train mode requires auxiliary heads"));
        }
        Mode::Train => true,
        Mode::Inference => false,
    };
    batch
        .iter()
        .map(|s| forward_sample(&s.indices, params, with_aux))
        .collect()
}

/// Primary-head probabilities only.
pub fn predict(batch: SparseBatch<'_>, params: &ModelParams) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|s| forward_sample(&s.indices, params, false).map(|t| t.primary.prob))
        .collect()
}

/// Upstream logit gradients for each head of one sample.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HeadUpstream {
    pub primary: f64,
    pub head: Option<f64>,
    pub tail: Option<f64>,
}

/// Backpropagates the head logits of one sample. Head parameter gradients
/// go into `grads`; the returned pair is `(dG from the primary head,
/// dG summed over the aux heads)`.
pub fn backward_heads(
    trace: &ForwardTrace,
    params: &ModelParams,
    upstream: HeadUpstream,
    grads: &mut ModelParams,
) -> Result<(Matrix, Option<Matrix>)> {
    let (d, k) = params.shared.attention.shape();
    let dg_primary = params.primary.backward(&trace.primary, upstream.primary, &mut grads.primary);
    let mut dg_aux: Option<Vec<f64>> = None;
    let aux = [
        (HeadKind::Head, upstream.head, &trace.head),
        (HeadKind::Tail, upstream.tail, &trace.tail),
    ];
    for (kind, dlogit, head_trace) in aux {
        let Some(dlogit) = dlogit else { continue };
        let (Some(head), Some(tr), Some(g)) = (params.head(kind), head_trace.as_ref(), grads.head_mut(kind))
        else {
            return Err(Error::contract(format!("{kind:?} head missing for backward")));
        };
        let dg = head.backward(tr, dlogit, g);
        match dg_aux.as_mut() {
            Some(acc) => acc.iter_mut().zip(&dg).for_each(|(a, b)| *a += b),
            None => dg_aux = Some(dg),
        }
    }
    Ok((
        Matrix::new(d, k, dg_primary)?,
        dg_aux.map(|v| Matrix::new(d, k, v)).transpose()?,
    ))
}

/// Accumulates `θ_S` gradients for upstream `dG` of one sample.
pub fn backward_shared(trace: &ForwardTrace, params: &ModelParams, dg: &Matrix, out: &mut Shared) -> Result<()> {
    let y = &params.shared.attention;
    let dy = matmul(&trace.gram_x, dg)?;
    out.attention.add_assign(&dy)?;
    let dx = attention_dx(&trace.x, y, dg)?;
    for (j, &idx) in trace.indices.iter().enumerate() {
        let row = out.embeddings[j].row_mut(idx as usize);
        for (r, v) in row.iter_mut().enumerate() {
            *v += dx.get(r, j);
        }
    }
    Ok(())
}

const MAGIC: &[u8; 4] = b"C2AL";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Little-endian layout: magic, version (u32), config JSON length (u32) and
/// bytes, aux flag (u8), then every tensor of [`ModelParams::tensors`] as
/// raw f64.
pub fn checkpoint_bytes(params: &ModelParams) -> Vec<u8> {
    let config = serde_json::to_vec(&params.config).expect("config serializes");
    let mut out = Vec::with_capacity(13 + config.len() + params.param_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.push(u8::from(params.has_aux()));
    for t in params.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn params_from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
    let mut cursor = bytes;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cursor.len() < n {
            return Err(corrupt("truncated"));
        }
        let (head, rest) = cursor.split_at(n);
        cursor = rest;
        Ok(head)
    };
    if take(4)? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::CorruptCheckpoint(format!("unsupported version {version}")));
    }
    let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let config: ModelConfig = serde_json::from_slice(take(len)?)
        .map_err(|e| Error::CorruptCheckpoint(format!("config: {e}")))?;
    config
        .validate()
        .map_err(|e| Error::CorruptCheckpoint(format!("embedded config: {e}")))?;
    let with_aux = match take(1)?[0] {
        0 => false,
        1 => true,
        f => return Err(Error::CorruptCheckpoint(format!("bad aux flag {f}"))),
    };
    let mut params = ModelParams::zeros(&config, with_aux);
    let expected = params.param_count() * 8;
    let payload = take(expected).map_err(|_| corrupt("parameter payload shorter than config implies"))?;
    if !cursor.is_empty() {
        return Err(corrupt("trailing bytes after parameters"));
    }
    let mut chunks = payload.chunks_exact(8);
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = f64::from_le_bytes(chunks.next().unwrap().try_into().unwrap());
        }
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    params_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{bce, finite_diff_grad};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            head_hidden: vec![5],
            ..ModelConfig::new(vec![3, 4, 2], 3, 2)
        }
    }

    fn random_matrix(rng: &mut Rng, r: usize, c: usize) -> Matrix {
        Matrix::new(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn config_validation() {
        assert!(tiny_config().validate().is_ok());
        let mut c = tiny_config();
        c.num_slots = 1;
        c.vocab_sizes = vec![3];
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.embed_dim = 1;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.vocab_sizes[1] = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn embed_zero_tables() {
        let params = ModelParams::zeros(&tiny_config(), false);
        let x = embed(&[2, 3, 1], &params).unwrap();
        assert_eq!(x, Matrix::zeros(3, 3));
    }

    #[test]
    fn embed_copies_rows() {
        let config = ModelConfig::new(vec![1, 1], 2, 1);
        let mut params = ModelParams::zeros(&config, false);
        params.shared.embeddings[0] = Matrix::from_rows(&[&[1.0, 2.0]]);
        let x = embed(&[0, 0], &params).unwrap();
        assert_eq!(x.get(0, 0), 1.0);
        assert_eq!(x.get(1, 0), 2.0);
    }

    #[test]
    fn embed_column_isolation() {
        let config = tiny_config();
        let params = ModelParams::init(&config, 3, false).unwrap();
        let base = embed(&[0, 0, 0], &params).unwrap();
        for slot in 0..3 {
            for idx in 1..config.vocab_sizes[slot] as u32 {
                let mut ids = [0u32; 3];
                ids[slot] = idx;
                let x = embed(&ids, &params).unwrap();
                for j in 0..3 {
                    let same = (0..config.embed_dim).all(|r| x.get(r, j) == base.get(r, j));
                    assert_eq!(same, j != slot, "slot {slot} idx {idx} column {j}");
                }
            }
        }
    }

    #[test]
    fn embed_rejects_out_of_range() {
        let params = ModelParams::zeros(&tiny_config(), false);
        assert!(matches!(embed(&[3, 0, 0], &params), Err(Error::Contract(_))));
        assert!(matches!(embed(&[0, 0], &params), Err(Error::Contract(_))));
    }

    #[test]
    fn attention_forward_examples() {
        let mut rng = Rng::new(11);
        let y = random_matrix(&mut rng, 3, 2);
        assert!(fm_attention_forward(&Matrix::identity(3), &y)
            .unwrap()
            .sub(&y)
            .unwrap()
            .max_abs()
            == 0.0);
        let x = random_matrix(&mut rng, 3, 4);
        assert_eq!(fm_attention_forward(&x, &Matrix::zeros(3, 2)).unwrap(), Matrix::zeros(3, 2));
        assert!(fm_attention_forward(&x, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn attention_forward_brute_force() {
        let mut rng = Rng::new(12);
        for _ in 0..20 {
            let x = random_matrix(&mut rng, 2, 2);
            let y = random_matrix(&mut rng, 2, 1);
            let g = fm_attention_forward(&x, &y).unwrap();
            for i in 0..2 {
                let mut s = 0.0;
                for a in 0..2 {
                    for j in 0..2 {
                        s += x.get(i, j) * x.get(a, j) * y.get(a, 0);
                    }
                }
                assert!((g.get(i, 0) - s).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn attention_backward_zero_upstream() {
        let mut rng = Rng::new(13);
        let x = random_matrix(&mut rng, 3, 4);
        let y = random_matrix(&mut rng, 3, 2);
        let (dx, dy) = fm_attention_backward(&x, &y, &Matrix::zeros(3, 2)).unwrap();
        assert_eq!(dx, Matrix::zeros(3, 4));
        assert_eq!(dy, Matrix::zeros(3, 2));
    }

    #[test]
    fn attention_backward_matches_finite_differences() {
        let mut rng = Rng::new(14);
        for trial in 0..30 {
            let d = 1 + rng.below(4);
            let m = 1 + rng.below(4);
            let k = 1 + rng.below(4);
            let x = random_matrix(&mut rng, d, m);
            let y = random_matrix(&mut rng, d, k);
            let w = random_matrix(&mut rng, d, k);
            // L = <W, G> so dG = W.
            let loss = |x: &Matrix, y: &Matrix| crate::numerics::dot(fm_attention_forward(x, y).unwrap().as_slice(), w.as_slice());
            let (dx, dy) = fm_attention_backward(&x, &y, &w).unwrap();
            let fd_y = finite_diff_grad(|t| loss(&x, &Matrix::new(d, k, t.to_vec()).unwrap()), y.as_slice(), 1e-6);
            let fd_x = finite_diff_grad(|t| loss(&Matrix::new(d, m, t.to_vec()).unwrap(), &y), x.as_slice(), 1e-6);
            for (a, b) in dy.as_slice().iter().zip(&fd_y) {
                assert!(rel_err(*a, *b) <= 1e-5, "trial {trial}: dY {a} vs {b}");
            }
            for (a, b) in dx.as_slice().iter().zip(&fd_x) {
                assert!(rel_err(*a, *b) <= 1e-5, "trial {trial}: dX {a} vs {b}");
            }
        }
    }

    fn sample(ids: &[u32], y: u8) -> Sample {
        Sample {
            indices: ids.to_vec(),
            cohort: 0,
            y,
            y_head: 0,
            y_tail: 0,
        }
    }

    #[test]
    fn zero_params_give_half() {
        let params = ModelParams::zeros(&tiny_config(), true);
        let traces = forward(&[sample(&[0, 1, 1], 1)], &params, Mode::Train).unwrap();
        for kind in [HeadKind::Primary, HeadKind::Head, HeadKind::Tail] {
            assert_eq!(traces[0].prob(kind), Some(0.5));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let params = ModelParams::init(&tiny_config(), 1, true).unwrap();
        let batch = [sample(&[1, 2, 0], 1), sample(&[1, 2, 0], 0)];
        let t = forward(&batch, &params, Mode::Train).unwrap();
        assert_eq!(t[0].primary, t[1].primary);
        assert_eq!(t[0].g, t[1].g);
        let g2 = matmul(&gram(&t[0].x), params.attention()).unwrap();
        assert!(t[0].g.sub(&g2).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn train_mode_requires_aux() {
        let params = ModelParams::init(&tiny_config(), 1, false).unwrap();
        assert!(forward(&[sample(&[0, 0, 0], 1)], &params, Mode::Train).is_err());
        assert!(forward(&[sample(&[0, 0, 0], 1)], &params, Mode::Inference).is_ok());
    }

    /// Mean primary BCE over a batch, evaluated through a flat parameter vector.
    fn primary_loss(params: &ModelParams, flat: &[f64], batch: &[Sample]) -> f64 {
        let mut p = params.clone();
        p.set_flat(flat).unwrap();
        let traces = forward(batch, &p, Mode::Inference).unwrap();
        traces
            .iter()
            .zip(batch)
            .map(|(t, s)| bce(t.primary.prob, f64::from(s.y)))
            .sum::<f64>()
            / batch.len() as f64
    }

    #[test]
    fn full_network_gradient_matches_finite_differences() {
        let config = tiny_config();
        let params = ModelParams::init(&config, 21, false).unwrap();
        let batch = [sample(&[0, 3, 1], 1), sample(&[2, 1, 0], 0)];
        let mut grads = params.zeros_like();
        for s in &batch {
            let t = forward_sample(&s.indices, &params, false).unwrap();
            let up = HeadUpstream {
                primary: (t.primary.prob - f64::from(s.y)) / batch.len() as f64,
                ..Default::default()
            };
            let (dg, aux) = backward_heads(&t, &params, up, &mut grads).unwrap();
            assert!(aux.is_none());
            backward_shared(&t, &params, &dg, &mut grads.shared).unwrap();
        }
        let fd = finite_diff_grad(|f| primary_loss(&params, f, &batch), &params.flatten(), 1e-6);
        for (i, (a, b)) in grads.flatten().iter().zip(&fd).enumerate() {
            assert!((a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1e-3), "param {i}: {a} vs {b}");
        }
    }

    #[test]
    fn strip_preserves_primary() {
        let config = tiny_config();
        let params = ModelParams::init(&config, 5, true).unwrap();
        let stripped = strip_aux(&params);
        assert!(!stripped.has_aux());
        assert_eq!(stripped.shared, params.shared);
        assert_eq!(stripped.primary, params.primary);
        assert_eq!(strip_aux(&stripped), stripped);
        assert!(checkpoint_bytes(&stripped).len() < checkpoint_bytes(&params).len());
        let batch = [sample(&[1, 1, 1], 0), sample(&[2, 3, 0], 1)];
        let full = forward(&batch, &params, Mode::Train).unwrap();
        let inf = forward(&batch, &stripped, Mode::Inference).unwrap();
        for (a, b) in full.iter().zip(&inf) {
            assert_eq!(a.primary.prob.to_bits(), b.primary.prob.to_bits());
        }
    }

    #[test]
    fn aux_init_does_not_perturb_shared() {
        let config = tiny_config();
        let with = ModelParams::init(&config, 9, true).unwrap();
        let without = ModelParams::init(&config, 9, false).unwrap();
        assert_eq!(strip_aux(&with), without);
    }

    #[test]
    fn checkpoint_round_trip() {
        let params = ModelParams::init(&tiny_config(), 77, true).unwrap();
        let bytes = checkpoint_bytes(&params);
        let back = params_from_bytes(&bytes).unwrap();
        assert_eq!(checkpoint_bytes(&back), bytes);
        assert_eq!(back, params);
    }

    #[test]
    fn checkpoint_corruption() {
        let params = ModelParams::init(&tiny_config(), 77, false).unwrap();
        let bytes = checkpoint_bytes(&params);
        for cut in [0, 3, 10, bytes.len() - 1] {
            assert!(matches!(params_from_bytes(&bytes[..cut]), Err(Error::CorruptCheckpoint(_))));
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(params_from_bytes(&bad), Err(Error::CorruptCheckpoint(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(params_from_bytes(&long), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn checkpoint_header_layout() {
        let params = ModelParams::init(&tiny_config(), 1, true).unwrap();
        let bytes = checkpoint_bytes(&params);
        assert_eq!(&bytes[..4], b"C2AL");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let cfg: ModelConfig = serde_json::from_slice(&bytes[12..12 + len]).unwrap();
        assert_eq!(cfg, params.config);
        assert_eq!(bytes[12 + len], 1);
        let first = f64::from_le_bytes(bytes[13 + len..21 + len].try_into().unwrap());
        assert_eq!(first, params.shared.embeddings[0].get(0, 0));
        assert_eq!(bytes.len(), 13 + len + 8 * params.param_count());
    }
}
