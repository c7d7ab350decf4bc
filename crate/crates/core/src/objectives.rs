//! The four pretext objectives and the encoder + head pairing for each.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::ingest::{NormStats, Window};
use crate::models::{
    windows_to_tensor, ContextAggregatorConfig, CpcHead, Decoder, Encoder, EncoderConfig, MultitaskHead, Pass,
    ProjectionConfig, ProjectionHead,
};
use crate::params::ParameterSet;
use crate::tensor::Tensor;
use crate::transforms::{apply_transform, make_views, TransformKind, TransformParams, TransformSpec, ViewPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PretextKind {
    Multitask,
    Cpc,
    Reconstruction,
    Simclr,
}

impl PretextKind {
    pub const ALL: [PretextKind; 4] = [
        PretextKind::Multitask,
        PretextKind::Cpc,
        PretextKind::Reconstruction,
        PretextKind::Simclr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PretextKind::Multitask => "multitask",
            PretextKind::Cpc => "cpc",
            PretextKind::Reconstruction => "reconstruction",
            PretextKind::Simclr => "simclr",
        }
    }
}

impl fmt::Display for PretextKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PretextKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PretextKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown pretext task {s:?}")))
    }
}

/// Which transforms the multi-task heads discriminate, and how often each
/// is applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultitaskPolicy {
    pub kinds: Vec<TransformKind>,
    pub flip_prob: f64,
    pub params: TransformParams,
}

impl Default for MultitaskPolicy {
    fn default() -> Self {
        Self {
            kinds: TransformKind::ALL.to_vec(),
            flip_prob: 0.5,
            params: TransformParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    pub multitask: MultitaskPolicy,
    pub views: ViewPolicy,
    pub simclr_temperature: f64,
    pub cpc_temperature: f64,
    pub cpc: ContextAggregatorConfig,
    pub projection: ProjectionConfig,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            multitask: MultitaskPolicy::default(),
            views: ViewPolicy::default(),
            simclr_temperature: 0.1,
            cpc_temperature: 1.0,
            cpc: ContextAggregatorConfig::default(),
            projection: ProjectionConfig::default(),
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.simclr_temperature > 0.0 && self.cpc_temperature > 0.0) {
            return Err(Error::InvalidConfig("temperatures must be positive".into()));
        }
        if self.multitask.kinds.is_empty() || !(0.0..=1.0).contains(&self.multitask.flip_prob) {
            return Err(Error::InvalidConfig("multitask policy needs kinds and a probability".into()));
        }
        if self.cpc.horizon == 0 || self.cpc.hidden == 0 {
            return Err(Error::InvalidConfig("cpc horizon and hidden size must be positive".into()));
        }
        self.multitask.params.validate()?;
        self.views.params.validate()
    }
}

// ---------------------------------------------------------------------------
// Losses

/// Mean binary cross-entropy over batch and tasks. `flags` is row-major
/// `[batch, tasks]` with entries in {0, 1}.
pub fn multitask_loss(g: &mut Graph, logits: Var, flags: &[f64]) -> Result<Var> {
    if let Some(&bad) = flags.iter().find(|&&f| f != 0.0 && f != 1.0) {
        return Err(Error::InvalidFlag(bad));
    }
    if g.value(logits).len() != flags.len() {
        return Err(Error::Shape(format!(
            "{} logits for {} flags",
            g.value(logits).len(),
            flags.len()
        )));
    }
    Ok(g.bce_with_logits(logits, flags))
}

/// InfoNCE with in-batch negatives: row `i` of `predictions` should score
/// row `i` of `targets` above every other row. Logits are dot products
/// divided by `temperature`.
pub fn info_nce(g: &mut Graph, predictions: Var, targets: Var, temperature: f64) -> Result<Var> {
    let b = g.value(predictions).shape()[0];
    if b < 2 {
        return Err(Error::NoNegatives(b));
    }
    if g.value(predictions).shape() != g.value(targets).shape() {
        return Err(Error::Shape("prediction and target shapes differ".into()));
    }
    let logits = g.matmul(predictions, targets, true);
    let logits = if temperature == 1.0 { logits } else { g.scale(logits, 1.0 / temperature) };
    let diag: Vec<usize> = (0..b).collect();
    Ok(g.softmax_cross_entropy(logits, &diag))
}

/// CPC loss at one anchor: `features` is `[batch, time, dim]`; the GRU
/// context at `anchor` predicts features at `anchor + 1 ..= anchor + horizon`.
/// Averaged over horizons.
pub fn cpc_loss(pass: &mut Pass, head: &CpcHead, features: Var, anchor: usize, temperature: f64) -> Result<Var> {
    let shape = pass.graph.value(features).shape().to_vec();
    let (b, t) = (shape[0], shape[1]);
    if b < 2 {
        return Err(Error::NoNegatives(b));
    }
    let k = head.cfg.horizon;
    if anchor + k >= t {
        return Err(Error::InvalidConfig(format!("anchor {anchor} + horizon {k} beyond {t} timesteps")));
    }
    let context = *head.context(pass, features, anchor).last().unwrap();
    let mut total: Option<Var> = None;
    for step in 1..=k {
        let pred = head.predict(pass, context, step);
        let target = pass.graph.select_mid(features, anchor + step);
        let l = info_nce(&mut pass.graph, pred, target, temperature)?;
        total = Some(match total {
            Some(acc) => pass.graph.add(acc, l),
            None => l,
        });
    }
    Ok(pass.graph.scale(total.unwrap(), 1.0 / k as f64))
}

/// Valid anchor range for a sequence of `time` steps: `0..=time - horizon - 1`.
pub fn sample_anchor(time: usize, horizon: usize, seed: u64) -> Result<usize> {
    if time <= horizon {
        return Err(Error::InvalidConfig(format!("{time} timesteps cannot host horizon {horizon}")));
    }
    Ok(ChaCha8Rng::seed_from_u64(seed).random_range(0..time - horizon))
}

pub fn reconstruction_loss(g: &mut Graph, target: Var, decoded: Var) -> Result<Var> {
    if g.value(target).shape() != g.value(decoded).shape() {
        return Err(Error::Shape(format!(
            "reconstruction {:?} vs target {:?}",
            g.value(decoded).shape(),
            g.value(target).shape()
        )));
    }
    Ok(g.mse(decoded, target))
}

/// NT-Xent over `[2B, d]` embeddings where rows `i` and `i + B` are the two
/// views of one window.
pub fn simclr_loss(g: &mut Graph, embeddings: Var, temperature: f64) -> Result<Var> {
    let n = g.value(embeddings).shape()[0];
    if n % 2 != 0 {
        return Err(Error::Shape(format!("{n} embeddings do not form pairs")));
    }
    let b = n / 2;
    if b < 2 {
        return Err(Error::NoNegatives(b));
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidConfig("temperature must be positive".into()));
    }
    let z = g.l2_normalize(embeddings);
    let sim = g.matmul(z, z, true);
    let sim = g.scale(sim, 1.0 / temperature);
    let sim = g.mask_diagonal(sim);
    let partners: Vec<usize> = (0..n).map(|i| (i + b) % n).collect();
    Ok(g.softmax_cross_entropy(sim, &partners))
}

// ---------------------------------------------------------------------------
// Batches

#[derive(Clone, Debug)]
pub struct MultitaskBatch {
    pub windows: Vec<Window>,
    /// Row-major `[windows, kinds]`.
    pub flags: Vec<f64>,
    pub n_tasks: usize,
}

/// Transformed copy of `w` and its flag row: each kind is applied with
/// probability `flip_prob`, in policy order.
pub fn multitask_example(w: &Window, policy: &MultitaskPolicy, rng: &mut impl Rng) -> Result<(Window, Vec<f64>)> {
    let mut out = w.clone();
    let mut flags = Vec::with_capacity(policy.kinds.len());
    for &kind in &policy.kinds {
        let seed: u64 = rng.random();
        let flip = rng.random_bool(policy.flip_prob);
        if flip {
            out = apply_transform(
                &TransformSpec {
                    kind,
                    params: policy.params,
                    seed,
                },
                &out,
            )?;
        }
        flags.push(if flip { 1.0 } else { 0.0 });
    }
    Ok((out, flags))
}

pub fn make_multitask_batch(windows: &[Window], policy: &MultitaskPolicy, seed: u64) -> Result<MultitaskBatch> {
    if policy.kinds.is_empty() {
        return Err(Error::InvalidConfig("multitask policy needs at least one transform kind".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(windows.len());
    let mut flags = Vec::with_capacity(windows.len() * policy.kinds.len());
    for w in windows {
        let (t, f) = multitask_example(w, policy, &mut rng)?;
        out.push(t);
        flags.extend(f);
    }
    Ok(MultitaskBatch {
        windows: out,
        flags,
        n_tasks: policy.kinds.len(),
    })
}

/// One training example after any pretext-specific augmentation, before
/// normalisation.
#[derive(Clone, Debug, PartialEq)]
pub enum Example {
    Plain(Window),
    Flagged(Window, Vec<f64>),
    Pair(Window, Window),
}

/// Augments `w` for `kind` from a per-example seed.
pub fn materialize(kind: PretextKind, w: &Window, cfg: &ObjectiveConfig, seed: u64) -> Result<Example> {
    Ok(match kind {
        PretextKind::Cpc | PretextKind::Reconstruction => Example::Plain(w.clone()),
        PretextKind::Multitask => {
            let (t, f) = multitask_example(w, &cfg.multitask, &mut ChaCha8Rng::seed_from_u64(seed))?;
            Example::Flagged(t, f)
        }
        PretextKind::Simclr => {
            let (a, b) = make_views(w, &cfg.views, seed)?;
            Example::Pair(a, b)
        }
    })
}

/// Network-ready batch.
#[derive(Clone, Debug)]
pub enum PretextBatch {
    Multitask { x: Tensor, flags: Vec<f64> },
    Cpc { x: Tensor, anchor: usize },
    Reconstruction { x: Tensor },
    /// First half of `x` holds first views, second half the partners.
    Simclr { x: Tensor },
}

impl PretextBatch {
    pub fn len(&self) -> usize {
        match self {
            PretextBatch::Simclr { x } => x.shape()[0] / 2,
            PretextBatch::Multitask { x, .. } | PretextBatch::Cpc { x, .. } | PretextBatch::Reconstruction { x } => {
                x.shape()[0]
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Normalises and stacks examples. `seed` only picks the CPC anchor.
pub fn collate(kind: PretextKind, examples: &[&Example], norm: &NormStats, cfg: &ObjectiveConfig, seed: u64) -> Result<PretextBatch> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("empty pretext batch"));
    }
    let stack = |ws: Vec<Window>| windows_to_tensor(&ws.iter().collect::<Vec<_>>());
    let mismatch = || Error::InvalidConfig(format!("example does not match task {kind}"));
    Ok(match kind {
        PretextKind::Cpc | PretextKind::Reconstruction => {
            let ws = examples
                .iter()
                .map(|e| match e {
                    Example::Plain(w) => Ok(norm.apply(w)),
                    _ => Err(mismatch()),
                })
                .collect::<Result<Vec<_>>>()?;
            let x = stack(ws)?;
            if kind == PretextKind::Cpc {
                let anchor = sample_anchor(x.shape()[2], cfg.cpc.horizon, seed)?;
                PretextBatch::Cpc { x, anchor }
            } else {
                PretextBatch::Reconstruction { x }
            }
        }
        PretextKind::Multitask => {
            let mut ws = Vec::with_capacity(examples.len());
            let mut flags = Vec::new();
            for e in examples {
                let Example::Flagged(w, f) = e else { return Err(mismatch()) };
                ws.push(norm.apply(w));
                flags.extend_from_slice(f);
            }
            PretextBatch::Multitask { x: stack(ws)?, flags }
        }
        PretextKind::Simclr => {
            let mut first = Vec::with_capacity(examples.len() * 2);
            let mut second = Vec::with_capacity(examples.len());
            for e in examples {
                let Example::Pair(a, b) = e else { return Err(mismatch()) };
                first.push(norm.apply(a));
                second.push(norm.apply(b));
            }
            first.extend(second);
            PretextBatch::Simclr { x: stack(first)? }
        }
    })
}

// ---------------------------------------------------------------------------
// Models

#[derive(Clone, Debug)]
pub enum PretextHead {
    Multitask(MultitaskHead),
    Cpc(CpcHead),
    Reconstruction(Decoder),
    Simclr(ProjectionHead),
}

/// Shared encoder plus the head for one pretext task.
#[derive(Clone, Debug)]
pub struct PretextModel {
    pub kind: PretextKind,
    pub encoder: Encoder,
    pub head: PretextHead,
    pub cfg: ObjectiveConfig,
}

impl PretextModel {
    pub fn new(kind: PretextKind, encoder_cfg: EncoderConfig, cfg: ObjectiveConfig) -> Result<Self> {
        cfg.validate()?;
        let encoder = Encoder::new(encoder_cfg)?;
        let ec = &encoder.cfg;
        let head = match kind {
            PretextKind::Multitask => PretextHead::Multitask(MultitaskHead {
                input_dim: ec.representation_dim,
                n_tasks: cfg.multitask.kinds.len(),
            }),
            PretextKind::Cpc => PretextHead::Cpc(CpcHead {
                feature_dim: ec.feature_dim(),
                cfg: cfg.cpc.clone(),
            }),
            PretextKind::Reconstruction => PretextHead::Reconstruction(Decoder::mirror(&ec.channels, &ec.kernels)),
            PretextKind::Simclr => PretextHead::Simclr(ProjectionHead {
                input_dim: ec.representation_dim,
                cfg: cfg.projection.clone(),
            }),
        };
        Ok(Self {
            kind,
            encoder,
            head,
            cfg,
        })
    }

    /// Encoder weights come from `seed` alone, so two tasks built with the
    /// same seed start from the same encoder.
    pub fn init_params(&self, seed: u64) -> ParameterSet {
        let mut params = ParameterSet::new();
        self.encoder.init_params(&mut params, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, &[0x4845_4144]));
        match &self.head {
            PretextHead::Multitask(h) => h.init_params(&mut params, &mut rng),
            PretextHead::Cpc(h) => h.init_params(&mut params, &mut rng),
            PretextHead::Reconstruction(h) => h.init_params(&mut params, &mut rng),
            PretextHead::Simclr(h) => h.init_params(&mut params, &mut rng),
        }
        params
    }

    /// Builds the loss for `batch` on `pass`.
    pub fn loss(&self, pass: &mut Pass, params: &ParameterSet, batch: &PretextBatch, train: bool) -> Result<Var> {
        match (&self.head, batch) {
            (PretextHead::Multitask(h), PretextBatch::Multitask { x, flags }) => {
                let xi = pass.input(x.clone());
                let out = self.encoder.forward(pass, params, xi, train)?;
                let logits = h.forward(pass, out.pooled);
                multitask_loss(&mut pass.graph, logits, flags)
            }
            (PretextHead::Cpc(h), PretextBatch::Cpc { x, anchor }) => {
                let xi = pass.input(x.clone());
                let out = self.encoder.forward(pass, params, xi, train)?;
                let feats = pass.graph.swap_last(out.features);
                cpc_loss(pass, h, feats, *anchor, self.cfg.cpc_temperature)
            }
            (PretextHead::Reconstruction(h), PretextBatch::Reconstruction { x }) => {
                let xi = pass.input(x.clone());
                let out = self.encoder.forward(pass, params, xi, train)?;
                let decoded = h.forward(pass, params, out.features, train);
                reconstruction_loss(&mut pass.graph, xi, decoded)
            }
            (PretextHead::Simclr(h), PretextBatch::Simclr { x }) => {
                let xi = pass.input(x.clone());
                let out = self.encoder.forward(pass, params, xi, train)?;
                let z = h.forward(pass, out.pooled);
                simclr_loss(&mut pass.graph, z, self.cfg.simclr_temperature)
            }
            _ => Err(Error::InvalidConfig(format!("batch does not match task {}", self.kind))),
        }
    }
}
