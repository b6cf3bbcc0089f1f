//! Amodal expander: a residual regressor that maps a modal proposal box `b`,
//! its modal refinement delta `Δb` and an object feature `f` to an amodal box
//! `decode(E(Δb, f), b)`.
//!
//! `E` is a two-layer MLP over `concat(f, pe(Δb))` with ReLU and inverted
//! dropout on the hidden layer. Gradients are derived by hand.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, BBox, BoxDelta};

/// Width of the delta encoding.
pub const PE_DIM: usize = 256;
/// Encoding width per delta component.
pub const PE_PER_COMPONENT: usize = PE_DIM / 4;
pub const PE_BASE: f64 = 10_000.0;
pub const DEFAULT_HIDDEN: usize = 256;

/// Sinusoidal encoding of a box delta: for component `c` and frequency
/// index `j < 32`, slot `64c + 2j` holds `sin(v / 10000^(2j/64))` and slot
/// `64c + 2j + 1` the cosine.
pub fn encode_delta_pe(d: &BoxDelta) -> Vec<f64> {
    let mut out = Vec::with_capacity(PE_DIM);
    for v in d.to_array() {
        for j in 0..PE_PER_COMPONENT / 2 {
            let arg = v / PE_BASE.powf(2.0 * j as f64 / PE_PER_COMPONENT as f64);
            out.push(arg.sin());
            out.push(arg.cos());
        }
    }
    out
}

/// Smooth-L1 summed over components, with its gradient w.r.t. `pred`.
pub fn smooth_l1(pred: &[f64; 4], target: &[f64; 4], beta: f64) -> (f64, [f64; 4]) {
    let mut loss = 0.0;
    let mut grad = [0.0; 4];
    for k in 0..4 {
        let e = pred[k] - target[k];
        if e.abs() < beta {
            loss += 0.5 * e * e / beta;
            grad[k] = e / beta;
        } else {
            loss += e.abs() - 0.5 * beta;
            grad[k] = e.signum();
        }
    }
    (loss, grad)
}

/// MLP weights. `w1` is `in_dim x hidden`, `w2` is `hidden x 4`, both row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpanderParams {
    pub feature_dim: usize,
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ExpanderParams {
    pub fn in_dim(&self) -> usize {
        self.feature_dim + PE_DIM
    }

    pub fn zeros(feature_dim: usize, hidden: usize) -> Self {
        let in_dim = feature_dim + PE_DIM;
        ExpanderParams {
            feature_dim,
            hidden,
            w1: vec![0.0; in_dim * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * 4],
            b2: vec![0.0; 4],
        }
    }

    /// He-uniform first layer, zero second layer: the initial model is the
    /// identity on boxes.
    pub fn init(feature_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(feature_dim, hidden);
        let limit = (6.0 / p.in_dim() as f64).sqrt();
        for w in &mut p.w1 {
            *w = rng.random_range(-limit..limit);
        }
        p
    }

    pub fn check(&self) -> Result<()> {
        let shapes = [
            (self.w1.len(), self.in_dim() * self.hidden),
            (self.b1.len(), self.hidden),
            (self.w2.len(), self.hidden * 4),
            (self.b2.len(), 4),
        ];
        for (got, expected) in shapes {
            if got != expected {
                return Err(Error::DimensionMismatch { expected, got });
            }
        }
        if !self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidConfig("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn tensors(&self) -> [&Vec<f64>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ExpanderParams) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    pub fn input(&self, feature: &[f64], delta: &BoxDelta) -> Result<Vec<f64>> {
        if feature.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                got: feature.len(),
            });
        }
        let mut x = feature.to_vec();
        x.extend(encode_delta_pe(delta));
        Ok(x)
    }

    /// Inference: predicted amodal delta relative to the proposal.
    pub fn forward(&self, feature: &[f64], delta: &BoxDelta) -> Result<[f64; 4]> {
        let x = self.input(feature, delta)?;
        Ok(self.run(&x, None).out)
    }

    /// Training-mode forward with freshly drawn inverted dropout.
    pub fn forward_train(
        &self,
        feature: &[f64],
        delta: &BoxDelta,
        dropout_prob: f64,
        rng: &mut impl Rng,
    ) -> Result<[f64; 4]> {
        let x = self.input(feature, delta)?;
        let mask = dropout_mask(rng, self.hidden, dropout_prob);
        Ok(self.run(&x, Some(&mask)).out)
    }

    /// Hidden activations after ReLU and the optional dropout scaling.
    pub fn hidden_activations(&self, x: &[f64], mask: Option<&[f64]>) -> Vec<f64> {
        self.run(x, mask).act
    }

    fn run(&self, x: &[f64], mask: Option<&[f64]>) -> Trace {
        let h = self.hidden;
        let mut pre = self.b1.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.w1[i * h..(i + 1) * h];
            for (p, w) in pre.iter_mut().zip(row) {
                *p += xi * w;
            }
        }
        let act: Vec<f64> = pre
            .iter()
            .enumerate()
            .map(|(j, &z)| z.max(0.0) * mask.map_or(1.0, |m| m[j]))
            .collect();
        let mut out = [self.b2[0], self.b2[1], self.b2[2], self.b2[3]];
        for (j, &a) in act.iter().enumerate() {
            for (k, o) in out.iter_mut().enumerate() {
                *o += a * self.w2[j * 4 + k];
            }
        }
        Trace { pre, act, out }
    }

    /// Accumulates into `grads` the gradient of a loss whose gradient w.r.t.
    /// the output is `g_out`.
    fn backward(&self, x: &[f64], mask: Option<&[f64]>, t: &Trace, g_out: &[f64; 4], grads: &mut ExpanderParams) {
        let h = self.hidden;
        for k in 0..4 {
            grads.b2[k] += g_out[k];
        }
        let mut g_pre = vec![0.0; h];
        for j in 0..h {
            let mut ga = 0.0;
            for k in 0..4 {
                grads.w2[j * 4 + k] += t.act[j] * g_out[k];
                ga += self.w2[j * 4 + k] * g_out[k];
            }
            if t.pre[j] > 0.0 {
                g_pre[j] = ga * mask.map_or(1.0, |m| m[j]);
            }
        }
        for j in 0..h {
            grads.b1[j] += g_pre[j];
        }
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &mut grads.w1[i * h..(i + 1) * h];
            for (g, gp) in row.iter_mut().zip(&g_pre) {
                *g += xi * gp;
            }
        }
    }

    pub fn to_json(&self, config: Option<&TrainConfig>) -> String {
        let file = ParamsFile {
            w1_shape: [self.in_dim(), self.hidden],
            w2_shape: [self.hidden, 4],
            params: self.clone(),
            config: config.cloned(),
        };
        crate::dataset::canonical_json(&file)
    }

    pub fn from_json(s: &str) -> Result<(ExpanderParams, Option<TrainConfig>)> {
        let file: ParamsFile = serde_json::from_str(s)?;
        file.params.check()?;
        if file.w1_shape != [file.params.in_dim(), file.params.hidden] || file.w2_shape != [file.params.hidden, 4] {
            return Err(Error::InvalidConfig("declared shapes disagree with parameters".into()));
        }
        Ok((file.params, file.config))
    }

    pub fn save(&self, path: impl AsRef<Path>, config: Option<&TrainConfig>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json(config)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(ExpanderParams, Option<TrainConfig>)> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamsFile {
    w1_shape: [usize; 2],
    w2_shape: [usize; 2],
    #[serde(flatten)]
    params: ExpanderParams,
    #[serde(default)]
    config: Option<TrainConfig>,
}

struct Trace {
    pre: Vec<f64>,
    act: Vec<f64>,
    out: [f64; 4],
}

/// Inverted-dropout mask: 0 with probability `p`, otherwise `1 / (1 - p)`.
pub fn dropout_mask(rng: &mut impl Rng, hidden: usize, p: f64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..hidden)
        .map(|_| if p > 0.0 && rng.random_bool(p) { 0.0 } else { keep })
        .collect()
}

/// A region proposal with its (optional) ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalSample {
    pub proposal: BBox,
    pub feature: Vec<f64>,
    pub modal_delta: BoxDelta,
    pub modal_gt: Option<BBox>,
    pub amodal_gt: Option<BBox>,
    pub matched: bool,
}

/// Space the regression loss is computed in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpace {
    /// Delta of the amodal target against the proposal.
    #[default]
    Delta,
    /// Raw `(x, y, w, h)` of the decoded box.
    Box,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    WarmupCosine,
    Constant,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    #[default]
    Sgd,
    Momentum { momentum: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub dropout_prob: f64,
    pub schedule: Schedule,
    pub warmup_iterations: usize,
    pub optimizer: Optimizer,
    pub match_iou: f64,
    pub smooth_l1_beta: f64,
    pub loss_space: LossSpace,
    pub hidden: usize,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.01,
            iterations: 2000,
            batch_size: 4,
            dropout_prob: 0.2,
            schedule: Schedule::WarmupCosine,
            warmup_iterations: 100,
            optimizer: Optimizer::Sgd,
            match_iou: 0.5,
            smooth_l1_beta: 1.0,
            loss_space: LossSpace::Delta,
            hidden: DEFAULT_HIDDEN,
            log_every: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return bad("dropout_prob must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.hidden == 0 || self.log_every == 0 {
            return bad("batch_size, hidden and log_every must be positive");
        }
        if !(self.smooth_l1_beta > 0.0) {
            return bad("smooth_l1_beta must be positive");
        }
        if let Optimizer::Momentum { momentum } = self.optimizer {
            if !(0.0..1.0).contains(&momentum) {
                return bad("momentum must lie in [0, 1)");
            }
        }
        Ok(())
    }

    /// Learning rate at step `it` (0-based).
    pub fn learning_rate(&self, it: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.base_lr,
            Schedule::WarmupCosine => {
                let warm = if it < self.warmup_iterations {
                    let a = it as f64 / self.warmup_iterations as f64;
                    0.001 * (1.0 - a) + a
                } else {
                    1.0
                };
                let progress = it as f64 / self.iterations.max(1) as f64;
                self.base_lr * warm * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

/// Index of the ground-truth box with the highest IoU, if it reaches
/// `match_iou`. Ties go to the lower index. Several proposals may share a box.
pub fn match_proposals(proposals: &[BBox], gts: &[BBox], match_iou: f64) -> Vec<Option<usize>> {
    proposals
        .iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                let v = geometry::iou(p, gt);
                if v >= match_iou && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            best.map(|(g, _)| g)
        })
        .collect()
}

/// Which ground-truth box proposals are matched against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchRule {
    Modal,
    /// Comparison only.
    Amodal,
}

/// Pairs proposals with ground truth under `rule`. Matched samples carry
/// both GT boxes of the matched object.
pub fn build_samples(
    proposals: &[(BBox, Vec<f64>, BoxDelta)],
    modal_gts: &[BBox],
    amodal_gts: &[BBox],
    rule: MatchRule,
    match_iou: f64,
) -> Vec<ProposalSample> {
    let boxes: Vec<BBox> = proposals.iter().map(|p| p.0).collect();
    let against = match rule {
        MatchRule::Modal => modal_gts,
        MatchRule::Amodal => amodal_gts,
    };
    match_proposals(&boxes, against, match_iou)
        .into_iter()
        .zip(proposals)
        .map(|(m, (b, f, d))| ProposalSample {
            proposal: *b,
            feature: f.clone(),
            modal_delta: *d,
            modal_gt: m.map(|g| modal_gts[g]),
            amodal_gt: m.map(|g| amodal_gts[g]),
            matched: m.is_some(),
        })
        .collect()
}

fn box_array(b: &BBox) -> [f64; 4] {
    [b.x, b.y, b.w, b.h]
}

/// Loss of one sample and its gradient w.r.t. the predicted delta.
fn sample_loss(out: &[f64; 4], s: &ProposalSample, beta: f64, space: LossSpace) -> Result<(f64, [f64; 4])> {
    let target = s.amodal_gt.ok_or(Error::EmptyBatch)?;
    let b = s.proposal;
    match space {
        LossSpace::Delta => {
            let t = geometry::encode_delta(&target, &b)?.to_array();
            Ok(smooth_l1(out, &t, beta))
        }
        LossSpace::Box => {
            let pred = geometry::decode_delta(&BoxDelta::from_array(*out), &b);
            let (loss, g) = smooth_l1(&box_array(&pred), &box_array(&target), beta);
            // x = cx + dx*w - w*e^dw/2, w = bw*e^dw (likewise for y, h)
            let (ew, eh) = (b.w * out[2].exp(), b.h * out[3].exp());
            Ok((
                loss,
                [
                    g[0] * b.w,
                    g[1] * b.h,
                    -g[0] * ew / 2.0 + g[2] * ew,
                    -g[1] * eh / 2.0 + g[3] * eh,
                ],
            ))
        }
    }
}

/// Mean batch loss and exact parameter gradients with fixed dropout masks
/// (one per sample; `None` for eval mode).
pub fn loss_and_grads_with_masks(
    params: &ExpanderParams,
    batch: &[ProposalSample],
    masks: Option<&[Vec<f64>]>,
    beta: f64,
    space: LossSpace,
) -> Result<(f64, ExpanderParams)> {
    let batch: Vec<(usize, &ProposalSample)> = batch.iter().enumerate().filter(|(_, s)| s.matched).collect();
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = batch.len() as f64;
    let mut grads = ExpanderParams::zeros(params.feature_dim, params.hidden);
    let mut total = 0.0;
    for (i, s) in batch {
        let x = params.input(&s.feature, &s.modal_delta)?;
        let mask = masks.map(|m| m[i].as_slice());
        let trace = params.run(&x, mask);
        let (loss, g) = sample_loss(&trace.out, s, beta, space)?;
        total += loss;
        let g = g.map(|v| v / n);
        params.backward(&x, mask, &trace, &g, &mut grads);
    }
    Ok((total / n, grads))
}

/// Training-mode loss and gradients with freshly drawn dropout masks.
pub fn loss_and_grads(
    params: &ExpanderParams,
    batch: &[ProposalSample],
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<(f64, ExpanderParams)> {
    let masks: Vec<Vec<f64>> = batch
        .iter()
        .map(|_| dropout_mask(rng, params.hidden, config.dropout_prob))
        .collect();
    loss_and_grads_with_masks(params, batch, Some(&masks), config.smooth_l1_beta, config.loss_space)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ExpanderParams,
    /// `(iteration, mean loss since the previous entry)`.
    pub loss_curve: Vec<(usize, f64)>,
}

/// Minibatch gradient descent on the matched samples. Batches are drawn
/// with replacement from a stream seeded by `config.seed`.
pub fn train(samples: &[ProposalSample], feature_dim: usize, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let pool: Vec<&ProposalSample> = samples.iter().filter(|s| s.matched).collect();
    if pool.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ExpanderParams::init(feature_dim, config.hidden, &mut rng);
    let mut velocity = ExpanderParams::zeros(feature_dim, config.hidden);
    let mut curve = Vec::new();
    let (mut window_sum, mut window_n) = (0.0, 0usize);
    for it in 0..config.iterations {
        let batch: Vec<ProposalSample> = (0..config.batch_size)
            .map(|_| pool[rng.random_range(0..pool.len())].clone())
            .collect();
        let (loss, grads) = loss_and_grads(&params, &batch, config, &mut rng)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration: it, loss });
        }
        let lr = config.learning_rate(it);
        match config.optimizer {
            Optimizer::Sgd => params.axpy(-lr, &grads),
            Optimizer::Momentum { momentum } => {
                for (v, g) in velocity.tensors_mut().into_iter().zip(grads.tensors()) {
                    for (vi, gi) in v.iter_mut().zip(g) {
                        *vi = momentum * *vi + gi;
                    }
                }
                params.axpy(-lr, &velocity);
            }
        }
        window_sum += loss;
        window_n += 1;
        if (it + 1) % config.log_every == 0 || it + 1 == config.iterations {
            curve.push((it + 1, window_sum / window_n as f64));
            window_sum = 0.0;
            window_n = 0;
        }
    }
    params.check()?;
    Ok(TrainOutcome {
        params,
        loss_curve: curve,
    })
}

/// A detection to expand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpanderInput {
    pub proposal: BBox,
    pub feature: Vec<f64>,
    pub modal_delta: BoxDelta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpandedBox {
    pub modal_box: BBox,
    pub amodal_box: BBox,
}

/// Amodal boxes for `inputs`, in order. The modal box reported is the
/// proposal refined by its modal delta.
pub fn expand(params: &ExpanderParams, inputs: &[ExpanderInput]) -> Result<Vec<ExpandedBox>> {
    inputs
        .iter()
        .map(|d| {
            let out = params.forward(&d.feature, &d.modal_delta)?;
            Ok(ExpandedBox {
                modal_box: geometry::decode_delta(&d.modal_delta, &d.proposal),
                amodal_box: geometry::decode_delta(&BoxDelta::from_array(out), &d.proposal),
            })
        })
        .collect()
}

/// Synthetic task: the amodal box is the modal box scaled by `scale` about
/// its centre; proposals are jittered modal boxes, the modal delta is exact,
/// and the feature carries `ln(scale)` followed by noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleTask {
    pub scale: f64,
    pub feature_dim: usize,
    /// Relative jitter of proposal centre and size.
    pub jitter: f64,
}

impl Default for ScaleTask {
    fn default() -> Self {
        ScaleTask {
            scale: 1.5,
            feature_dim: 8,
            jitter: 0.05,
        }
    }
}

impl ScaleTask {
    pub fn sample(&self, rng: &mut impl Rng) -> ProposalSample {
        let w = rng.random_range(16.0..200.0);
        let h = rng.random_range(16.0..200.0);
        let modal = BBox::from_center(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0), w, h);
        let j = self.jitter;
        let proposal = BBox::from_center(
            modal.cx() + rng.random_range(-j..=j) * w,
            modal.cy() + rng.random_range(-j..=j) * h,
            w * (1.0 + rng.random_range(-j..=j)),
            h * (1.0 + rng.random_range(-j..=j)),
        );
        let mut feature = vec![self.scale.ln()];
        feature.extend((1..self.feature_dim).map(|_| rng.random_range(-1.0..1.0)));
        feature.truncate(self.feature_dim);
        ProposalSample {
            proposal,
            feature,
            modal_delta: geometry::encode_delta(&modal, &proposal).expect("positive sizes"),
            modal_gt: Some(modal),
            amodal_gt: Some(modal.scaled_about_center(self.scale)),
            matched: true,
        }
    }

    pub fn samples(&self, n: usize, seed: u64) -> Vec<ProposalSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sample(&mut rng)).collect()
    }
}

/// Mean IoU between expanded boxes and the amodal ground truth of `samples`.
pub fn mean_amodal_iou(params: &ExpanderParams, samples: &[ProposalSample]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for s in samples.iter().filter(|s| s.matched) {
        let out = params.forward(&s.feature, &s.modal_delta)?;
        let pred = geometry::decode_delta(&BoxDelta::from_array(out), &s.proposal);
        total += geometry::iou(&pred, &s.amodal_gt.expect("matched"));
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(total / n as f64)
}

/// A scene with `n` objects whose amodal boxes are at least `min_scale`
/// times their modal boxes per side, plus one jittered modal proposal per
/// object. Returns `(proposals, modal_gts, amodal_gts)`.
pub fn occluded_scene(
    rng: &mut impl Rng,
    n: usize,
    min_scale: f64,
) -> (Vec<(BBox, Vec<f64>, BoxDelta)>, Vec<BBox>, Vec<BBox>) {
    let mut proposals = Vec::with_capacity(n);
    let mut modal = Vec::with_capacity(n);
    let mut amodal = Vec::with_capacity(n);
    for _ in 0..n {
        let a = BBox::from_center(
            rng.random_range(0.0..640.0),
            rng.random_range(0.0..480.0),
            rng.random_range(40.0..300.0),
            rng.random_range(40.0..300.0),
        );
        let s = rng.random_range(min_scale..min_scale + 1.0);
        let (mw, mh) = (a.w / s, a.h / s);
        // the visible part sits anywhere inside the full extent
        let m = BBox::new(
            a.x + rng.random_range(0.0..=a.w - mw),
            a.y + rng.random_range(0.0..=a.h - mh),
            mw,
            mh,
        );
        let p = BBox::from_center(
            m.cx() + rng.random_range(-0.08..0.08) * mw,
            m.cy() + rng.random_range(-0.08..0.08) * mh,
            mw * rng.random_range(0.9..1.1),
            mh * rng.random_range(0.9..1.1),
        );
        let d = geometry::encode_delta(&m, &p).expect("positive sizes");
        proposals.push((p, vec![s.ln()], d));
        modal.push(m);
        amodal.push(a);
    }
    (proposals, modal, amodal)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_sample(feature: Vec<f64>, proposal: BBox, target: BBox) -> ProposalSample {
        ProposalSample {
            proposal,
            feature,
            modal_delta: BoxDelta::new(0.1, -0.2, 0.05, 0.3),
            modal_gt: Some(proposal),
            amodal_gt: Some(target),
            matched: true,
        }
    }

    #[test]
    fn pe_examples() {
        let z = encode_delta_pe(&BoxDelta::ZERO);
        assert_eq!(z.len(), PE_DIM);
        for (i, v) in z.iter().enumerate() {
            assert_eq!(*v, if i % 2 == 0 { 0.0 } else { 1.0 });
        }
        let e = encode_delta_pe(&BoxDelta::new(1.0, 0.0, 0.0, 0.0));
        for j in 0..32 {
            let want = (1.0 / 10000f64.powf(2.0 * j as f64 / 64.0)).sin();
            assert!((e[2 * j] - want).abs() < 1e-15);
        }
        assert!((e[0] - 1f64.sin()).abs() < 1e-15);
        assert!((e[2] - (1.0 / 10000f64.powf(2.0 / 64.0)).sin()).abs() < 1e-15);
        let big = encode_delta_pe(&BoxDelta::new(-7.0, 3.0, 100.0, -0.5));
        assert!(big.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(&[1.0; 4], &[1.0; 4], 1.0).0, 0.0);
        let (l, g) = smooth_l1(&[2.0, 0.0, 0.0, 0.0], &[0.0; 4], 1.0);
        assert_eq!(l, 1.5);
        assert_eq!(g, [1.0, 0.0, 0.0, 0.0]);
        let (l, g) = smooth_l1(&[0.5, -0.5, 0.0, 0.0], &[0.0; 4], 1.0);
        assert_eq!(l, 0.25);
        assert_eq!(g, [0.5, -0.5, 0.0, 0.0]);
        // continuity at |e| = beta
        let below = smooth_l1(&[1.0 - 1e-12, 0.0, 0.0, 0.0], &[0.0; 4], 1.0);
        let at = smooth_l1(&[1.0, 0.0, 0.0, 0.0], &[0.0; 4], 1.0);
        assert!((below.0 - at.0).abs() < 1e-11 && (below.1[0] - at.1[0]).abs() < 1e-11);
        assert_eq!(smooth_l1(&[-3.0, 0.0, 0.0, 0.0], &[0.0; 4], 1.0).1[0], -1.0);
    }

    #[test]
    fn zero_final_layer_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ExpanderParams::init(3, 16, &mut rng);
        let input = ExpanderInput {
            proposal: BBox::new(10.0, 20.0, 30.0, 40.0),
            feature: vec![0.3, -1.0, 2.0],
            modal_delta: BoxDelta::new(0.2, 0.1, -0.3, 0.4),
        };
        let out = expand(&p, &[input.clone()]).unwrap();
        assert_eq!(out[0].amodal_box, input.proposal);
        assert!(matches!(
            p.forward(&[1.0], &BoxDelta::ZERO),
            Err(Error::DimensionMismatch { expected: 3, got: 1 })
        ));
        let s = toy_sample(vec![0.0; 3], input.proposal, input.proposal);
        let (loss, grads) = loss_and_grads_with_masks(&p, &[s], None, 1.0, LossSpace::Delta).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.tensors().iter().all(|t| t.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn hand_computed_single_hidden_unit() {
        let mut p = ExpanderParams::zeros(1, 1);
        // only the feature and the first sine slot feed the hidden unit
        p.w1[0] = 2.0;
        p.w1[1] = 3.0;
        p.b1[0] = -0.5;
        p.w2 = vec![1.0, -1.0, 0.5, 0.0];
        p.b2 = vec![0.0, 0.0, 0.1, 0.2];
        let d = BoxDelta::new(0.4, 0.0, 0.0, 0.0);
        let z: f64 = 2.0 * 0.7 + 3.0 * 0.4f64.sin() - 0.5;
        let out = p.forward(&[0.7], &d).unwrap();
        assert!((out[0] - z).abs() < 1e-15);
        assert!((out[1] + z).abs() < 1e-15);
        assert!((out[2] - (0.5 * z + 0.1)).abs() < 1e-15);
        assert_eq!(out[3], 0.2);
        // relu cuts a negative pre-activation
        let out = p.forward(&[-2.0], &d).unwrap();
        assert_eq!(out, [0.0, 0.0, 0.1, 0.2]);
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ExpanderParams::init(2, 8, &mut rng);
        p.w2.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        let d = BoxDelta::new(0.1, 0.2, 0.3, 0.4);
        assert_eq!(p.forward(&[1.0, 2.0], &d).unwrap(), p.forward(&[1.0, 2.0], &d).unwrap());
    }

    #[test]
    fn matching_examples() {
        let gt = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(match_proposals(&[gt], &[gt], 0.5), vec![Some(0)]);
        // IoU 0.3
        let low = BBox::new(0.0, 0.0, 3.0, 10.0);
        assert_eq!(match_proposals(&[low], &[gt], 0.5), vec![None]);
        let a = BBox::new(0.0, 0.0, 7.0, 10.0);
        let b = BBox::new(0.0, 0.0, 6.0, 10.0);
        assert_eq!(match_proposals(&[a, b], &[gt], 0.5), vec![Some(0), Some(0)]);
        let samples = build_samples(
            &[(low, vec![], BoxDelta::ZERO)],
            &[gt],
            &[gt],
            MatchRule::Modal,
            0.5,
        );
        assert!(!samples[0].matched);
        let p = ExpanderParams::zeros(0, 4);
        assert!(matches!(
            loss_and_grads_with_masks(&p, &samples, None, 1.0, LossSpace::Delta),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let task = ScaleTask::default();
        let samples = task.samples(16, 0);
        let cfg = TrainConfig {
            base_lr: 0.0,
            iterations: 20,
            hidden: 16,
            ..Default::default()
        };
        let out = train(&samples, task.feature_dim, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        assert_eq!(out.params, ExpanderParams::init(task.feature_dim, 16, &mut rng));
    }

    #[test]
    fn training_is_deterministic_and_logs() {
        let task = ScaleTask::default();
        let samples = task.samples(64, 1);
        let cfg = TrainConfig {
            iterations: 250,
            hidden: 32,
            ..Default::default()
        };
        let a = train(&samples, task.feature_dim, &cfg).unwrap();
        let b = train(&samples, task.feature_dim, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        let its: Vec<usize> = a.loss_curve.iter().map(|e| e.0).collect();
        assert_eq!(its, vec![100, 200, 250]);
    }

    #[test]
    fn divergence_is_reported() {
        let task = ScaleTask::default();
        let samples = task.samples(16, 2);
        let cfg = TrainConfig {
            base_lr: 1e150,
            schedule: Schedule::Constant,
            loss_space: LossSpace::Box,
            iterations: 50,
            hidden: 8,
            ..Default::default()
        };
        assert!(matches!(
            train(&samples, task.feature_dim, &cfg),
            Err(Error::Diverged { .. }) | Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn schedule_shape() {
        let cfg = TrainConfig::default();
        assert!((cfg.learning_rate(0) - 0.01 * 0.001).abs() < 1e-15);
        assert!(cfg.learning_rate(100) > cfg.learning_rate(50));
        assert!(cfg.learning_rate(1999) < 1e-5);
        assert!(cfg.learning_rate(1000) < cfg.learning_rate(500));
    }

    #[test]
    fn params_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = ExpanderParams::init(2, 4, &mut rng);
        let cfg = TrainConfig::default();
        let (q, c) = ExpanderParams::from_json(&p.to_json(Some(&cfg))).unwrap();
        assert_eq!(p, q);
        assert_eq!(c, Some(cfg));
    }

    #[test]
    fn expand_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ExpanderParams::init(1, 8, &mut rng);
        p.w2.iter_mut().for_each(|w| *w = rng.random_range(-0.1..0.1));
        let inputs: Vec<ExpanderInput> = (0..5)
            .map(|i| ExpanderInput {
                proposal: BBox::new(i as f64, 0.0, 10.0 + i as f64, 12.0),
                feature: vec![i as f64 * 0.1],
                modal_delta: BoxDelta::new(0.01 * i as f64, 0.0, 0.0, 0.0),
            })
            .collect();
        let fwd = expand(&p, &inputs).unwrap();
        let rev: Vec<ExpanderInput> = inputs.iter().rev().cloned().collect();
        let mut back = expand(&p, &rev).unwrap();
        back.reverse();
        assert_eq!(fwd, back);
    }
}
