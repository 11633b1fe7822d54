//! Gradient computation, the AdamW optimizer, and the fit loop.

use serde::{Deserialize, Serialize};

use crate::data::{self, AnnotationPair};
use crate::numerics::SeededRng;
use crate::{Error, Result};

use super::{softmax2, FeatureCache, Features, MultiHeadModel, Net, SingleHeadModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    /// Evaluations without dev improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    /// Epochs between dev evaluations.
    pub eval_every: usize,
    /// Weight the loss by inverse class frequency (multi-head training only).
    pub class_weighting: bool,
    /// Halve the learning rate whenever dev F1 drops below the previous
    /// evaluation's value.
    pub lr_halving: bool,
    /// Duplicate minority-class examples to parity before each epoch
    /// (multi-head training only).
    pub oversample: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            peak_lr: 2e-5,
            batch_size: 32,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-6,
            grad_clip: 0.0,
            patience: 5,
            max_epochs: 30,
            eval_every: 1,
            class_weighting: true,
            lr_halving: true,
            oversample: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.peak_lr > 0.0) {
            problems.push(format!("peak_lr must be positive, got {}", self.peak_lr));
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be at least 1".to_string());
        }
        if self.weight_decay < 0.0 {
            problems.push(format!(
                "weight_decay must be nonnegative, got {}",
                self.weight_decay
            ));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                problems.push(format!("{name} must be in [0, 1), got {beta}"));
            }
        }
        if !(self.eps > 0.0) {
            problems.push(format!("eps must be positive, got {}", self.eps));
        }
        if self.grad_clip < 0.0 {
            problems.push(format!(
                "grad_clip must be nonnegative (0 disables), got {}",
                self.grad_clip
            ));
        }
        if self.patience == 0 {
            problems.push("patience must be at least 1".to_string());
        }
        if self.max_epochs == 0 {
            problems.push("max_epochs must be at least 1".to_string());
        }
        if self.eval_every == 0 {
            problems.push("eval_every must be at least 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// What a finished fit looked like.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epochs_run: usize,
    pub evaluations: usize,
    /// Dev F1 of the returned parameter snapshot.
    pub best_dev_f1: f64,
    /// Learning rate in effect when training stopped.
    pub final_lr: f64,
    /// Evaluations since the last dev improvement.
    pub stalled_evaluations: usize,
    pub halvings: usize,
    /// Seed of the rng substream that drove shuffling and dropout.
    pub rng_seed: u64,
    /// Summed batch losses per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Inverse-frequency class weights `w_c = N / (2 N_c)`; a class absent from
/// `labels` gets weight 1.
pub fn class_weights(labels: &[u8]) -> [f64; 2] {
    let n = labels.len() as f64;
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let neg = n - pos;
    let weight = |count: f64| if count > 0.0 { n / (2.0 * count) } else { 1.0 };
    [weight(neg), weight(pos)]
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

/// Per-tensor gradient buffers aligned with `Net::tensors()`.
struct Grads(Vec<Vec<f64>>);

impl Grads {
    fn like(net: &Net) -> Grads {
        Grads(net.tensors().iter().map(|t| vec![0.0; t.len()]).collect())
    }

    fn zero(&mut self) {
        for t in &mut self.0 {
            t.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    fn global_norm(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|t| t.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

struct Scratch {
    pre: Vec<f64>,
    rep: Vec<f64>,
    dpre: Vec<f64>,
}

impl Scratch {
    fn new(hidden_dim: usize) -> Scratch {
        Scratch {
            pre: vec![0.0; hidden_dim],
            rep: vec![0.0; hidden_dim],
            dpre: vec![0.0; hidden_dim],
        }
    }
}

/// Forward and backward pass for one example, accumulating into `grads`.
/// Returns the example's weighted cross-entropy loss. `mask` carries the
/// inverted-dropout scaling; `None` means eval-mode activations.
fn forward_backward(
    net: &Net,
    feats: &Features,
    head_idx: usize,
    label: u8,
    weight: f64,
    mask: Option<&[f64]>,
    grads: &mut Grads,
    scratch: &mut Scratch,
) -> f64 {
    let hidden = net.encoder.cfg.hidden_dim;
    let Scratch { pre, rep, dpre } = scratch;

    pre.copy_from_slice(&net.encoder.b);
    for (&i, &v) in feats.idx.iter().zip(&feats.val) {
        let row = net.encoder.w.row(i as usize);
        for (p, wj) in pre.iter_mut().zip(row) {
            *p += v * wj;
        }
    }
    for j in 0..hidden {
        let m = mask.map_or(1.0, |m| m[j]);
        rep[j] = pre[j].max(0.0) * m;
    }

    let head = &net.heads[head_idx];
    let z = head.logits(rep);
    let p = softmax2(z);
    let loss = -weight * p[label as usize].max(1e-300).ln();

    let mut dz = [weight * p[0], weight * p[1]];
    dz[label as usize] -= weight;

    let (head_w_grad, head_b_grad) = {
        let pair = &mut grads.0[2 + 2 * head_idx..4 + 2 * head_idx];
        let (w, b) = pair.split_at_mut(1);
        (&mut w[0], &mut b[0])
    };
    for c in 0..2 {
        let row = &mut head_w_grad[c * hidden..(c + 1) * hidden];
        for (g, r) in row.iter_mut().zip(rep.iter()) {
            *g += dz[c] * r;
        }
        head_b_grad[c] += dz[c];
    }

    let (w0, w1) = (head.w.row(0), head.w.row(1));
    for j in 0..hidden {
        let m = mask.map_or(1.0, |m| m[j]);
        let gate = if pre[j] > 0.0 { m } else { 0.0 };
        dpre[j] = (dz[0] * w0[j] + dz[1] * w1[j]) * gate;
    }

    let enc_w_grad = &mut grads.0[0];
    for (&i, &v) in feats.idx.iter().zip(&feats.val) {
        let row = &mut enc_w_grad[i as usize * hidden..(i as usize + 1) * hidden];
        for (g, d) in row.iter_mut().zip(dpre.iter()) {
            *g += v * d;
        }
    }
    let enc_b_grad = &mut grads.0[1];
    for (g, d) in enc_b_grad.iter_mut().zip(dpre.iter()) {
        *g += d;
    }

    loss
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

/// AdamW with decoupled weight decay and bias-corrected moments.
struct AdamW {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    beta1_pow: f64,
    beta2_pow: f64,
}

impl AdamW {
    fn new(sizes: &[usize], cfg: &TrainConfig) -> AdamW {
        AdamW {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            beta1_pow: 1.0,
            beta2_pow: 1.0,
        }
    }

    fn step(&mut self, tensors: &mut [&mut [f64]], grads: &Grads, lr: f64, clip: f64) {
        let scale = if clip > 0.0 {
            let norm = grads.global_norm();
            if norm > clip {
                clip / norm
            } else {
                1.0
            }
        } else {
            1.0
        };
        self.beta1_pow *= self.beta1;
        self.beta2_pow *= self.beta2;
        let mc = 1.0 - self.beta1_pow;
        let vc = 1.0 - self.beta2_pow;
        for (ti, tensor) in tensors.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[ti], &mut self.v[ti], &grads.0[ti]);
            for j in 0..tensor.len() {
                let grad = g[j] * scale;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * grad;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * grad * grad;
                let m_hat = m[j] / mc;
                let v_hat = v[j] / vc;
                tensor[j] -=
                    lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * tensor[j]);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Fit engine
// ---------------------------------------------------------------------------

struct TrainExample<'a> {
    features: &'a Features,
    head: usize,
    label: u8,
}

/// Shared fit loop. `predict` maps the current network and an instance's
/// features to a dev-set prediction; dev F1 against `dev` golds drives early
/// stopping and learning-rate halving. Returns with the best-dev-F1 snapshot
/// restored into `net`.
fn fit_net(
    net: &mut Net,
    examples: &[TrainExample<'_>],
    dev: &[(&Features, u8)],
    weights: [f64; 2],
    oversample: bool,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
    predict: impl Fn(&Net, &Features) -> u8,
) -> Result<TrainState> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    if dev.is_empty() {
        return Err(Error::InvalidInput(
            "dev set is empty; cannot steer early stopping".into(),
        ));
    }

    let labels: Vec<u8> = examples.iter().map(|e| e.label).collect();
    let dev_golds: Vec<u8> = dev.iter().map(|&(_, g)| g).collect();
    let dropout = net.encoder.cfg.dropout_rate;
    let hidden = net.encoder.cfg.hidden_dim;

    let sizes: Vec<usize> = net.tensors().iter().map(|t| t.len()).collect();
    let mut adam = AdamW::new(&sizes, cfg);
    let mut grads = Grads::like(net);
    let mut scratch = Scratch::new(hidden);

    let mut lr = cfg.peak_lr;
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_params: Option<Vec<f64>> = None;
    let mut prev_f1: Option<f64> = None;
    let mut stall = 0;
    let mut state = TrainState {
        epochs_run: 0,
        evaluations: 0,
        best_dev_f1: f64::NAN,
        final_lr: lr,
        stalled_evaluations: 0,
        halvings: 0,
        rng_seed: rng.seed(),
        epoch_losses: Vec::new(),
    };

    for epoch in 1..=cfg.max_epochs {
        let mut order = if oversample {
            data::oversample_indices(&labels, rng).0
        } else {
            (0..examples.len()).collect()
        };
        rng.shuffle(&mut order);

        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            grads.zero();
            for &i in chunk {
                let e = &examples[i];
                let mask = (dropout > 0.0).then(|| net.encoder.draw_mask(rng));
                epoch_loss += forward_backward(
                    net,
                    e.features,
                    e.head,
                    e.label,
                    weights[e.label as usize],
                    mask.as_deref(),
                    &mut grads,
                    &mut scratch,
                );
            }
            adam.step(&mut net.tensors_mut(), &grads, lr, cfg.grad_clip);
        }
        state.epochs_run = epoch;
        state.epoch_losses.push(epoch_loss);

        if epoch % cfg.eval_every != 0 {
            continue;
        }
        let preds: Vec<u8> = dev.iter().map(|&(f, _)| predict(net, f)).collect();
        let f1 = crate::metrics::f1_binary(&preds, &dev_golds)?.value;
        state.evaluations += 1;
        if f1 > best_f1 {
            best_f1 = f1;
            best_params = Some(net.parameters());
            stall = 0;
        } else {
            stall += 1;
        }
        if cfg.lr_halving {
            if let Some(prev) = prev_f1 {
                if f1 < prev {
                    lr /= 2.0;
                    state.halvings += 1;
                }
            }
        }
        prev_f1 = Some(f1);
        if stall >= cfg.patience {
            break;
        }
    }

    if let Some(params) = best_params {
        net.set_parameters(&params)?;
        state.best_dev_f1 = best_f1;
    }
    state.final_lr = lr;
    state.stalled_evaluations = stall;
    Ok(state)
}

fn multi_head_predict(net: &Net, feats: &Features) -> u8 {
    let mut h = net.encoder.b.clone();
    for (&i, &v) in feats.idx.iter().zip(&feats.val) {
        let row = net.encoder.w.row(i as usize);
        for (hj, wj) in h.iter_mut().zip(row) {
            *hj += v * wj;
        }
    }
    h.iter_mut().for_each(|x| *x = x.max(0.0));
    let ones = net
        .heads
        .iter()
        .filter(|head| {
            let z = head.logits(&h);
            z[1] > z[0]
        })
        .count();
    u8::from(2 * ones >= net.heads.len())
}

fn single_head_predict(net: &Net, feats: &Features) -> u8 {
    let mut h = net.encoder.b.clone();
    for (&i, &v) in feats.idx.iter().zip(&feats.val) {
        let row = net.encoder.w.row(i as usize);
        for (hj, wj) in h.iter_mut().zip(row) {
            *hj += v * wj;
        }
    }
    h.iter_mut().for_each(|x| *x = x.max(0.0));
    let z = net.heads[0].logits(&h);
    u8::from(z[1] > z[0])
}

impl MultiHeadModel {
    /// Summed weighted cross-entropy over a batch of (text, annotator, label)
    /// triples, with analytic gradients per parameter tensor in
    /// [`param_layout`](Self::param_layout) order. Eval-mode (no dropout).
    pub fn loss_and_grad(
        &self,
        batch: &[(&str, &str, u8)],
        weights: [f64; 2],
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut grads = Grads::like(&self.net);
        let mut scratch = Scratch::new(self.net.encoder.cfg.hidden_dim);
        let mut loss = 0.0;
        for &(text, annotator, label) in batch {
            let head = self
                .head_index(annotator)
                .ok_or_else(|| Error::UnknownAnnotator(annotator.to_string()))?;
            let feats = super::hash_features(text, self.net.encoder.cfg.hash_dim);
            loss += forward_backward(
                &self.net,
                &feats,
                head,
                label,
                weights[label as usize],
                None,
                &mut grads,
                &mut scratch,
            );
        }
        Ok((loss, grads.0))
    }

    /// Trains on labeled annotation pairs. Dev instances (features plus gold
    /// majority label) steer early stopping and LR halving via the model's
    /// own majority-vote predictions. Oversampling and class weighting follow
    /// `cfg`. Leaves the best-dev-F1 snapshot in `self`.
    pub fn fit(
        &mut self,
        pairs: &[&AnnotationPair],
        features: &FeatureCache,
        dev: &[(&Features, u8)],
        cfg: &TrainConfig,
        rng: &mut SeededRng,
    ) -> Result<TrainState> {
        if features.hash_dim() != self.net.encoder.cfg.hash_dim {
            return Err(Error::InvalidInput(format!(
                "feature cache hash_dim {} does not match model hash_dim {}",
                features.hash_dim(),
                self.net.encoder.cfg.hash_dim
            )));
        }
        let examples = pairs
            .iter()
            .map(|p| {
                let head = self
                    .head_index(&p.annotator_id)
                    .ok_or_else(|| Error::UnknownAnnotator(p.annotator_id.clone()))?;
                Ok(TrainExample {
                    features: features.get(&p.instance_id)?,
                    head,
                    label: p.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let weights = if cfg.class_weighting {
            class_weights(&pairs.iter().map(|p| p.label).collect::<Vec<_>>())
        } else {
            [1.0, 1.0]
        };
        fit_net(
            &mut self.net,
            &examples,
            dev,
            weights,
            cfg.oversample,
            cfg,
            rng,
            multi_head_predict,
        )
    }
}

impl SingleHeadModel {
    /// Trains on (features, label) examples: instance-level majority labels
    /// or individual pair labels, depending on the experiment arm. No class
    /// weighting or oversampling on this path.
    pub fn fit(
        &mut self,
        examples: &[(&Features, u8)],
        dev: &[(&Features, u8)],
        cfg: &TrainConfig,
        rng: &mut SeededRng,
    ) -> Result<TrainState> {
        let examples: Vec<TrainExample<'_>> = examples
            .iter()
            .map(|&(features, label)| TrainExample {
                features,
                head: 0,
                label,
            })
            .collect();
        fit_net(
            &mut self.net,
            &examples,
            dev,
            [1.0, 1.0],
            false,
            cfg,
            rng,
            single_head_predict,
        )
    }
}
