//! The trainable classifiers.
//!
//! Both model kinds share the same skeleton: a feature-hashing MLP encoder
//! (whitespace tokens, hashed counts, L2 normalization, one hidden layer with
//! a rectifier and dropout) feeding linear 2-logit heads. The multi-head
//! model owns one head per annotator; the single-head baseline is the same
//! network with exactly one head.
//!
//! Training lives in the sibling `train` module: hand-written gradients,
//! AdamW, class weighting, per-epoch oversampling, learning-rate halving on
//! dev regressions, and early stopping. Everything is driven by a
//! [`SeededRng`] so a fit is a pure function of data, config, and seed.

mod train;

pub use train::{class_weights, TrainConfig, TrainState};

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{self, AnnotationRecord};
use crate::numerics::{self, Matrix, SeededRng};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hash_dim: usize,
    pub hidden_dim: usize,
    pub dropout_rate: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hash_dim: 2048,
            hidden_dim: 128,
            dropout_rate: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.hash_dim == 0 {
            problems.push("hash_dim must be at least 1".to_string());
        }
        if self.hidden_dim == 0 {
            problems.push("hidden_dim must be at least 1".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            problems.push(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

// ---------------------------------------------------------------------------
// Hashed features
// ---------------------------------------------------------------------------

/// Sparse L2-normalized hashed token counts for one text.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub(crate) idx: Vec<u32>,
    pub(crate) val: Vec<f64>,
}

impl Features {
    pub fn nnz(&self) -> usize {
        self.idx.len()
    }
}

/// Whitespace-tokenizes, hashes each token into `hash_dim` buckets, counts,
/// and L2-normalizes. Empty text yields an empty (all-zero) vector.
pub fn hash_features(text: &str, hash_dim: usize) -> Features {
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for token in text.split_whitespace() {
        let bucket = (numerics::fnv1a(token.as_bytes()) % hash_dim as u64) as u32;
        *counts.entry(bucket).or_insert(0.0) += 1.0;
    }
    let norm = counts.values().map(|v| v * v).sum::<f64>().sqrt();
    let (idx, val) = counts
        .into_iter()
        .map(|(i, v)| (i, if norm > 0.0 { v / norm } else { v }))
        .unzip();
    Features { idx, val }
}

/// Per-split cache of hashed features keyed by instance id, so each text is
/// tokenized and hashed exactly once per experiment.
#[derive(Clone, Debug)]
pub struct FeatureCache {
    hash_dim: usize,
    map: BTreeMap<String, Features>,
}

impl FeatureCache {
    pub fn build<'a>(
        records: impl IntoIterator<Item = &'a AnnotationRecord>,
        hash_dim: usize,
    ) -> Self {
        let map = records
            .into_iter()
            .map(|r| (r.id.clone(), hash_features(&r.text, hash_dim)))
            .collect();
        FeatureCache { hash_dim, map }
    }

    pub fn hash_dim(&self) -> usize {
        self.hash_dim
    }

    pub fn get(&self, instance_id: &str) -> Result<&Features> {
        self.map
            .get(instance_id)
            .ok_or_else(|| Error::InvalidInput(format!("no features cached for {instance_id:?}")))
    }
}

// ---------------------------------------------------------------------------
// Network pieces
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    cfg: EncoderConfig,
    /// One row of length `hidden_dim` per hash bucket.
    w: Matrix,
    b: Vec<f64>,
}

impl Encoder {
    fn init(cfg: EncoderConfig, rng: &mut SeededRng) -> Encoder {
        let bound = 1.0 / (cfg.hash_dim as f64).sqrt();
        let mut w = Matrix::zeros(cfg.hash_dim, cfg.hidden_dim);
        for x in w.as_mut_slice() {
            *x = rng.uniform(-bound, bound);
        }
        let b = (0..cfg.hidden_dim)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        Encoder { cfg, w, b }
    }

    pub fn from_parts(cfg: EncoderConfig, w: Matrix, b: Vec<f64>) -> Result<Encoder> {
        cfg.validate()?;
        if w.rows() != cfg.hash_dim || w.cols() != cfg.hidden_dim || b.len() != cfg.hidden_dim {
            return Err(Error::InvalidInput(format!(
                "encoder shape mismatch: weights {}x{}, bias {}, config {}x{}",
                w.rows(),
                w.cols(),
                b.len(),
                cfg.hash_dim,
                cfg.hidden_dim
            )));
        }
        Ok(Encoder { cfg, w, b })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Pre-activation hidden vector `W x + b`.
    fn affine(&self, feats: &Features) -> Vec<f64> {
        let mut h = self.b.clone();
        for (&i, &v) in feats.idx.iter().zip(&feats.val) {
            let row = self.w.row(i as usize);
            for (hj, wj) in h.iter_mut().zip(row) {
                *hj += v * wj;
            }
        }
        h
    }

    /// Representation in eval mode (no dropout).
    fn forward_eval(&self, feats: &Features) -> Vec<f64> {
        let mut h = self.affine(feats);
        for x in &mut h {
            *x = x.max(0.0);
        }
        h
    }

    /// Representation with an explicit dropout mask (training / MC mode).
    fn forward_masked(&self, feats: &Features, mask: &[f64]) -> Vec<f64> {
        let mut h = self.affine(feats);
        for (x, m) in h.iter_mut().zip(mask) {
            *x = x.max(0.0) * m;
        }
        h
    }

    /// Inverted-dropout mask: 0 with probability `dropout_rate`, else scaled
    /// so the expected activation is unchanged.
    fn draw_mask(&self, rng: &mut SeededRng) -> Vec<f64> {
        let p = self.cfg.dropout_rate;
        let keep = 1.0 / (1.0 - p);
        (0..self.cfg.hidden_dim)
            .map(|_| if rng.next_f64() < p { 0.0 } else { keep })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    /// 2 x hidden_dim.
    w: Matrix,
    b: Vec<f64>,
}

impl Head {
    fn init(hidden_dim: usize, rng: &mut SeededRng) -> Head {
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let mut w = Matrix::zeros(2, hidden_dim);
        for x in w.as_mut_slice() {
            *x = rng.uniform(-bound, bound);
        }
        let b = (0..2).map(|_| rng.uniform(-bound, bound)).collect();
        Head { w, b }
    }

    pub fn from_parts(w: Matrix, b: Vec<f64>) -> Result<Head> {
        if w.rows() != 2 || b.len() != 2 {
            return Err(Error::InvalidInput(
                "head must have 2 logit rows and 2 biases".into(),
            ));
        }
        Ok(Head { w, b })
    }

    fn logits(&self, rep: &[f64]) -> [f64; 2] {
        [
            self.b[0] + numerics::dot(self.w.row(0), rep),
            self.b[1] + numerics::dot(self.w.row(1), rep),
        ]
    }
}

/// Binary vote of a 2-logit output. Exact logit ties vote 0 so an untrained
/// all-zero head abstains toward the negative class.
fn vote(z: [f64; 2]) -> u8 {
    u8::from(z[1] > z[0])
}

fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Encoder plus heads; what the trainer and the optimizer actually touch.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Net {
    pub(crate) encoder: Encoder,
    pub(crate) heads: Vec<Head>,
}

impl Net {
    /// All parameter tensors in a fixed order: encoder weights, encoder bias,
    /// then per head weights and bias.
    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let Net { encoder, heads } = self;
        let mut out = vec![encoder.w.as_mut_slice(), encoder.b.as_mut_slice()];
        for h in heads {
            out.push(h.w.as_mut_slice());
            out.push(h.b.as_mut_slice());
        }
        out
    }

    pub(crate) fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.encoder.w.as_slice(), &self.encoder.b];
        for h in &self.heads {
            out.push(h.w.as_slice());
            out.push(&h.b);
        }
        out
    }

    fn parameters(&self) -> Vec<f64> {
        self.tensors().into_iter().flatten().copied().collect()
    }

    fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.tensors().iter().map(|t| t.len()).sum();
        if flat.len() != total {
            return Err(Error::InvalidInput(format!(
                "expected {total} parameters, got {}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Multi-head model
// ---------------------------------------------------------------------------

/// Shared encoder with one 2-logit head per annotator.
#[derive(Clone, Debug)]
pub struct MultiHeadModel {
    pub(crate) net: Net,
    annotators: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl MultiHeadModel {
    /// Fresh model with one head per annotator (heads ordered by annotator
    /// id) and uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) parameters drawn
    /// from `rng`.
    pub fn init(
        annotators: &BTreeSet<String>,
        cfg: EncoderConfig,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        cfg.validate()?;
        if annotators.is_empty() {
            return Err(Error::InvalidInput(
                "multi-head model needs at least one annotator".into(),
            ));
        }
        let encoder = Encoder::init(cfg, rng);
        let ids: Vec<String> = annotators.iter().cloned().collect();
        let heads = ids
            .iter()
            .map(|_| Head::init(cfg.hidden_dim, rng))
            .collect();
        Ok(Self::assemble(encoder, ids, heads))
    }

    /// Builds a model from explicit parts, e.g. a loaded checkpoint or a
    /// hand-crafted test fixture. Heads are sorted by annotator id.
    pub fn from_parts(encoder: Encoder, heads: Vec<(String, Head)>) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::InvalidInput("model needs at least one head".into()));
        }
        let hidden = encoder.cfg.hidden_dim;
        let mut seen = BTreeSet::new();
        for (id, head) in &heads {
            if head.w.cols() != hidden {
                return Err(Error::InvalidInput(format!(
                    "head {id:?} width {} does not match encoder hidden dim {hidden}",
                    head.w.cols()
                )));
            }
            if !seen.insert(id.clone()) {
                return Err(Error::InvalidInput(format!("duplicate head id {id:?}")));
            }
        }
        let mut pairs = heads;
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        let (ids, heads): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        Ok(Self::assemble(encoder, ids, heads))
    }

    fn assemble(encoder: Encoder, ids: Vec<String>, heads: Vec<Head>) -> Self {
        let index = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        MultiHeadModel {
            net: Net { encoder, heads },
            annotators: ids,
            index,
        }
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        self.net.encoder.config()
    }

    pub fn n_heads(&self) -> usize {
        self.net.heads.len()
    }

    /// Annotator ids in head order.
    pub fn annotators(&self) -> &[String] {
        &self.annotators
    }

    pub fn head_index(&self, annotator: &str) -> Option<usize> {
        self.index.get(annotator).copied()
    }

    /// Eval-mode representation of pre-hashed features.
    pub fn encode(&self, feats: &Features) -> Vec<f64> {
        self.net.encoder.forward_eval(feats)
    }

    /// Eval-mode representation straight from text.
    pub fn encode_text(&self, text: &str) -> Vec<f64> {
        self.encode(&hash_features(text, self.net.encoder.cfg.hash_dim))
    }

    /// Logits of every head from one shared encoder pass, in head order.
    pub fn head_logits_all(&self, feats: &Features) -> Vec<[f64; 2]> {
        let rep = self.encode(feats);
        self.net.heads.iter().map(|h| h.logits(&rep)).collect()
    }

    pub fn head_logits(&self, feats: &Features, head: usize) -> [f64; 2] {
        let rep = self.encode(feats);
        self.net.heads[head].logits(&rep)
    }

    /// Per-annotator logits for a text.
    pub fn forward_heads(&self, text: &str) -> BTreeMap<String, [f64; 2]> {
        let feats = hash_features(text, self.net.encoder.cfg.hash_dim);
        self.annotators
            .iter()
            .cloned()
            .zip(self.head_logits_all(&feats))
            .collect()
    }

    /// Binary vote of every head, in head order.
    pub fn head_votes(&self, feats: &Features) -> Vec<u8> {
        self.head_logits_all(feats).into_iter().map(vote).collect()
    }

    /// Majority vote over head votes; ties go to the positive class.
    pub fn predict_majority(&self, feats: &Features) -> u8 {
        data::majority_vote(&self.head_votes(feats)).expect("model has at least one head")
    }

    pub fn predict_majority_text(&self, text: &str) -> u8 {
        self.predict_majority(&hash_features(text, self.net.encoder.cfg.hash_dim))
    }

    /// Population variance of the binary head votes: the model's uncertainty.
    pub fn head_vote_variance(&self, feats: &Features) -> f64 {
        let votes: Vec<f64> = self
            .head_votes(feats)
            .iter()
            .map(|&v| f64::from(v))
            .collect();
        numerics::variance(&votes).expect("model has at least one head")
    }

    pub fn head_vote_variance_text(&self, text: &str) -> f64 {
        self.head_vote_variance(&hash_features(text, self.net.encoder.cfg.hash_dim))
    }

    /// Flattened parameters in `param_layout` order.
    pub fn parameters(&self) -> Vec<f64> {
        self.net.parameters()
    }

    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        self.net.set_parameters(flat)
    }

    /// Names and lengths of the parameter tensors, in flattening order.
    pub fn param_layout(&self) -> Vec<(String, usize)> {
        let mut out = vec![
            ("encoder.w".to_string(), self.net.encoder.w.as_slice().len()),
            ("encoder.b".to_string(), self.net.encoder.b.len()),
        ];
        for (id, h) in self.annotators.iter().zip(&self.net.heads) {
            out.push((format!("head.{id}.w"), h.w.as_slice().len()));
            out.push((format!("head.{id}.b"), h.b.len()));
        }
        out
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let data = CheckpointData {
            version: CHECKPOINT_VERSION,
            kind: "multi_head".to_string(),
            encoder_cfg: self.net.encoder.cfg,
            encoder_w: self.net.encoder.w.clone(),
            encoder_b: self.net.encoder.b.clone(),
            heads: self
                .annotators
                .iter()
                .zip(&self.net.heads)
                .map(|(id, h)| HeadData {
                    id: id.clone(),
                    w: h.w.clone(),
                    b: h.b.clone(),
                })
                .collect(),
        };
        data.write(path)
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let data = CheckpointData::read(path, "multi_head")?;
        let encoder = Encoder::from_parts(data.encoder_cfg, data.encoder_w, data.encoder_b)?;
        let heads = data
            .heads
            .into_iter()
            .map(|h| Ok((h.id, Head::from_parts(h.w, h.b)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(encoder, heads)
    }
}

// ---------------------------------------------------------------------------
// Single-head model
// ---------------------------------------------------------------------------

/// The baseline: same encoder, exactly one head.
#[derive(Clone, Debug)]
pub struct SingleHeadModel {
    pub(crate) net: Net,
}

impl SingleHeadModel {
    pub fn init(cfg: EncoderConfig, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        let encoder = Encoder::init(cfg, rng);
        let head = Head::init(cfg.hidden_dim, rng);
        Ok(SingleHeadModel {
            net: Net {
                encoder,
                heads: vec![head],
            },
        })
    }

    pub fn from_parts(encoder: Encoder, head: Head) -> Result<Self> {
        if head.w.cols() != encoder.cfg.hidden_dim {
            return Err(Error::InvalidInput(
                "head width does not match encoder hidden dim".into(),
            ));
        }
        Ok(SingleHeadModel {
            net: Net {
                encoder,
                heads: vec![head],
            },
        })
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        self.net.encoder.config()
    }

    pub fn encode(&self, feats: &Features) -> Vec<f64> {
        self.net.encoder.forward_eval(feats)
    }

    pub fn encode_text(&self, text: &str) -> Vec<f64> {
        self.encode(&hash_features(text, self.net.encoder.cfg.hash_dim))
    }

    pub fn logits(&self, feats: &Features) -> [f64; 2] {
        let rep = self.encode(feats);
        self.net.heads[0].logits(&rep)
    }

    pub fn probs(&self, feats: &Features) -> [f64; 2] {
        softmax2(self.logits(feats))
    }

    pub fn predict(&self, feats: &Features) -> u8 {
        vote(self.logits(feats))
    }

    /// Highest softmax probability: the usual confidence score.
    pub fn max_prob(&self, feats: &Features) -> f64 {
        let p = self.probs(feats);
        p[0].max(p[1])
    }

    /// `T` stochastic forward passes with dropout active, as probability
    /// vectors. Requires a nonzero dropout rate, otherwise all passes would
    /// collapse to the same point and the epistemic signal would vanish.
    pub fn mc_dropout_passes(
        &self,
        feats: &Features,
        t: usize,
        rng: &mut SeededRng,
    ) -> Result<Vec<[f64; 2]>> {
        if self.net.encoder.cfg.dropout_rate == 0.0 {
            return Err(Error::InvalidInput(
                "MC dropout requires dropout_rate > 0".into(),
            ));
        }
        if t < 2 {
            return Err(Error::InvalidInput(format!(
                "MC dropout needs at least 2 passes, got {t}"
            )));
        }
        Ok((0..t)
            .map(|_| {
                let mask = self.net.encoder.draw_mask(rng);
                let rep = self.net.encoder.forward_masked(feats, &mask);
                softmax2(self.net.heads[0].logits(&rep))
            })
            .collect())
    }

    pub fn parameters(&self) -> Vec<f64> {
        self.net.parameters()
    }

    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        self.net.set_parameters(flat)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let data = CheckpointData {
            version: CHECKPOINT_VERSION,
            kind: "single_head".to_string(),
            encoder_cfg: self.net.encoder.cfg,
            encoder_w: self.net.encoder.w.clone(),
            encoder_b: self.net.encoder.b.clone(),
            heads: vec![HeadData {
                id: "head".to_string(),
                w: self.net.heads[0].w.clone(),
                b: self.net.heads[0].b.clone(),
            }],
        };
        data.write(path)
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let data = CheckpointData::read(path, "single_head")?;
        if data.heads.len() != 1 {
            return Err(Error::InvalidInput(format!(
                "single-head checkpoint has {} heads",
                data.heads.len()
            )));
        }
        let encoder = Encoder::from_parts(data.encoder_cfg, data.encoder_w, data.encoder_b)?;
        let head = data.heads.into_iter().next().unwrap();
        Self::from_parts(encoder, Head::from_parts(head.w, head.b)?)
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct HeadData {
    id: String,
    w: Matrix,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointData {
    version: u32,
    kind: String,
    encoder_cfg: EncoderConfig,
    encoder_w: Matrix,
    encoder_b: Vec<f64>,
    heads: Vec<HeadData>,
}

impl CheckpointData {
    fn write(&self, path: &Path) -> Result<()> {
        let file = BufWriter::new(File::create(path)?);
        serde_json::to_writer(file, self)
            .map_err(|e| Error::InvalidInput(format!("write checkpoint: {e}")))
    }

    fn read(path: &Path, expected_kind: &str) -> Result<CheckpointData> {
        let file = BufReader::new(File::open(path)?);
        let data: CheckpointData = serde_json::from_reader(file).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        if data.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported checkpoint version {}",
                data.version
            )));
        }
        if data.kind != expected_kind {
            return Err(Error::InvalidInput(format!(
                "checkpoint holds a {} model, expected {expected_kind}",
                data.kind
            )));
        }
        Ok(data)
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    fn annotator_set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    fn zero_encoder(hash_dim: usize, hidden_dim: usize) -> Encoder {
        tests_support::zero_encoder(EncoderConfig {
            hash_dim,
            hidden_dim,
            dropout_rate: 0.0,
        })
    }

    fn zero_head(hidden_dim: usize) -> Head {
        tests_support::zero_head(hidden_dim)
    }

    /// A head that always votes the given label, regardless of the input.
    fn constant_head(hidden_dim: usize, label: u8) -> Head {
        let sign = if label == 1 { 1.0 } else { -1.0 };
        Head::from_parts(Matrix::zeros(2, hidden_dim), vec![-sign, sign]).unwrap()
    }

    #[test]
    fn hash_features_is_normalized_and_deterministic() {
        let a = hash_features("one two two three", 64);
        let b = hash_features("one two two three", 64);
        assert_eq!(a, b);
        let norm: f64 = a.val.iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(a.nnz(), 3);
    }

    #[test]
    fn empty_text_hashes_to_zero_vector() {
        let f = hash_features("", 64);
        assert_eq!(f.nnz(), 0);
    }

    #[test]
    fn encode_empty_text_gives_bias_image() {
        let mut rng = SeededRng::new(4).substream("init");
        let cfg = EncoderConfig {
            hash_dim: 32,
            hidden_dim: 8,
            dropout_rate: 0.0,
        };
        let model = MultiHeadModel::init(&annotator_set(&["a0"]), cfg, &mut rng).unwrap();
        let rep = model.encode_text("");
        let expected: Vec<f64> = model.net.encoder.b.iter().map(|x| x.max(0.0)).collect();
        assert_eq!(rep, expected);
    }

    #[test]
    fn encode_is_deterministic_in_eval_mode() {
        let mut rng = SeededRng::new(4).substream("init");
        let model = MultiHeadModel::init(
            &annotator_set(&["a0", "a1"]),
            EncoderConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(
            model.encode_text("some words here"),
            model.encode_text("some words here")
        );
    }

    #[test]
    fn unrelated_texts_get_different_representations() {
        let mut rng = SeededRng::new(9).substream("init");
        let model = MultiHeadModel::init(
            &annotator_set(&["a0"]),
            EncoderConfig {
                hash_dim: 256,
                hidden_dim: 16,
                dropout_rate: 0.0,
            },
            &mut rng,
        )
        .unwrap();
        assert_ne!(
            model.encode_text("alpha beta gamma"),
            model.encode_text("delta epsilon")
        );
    }

    #[test]
    fn forward_heads_zero_init_is_uniform() {
        let ids: Vec<String> = (0..6).map(|i| format!("a{i}")).collect();
        let heads = ids.iter().map(|id| (id.clone(), zero_head(4))).collect();
        let model = MultiHeadModel::from_parts(zero_encoder(16, 4), heads).unwrap();
        let logits = model.forward_heads("whatever text");
        assert_eq!(logits.len(), 6);
        for z in logits.values() {
            assert_eq!(*z, [0.0, 0.0]);
            assert_eq!(softmax2(*z), [0.5, 0.5]);
        }
    }

    #[test]
    fn predict_majority_counts_votes() {
        let make = |labels: &[u8]| {
            let heads = labels
                .iter()
                .enumerate()
                .map(|(i, &l)| (format!("a{i}"), constant_head(4, l)))
                .collect();
            MultiHeadModel::from_parts(zero_encoder(16, 4), heads).unwrap()
        };
        assert_eq!(make(&[1, 1, 1, 1, 0, 0]).predict_majority_text("t"), 1);
        assert_eq!(make(&[1, 1, 1, 0, 0, 0]).predict_majority_text("t"), 1);
        assert_eq!(make(&[0, 0, 0, 0, 0, 0]).predict_majority_text("t"), 0);
    }

    #[test]
    fn head_vote_variance_matches_formula() {
        let make = |labels: &[u8]| {
            let heads = labels
                .iter()
                .enumerate()
                .map(|(i, &l)| (format!("a{i}"), constant_head(4, l)))
                .collect();
            MultiHeadModel::from_parts(zero_encoder(16, 4), heads).unwrap()
        };
        assert_eq!(make(&[1, 1, 1, 0, 0, 0]).head_vote_variance_text("t"), 0.25);
        assert_eq!(make(&[1, 1, 1, 1]).head_vote_variance_text("t"), 0.0);
        let v = make(&[1, 0, 0]).head_vote_variance_text("t");
        assert!((v - 2.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn majority_vote_is_invariant_to_head_rescaling() {
        let mut rng = SeededRng::new(31).substream("init");
        let cfg = EncoderConfig {
            hash_dim: 64,
            hidden_dim: 8,
            dropout_rate: 0.0,
        };
        let model =
            MultiHeadModel::init(&annotator_set(&["a0", "a1", "a2"]), cfg, &mut rng).unwrap();
        let feats = hash_features("scaling check text", 64);
        let before = model.predict_majority(&feats);
        for scale in [0.1, 3.0, 250.0] {
            let mut scaled = model.clone();
            for x in scaled.net.heads[1].w.as_mut_slice() {
                *x *= scale;
            }
            for x in &mut scaled.net.heads[1].b {
                *x *= scale;
            }
            assert_eq!(scaled.predict_majority(&feats), before);
        }
    }

    #[test]
    fn single_head_probs_and_votes() {
        let model = SingleHeadModel::from_parts(zero_encoder(16, 4), constant_head(4, 1)).unwrap();
        let feats = hash_features("x", 16);
        assert_eq!(model.predict(&feats), 1);
        let p = model.probs(&feats);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        assert!(model.max_prob(&feats) > 0.5);
    }

    #[test]
    fn mc_dropout_requires_stochasticity() {
        let model = SingleHeadModel::from_parts(zero_encoder(16, 4), zero_head(4)).unwrap();
        let feats = hash_features("x", 16);
        let mut rng = SeededRng::new(1);
        assert!(model.mc_dropout_passes(&feats, 10, &mut rng).is_err());
    }

    #[test]
    fn mc_dropout_produces_t_distributions() {
        let mut rng = SeededRng::new(8).substream("init");
        let cfg = EncoderConfig {
            hash_dim: 64,
            hidden_dim: 16,
            dropout_rate: 0.2,
        };
        let model = SingleHeadModel::init(cfg, &mut rng).unwrap();
        let feats = hash_features("many different words in here", 64);
        let mut draw = SeededRng::new(2).substream("mc");
        assert!(model.mc_dropout_passes(&feats, 1, &mut draw).is_err());
        let passes = model.mc_dropout_passes(&feats, 10, &mut draw).unwrap();
        assert_eq!(passes.len(), 10);
        for p in &passes {
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        }
        let first: Vec<f64> = passes.iter().map(|p| p[1]).collect();
        assert!(numerics::variance(&first).unwrap() > 0.0);
    }

    #[test]
    fn checkpoint_roundtrip_multi_head() {
        let mut rng = SeededRng::new(12).substream("init");
        let cfg = EncoderConfig {
            hash_dim: 32,
            hidden_dim: 8,
            dropout_rate: 0.1,
        };
        let model = MultiHeadModel::init(&annotator_set(&["a0", "a1"]), cfg, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save_checkpoint(&path).unwrap();
        let loaded = MultiHeadModel::load_checkpoint(&path).unwrap();
        assert_eq!(model.parameters(), loaded.parameters());
        assert_eq!(model.annotators(), loaded.annotators());
        assert!(SingleHeadModel::load_checkpoint(&path).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_single_head() {
        let mut rng = SeededRng::new(13).substream("init");
        let cfg = EncoderConfig {
            hash_dim: 32,
            hidden_dim: 8,
            dropout_rate: 0.0,
        };
        let model = SingleHeadModel::init(cfg, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save_checkpoint(&path).unwrap();
        let loaded = SingleHeadModel::load_checkpoint(&path).unwrap();
        assert_eq!(model.parameters(), loaded.parameters());
    }

    #[test]
    fn init_is_reproducible_per_substream() {
        let cfg = EncoderConfig::default();
        let ids = annotator_set(&["a0", "a1", "a2"]);
        let a = MultiHeadModel::init(&ids, cfg, &mut SeededRng::new(5).substream("init")).unwrap();
        let b = MultiHeadModel::init(&ids, cfg, &mut SeededRng::new(5).substream("init")).unwrap();
        assert_eq!(a.parameters(), b.parameters());
        let c = MultiHeadModel::init(&ids, cfg, &mut SeededRng::new(6).substream("init")).unwrap();
        assert_ne!(a.parameters(), c.parameters());
    }
}
