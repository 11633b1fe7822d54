//! Evaluation measures: majority-vote F1, per-annotator F1, and the
//! correlation between model uncertainty and annotation disagreement.

use std::collections::BTreeMap;

use crate::data::{self, RawDataset};
use crate::model::{FeatureCache, MultiHeadModel, SingleHeadModel};
use crate::numerics::{self, Correlation};
use crate::{Error, Result};

/// Positive-class F1 with an explicit marker for the undefined case.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct F1Score {
    pub value: f64,
    /// Set when no positives occurred in either predictions or golds, which
    /// leaves precision and recall undefined; `value` is then 0 by
    /// convention.
    pub undefined: bool,
}

/// F1 of the positive class: `2TP / (2TP + FP + FN)`.
pub fn f1_binary(preds: &[u8], golds: &[u8]) -> Result<F1Score> {
    if preds.len() != golds.len() {
        return Err(Error::InvalidInput(format!(
            "f1_binary: length mismatch ({} vs {})",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::InvalidInput("f1_binary: empty input".into()));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &g) in preds.iter().zip(golds) {
        match (p, g) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        return Ok(F1Score {
            value: 0.0,
            undefined: true,
        });
    }
    Ok(F1Score {
        value: 2.0 * tp as f64 / denom as f64,
        undefined: false,
    })
}

/// Everything the per-round metrics need, precomputed over one test split and
/// aligned on a single instance ordering.
#[derive(Clone, Debug)]
pub struct EvalBundle {
    pub instance_ids: Vec<String>,
    /// Head order for the inner vectors of `head_votes`; empty for
    /// single-head bundles.
    pub annotators: Vec<String>,
    pub model_majority: Vec<u8>,
    /// Per instance, one binary vote per head (exactly one for single-head
    /// models).
    pub head_votes: Vec<Vec<u8>>,
    /// Head-vote variance (multi-head) or `1 - max softmax probability`
    /// (single-head).
    pub model_uncertainty: Vec<f64>,
    pub annotation_majority: Vec<u8>,
    /// Population variance of each instance's annotations.
    pub annotation_disagreement: Vec<f64>,
}

impl EvalBundle {
    pub fn len(&self) -> usize {
        self.instance_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instance_ids.is_empty()
    }
}

fn annotation_side(test: &RawDataset) -> Result<(Vec<String>, Vec<u8>, Vec<f64>)> {
    let mut ids = Vec::with_capacity(test.records.len());
    let mut majority = Vec::with_capacity(test.records.len());
    let mut disagreement = Vec::with_capacity(test.records.len());
    for rec in &test.records {
        ids.push(rec.id.clone());
        majority.push(data::majority_vote(&rec.labels())?);
        disagreement.push(data::annotation_disagreement(rec)?);
    }
    Ok((ids, majority, disagreement))
}

/// Runs the multi-head model over a test split and collects votes,
/// uncertainties, and the annotation-side aggregates.
pub fn build_bundle_multi(
    model: &MultiHeadModel,
    test: &RawDataset,
    features: &FeatureCache,
) -> Result<EvalBundle> {
    let (instance_ids, annotation_majority, annotation_disagreement) = annotation_side(test)?;
    let mut model_majority = Vec::with_capacity(test.records.len());
    let mut head_votes = Vec::with_capacity(test.records.len());
    let mut model_uncertainty = Vec::with_capacity(test.records.len());
    for rec in &test.records {
        let feats = features.get(&rec.id)?;
        let votes = model.head_votes(feats);
        let as_f64: Vec<f64> = votes.iter().map(|&v| f64::from(v)).collect();
        model_uncertainty.push(numerics::variance(&as_f64)?);
        model_majority.push(data::majority_vote(&votes)?);
        head_votes.push(votes);
    }
    Ok(EvalBundle {
        instance_ids,
        annotators: model.annotators().to_vec(),
        model_majority,
        head_votes,
        model_uncertainty,
        annotation_majority,
        annotation_disagreement,
    })
}

/// Single-head counterpart: the argmax prediction stands in for the head
/// majority and `1 - max softmax probability` for the vote variance.
pub fn build_bundle_single(
    model: &SingleHeadModel,
    test: &RawDataset,
    features: &FeatureCache,
) -> Result<EvalBundle> {
    let (instance_ids, annotation_majority, annotation_disagreement) = annotation_side(test)?;
    let mut model_majority = Vec::with_capacity(test.records.len());
    let mut head_votes = Vec::with_capacity(test.records.len());
    let mut model_uncertainty = Vec::with_capacity(test.records.len());
    for rec in &test.records {
        let feats = features.get(&rec.id)?;
        let pred = model.predict(feats);
        model_majority.push(pred);
        head_votes.push(vec![pred]);
        model_uncertainty.push(1.0 - model.max_prob(feats));
    }
    Ok(EvalBundle {
        instance_ids,
        annotators: Vec::new(),
        model_majority,
        head_votes,
        model_uncertainty,
        annotation_majority,
        annotation_disagreement,
    })
}

/// F1 of the model's per-instance majority vote against the annotation
/// majority vote.
pub fn majority_f1(bundle: &EvalBundle) -> Result<F1Score> {
    f1_binary(&bundle.model_majority, &bundle.annotation_majority)
}

/// How per-annotator scores are combined into one individual-F1 number.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IndividualAggregation {
    /// Unweighted mean of per-annotator F1 scores (the default).
    Macro,
    /// One F1 over all (vote, label) pairs pooled across annotators.
    Pooled,
}

fn individual_f1_from_pairs(
    per_annotator: BTreeMap<&str, (Vec<u8>, Vec<u8>)>,
    aggregation: IndividualAggregation,
) -> Result<F1Score> {
    if per_annotator.is_empty() {
        return Err(Error::InvalidInput(
            "individual F1: no annotator has test annotations".into(),
        ));
    }
    match aggregation {
        IndividualAggregation::Macro => {
            let mut sum = 0.0;
            let mut all_undefined = true;
            let n = per_annotator.len();
            for (preds, golds) in per_annotator.values() {
                let score = f1_binary(preds, golds)?;
                sum += score.value;
                all_undefined &= score.undefined;
            }
            Ok(F1Score {
                value: sum / n as f64,
                undefined: all_undefined,
            })
        }
        IndividualAggregation::Pooled => {
            let mut preds = Vec::new();
            let mut golds = Vec::new();
            for (p, g) in per_annotator.values() {
                preds.extend_from_slice(p);
                golds.extend_from_slice(g);
            }
            f1_binary(&preds, &golds)
        }
    }
}

/// Scores each head against its own annotator's test labels, restricted to
/// the instances that annotator labeled, then aggregates. Annotators absent
/// from the test split are excluded.
pub fn individual_f1_multi(
    model: &MultiHeadModel,
    test: &RawDataset,
    features: &FeatureCache,
    aggregation: IndividualAggregation,
) -> Result<F1Score> {
    let mut per_annotator: BTreeMap<&str, (Vec<u8>, Vec<u8>)> = BTreeMap::new();
    for rec in &test.records {
        let votes = model.head_votes(features.get(&rec.id)?);
        for ann in &rec.annotations {
            let head = model
                .head_index(&ann.annotator)
                .ok_or_else(|| Error::UnknownAnnotator(ann.annotator.clone()))?;
            let entry = per_annotator.entry(&ann.annotator).or_default();
            entry.0.push(votes[head]);
            entry.1.push(ann.label);
        }
    }
    individual_f1_from_pairs(per_annotator, aggregation)
}

/// Single-head counterpart: the model's one prediction stands in for every
/// head.
pub fn individual_f1_single(
    model: &SingleHeadModel,
    test: &RawDataset,
    features: &FeatureCache,
    aggregation: IndividualAggregation,
) -> Result<F1Score> {
    let mut per_annotator: BTreeMap<&str, (Vec<u8>, Vec<u8>)> = BTreeMap::new();
    for rec in &test.records {
        let pred = model.predict(features.get(&rec.id)?);
        for ann in &rec.annotations {
            let entry = per_annotator.entry(&ann.annotator).or_default();
            entry.0.push(pred);
            entry.1.push(ann.label);
        }
    }
    individual_f1_from_pairs(per_annotator, aggregation)
}

/// Pearson correlation between per-instance model uncertainty and annotation
/// disagreement.
pub fn uncertainty_correlation(bundle: &EvalBundle) -> Result<Correlation> {
    numerics::pearson(&bundle.model_uncertainty, &bundle.annotation_disagreement)
}

/// One round's worth of evaluation results.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundMetrics {
    pub majority_f1: F1Score,
    pub individual_f1: F1Score,
    pub uncertainty: Correlation,
}

pub fn evaluate_multi(
    model: &MultiHeadModel,
    test: &RawDataset,
    features: &FeatureCache,
    aggregation: IndividualAggregation,
) -> Result<RoundMetrics> {
    let bundle = build_bundle_multi(model, test, features)?;
    Ok(RoundMetrics {
        majority_f1: majority_f1(&bundle)?,
        individual_f1: individual_f1_multi(model, test, features, aggregation)?,
        uncertainty: uncertainty_correlation(&bundle)?,
    })
}

pub fn evaluate_single(
    model: &SingleHeadModel,
    test: &RawDataset,
    features: &FeatureCache,
    aggregation: IndividualAggregation,
) -> Result<RoundMetrics> {
    let bundle = build_bundle_single(model, test, features)?;
    Ok(RoundMetrics {
        majority_f1: majority_f1(&bundle)?,
        individual_f1: individual_f1_single(model, test, features, aggregation)?,
        uncertainty: uncertainty_correlation(&bundle)?,
    })
}
