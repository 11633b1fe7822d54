//! Acquisition scoring and batch selection.
//!
//! Five multi-head scorers (random pairs, per-head entropy, group-level
//! entropy, vote variance, and the entropy mix) and four single-head
//! baselines (random, softmax entropy, MC-dropout BALD, and a discriminative
//! scorer), plus the policies that turn scores into a budgeted batch of
//! annotation queries.

use std::collections::BTreeMap;

use crate::data::PairPool;
use crate::model::{FeatureCache, Features, MultiHeadModel, SingleHeadModel};
use crate::numerics::{self, SeededRng};
use crate::{Error, Result};

/// Acquisition method, as named in configs and on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Uniform random pairs (multi-head arm).
    RandMh,
    /// Per-head softmax entropy.
    Indi,
    /// Entropy of the summed normalized head logits.
    Group,
    /// Variance of the binary head votes.
    Vote,
    /// Individual plus group entropy.
    Mix,
    /// Uniform random (single-head arm).
    RandSh,
    /// Softmax entropy of the single head.
    Ent,
    /// Mutual information across MC-dropout passes.
    Bald,
    /// Discriminator probability of being unlabeled.
    Dal,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::RandMh,
        Method::Indi,
        Method::Group,
        Method::Vote,
        Method::Mix,
        Method::RandSh,
        Method::Ent,
        Method::Bald,
        Method::Dal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::RandMh => "rand_mh",
            Method::Indi => "indi",
            Method::Group => "group",
            Method::Vote => "vote",
            Method::Mix => "mix",
            Method::RandSh => "rand_sh",
            Method::Ent => "ent",
            Method::Bald => "bald",
            Method::Dal => "dal",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.as_str()).collect();
                Error::InvalidInput(format!(
                    "unknown acquisition method {s:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }

    /// Whether the method scores with the multi-head model.
    pub fn is_multi_head(self) -> bool {
        matches!(
            self,
            Method::RandMh | Method::Indi | Method::Group | Method::Vote | Method::Mix
        )
    }

    /// Whether the method scores pairs (as opposed to instances). Random
    /// methods adapt to whatever granularity the policy asks for.
    pub fn scores_pairs(self) -> Option<bool> {
        match self {
            Method::RandMh | Method::RandSh => None,
            Method::Indi | Method::Mix => Some(true),
            _ => Some(false),
        }
    }
}

/// How scored candidates become a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Policy {
    /// Top-K pairs by score.
    Pairwise,
    /// Highest-scoring instances claimed whole (all remaining annotators),
    /// clamping the last instance to the leftover budget.
    LabelDiv,
    /// Top instances, one random remaining annotator each; sweeps again when
    /// the budget exceeds the instance count.
    SampleDiv,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Pairwise, Policy::LabelDiv, Policy::SampleDiv];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Pairwise => "pairwise",
            Policy::LabelDiv => "label_div",
            Policy::SampleDiv => "sample_div",
        }
    }

    pub fn parse(s: &str) -> Result<Policy> {
        Policy::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown batch policy {s:?}; expected one of pairwise, label_div, sample_div"
                ))
            })
    }
}

/// Normalization applied to each head's logits before the group-level sum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupNorm {
    /// Center over the two classes, then divide by the L2 norm (+1e-12).
    CenteredL2,
    /// Per-head softmax in place of the centered unit vector.
    Softmax,
}

impl GroupNorm {
    pub fn as_str(self) -> &'static str {
        match self {
            GroupNorm::CenteredL2 => "centered_l2",
            GroupNorm::Softmax => "softmax",
        }
    }

    pub fn parse(s: &str) -> Result<GroupNorm> {
        match s {
            "centered_l2" => Ok(GroupNorm::CenteredL2),
            "softmax" => Ok(GroupNorm::Softmax),
            _ => Err(Error::InvalidInput(format!(
                "unknown group normalization {s:?}; expected centered_l2 or softmax"
            ))),
        }
    }
}

impl Default for GroupNorm {
    fn default() -> Self {
        GroupNorm::CenteredL2
    }
}

/// One scored query option: a (instance, annotator) pair, or a whole instance
/// when the policy claims annotators itself.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub instance_id: String,
    pub annotator_id: Option<String>,
    pub score: f64,
}

/// The pairs chosen for one round of annotation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryBatch {
    /// Indices into the pool's pair list.
    pub pair_indices: Vec<usize>,
    /// Number of annotations claimed; always `pair_indices.len()`.
    pub cost: usize,
    /// Set when the pool could not fill the requested budget.
    pub exhausted: bool,
}

// ---------------------------------------------------------------------------
// Scorers
// ---------------------------------------------------------------------------

/// Softmax entropy of one annotator's head.
pub fn score_individual(model: &MultiHeadModel, feats: &Features, annotator: &str) -> Result<f64> {
    let head = model
        .head_index(annotator)
        .ok_or_else(|| Error::UnknownAnnotator(annotator.to_string()))?;
    let z = model.head_logits(feats, head);
    numerics::entropy(&numerics::softmax(&z)?)
}

/// Entropy of the softmax over the sum of per-head normalized logits.
pub fn score_group(model: &MultiHeadModel, feats: &Features, norm: GroupNorm) -> Result<f64> {
    let mut group = [0.0f64; 2];
    for z in model.head_logits_all(feats) {
        match norm {
            GroupNorm::CenteredL2 => {
                let mean = (z[0] + z[1]) / 2.0;
                let c = [z[0] - mean, z[1] - mean];
                let l2 = (c[0] * c[0] + c[1] * c[1]).sqrt();
                group[0] += c[0] / (l2 + 1e-12);
                group[1] += c[1] / (l2 + 1e-12);
            }
            GroupNorm::Softmax => {
                let p = numerics::softmax(&z)?;
                group[0] += p[0];
                group[1] += p[1];
            }
        }
    }
    numerics::entropy(&numerics::softmax(&group)?)
}

/// Population variance of the binary head votes.
pub fn score_vote(model: &MultiHeadModel, feats: &Features) -> f64 {
    model.head_vote_variance(feats)
}

/// Individual entropy plus the instance's group entropy.
pub fn score_mix(
    model: &MultiHeadModel,
    feats: &Features,
    annotator: &str,
    norm: GroupNorm,
) -> Result<f64> {
    Ok(score_individual(model, feats, annotator)? + score_group(model, feats, norm)?)
}

/// Softmax entropy of the single head.
pub fn score_single_entropy(model: &SingleHeadModel, feats: &Features) -> Result<f64> {
    numerics::entropy(&model.probs(feats))
}

/// Mutual information between prediction and parameters estimated from
/// `passes` MC-dropout probability vectors, clipped below at zero.
pub fn score_bald(
    model: &SingleHeadModel,
    feats: &Features,
    passes: usize,
    rng: &mut SeededRng,
) -> Result<f64> {
    bald_from_passes(&model.mc_dropout_passes(feats, passes, rng)?)
}

/// BALD from explicit probability vectors: `H(mean) - mean(H)`, clipped at 0.
pub fn bald_from_passes(passes: &[[f64; 2]]) -> Result<f64> {
    let t = passes.len() as f64;
    let mut mean = [0.0f64; 2];
    let mut mean_entropy = 0.0;
    for p in passes {
        mean[0] += p[0] / t;
        mean[1] += p[1] / t;
        mean_entropy += numerics::entropy(p)? / t;
    }
    Ok((numerics::entropy(&mean)? - mean_entropy).max(0.0))
}

/// Logistic discriminator separating labeled from unlabeled representations.
#[derive(Clone, Debug)]
pub struct DalDiscriminator {
    w: Vec<f64>,
    b: f64,
}

impl DalDiscriminator {
    const EPOCHS: usize = 100;
    const LR: f64 = 0.01;

    /// Fits from scratch by full-batch gradient descent: labeled → class 0,
    /// unlabeled → class 1, zero-initialized, fixed 100 epochs at lr 0.01.
    pub fn fit(labeled: &[Vec<f64>], unlabeled: &[Vec<f64>]) -> Result<DalDiscriminator> {
        if labeled.is_empty() || unlabeled.is_empty() {
            return Err(Error::InvalidInput(format!(
                "discriminator needs both pools nonempty (labeled {}, unlabeled {})",
                labeled.len(),
                unlabeled.len()
            )));
        }
        let dim = labeled[0].len();
        if labeled.iter().chain(unlabeled).any(|r| r.len() != dim) {
            return Err(Error::InvalidInput(
                "representations have inconsistent dimensions".into(),
            ));
        }
        let n = (labeled.len() + unlabeled.len()) as f64;
        let mut disc = DalDiscriminator {
            w: vec![0.0; dim],
            b: 0.0,
        };
        let mut gw = vec![0.0; dim];
        for _ in 0..Self::EPOCHS {
            gw.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = 0.0;
            for (reps, target) in [(labeled, 0.0), (unlabeled, 1.0)] {
                for rep in reps {
                    let err = disc.prob_unlabeled(rep) - target;
                    for (g, x) in gw.iter_mut().zip(rep) {
                        *g += err * x / n;
                    }
                    gb += err / n;
                }
            }
            disc.w
                .iter_mut()
                .zip(&gw)
                .for_each(|(w, g)| *w -= Self::LR * g);
            disc.b -= Self::LR * gb;
        }
        Ok(disc)
    }

    /// Probability that `rep` comes from the unlabeled pool.
    pub fn prob_unlabeled(&self, rep: &[f64]) -> f64 {
        let z = self.b + numerics::dot(&self.w, rep);
        1.0 / (1.0 + (-z).exp())
    }
}

// ---------------------------------------------------------------------------
// Candidate generation
// ---------------------------------------------------------------------------

/// The trained model a scorer reads from.
#[derive(Clone, Copy)]
pub enum ModelView<'a> {
    Multi(&'a MultiHeadModel),
    Single(&'a SingleHeadModel),
}

/// Scoring knobs shared by several methods.
#[derive(Clone, Copy, Debug)]
pub struct ScoreConfig {
    pub group_norm: GroupNorm,
    /// MC-dropout passes for BALD.
    pub bald_passes: usize,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            group_norm: GroupNorm::default(),
            bald_passes: 10,
        }
    }
}

fn require_multi<'a>(view: &ModelView<'a>, method: Method) -> Result<&'a MultiHeadModel> {
    match view {
        ModelView::Multi(m) => Ok(m),
        ModelView::Single(_) => Err(Error::InvalidInput(format!(
            "method {} needs a multi-head model",
            method.as_str()
        ))),
    }
}

fn require_single<'a>(view: &ModelView<'a>, method: Method) -> Result<&'a SingleHeadModel> {
    match view {
        ModelView::Single(m) => Ok(m),
        ModelView::Multi(_) => Err(Error::InvalidInput(format!(
            "method {} needs a single-head model",
            method.as_str()
        ))),
    }
}

/// Scores every open query option for `method` at the granularity `policy`
/// selects at: pairs for `Pairwise`, instances otherwise.
pub fn score_candidates(
    method: Method,
    policy: Policy,
    model: &ModelView<'_>,
    pool: &PairPool,
    features: &FeatureCache,
    cfg: &ScoreConfig,
    rng: &mut SeededRng,
) -> Result<Vec<Candidate>> {
    let want_pairs = policy == Policy::Pairwise;
    if let Some(scores_pairs) = method.scores_pairs() {
        if scores_pairs != want_pairs {
            return Err(Error::InvalidInput(format!(
                "method {} cannot drive the {} policy",
                method.as_str(),
                policy.as_str()
            )));
        }
    }

    if want_pairs {
        let mut out = Vec::new();
        // Group scores are shared by all of an instance's pairs; cache them.
        let mut group_cache: BTreeMap<&str, f64> = BTreeMap::new();
        for idx in pool.unlabeled_indices() {
            let pair = pool.pair(idx);
            let score = match method {
                Method::RandMh | Method::RandSh => rng.next_f64(),
                Method::Indi => {
                    let m = require_multi(model, method)?;
                    score_individual(m, features.get(&pair.instance_id)?, &pair.annotator_id)?
                }
                Method::Mix => {
                    let m = require_multi(model, method)?;
                    let feats = features.get(&pair.instance_id)?;
                    let group = match group_cache.get(pair.instance_id.as_str()) {
                        Some(&g) => g,
                        None => {
                            let g = score_group(m, feats, cfg.group_norm)?;
                            group_cache.insert(&pair.instance_id, g);
                            g
                        }
                    };
                    score_individual(m, feats, &pair.annotator_id)? + group
                }
                _ => unreachable!("pair-level methods are exhaustive"),
            };
            out.push(Candidate {
                instance_id: pair.instance_id.clone(),
                annotator_id: Some(pair.annotator_id.clone()),
                score,
            });
        }
        return Ok(out);
    }

    let instances = pool.instances_with_unlabeled();
    let mut out = Vec::with_capacity(instances.len());
    let dal = if method == Method::Dal {
        let single = require_single(model, method)?;
        let labeled_ids = labeled_instances(pool);
        if labeled_ids.is_empty() {
            return Err(Error::InvalidInput(
                "discriminative scoring needs at least one labeled instance".into(),
            ));
        }
        let labeled_reps: Vec<Vec<f64>> = labeled_ids
            .iter()
            .map(|id| Ok(single.encode(features.get(id)?)))
            .collect::<Result<_>>()?;
        let unlabeled_reps: Vec<Vec<f64>> = instances
            .iter()
            .map(|id| Ok(single.encode(features.get(id)?)))
            .collect::<Result<_>>()?;
        Some(DalDiscriminator::fit(&labeled_reps, &unlabeled_reps)?)
    } else {
        None
    };
    for id in &instances {
        let score = match method {
            Method::RandMh | Method::RandSh => rng.next_f64(),
            Method::Group => score_group(
                require_multi(model, method)?,
                features.get(id)?,
                cfg.group_norm,
            )?,
            Method::Vote => score_vote(require_multi(model, method)?, features.get(id)?),
            Method::Ent => score_single_entropy(require_single(model, method)?, features.get(id)?)?,
            Method::Bald => score_bald(
                require_single(model, method)?,
                features.get(id)?,
                cfg.bald_passes,
                rng,
            )?,
            Method::Dal => {
                let single = require_single(model, method)?;
                dal.as_ref()
                    .expect("discriminator fitted above")
                    .prob_unlabeled(&single.encode(features.get(id)?))
            }
            _ => unreachable!("instance-level methods are exhaustive"),
        };
        out.push(Candidate {
            instance_id: id.to_string(),
            annotator_id: None,
            score,
        });
    }
    Ok(out)
}

/// Instance ids with at least one labeled pair, sorted. Pairs are stored
/// sorted by instance, so consecutive deduplication suffices.
fn labeled_instances(pool: &PairPool) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for idx in pool.labeled_indices() {
        let id = &pool.pair(idx).instance_id;
        if out.last() != Some(id) {
            out.push(id.clone());
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Batch selection
// ---------------------------------------------------------------------------

/// Turns scored candidates into at most `k` concrete annotation queries.
/// Total cost is exactly `min(k, open pairs among the candidates)`; the
/// exhausted flag marks a batch that could not fill the budget.
pub fn select_batch(
    candidates: &[Candidate],
    policy: Policy,
    pool: &PairPool,
    k: usize,
    rng: &mut SeededRng,
) -> Result<QueryBatch> {
    if k == 0 {
        return Err(Error::InvalidInput(
            "round budget must be at least 1".into(),
        ));
    }
    if candidates.is_empty() {
        return Ok(QueryBatch {
            pair_indices: Vec::new(),
            cost: 0,
            exhausted: true,
        });
    }
    let pair_indices = match policy {
        Policy::Pairwise => select_pairwise(candidates, pool, k)?,
        Policy::LabelDiv => select_label_div(candidates, pool, k, rng)?,
        Policy::SampleDiv => select_sample_div(candidates, pool, k, rng)?,
    };
    let cost = pair_indices.len();
    Ok(QueryBatch {
        pair_indices,
        cost,
        exhausted: cost < k,
    })
}

fn select_pairwise(candidates: &[Candidate], pool: &PairPool, k: usize) -> Result<Vec<usize>> {
    let scored: Vec<((String, String), f64)> = candidates
        .iter()
        .map(|c| {
            let annotator = c.annotator_id.clone().ok_or_else(|| {
                Error::InvalidInput("pairwise selection needs pair-level candidates".into())
            })?;
            Ok(((c.instance_id.clone(), annotator), c.score))
        })
        .collect::<Result<_>>()?;
    let top = numerics::top_k(&scored, k);
    top.keys
        .iter()
        .map(|(instance, annotator)| {
            pool.find(instance, annotator).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "candidate pair ({instance}, {annotator}) not in pool"
                ))
            })
        })
        .collect()
}

/// Instances ranked by score (ties toward the smaller id), as required by the
/// instance-claiming policies.
fn ranked_instances(candidates: &[Candidate]) -> Result<Vec<String>> {
    let scored: Vec<(String, f64)> = candidates
        .iter()
        .map(|c| {
            if c.annotator_id.is_some() {
                return Err(Error::InvalidInput(
                    "instance-claiming policies need instance-level candidates".into(),
                ));
            }
            Ok((c.instance_id.clone(), c.score))
        })
        .collect::<Result<_>>()?;
    Ok(numerics::top_k(&scored, scored.len()).keys)
}

fn select_label_div(
    candidates: &[Candidate],
    pool: &PairPool,
    k: usize,
    rng: &mut SeededRng,
) -> Result<Vec<usize>> {
    let mut taken = Vec::new();
    for instance in ranked_instances(candidates)? {
        let remaining = k - taken.len();
        if remaining == 0 {
            break;
        }
        let open = pool.unlabeled_of_instance(&instance);
        if open.len() <= remaining {
            taken.extend(open);
        } else {
            let subset = rng.sample_indices(open.len(), remaining);
            taken.extend(subset.into_iter().map(|i| open[i]));
        }
    }
    Ok(taken)
}

fn select_sample_div(
    candidates: &[Candidate],
    pool: &PairPool,
    k: usize,
    rng: &mut SeededRng,
) -> Result<Vec<usize>> {
    let ranked = ranked_instances(candidates)?;
    let mut open: Vec<Vec<usize>> = ranked
        .iter()
        .map(|id| pool.unlabeled_of_instance(id))
        .collect();
    let mut taken = Vec::new();
    // One random annotator per instance in rank order; further sweeps only
    // when the budget outlasts the instance list.
    while taken.len() < k {
        let mut progressed = false;
        for pairs in open.iter_mut() {
            if taken.len() == k {
                break;
            }
            if pairs.is_empty() {
                continue;
            }
            let pick = rng.index(pairs.len());
            taken.push(pairs.swap_remove(pick));
            progressed = true;
        }
        if !progressed {
            break;
        }
    }
    Ok(taken)
}
