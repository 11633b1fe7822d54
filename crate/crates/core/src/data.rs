//! Datasets of multi-annotator labels and the operations that shape them:
//! JSONL ingestion, expansion into (instance, annotator) pairs, majority
//! voting, minority oversampling, and a synthetic generator that mimics a
//! crowd of annotators with individual thresholds and noise levels.
//!
//! The JSONL schema is one record per line:
//!
//! ```text
//! {"id": "tr00000", "text": "...", "annotations": [{"annotator": "a00", "label": 1}, ...]}
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numerics::{self, SeededRng};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub annotator: String,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: String,
    pub text: String,
    pub annotations: Vec<Annotation>,
}

impl AnnotationRecord {
    pub fn labels(&self) -> Vec<u8> {
        self.annotations.iter().map(|a| a.label).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    /// Short id prefix so instance ids never collide across splits.
    fn id_prefix(self) -> &'static str {
        match self {
            Split::Train => "tr",
            Split::Dev => "dv",
            Split::Test => "te",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One split of a dataset, validated on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    pub records: Vec<AnnotationRecord>,
    pub annotator_pool: BTreeSet<String>,
    pub split: Split,
}

impl RawDataset {
    /// Builds a dataset from records, deriving the annotator pool and
    /// checking the record invariants.
    pub fn new(records: Vec<AnnotationRecord>, split: Split) -> Result<Self> {
        let mut pool = BTreeSet::new();
        let mut seen_ids = BTreeSet::new();
        for rec in &records {
            validate_record(rec, None)?;
            if !seen_ids.insert(rec.id.clone()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate instance id {:?}",
                    rec.id
                )));
            }
            for ann in &rec.annotations {
                pool.insert(ann.annotator.clone());
            }
        }
        Ok(RawDataset {
            records,
            annotator_pool: pool,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Total number of annotations across all records.
    pub fn annotation_count(&self) -> usize {
        self.records.iter().map(|r| r.annotations.len()).sum()
    }
}

fn validate_record(rec: &AnnotationRecord, line: Option<usize>) -> Result<()> {
    let fail = |msg: String| match line {
        Some(l) => Err(Error::Parse {
            path: String::new(),
            line: l,
            msg,
        }),
        None => Err(Error::InvalidInput(msg)),
    };
    if rec.id.is_empty() {
        return fail("record has an empty id".into());
    }
    if rec.annotations.is_empty() {
        return fail(format!("record {:?} has no annotations", rec.id));
    }
    let mut seen = BTreeSet::new();
    for ann in &rec.annotations {
        if ann.label > 1 {
            return fail(format!(
                "record {:?}: label {} is not binary",
                rec.id, ann.label
            ));
        }
        if !seen.insert(&ann.annotator) {
            return fail(format!(
                "record {:?}: duplicate annotator {:?}",
                rec.id, ann.annotator
            ));
        }
    }
    Ok(())
}

/// Loads one split from a JSONL file, reporting the offending line on error.
pub fn load_jsonl(path: &Path, split: Split) -> Result<RawDataset> {
    let file = File::open(path)
        .map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: lineno,
            msg: e.to_string(),
        })?;
        validate_record(&rec, Some(lineno)).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse {
                path: path.display().to_string(),
                line,
                msg,
            },
            other => other,
        })?;
        records.push(rec);
    }
    RawDataset::new(records, split).map_err(|e| match e {
        Error::InvalidInput(msg) => Error::InvalidInput(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Writes a dataset in the same JSONL schema `load_jsonl` reads.
pub fn write_jsonl(ds: &RawDataset, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for rec in &ds.records {
        let line = serde_json::to_string(rec)
            .map_err(|e| Error::InvalidInput(format!("serialize record {:?}: {e}", rec.id)))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Pair pool
// ---------------------------------------------------------------------------

/// One (instance, annotator) annotation, the atomic unit of budget.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationPair {
    pub instance_id: String,
    pub annotator_id: String,
    pub label: u8,
    pub labeled: bool,
}

/// Every annotation of a split as a flat pool of pairs plus a budget ledger.
///
/// Pairs start unlabeled; the only allowed transition is unlabeled to
/// labeled, and `spent_budget` always equals the number of labeled pairs.
#[derive(Clone, Debug)]
pub struct PairPool {
    pairs: Vec<AnnotationPair>,
    by_instance: BTreeMap<String, Vec<usize>>,
    spent: usize,
}

/// Expands each record with N annotations into N pairs, all unlabeled.
pub fn expand_pairs(ds: &RawDataset) -> PairPool {
    let mut pairs: Vec<AnnotationPair> = ds
        .records
        .iter()
        .flat_map(|rec| {
            rec.annotations.iter().map(|ann| AnnotationPair {
                instance_id: rec.id.clone(),
                annotator_id: ann.annotator.clone(),
                label: ann.label,
                labeled: false,
            })
        })
        .collect();
    pairs.sort_by(|a, b| (&a.instance_id, &a.annotator_id).cmp(&(&b.instance_id, &b.annotator_id)));
    let mut by_instance: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        by_instance
            .entry(p.instance_id.clone())
            .or_default()
            .push(i);
    }
    PairPool {
        pairs,
        by_instance,
        spent: 0,
    }
}

impl PairPool {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn spent_budget(&self) -> usize {
        self.spent
    }

    pub fn unlabeled_count(&self) -> usize {
        self.pairs.len() - self.spent
    }

    pub fn pairs(&self) -> &[AnnotationPair] {
        &self.pairs
    }

    pub fn pair(&self, idx: usize) -> &AnnotationPair {
        &self.pairs[idx]
    }

    pub fn find(&self, instance: &str, annotator: &str) -> Option<usize> {
        self.pairs
            .binary_search_by(|p| {
                (p.instance_id.as_str(), p.annotator_id.as_str()).cmp(&(instance, annotator))
            })
            .ok()
    }

    /// Marks one pair labeled, spending one unit of budget.
    pub fn mark_labeled(&mut self, idx: usize) -> Result<()> {
        let pair = self
            .pairs
            .get_mut(idx)
            .ok_or_else(|| Error::InvalidInput(format!("pair index {idx} out of range")))?;
        if pair.labeled {
            return Err(Error::InvalidInput(format!(
                "pair ({}, {}) is already labeled",
                pair.instance_id, pair.annotator_id
            )));
        }
        pair.labeled = true;
        self.spent += 1;
        Ok(())
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.pairs.len())
            .filter(|&i| !self.pairs[i].labeled)
            .collect()
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.pairs.len())
            .filter(|&i| self.pairs[i].labeled)
            .collect()
    }

    /// Instance ids in sorted order.
    pub fn instance_ids(&self) -> impl Iterator<Item = &str> {
        self.by_instance.keys().map(String::as_str)
    }

    /// Pair indices of one instance (all of them, labeled or not).
    pub fn instance_pairs(&self, instance: &str) -> &[usize] {
        self.by_instance
            .get(instance)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn unlabeled_of_instance(&self, instance: &str) -> Vec<usize> {
        self.instance_pairs(instance)
            .iter()
            .copied()
            .filter(|&i| !self.pairs[i].labeled)
            .collect()
    }

    /// Instances that still have at least one unlabeled pair, sorted by id.
    pub fn instances_with_unlabeled(&self) -> Vec<&str> {
        self.by_instance
            .iter()
            .filter(|(_, idxs)| idxs.iter().any(|&i| !self.pairs[i].labeled))
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Aggregation and balancing
// ---------------------------------------------------------------------------

/// Modal label of a nonempty label sequence; exact ties go to the positive
/// class, which favors recall on rare-positive tasks.
pub fn majority_vote(labels: &[u8]) -> Result<u8> {
    if labels.is_empty() {
        return Err(Error::InvalidInput("majority_vote: empty input".into()));
    }
    let ones = labels.iter().filter(|&&l| l == 1).count();
    Ok(u8::from(2 * ones >= labels.len()))
}

/// Index multiset that balances a binary-labeled collection by duplicating
/// minority entries (drawn with replacement) until the class counts match.
///
/// The identity prefix `0..labels.len()` is always present, so no original
/// entry is ever dropped. Returns the flag `true` when one class is absent
/// and the input is left as is.
pub fn oversample_indices(labels: &[u8], rng: &mut SeededRng) -> (Vec<usize>, bool) {
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    let mut out: Vec<usize> = (0..labels.len()).collect();
    if pos.is_empty() || neg.is_empty() {
        return (out, true);
    }
    let (minority, deficit) = if pos.len() < neg.len() {
        (&pos, neg.len() - pos.len())
    } else {
        (&neg, pos.len() - neg.len())
    };
    for _ in 0..deficit {
        out.push(minority[rng.index(minority.len())]);
    }
    (out, false)
}

/// Oversampled copy of a labeled pair sequence; see [`oversample_indices`].
pub fn oversample(pairs: &[AnnotationPair], rng: &mut SeededRng) -> (Vec<AnnotationPair>, bool) {
    let labels: Vec<u8> = pairs.iter().map(|p| p.label).collect();
    let (idxs, degenerate) = oversample_indices(&labels, rng);
    (
        idxs.into_iter().map(|i| pairs[i].clone()).collect(),
        degenerate,
    )
}

/// Population variance of a record's labels: the standard disagreement
/// measure used throughout evaluation.
pub fn annotation_disagreement(record: &AnnotationRecord) -> Result<f64> {
    let labels: Vec<f64> = record
        .annotations
        .iter()
        .map(|a| f64::from(a.label))
        .collect();
    numerics::variance(&labels)
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

/// How many annotators label each instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Density {
    /// Every annotator labels every instance.
    Dense,
    /// A uniformly random subset of the given size labels each instance.
    Sparse { per_instance: usize },
}

/// Population parameters for the synthetic annotator crowd.
///
/// Each instance carries a latent score s drawn uniformly from [0, 1];
/// annotator `a` labels it positive iff `s + Normal(0, sigma_a) > tau_a`.
/// Thresholds are centered at `1 - positive_rate` and spread uniformly over
/// `bias_spread`, so the default configuration lands near a 0.15 raw
/// positive rate with systematic disagreement between annotators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_annotators: usize,
    pub density: Density,
    pub positive_rate: f64,
    pub bias_spread: f64,
    pub noise_range: (f64, f64),
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_annotators: 6,
            density: Density::Dense,
            positive_rate: 0.15,
            bias_spread: 0.1,
            noise_range: (0.05, 0.25),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_annotators == 0 {
            problems.push("n_annotators must be at least 1".to_string());
        }
        if let Density::Sparse { per_instance } = self.density {
            if per_instance == 0 {
                problems.push("sparse per_instance must be at least 1".to_string());
            } else if per_instance > self.n_annotators {
                problems.push(format!(
                    "sparse per_instance {} exceeds annotator count {}",
                    per_instance, self.n_annotators
                ));
            }
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            problems.push(format!(
                "positive_rate must be in (0, 1), got {}",
                self.positive_rate
            ));
        }
        if self.bias_spread < 0.0 {
            problems.push(format!(
                "bias_spread must be >= 0, got {}",
                self.bias_spread
            ));
        }
        let (lo, hi) = self.noise_range;
        if lo < 0.0 || hi < lo {
            problems.push(format!(
                "noise_range must satisfy 0 <= lo <= hi, got ({lo}, {hi})"
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Everything needed to generate one split.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub spec: SynthSpec,
    pub n_instances: usize,
    pub split: Split,
}

/// One simulated annotator: decision threshold plus personal noise level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorProfile {
    pub id: String,
    pub tau: f64,
    pub sigma: f64,
}

/// Draws the annotator crowd for a spec. Call once and reuse the profiles
/// across splits so train/dev/test share the same annotators.
pub fn sample_profiles(spec: &SynthSpec, rng: &mut SeededRng) -> Vec<AnnotatorProfile> {
    let center = 1.0 - spec.positive_rate;
    (0..spec.n_annotators)
        .map(|i| AnnotatorProfile {
            id: format!("a{i:02}"),
            tau: rng.uniform(
                center - spec.bias_spread / 2.0,
                center + spec.bias_spread / 2.0,
            ),
            sigma: rng.uniform(spec.noise_range.0, spec.noise_range.1),
        })
        .collect()
}

const SIGNAL_BINS: usize = 16;
const SIGNAL_TOKENS: usize = 4;
const NOISE_TOKENS: usize = 3;
const NOISE_VOCAB: usize = 40;

/// Renders the latent score as pseudo-tokens the hashing encoder can learn
/// from: the score's quantization bin yields a fixed token group, followed by
/// a few uninformative filler tokens.
fn render_text(latent: f64, rng: &mut SeededRng) -> String {
    let bin = ((latent * SIGNAL_BINS as f64) as usize).min(SIGNAL_BINS - 1);
    let mut tokens = Vec::with_capacity(SIGNAL_TOKENS + NOISE_TOKENS);
    for j in 0..SIGNAL_TOKENS {
        tokens.push(format!("b{bin}r{j}"));
    }
    for _ in 0..NOISE_TOKENS {
        tokens.push(format!("w{}", rng.index(NOISE_VOCAB)));
    }
    tokens.join(" ")
}

/// Generates one split with the given annotator profiles.
pub fn generate_split(
    spec: &SynthSpec,
    profiles: &[AnnotatorProfile],
    n_instances: usize,
    split: Split,
    rng: &mut SeededRng,
) -> Result<RawDataset> {
    spec.validate()?;
    if profiles.len() != spec.n_annotators {
        return Err(Error::InvalidInput(format!(
            "profile count {} does not match n_annotators {}",
            profiles.len(),
            spec.n_annotators
        )));
    }
    let mut records = Vec::with_capacity(n_instances);
    for i in 0..n_instances {
        let latent = rng.next_f64();
        let text = render_text(latent, rng);
        let chosen: Vec<usize> = match spec.density {
            Density::Dense => (0..profiles.len()).collect(),
            Density::Sparse { per_instance } => rng.sample_indices(profiles.len(), per_instance),
        };
        let annotations = chosen
            .into_iter()
            .map(|a| {
                let p = &profiles[a];
                let observed = latent + rng.normal(0.0, p.sigma);
                Annotation {
                    annotator: p.id.clone(),
                    label: u8::from(observed > p.tau),
                }
            })
            .collect();
        records.push(AnnotationRecord {
            id: format!("{}{i:05}", split.id_prefix()),
            text,
            annotations,
        });
    }
    RawDataset::new(records, split)
}

/// Convenience entry point that samples profiles from the `annotators`
/// substream and generates the configured split from the split's own
/// substream. Bit-reproducible for a fixed seed.
pub fn generate_synthetic(cfg: &SynthConfig, rng: &SeededRng) -> Result<RawDataset> {
    cfg.spec.validate()?;
    let profiles = sample_profiles(&cfg.spec, &mut rng.substream("annotators"));
    generate_split(
        &cfg.spec,
        &profiles,
        cfg.n_instances,
        cfg.split,
        &mut rng.substream(cfg.split.as_str()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_well_formed_file() {
        let f = write_temp(&[
            r#"{"id":"x1","text":"hello there","annotations":[{"annotator":"a0","label":1},{"annotator":"a1","label":0}]}"#,
            r#"{"id":"x2","text":"more text","annotations":[{"annotator":"a0","label":0}]}"#,
            r#"{"id":"x3","text":"third","annotations":[{"annotator":"a2","label":1}]}"#,
        ]);
        let ds = load_jsonl(f.path(), Split::Train).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.annotator_pool.len(), 3);
        assert_eq!(ds.annotation_count(), 4);
    }

    #[test]
    fn parse_error_names_line() {
        let f = write_temp(&[
            r#"{"id":"x1","text":"ok","annotations":[{"annotator":"a0","label":1}]}"#,
            r#"{"id":"x2","text":"broken"#,
        ]);
        let err = load_jsonl(f.path(), Split::Train).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_instance_id() {
        let f = write_temp(&[
            r#"{"id":"x1","text":"a","annotations":[{"annotator":"a0","label":1}]}"#,
            r#"{"id":"x1","text":"b","annotations":[{"annotator":"a0","label":0}]}"#,
        ]);
        assert!(load_jsonl(f.path(), Split::Train).is_err());
    }

    #[test]
    fn rejects_duplicate_annotator_within_record() {
        let f = write_temp(&[
            r#"{"id":"x1","text":"a","annotations":[{"annotator":"a0","label":1},{"annotator":"a0","label":0}]}"#,
        ]);
        assert!(load_jsonl(f.path(), Split::Train).is_err());
    }

    #[test]
    fn rejects_non_binary_label_and_empty_annotations() {
        let f =
            write_temp(&[r#"{"id":"x1","text":"a","annotations":[{"annotator":"a0","label":2}]}"#]);
        assert!(load_jsonl(f.path(), Split::Train).is_err());
        let f = write_temp(&[r#"{"id":"x1","text":"a","annotations":[]}"#]);
        assert!(load_jsonl(f.path(), Split::Train).is_err());
    }

    #[test]
    fn six_annotator_file_yields_pool_of_six() {
        let anns: Vec<String> = (0..6)
            .map(|i| format!(r#"{{"annotator":"a{i}","label":{}}}"#, i % 2))
            .collect();
        let line = format!(
            r#"{{"id":"x1","text":"t","annotations":[{}]}}"#,
            anns.join(",")
        );
        let f = write_temp(&[line.as_str()]);
        let ds = load_jsonl(f.path(), Split::Train).unwrap();
        assert_eq!(ds.annotator_pool.len(), 6);
    }

    #[test]
    fn jsonl_roundtrip_preserves_dataset() {
        let rng = SeededRng::new(5);
        let cfg = SynthConfig {
            spec: SynthSpec::default(),
            n_instances: 20,
            split: Split::Dev,
        };
        let ds = generate_synthetic(&cfg, &rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dev.jsonl");
        write_jsonl(&ds, &path).unwrap();
        let reloaded = load_jsonl(&path, Split::Dev).unwrap();
        assert_eq!(ds, reloaded);
    }

    fn tiny_dataset() -> RawDataset {
        let records = vec![
            AnnotationRecord {
                id: "x1".into(),
                text: "one".into(),
                annotations: vec![
                    Annotation {
                        annotator: "a0".into(),
                        label: 1,
                    },
                    Annotation {
                        annotator: "a1".into(),
                        label: 0,
                    },
                    Annotation {
                        annotator: "a2".into(),
                        label: 1,
                    },
                ],
            },
            AnnotationRecord {
                id: "x2".into(),
                text: "two".into(),
                annotations: vec![
                    Annotation {
                        annotator: "a0".into(),
                        label: 0,
                    },
                    Annotation {
                        annotator: "a1".into(),
                        label: 0,
                    },
                    Annotation {
                        annotator: "a2".into(),
                        label: 1,
                    },
                ],
            },
        ];
        RawDataset::new(records, Split::Train).unwrap()
    }

    #[test]
    fn expand_counts_pairs() {
        let pool = expand_pairs(&tiny_dataset());
        assert_eq!(pool.len(), 6);
        assert_eq!(pool.unlabeled_count(), 6);
        assert_eq!(pool.spent_budget(), 0);
    }

    #[test]
    fn expand_is_lossless() {
        let ds = tiny_dataset();
        let pool = expand_pairs(&ds);
        for rec in &ds.records {
            let idxs = pool.instance_pairs(&rec.id);
            assert_eq!(idxs.len(), rec.annotations.len());
            let mut from_pool: Vec<(String, u8)> = idxs
                .iter()
                .map(|&i| (pool.pair(i).annotator_id.clone(), pool.pair(i).label))
                .collect();
            from_pool.sort();
            let mut orig: Vec<(String, u8)> = rec
                .annotations
                .iter()
                .map(|a| (a.annotator.clone(), a.label))
                .collect();
            orig.sort();
            assert_eq!(from_pool, orig);
        }
    }

    #[test]
    fn ledger_counts_transitions_and_rejects_double_labeling() {
        let mut pool = expand_pairs(&tiny_dataset());
        let idx = pool.find("x1", "a0").unwrap();
        pool.mark_labeled(idx).unwrap();
        assert_eq!(pool.spent_budget(), 1);
        assert_eq!(pool.unlabeled_count(), 5);
        assert!(pool.mark_labeled(idx).is_err());
        assert_eq!(pool.spent_budget(), 1);
    }

    #[test]
    fn unlabeled_views_track_state() {
        let mut pool = expand_pairs(&tiny_dataset());
        for i in pool.unlabeled_of_instance("x1") {
            pool.mark_labeled(i).unwrap();
        }
        assert_eq!(pool.instances_with_unlabeled(), vec!["x2"]);
        assert!(pool.unlabeled_of_instance("x1").is_empty());
        assert_eq!(pool.labeled_indices().len(), 3);
    }

    #[test]
    fn majority_vote_rules() {
        assert_eq!(majority_vote(&[1, 1, 0]).unwrap(), 1);
        assert_eq!(majority_vote(&[0, 0, 0, 1]).unwrap(), 0);
        assert_eq!(majority_vote(&[1, 0]).unwrap(), 1);
        assert!(majority_vote(&[]).is_err());
    }

    #[test]
    fn oversample_reaches_parity() {
        let labels = [0, 0, 0, 0, 0, 0, 0, 0, 0, 1];
        let mut rng = SeededRng::new(1);
        let (idxs, degenerate) = oversample_indices(&labels, &mut rng);
        assert!(!degenerate);
        assert_eq!(idxs.len(), 18);
        let pos = idxs.iter().filter(|&&i| labels[i] == 1).count();
        assert_eq!(pos, 9);
        assert_eq!(&idxs[..10], &(0..10).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn oversample_balanced_is_identity() {
        let labels = [0, 1, 0, 1];
        let mut rng = SeededRng::new(1);
        let (idxs, degenerate) = oversample_indices(&labels, &mut rng);
        assert!(!degenerate);
        assert_eq!(idxs, vec![0, 1, 2, 3]);
    }

    #[test]
    fn oversample_single_class_flags_degenerate() {
        let labels = [0, 0, 0];
        let mut rng = SeededRng::new(1);
        let (idxs, degenerate) = oversample_indices(&labels, &mut rng);
        assert!(degenerate);
        assert_eq!(idxs, vec![0, 1, 2]);
    }

    #[test]
    fn disagreement_examples() {
        let rec = AnnotationRecord {
            id: "x".into(),
            text: "t".into(),
            annotations: [1, 1, 1, 0, 0, 0]
                .iter()
                .enumerate()
                .map(|(i, &l)| Annotation {
                    annotator: format!("a{i}"),
                    label: l,
                })
                .collect(),
        };
        assert_eq!(annotation_disagreement(&rec).unwrap(), 0.25);
        let unanimous = AnnotationRecord {
            id: "y".into(),
            text: "t".into(),
            annotations: vec![
                Annotation {
                    annotator: "a0".into(),
                    label: 1,
                },
                Annotation {
                    annotator: "a1".into(),
                    label: 1,
                },
            ],
        };
        assert_eq!(annotation_disagreement(&unanimous).unwrap(), 0.0);
        let three = AnnotationRecord {
            id: "z".into(),
            text: "t".into(),
            annotations: vec![
                Annotation {
                    annotator: "a0".into(),
                    label: 1,
                },
                Annotation {
                    annotator: "a1".into(),
                    label: 0,
                },
                Annotation {
                    annotator: "a2".into(),
                    label: 0,
                },
            ],
        };
        let d = annotation_disagreement(&three).unwrap();
        assert!((d - 2.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn synthetic_dense_has_full_annotation_rows() {
        let rng = SeededRng::new(9);
        let cfg = SynthConfig {
            spec: SynthSpec::default(),
            n_instances: 50,
            split: Split::Train,
        };
        let ds = generate_synthetic(&cfg, &rng).unwrap();
        assert_eq!(ds.len(), 50);
        assert!(ds.records.iter().all(|r| r.annotations.len() == 6));
        assert_eq!(ds.annotator_pool.len(), 6);
    }

    #[test]
    fn synthetic_sparse_samples_subsets() {
        let rng = SeededRng::new(9);
        let cfg = SynthConfig {
            spec: SynthSpec {
                n_annotators: 18,
                density: Density::Sparse { per_instance: 3 },
                ..SynthSpec::default()
            },
            n_instances: 200,
            split: Split::Train,
        };
        let ds = generate_synthetic(&cfg, &rng).unwrap();
        assert!(ds.records.iter().all(|r| r.annotations.len() == 3));
        assert_eq!(ds.annotator_pool.len(), 18);
    }

    #[test]
    fn synthetic_noiseless_equal_thresholds_are_unanimous() {
        let rng = SeededRng::new(3);
        let cfg = SynthConfig {
            spec: SynthSpec {
                bias_spread: 0.0,
                noise_range: (0.0, 0.0),
                ..SynthSpec::default()
            },
            n_instances: 100,
            split: Split::Train,
        };
        let ds = generate_synthetic(&cfg, &rng).unwrap();
        for rec in &ds.records {
            assert_eq!(annotation_disagreement(rec).unwrap(), 0.0);
        }
    }

    #[test]
    fn synthetic_is_bit_reproducible() {
        let cfg = SynthConfig {
            spec: SynthSpec::default(),
            n_instances: 40,
            split: Split::Test,
        };
        let a = generate_synthetic(&cfg, &SeededRng::new(21)).unwrap();
        let b = generate_synthetic(&cfg, &SeededRng::new(21)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&cfg, &SeededRng::new(22)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_noise_raises_disagreement() {
        let quiet_cfg = SynthConfig {
            spec: SynthSpec {
                noise_range: (0.0, 0.02),
                ..SynthSpec::default()
            },
            n_instances: 300,
            split: Split::Train,
        };
        let loud_cfg = SynthConfig {
            spec: SynthSpec {
                noise_range: (0.25, 0.35),
                ..SynthSpec::default()
            },
            n_instances: 300,
            split: Split::Train,
        };
        let mean_disagreement = |cfg: &SynthConfig| {
            let ds = generate_synthetic(cfg, &SeededRng::new(13)).unwrap();
            ds.records
                .iter()
                .map(|r| annotation_disagreement(r).unwrap())
                .sum::<f64>()
                / ds.len() as f64
        };
        assert!(mean_disagreement(&loud_cfg) > mean_disagreement(&quiet_cfg));
    }

    #[test]
    fn synthetic_positive_rate_lands_near_target() {
        let cfg = SynthConfig {
            spec: SynthSpec::default(),
            n_instances: 2000,
            split: Split::Train,
        };
        let ds = generate_synthetic(&cfg, &SeededRng::new(17)).unwrap();
        let total = ds.annotation_count() as f64;
        let pos = ds
            .records
            .iter()
            .flat_map(|r| r.annotations.iter())
            .filter(|a| a.label == 1)
            .count() as f64;
        let rate = pos / total;
        assert!((0.08..=0.25).contains(&rate), "raw positive rate {rate}");
    }

    #[test]
    fn synthetic_rejects_bad_config() {
        let bad = SynthSpec {
            n_annotators: 4,
            density: Density::Sparse { per_instance: 9 },
            positive_rate: 1.5,
            ..SynthSpec::default()
        };
        match bad.validate() {
            Err(Error::Validation(problems)) => assert_eq!(problems.len(), 2),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn majority_is_permutation_invariant(mut labels in prop::collection::vec(0u8..2, 1..12), seed in 0u64..1000) {
                let before = majority_vote(&labels).unwrap();
                SeededRng::new(seed).shuffle(&mut labels);
                prop_assert_eq!(majority_vote(&labels).unwrap(), before);
            }

            #[test]
            fn oversample_keeps_originals_and_balances(labels in prop::collection::vec(0u8..2, 1..40), seed in 0u64..1000) {
                let mut rng = SeededRng::new(seed);
                let (idxs, degenerate) = oversample_indices(&labels, &mut rng);
                // Identity prefix: every original index kept in order.
                prop_assert_eq!(&idxs[..labels.len()], &(0..labels.len()).collect::<Vec<_>>()[..]);
                let pos = idxs.iter().filter(|&&i| labels[i] == 1).count();
                let neg = idxs.len() - pos;
                if degenerate {
                    prop_assert_eq!(idxs.len(), labels.len());
                } else {
                    prop_assert_eq!(pos, neg);
                }
            }
        }
    }
}
