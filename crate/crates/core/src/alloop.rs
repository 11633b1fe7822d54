//! The experiment loop: seed-set construction, per-round retraining,
//! evaluation, acquisition, and multi-seed replication.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{self, GroupNorm, Method, ModelView, Policy, ScoreConfig};
use crate::data::{self, AnnotationPair, PairPool, RawDataset, Split, SynthConfig, SynthSpec};
use crate::metrics::{self, IndividualAggregation, RoundMetrics};
use crate::model::{
    EncoderConfig, FeatureCache, Features, MultiHeadModel, SingleHeadModel, TrainConfig,
};
use crate::numerics::{self, SeededRng};
use crate::{Error, Result};

/// Which classifier the experiment arm trains and how labels reach it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// Shared encoder, one head per annotator, trained on individual pairs.
    MultiHead,
    /// One head trained on per-instance majority labels; queries claim whole
    /// instances.
    SingleMajority,
    /// One head trained on individual pair labels.
    SingleAnnotation,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [
        ModelKind::MultiHead,
        ModelKind::SingleMajority,
        ModelKind::SingleAnnotation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::MultiHead => "multi_head",
            ModelKind::SingleMajority => "single_majority",
            ModelKind::SingleAnnotation => "single_annotation",
        }
    }

    pub fn parse(s: &str) -> Result<ModelKind> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown model kind {s:?}; expected multi_head, single_majority, or \
                     single_annotation"
                ))
            })
    }
}

/// Where the three splits come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// JSONL files, one per split.
    Files {
        train: PathBuf,
        dev: PathBuf,
        test: PathBuf,
    },
    /// Generated in-process; the same `data_seed` yields the same splits for
    /// every replication seed.
    Synthetic {
        spec: SynthSpec,
        n_train: usize,
        n_dev: usize,
        n_test: usize,
        data_seed: u64,
    },
}

/// Everything one experiment arm needs.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub model_kind: ModelKind,
    pub method: Method,
    /// `None` picks the default policy for (method, model kind).
    pub policy: Option<Policy>,
    pub group_norm: GroupNorm,
    pub bald_passes: usize,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub seed_budget: usize,
    pub round_budget: usize,
    pub n_rounds: usize,
    pub replication_seeds: Vec<u64>,
    pub aggregation: IndividualAggregation,
}

impl ExperimentConfig {
    /// The policy the run will actually use: the configured override when
    /// present, otherwise the default for this method and model kind.
    pub fn effective_policy(&self) -> Result<Policy> {
        resolve_policy(self.method, self.model_kind, self.policy)
    }

    /// Checks every structural constraint and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.seed_budget == 0 {
            problems.push("seed budget must be at least 1".to_string());
        }
        if self.round_budget == 0 {
            problems.push("round budget must be at least 1".to_string());
        }
        if self.n_rounds == 0 {
            problems.push("experiment needs at least 1 round".to_string());
        }
        if self.replication_seeds.is_empty() {
            problems.push("at least one replication seed is required".to_string());
        }
        let mut sorted = self.replication_seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.replication_seeds.len() {
            problems.push("replication seeds must be distinct".to_string());
        }
        if self.bald_passes < 2 {
            problems.push(format!(
                "bald_passes must be at least 2, got {}",
                self.bald_passes
            ));
        }
        if self.method == Method::Bald && self.encoder.dropout_rate == 0.0 {
            problems.push("bald scoring needs dropout_rate > 0".to_string());
        }
        if let Err(e) = resolve_policy(self.method, self.model_kind, self.policy) {
            problems.push(e.to_string());
        }
        if let Err(e) = self.encoder.validate() {
            problems.push(e.to_string());
        }
        if let Err(e) = self.train.validate() {
            problems.push(e.to_string());
        }
        if let DataSource::Synthetic {
            spec,
            n_train,
            n_dev,
            n_test,
            ..
        } = &self.data
        {
            if let Err(e) = spec.validate() {
                problems.push(e.to_string());
            }
            for (name, n) in [("train", n_train), ("dev", n_dev), ("test", n_test)] {
                if *n == 0 {
                    problems.push(format!("synthetic {name} split must be nonempty"));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

fn resolve_policy(method: Method, kind: ModelKind, wanted: Option<Policy>) -> Result<Policy> {
    if method.is_multi_head() != (kind == ModelKind::MultiHead) {
        return Err(Error::InvalidInput(format!(
            "method {} cannot drive a {} model",
            method.as_str(),
            kind.as_str()
        )));
    }
    let default = match (kind, method) {
        (ModelKind::MultiHead, Method::RandMh | Method::Indi | Method::Mix) => Policy::Pairwise,
        (ModelKind::MultiHead, _) => Policy::LabelDiv,
        (ModelKind::SingleMajority, _) => Policy::LabelDiv,
        (ModelKind::SingleAnnotation, Method::RandSh) => Policy::Pairwise,
        (ModelKind::SingleAnnotation, _) => Policy::SampleDiv,
    };
    let policy = wanted.unwrap_or(default);
    if kind == ModelKind::SingleMajority && policy != Policy::LabelDiv {
        return Err(Error::InvalidInput(format!(
            "single_majority queries claim whole instances; policy {} is incompatible",
            policy.as_str()
        )));
    }
    if let Some(scores_pairs) = method.scores_pairs() {
        let wants_pairs = policy == Policy::Pairwise;
        if scores_pairs != wants_pairs {
            return Err(Error::InvalidInput(format!(
                "method {} cannot drive the {} policy",
                method.as_str(),
                policy.as_str()
            )));
        }
    }
    Ok(policy)
}

/// The three splits, loaded or generated.
#[derive(Clone, Debug)]
pub struct LoadedData {
    pub train: RawDataset,
    pub dev: RawDataset,
    pub test: RawDataset,
}

impl LoadedData {
    /// Union of the annotator pools across splits, so the model always has a
    /// head for whoever shows up.
    pub fn annotator_union(&self) -> std::collections::BTreeSet<String> {
        self.train
            .annotator_pool
            .iter()
            .chain(&self.dev.annotator_pool)
            .chain(&self.test.annotator_pool)
            .cloned()
            .collect()
    }
}

/// Loads JSONL splits or generates synthetic ones per the config.
pub fn load_data(source: &DataSource) -> Result<LoadedData> {
    match source {
        DataSource::Files { train, dev, test } => Ok(LoadedData {
            train: data::load_jsonl(train, Split::Train)?,
            dev: data::load_jsonl(dev, Split::Dev)?,
            test: data::load_jsonl(test, Split::Test)?,
        }),
        DataSource::Synthetic {
            spec,
            n_train,
            n_dev,
            n_test,
            data_seed,
        } => {
            let rng = SeededRng::new(*data_seed);
            let gen = |n: usize, split: Split| {
                data::generate_synthetic(
                    &SynthConfig {
                        spec: spec.clone(),
                        n_instances: n,
                        split,
                    },
                    &rng,
                )
            };
            Ok(LoadedData {
                train: gen(*n_train, Split::Train)?,
                dev: gen(*n_dev, Split::Dev)?,
                test: gen(*n_test, Split::Test)?,
            })
        }
    }
}

/// Marks the initial labeled set in the pool. Multi-head and
/// single-annotation arms draw uniform random pairs; the single-majority arm
/// claims random instances whole, clamping the last to the leftover budget.
pub fn build_seed_set(
    pool: &mut PairPool,
    kind: ModelKind,
    seed_budget: usize,
    rng: &mut SeededRng,
) -> Result<()> {
    if pool.len() < seed_budget {
        return Err(Error::InsufficientPool {
            needed: seed_budget,
            available: pool.len(),
        });
    }
    match kind {
        ModelKind::MultiHead | ModelKind::SingleAnnotation => {
            for idx in rng.sample_indices(pool.len(), seed_budget) {
                pool.mark_labeled(idx)?;
            }
        }
        ModelKind::SingleMajority => {
            let mut instances: Vec<String> = pool.instance_ids().map(str::to_string).collect();
            rng.shuffle(&mut instances);
            let mut remaining = seed_budget;
            for instance in instances {
                if remaining == 0 {
                    break;
                }
                let open = pool.unlabeled_of_instance(&instance);
                let claim: Vec<usize> = if open.len() <= remaining {
                    open
                } else {
                    rng.sample_indices(open.len(), remaining)
                        .into_iter()
                        .map(|i| open[i])
                        .collect()
                };
                for idx in claim {
                    pool.mark_labeled(idx)?;
                    remaining -= 1;
                }
            }
        }
    }
    Ok(())
}

/// One round's evaluation, budget state, and timing.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    /// Labeled pairs at training time: seed + round x K until exhaustion.
    pub cost: usize,
    pub majority_f1: f64,
    pub individual_f1: f64,
    pub uncertainty_pearson: f64,
    pub majority_f1_undefined: bool,
    pub individual_f1_undefined: bool,
    pub uncertainty_degenerate: bool,
    /// This round's acquisition could not fill the budget.
    pub exhausted: bool,
    /// Not part of any persisted artifact; those must be byte-reproducible.
    pub wall_seconds: f64,
}

/// All rounds of one replication seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub rounds: Vec<RoundReport>,
}

/// Mean and population stddev over replication seeds for one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub round: usize,
    pub cost: usize,
    pub majority_f1_mean: f64,
    pub majority_f1_std: f64,
    pub individual_f1_mean: f64,
    pub individual_f1_std: f64,
    pub uncertainty_pearson_mean: f64,
    pub uncertainty_pearson_std: f64,
}

/// Everything an experiment arm produced.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub method: String,
    pub policy: String,
    pub seeds: Vec<SeedRun>,
    pub aggregate: Vec<AggregateRow>,
    /// First round whose acquisition could not fill the budget, if any.
    pub exhausted_at: Option<usize>,
}

/// The persisted aggregate view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub method: String,
    pub policy: String,
    pub seeds: Vec<u64>,
    pub exhausted_at: Option<usize>,
    pub rounds: Vec<AggregateRow>,
}

impl ExperimentResult {
    pub fn summary(&self, seeds: &[u64]) -> ExperimentSummary {
        ExperimentSummary {
            method: self.method.clone(),
            policy: self.policy.clone(),
            seeds: seeds.to_vec(),
            exhausted_at: self.exhausted_at,
            rounds: self.aggregate.clone(),
        }
    }
}

struct SeedContext<'a> {
    cfg: &'a ExperimentConfig,
    policy: Policy,
    data: &'a LoadedData,
    train_cache: &'a FeatureCache,
    dev_cache: &'a FeatureCache,
    test_cache: &'a FeatureCache,
    dev_golds: &'a [(String, u8)],
    annotators: &'a std::collections::BTreeSet<String>,
}

/// Per-seed outcomes. A nonempty `failures` means the arm failed, but the
/// seeds that did finish are still here for partial persistence.
#[derive(Clone, Debug)]
pub struct ReplicationOutcome {
    pub completed: Vec<SeedRun>,
    pub failures: Vec<(u64, String)>,
}

/// Runs every replication seed of the experiment arm. Seeds execute in
/// parallel; results come back in seed order, bit-identical from run to run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let data = load_data(&cfg.data)?;
    run_experiment_on(cfg, &data)
}

/// Same as [`run_experiment`] with the data already in memory.
pub fn run_experiment_on(cfg: &ExperimentConfig, data: &LoadedData) -> Result<ExperimentResult> {
    let outcome = run_replications(cfg, data)?;
    if let Some((seed, msg)) = outcome.failures.first() {
        return Err(Error::InvalidInput(format!(
            "replication seed {seed} failed: {msg}"
        )));
    }
    assemble_result(cfg, outcome.completed)
}

/// Runs the seeds and reports per-seed failures instead of dropping finished
/// work. `Err` here means the setup itself was unusable.
pub fn run_replications(cfg: &ExperimentConfig, data: &LoadedData) -> Result<ReplicationOutcome> {
    cfg.validate()?;
    for (name, split) in [
        ("train", &data.train),
        ("dev", &data.dev),
        ("test", &data.test),
    ] {
        if split.records.is_empty() {
            return Err(Error::InvalidInput(format!("{name} split is empty")));
        }
    }
    let policy = cfg.effective_policy()?;
    let hash_dim = cfg.encoder.hash_dim;
    let train_cache = FeatureCache::build(&data.train.records, hash_dim);
    let dev_cache = FeatureCache::build(&data.dev.records, hash_dim);
    let test_cache = FeatureCache::build(&data.test.records, hash_dim);
    let dev_golds: Vec<(String, u8)> = data
        .dev
        .records
        .iter()
        .map(|r| Ok((r.id.clone(), data::majority_vote(&r.labels())?)))
        .collect::<Result<_>>()?;
    let annotators = data.annotator_union();

    let ctx = SeedContext {
        cfg,
        policy,
        data,
        train_cache: &train_cache,
        dev_cache: &dev_cache,
        test_cache: &test_cache,
        dev_golds: &dev_golds,
        annotators: &annotators,
    };

    let seed_runs: Vec<(u64, Result<SeedRun>)> = cfg
        .replication_seeds
        .par_iter()
        .map(|&seed| (seed, run_seed(&ctx, seed)))
        .collect();
    let mut outcome = ReplicationOutcome {
        completed: Vec::with_capacity(seed_runs.len()),
        failures: Vec::new(),
    };
    for (seed, run) in seed_runs {
        match run {
            Ok(r) => outcome.completed.push(r),
            Err(e) => outcome.failures.push((seed, e.to_string())),
        }
    }
    Ok(outcome)
}

/// Aggregates finished seed runs into the final result.
pub fn assemble_result(cfg: &ExperimentConfig, seeds: Vec<SeedRun>) -> Result<ExperimentResult> {
    if seeds.is_empty() {
        return Err(Error::InvalidInput("no completed seed runs".into()));
    }
    let aggregate = aggregate_rounds(&seeds)?;
    let exhausted_at = seeds[0]
        .rounds
        .iter()
        .find(|r| r.exhausted)
        .map(|r| r.round);
    Ok(ExperimentResult {
        method: cfg.method.as_str().to_string(),
        policy: cfg.effective_policy()?.as_str().to_string(),
        seeds,
        aggregate,
        exhausted_at,
    })
}

fn run_seed(ctx: &SeedContext<'_>, seed: u64) -> Result<SeedRun> {
    let cfg = ctx.cfg;
    let master = SeededRng::new(seed);
    let mut pool = data::expand_pairs(&ctx.data.train);
    build_seed_set(
        &mut pool,
        cfg.model_kind,
        cfg.seed_budget,
        &mut master.substream("seed_set"),
    )?;

    let dev: Vec<(&Features, u8)> = ctx
        .dev_golds
        .iter()
        .map(|(id, gold)| Ok((ctx.dev_cache.get(id)?, *gold)))
        .collect::<Result<_>>()?;

    let score_cfg = ScoreConfig {
        group_norm: cfg.group_norm,
        bald_passes: cfg.bald_passes,
    };
    let mut rounds = Vec::new();
    for round in 0..cfg.n_rounds {
        let started = Instant::now();
        let cost = pool.spent_budget();
        let mut train_rng = master.substream(&format!("train{round}"));

        enum Trained {
            Multi(MultiHeadModel),
            Single(SingleHeadModel),
        }
        let labeled: Vec<&AnnotationPair> = pool
            .labeled_indices()
            .into_iter()
            .map(|i| pool.pair(i))
            .collect();
        let (model, m): (Trained, RoundMetrics) = match cfg.model_kind {
            ModelKind::MultiHead => {
                let mut model = MultiHeadModel::init(
                    ctx.annotators,
                    cfg.encoder,
                    &mut master.substream("init"),
                )?;
                model.fit(&labeled, ctx.train_cache, &dev, &cfg.train, &mut train_rng)?;
                let m = metrics::evaluate_multi(
                    &model,
                    &ctx.data.test,
                    ctx.test_cache,
                    cfg.aggregation,
                )?;
                (Trained::Multi(model), m)
            }
            ModelKind::SingleMajority => {
                let mut by_instance: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
                for pair in &labeled {
                    by_instance
                        .entry(pair.instance_id.as_str())
                        .or_default()
                        .push(pair.label);
                }
                let examples: Vec<(&Features, u8)> = by_instance
                    .iter()
                    .map(|(id, labels)| {
                        Ok((ctx.train_cache.get(id)?, data::majority_vote(labels)?))
                    })
                    .collect::<Result<_>>()?;
                let mut model = SingleHeadModel::init(cfg.encoder, &mut master.substream("init"))?;
                model.fit(&examples, &dev, &cfg.train, &mut train_rng)?;
                let m = metrics::evaluate_single(
                    &model,
                    &ctx.data.test,
                    ctx.test_cache,
                    cfg.aggregation,
                )?;
                (Trained::Single(model), m)
            }
            ModelKind::SingleAnnotation => {
                let examples: Vec<(&Features, u8)> = labeled
                    .iter()
                    .map(|pair| Ok((ctx.train_cache.get(&pair.instance_id)?, pair.label)))
                    .collect::<Result<_>>()?;
                let mut model = SingleHeadModel::init(cfg.encoder, &mut master.substream("init"))?;
                model.fit(&examples, &dev, &cfg.train, &mut train_rng)?;
                let m = metrics::evaluate_single(
                    &model,
                    &ctx.data.test,
                    ctx.test_cache,
                    cfg.aggregation,
                )?;
                (Trained::Single(model), m)
            }
        };
        drop(labeled);

        let mut acq_rng = master.substream(&format!("acquire{round}"));
        let view = match &model {
            Trained::Multi(m) => ModelView::Multi(m),
            Trained::Single(s) => ModelView::Single(s),
        };
        let candidates = acquisition::score_candidates(
            cfg.method,
            ctx.policy,
            &view,
            &pool,
            ctx.train_cache,
            &score_cfg,
            &mut acq_rng,
        )?;
        let batch = acquisition::select_batch(
            &candidates,
            ctx.policy,
            &pool,
            cfg.round_budget,
            &mut acq_rng,
        )?;
        for &idx in &batch.pair_indices {
            pool.mark_labeled(idx)?;
        }

        rounds.push(RoundReport {
            round,
            cost,
            majority_f1: m.majority_f1.value,
            individual_f1: m.individual_f1.value,
            uncertainty_pearson: m.uncertainty.r,
            majority_f1_undefined: m.majority_f1.undefined,
            individual_f1_undefined: m.individual_f1.undefined,
            uncertainty_degenerate: m.uncertainty.degenerate,
            exhausted: batch.exhausted,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        if batch.cost == 0 {
            break;
        }
    }
    Ok(SeedRun { seed, rounds })
}

fn aggregate_rounds(seeds: &[SeedRun]) -> Result<Vec<AggregateRow>> {
    let n_rounds = seeds[0].rounds.len();
    for run in seeds {
        if run.rounds.len() != n_rounds {
            return Err(Error::InvalidInput(format!(
                "seed {} ran {} rounds, expected {n_rounds}; round structures must match",
                run.seed,
                run.rounds.len()
            )));
        }
    }
    (0..n_rounds)
        .map(|r| {
            let cost = seeds[0].rounds[r].cost;
            for run in seeds {
                if run.rounds[r].cost != cost {
                    return Err(Error::InvalidInput(format!(
                        "seed {} diverged on round {r} cost ({} vs {cost})",
                        run.seed, run.rounds[r].cost
                    )));
                }
            }
            let stat = |get: fn(&RoundReport) -> f64| -> Result<(f64, f64)> {
                let values: Vec<f64> = seeds.iter().map(|s| get(&s.rounds[r])).collect();
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                Ok((mean, numerics::variance(&values)?.sqrt()))
            };
            let (mf, mf_s) = stat(|x| x.majority_f1)?;
            let (inf, inf_s) = stat(|x| x.individual_f1)?;
            let (up, up_s) = stat(|x| x.uncertainty_pearson)?;
            Ok(AggregateRow {
                round: r,
                cost,
                majority_f1_mean: mf,
                majority_f1_std: mf_s,
                individual_f1_mean: inf,
                individual_f1_std: inf_s,
                uncertainty_pearson_mean: up,
                uncertainty_pearson_std: up_s,
            })
        })
        .collect()
}

/// Per-round CSV: one row per (seed, round), six-decimal floats, byte-stable.
pub fn write_round_csv(result: &ExperimentResult, out: &mut impl Write) -> Result<()> {
    write_rounds_rows(&result.method, &result.policy, &result.seeds, out)
}

/// Same CSV shape from bare seed runs, e.g. the completed part of a failed
/// arm.
pub fn write_rounds_rows(
    method: &str,
    policy: &str,
    seeds: &[SeedRun],
    out: &mut impl Write,
) -> Result<()> {
    writeln!(
        out,
        "method,policy,seed,round,cost,majority_f1,individual_f1,uncertainty_pearson"
    )?;
    for run in seeds {
        for r in &run.rounds {
            writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.6},{:.6}",
                method,
                policy,
                run.seed,
                r.round,
                r.cost,
                r.majority_f1,
                r.individual_f1,
                r.uncertainty_pearson
            )?;
        }
    }
    Ok(())
}

/// Aggregate JSON summary, byte-stable field order.
pub fn write_summary_json(
    result: &ExperimentResult,
    seeds: &[u64],
    out: &mut impl Write,
) -> Result<()> {
    let summary = result.summary(seeds);
    serde_json::to_writer_pretty(&mut *out, &summary)
        .map_err(|e| Error::InvalidInput(format!("serialize summary: {e}")))?;
    out.write_all(b"\n")?;
    Ok(())
}
