//! TOML experiment configuration: schema, defaults, overrides, resolution
//! into a core [`ExperimentConfig`], and the content hash that keys results
//! directories.

use std::path::{Path, PathBuf};

use headcount::acquisition::{GroupNorm, Method, Policy};
use headcount::alloop::{DataSource, ExperimentConfig, ModelKind};
use headcount::data::{Density, SynthSpec};
use headcount::metrics::IndividualAggregation;
use headcount::model::{EncoderConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataSection,
    pub model: ModelSection,
    pub acquisition: AcquisitionSection,
    pub al: AlSection,
    pub train: TrainSection,
    pub replication: ReplicationSection,
    pub metrics: MetricsSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// "synthetic" or "files".
    pub source: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// "dense6", "sparse18", or "custom".
    pub profile: String,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    /// Fixed across replication seeds: every seed sees identical data.
    pub data_seed: u64,
    /// Annotator count; only read by the custom profile.
    pub annotators: usize,
    /// Annotators per instance for the custom profile; 0 means everyone.
    pub per_instance: usize,
    pub positive_rate: f64,
    pub bias_spread: f64,
    pub noise_min: f64,
    pub noise_max: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: "synthetic".into(),
            train: None,
            dev: None,
            test: None,
            profile: "dense6".into(),
            n_train: 1000,
            n_dev: 140,
            n_test: 140,
            data_seed: 0,
            annotators: 6,
            per_instance: 0,
            positive_rate: 0.15,
            bias_spread: 0.1,
            noise_min: 0.05,
            noise_max: 0.25,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// "multi_head", "single_majority", or "single_annotation".
    pub kind: String,
    pub hash_dim: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let cfg = EncoderConfig::default();
        ModelSection {
            kind: "multi_head".into(),
            hash_dim: cfg.hash_dim,
            hidden_dim: cfg.hidden_dim,
            dropout: cfg.dropout_rate,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionSection {
    pub method: String,
    /// "auto" picks the default policy for (method, model kind).
    pub policy: String,
    /// "centered_l2" or "softmax".
    pub group_norm: String,
    pub bald_passes: usize,
}

impl Default for AcquisitionSection {
    fn default() -> Self {
        AcquisitionSection {
            method: "rand_mh".into(),
            policy: "auto".into(),
            group_norm: GroupNorm::default().as_str().into(),
            bald_passes: 10,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlSection {
    /// Default depends on the data shape: 60 dense, 200 sparse.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed_budget: Option<usize>,
    /// Same default rule as seed_budget.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub round_budget: Option<usize>,
    pub rounds: usize,
}

impl Default for AlSection {
    fn default() -> Self {
        AlSection {
            seed_budget: None,
            round_budget: None,
            rounds: 25,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub peak_lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub eval_every: usize,
    pub class_weighting: bool,
    pub lr_halving: bool,
    pub oversample: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainConfig::default().into()
    }
}

impl From<TrainConfig> for TrainSection {
    fn from(cfg: TrainConfig) -> Self {
        TrainSection {
            peak_lr: cfg.peak_lr,
            batch_size: cfg.batch_size,
            weight_decay: cfg.weight_decay,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            grad_clip: cfg.grad_clip,
            patience: cfg.patience,
            max_epochs: cfg.max_epochs,
            eval_every: cfg.eval_every,
            class_weighting: cfg.class_weighting,
            lr_halving: cfg.lr_halving,
            oversample: cfg.oversample,
        }
    }
}

impl TrainSection {
    fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            peak_lr: self.peak_lr,
            batch_size: self.batch_size,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            grad_clip: self.grad_clip,
            patience: self.patience,
            max_epochs: self.max_epochs,
            eval_every: self.eval_every,
            class_weighting: self.class_weighting,
            lr_halving: self.lr_halving,
            oversample: self.oversample,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicationSection {
    pub seeds: Vec<u64>,
}

impl Default for ReplicationSection {
    fn default() -> Self {
        ReplicationSection {
            seeds: vec![0, 1, 2, 3],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    /// "macro" or "pooled".
    pub individual_aggregation: String,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            individual_aggregation: "macro".into(),
        }
    }
}

pub fn load_file(path: &Path) -> Result<Config, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))
}

/// Applies one `section.key = value` override on top of file/default values.
pub fn apply_override(cfg: &mut Config, key: &str, value: &str) -> Result<(), String> {
    fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
    where
        T::Err: std::fmt::Display,
    {
        value
            .parse()
            .map_err(|e| format!("invalid value {value:?} for {key}: {e}"))
    }
    let d = &mut cfg.data;
    let t = &mut cfg.train;
    match key {
        "data.source" => d.source = value.into(),
        "data.train" => d.train = Some(value.into()),
        "data.dev" => d.dev = Some(value.into()),
        "data.test" => d.test = Some(value.into()),
        "data.profile" => d.profile = value.into(),
        "data.n_train" => d.n_train = parse(key, value)?,
        "data.n_dev" => d.n_dev = parse(key, value)?,
        "data.n_test" => d.n_test = parse(key, value)?,
        "data.data_seed" => d.data_seed = parse(key, value)?,
        "data.annotators" => d.annotators = parse(key, value)?,
        "data.per_instance" => d.per_instance = parse(key, value)?,
        "data.positive_rate" => d.positive_rate = parse(key, value)?,
        "data.bias_spread" => d.bias_spread = parse(key, value)?,
        "data.noise_min" => d.noise_min = parse(key, value)?,
        "data.noise_max" => d.noise_max = parse(key, value)?,
        "model.kind" => cfg.model.kind = value.into(),
        "model.hash_dim" => cfg.model.hash_dim = parse(key, value)?,
        "model.hidden_dim" => cfg.model.hidden_dim = parse(key, value)?,
        "model.dropout" => cfg.model.dropout = parse(key, value)?,
        "acquisition.method" => cfg.acquisition.method = value.into(),
        "acquisition.policy" => cfg.acquisition.policy = value.into(),
        "acquisition.group_norm" => cfg.acquisition.group_norm = value.into(),
        "acquisition.bald_passes" => cfg.acquisition.bald_passes = parse(key, value)?,
        "al.seed_budget" => cfg.al.seed_budget = Some(parse(key, value)?),
        "al.round_budget" => cfg.al.round_budget = Some(parse(key, value)?),
        "al.rounds" => cfg.al.rounds = parse(key, value)?,
        "train.peak_lr" => t.peak_lr = parse(key, value)?,
        "train.batch_size" => t.batch_size = parse(key, value)?,
        "train.weight_decay" => t.weight_decay = parse(key, value)?,
        "train.beta1" => t.beta1 = parse(key, value)?,
        "train.beta2" => t.beta2 = parse(key, value)?,
        "train.eps" => t.eps = parse(key, value)?,
        "train.grad_clip" => t.grad_clip = parse(key, value)?,
        "train.patience" => t.patience = parse(key, value)?,
        "train.max_epochs" => t.max_epochs = parse(key, value)?,
        "train.eval_every" => t.eval_every = parse(key, value)?,
        "train.class_weighting" => t.class_weighting = parse(key, value)?,
        "train.lr_halving" => t.lr_halving = parse(key, value)?,
        "train.oversample" => t.oversample = parse(key, value)?,
        "replication.seeds" => cfg.replication.seeds = parse_seed_list(value)?,
        "metrics.individual_aggregation" => cfg.metrics.individual_aggregation = value.into(),
        _ => return Err(format!("unknown config key {key:?}")),
    }
    Ok(())
}

pub fn parse_seed_list(value: &str) -> Result<Vec<u64>, String> {
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| format!("invalid seed {s:?}: {e}"))
        })
        .collect()
}

/// Builds the synthetic data spec for a profile name; the rate knobs apply to
/// every profile, annotator layout only to "custom".
#[allow(clippy::too_many_arguments)]
pub fn profile_spec(
    profile: &str,
    annotators: usize,
    per_instance: usize,
    positive_rate: f64,
    bias_spread: f64,
    noise_min: f64,
    noise_max: f64,
) -> Result<SynthSpec, String> {
    let (n_annotators, density) = match profile {
        "dense6" => (6, Density::Dense),
        "sparse18" => (18, Density::Sparse { per_instance: 3 }),
        "custom" => (
            annotators,
            if per_instance == 0 {
                Density::Dense
            } else {
                Density::Sparse { per_instance }
            },
        ),
        other => {
            return Err(format!(
                "unknown profile {other:?}; expected dense6, sparse18, or custom"
            ))
        }
    };
    Ok(SynthSpec {
        n_annotators,
        density,
        positive_rate,
        bias_spread,
        noise_range: (noise_min, noise_max),
    })
}

/// A config with every choice made: the core experiment config plus a fully
/// concrete snapshot for hashing and the manifest.
#[derive(Debug)]
pub struct Resolved {
    pub experiment: ExperimentConfig,
    pub snapshot: Config,
}

pub fn resolve(cfg: &Config) -> Result<Resolved, String> {
    let mut problems = Vec::new();

    let model_kind = ModelKind::parse(&cfg.model.kind)
        .map_err(|e| problems.push(e.to_string()))
        .ok();
    let method = Method::parse(&cfg.acquisition.method)
        .map_err(|e| problems.push(e.to_string()))
        .ok();
    let group_norm = GroupNorm::parse(&cfg.acquisition.group_norm)
        .map_err(|e| problems.push(e.to_string()))
        .ok();
    let policy = match cfg.acquisition.policy.as_str() {
        "auto" => None,
        other => Policy::parse(other)
            .map_err(|e| {
                problems.push(e.to_string());
            })
            .ok(),
    };
    let aggregation = match cfg.metrics.individual_aggregation.as_str() {
        "macro" => Some(IndividualAggregation::Macro),
        "pooled" => Some(IndividualAggregation::Pooled),
        other => {
            problems.push(format!(
                "unknown individual_aggregation {other:?}; expected macro or pooled"
            ));
            None
        }
    };

    let d = &cfg.data;
    let (data, dense) = match d.source.as_str() {
        "files" => {
            let mut missing = Vec::new();
            for (name, path) in [("train", &d.train), ("dev", &d.dev), ("test", &d.test)] {
                if path.is_none() {
                    missing.push(name);
                }
            }
            if missing.is_empty() {
                (
                    Some(DataSource::Files {
                        train: d.train.clone().unwrap(),
                        dev: d.dev.clone().unwrap(),
                        test: d.test.clone().unwrap(),
                    }),
                    true,
                )
            } else {
                problems.push(format!(
                    "data.source = \"files\" needs paths for: {}",
                    missing.join(", ")
                ));
                (None, true)
            }
        }
        "synthetic" => match profile_spec(
            &d.profile,
            d.annotators,
            d.per_instance,
            d.positive_rate,
            d.bias_spread,
            d.noise_min,
            d.noise_max,
        ) {
            Ok(spec) => {
                let dense = matches!(spec.density, Density::Dense);
                (
                    Some(DataSource::Synthetic {
                        spec,
                        n_train: d.n_train,
                        n_dev: d.n_dev,
                        n_test: d.n_test,
                        data_seed: d.data_seed,
                    }),
                    dense,
                )
            }
            Err(e) => {
                problems.push(e);
                (None, true)
            }
        },
        other => {
            problems.push(format!(
                "unknown data.source {other:?}; expected synthetic or files"
            ));
            (None, true)
        }
    };

    let default_budget = if dense { 60 } else { 200 };
    let seed_budget = cfg.al.seed_budget.unwrap_or(default_budget);
    let round_budget = cfg.al.round_budget.unwrap_or(default_budget);

    let (Some(data), Some(model_kind), Some(method), Some(group_norm), Some(aggregation)) =
        (data, model_kind, method, group_norm, aggregation)
    else {
        return Err(join_problems(problems));
    };

    let experiment = ExperimentConfig {
        data,
        model_kind,
        method,
        policy,
        group_norm,
        bald_passes: cfg.acquisition.bald_passes,
        encoder: EncoderConfig {
            hash_dim: cfg.model.hash_dim,
            hidden_dim: cfg.model.hidden_dim,
            dropout_rate: cfg.model.dropout,
        },
        train: cfg.train.to_train_config(),
        seed_budget,
        round_budget,
        n_rounds: cfg.al.rounds,
        replication_seeds: cfg.replication.seeds.clone(),
        aggregation,
    };
    if let Err(e) = experiment.validate() {
        problems.push(e.to_string());
    }
    if !problems.is_empty() {
        return Err(join_problems(problems));
    }

    let mut snapshot = cfg.clone();
    snapshot.al.seed_budget = Some(seed_budget);
    snapshot.al.round_budget = Some(round_budget);
    snapshot.acquisition.policy = experiment
        .effective_policy()
        .map_err(|e| e.to_string())?
        .as_str()
        .into();
    Ok(Resolved {
        experiment,
        snapshot,
    })
}

fn join_problems(problems: Vec<String>) -> String {
    format!("invalid configuration:\n  - {}", problems.join("\n  - "))
}

/// First 12 hex characters of the SHA-256 of the canonical TOML snapshot.
pub fn config_hash(snapshot: &Config) -> Result<String, String> {
    let canonical = toml::to_string(snapshot).map_err(|e| format!("serialize config: {e}"))?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest[..6].iter().map(|b| format!("{b:02x}")).collect())
}
