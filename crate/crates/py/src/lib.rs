//! Python bindings for the annotator-aware active-learning crate.
//!
//! Build with `cargo build -p headcount-py`; the resulting
//! `libheadcount_py.so` imports as `headcount_py` once it is on `sys.path`
//! under that name. `python/smoke_test.py` at the repository root shows the
//! full surface: math kernels, dataset generation and JSONL round-trips, and
//! whole experiment runs returning plain dicts.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use headcount::acquisition::{GroupNorm, Method, Policy};
use headcount::alloop::{self, DataSource, ExperimentConfig, ModelKind, RoundReport, SeedRun};
use headcount::data::{self, Density, RawDataset, Split, SynthConfig, SynthSpec};
use headcount::metrics::IndividualAggregation;
use headcount::model::{EncoderConfig, TrainConfig};
use headcount::numerics::{self, SeededRng};

fn verr(e: headcount::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_split(s: &str) -> PyResult<Split> {
    match s {
        "train" => Ok(Split::Train),
        "dev" => Ok(Split::Dev),
        "test" => Ok(Split::Test),
        other => Err(PyValueError::new_err(format!(
            "unknown split {other:?}; expected train, dev, or test"
        ))),
    }
}

fn build_spec(
    n_annotators: usize,
    per_instance: usize,
    positive_rate: f64,
    bias_spread: f64,
    noise_min: f64,
    noise_max: f64,
) -> SynthSpec {
    SynthSpec {
        n_annotators,
        density: if per_instance == 0 {
            Density::Dense
        } else {
            Density::Sparse { per_instance }
        },
        positive_rate,
        bias_spread,
        noise_range: (noise_min, noise_max),
    }
}

/// Numerically stable softmax of one logit vector.
#[pyfunction]
fn softmax(zs: Vec<f64>) -> PyResult<Vec<f64>> {
    numerics::softmax(&zs).map_err(verr)
}

/// Shannon entropy (nats) of a probability vector.
#[pyfunction]
fn entropy(ps: Vec<f64>) -> PyResult<f64> {
    numerics::entropy(&ps).map_err(verr)
}

/// Population variance.
#[pyfunction]
fn variance(xs: Vec<f64>) -> PyResult<f64> {
    numerics::variance(&xs).map_err(verr)
}

/// Pearson correlation as an `(r, degenerate)` pair; `degenerate` is true
/// when either side is constant, in which case `r` is 0.
#[pyfunction]
fn pearson(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<(f64, bool)> {
    let c = numerics::pearson(&xs, &ys).map_err(verr)?;
    Ok((c.r, c.degenerate))
}

/// Majority label of a binary vote list; ties go to 1.
#[pyfunction]
fn majority_vote(labels: Vec<u8>) -> PyResult<u8> {
    data::majority_vote(&labels).map_err(verr)
}

/// One split of a multi-annotator dataset.
#[pyclass]
struct Dataset {
    inner: RawDataset,
}

#[pymethods]
impl Dataset {
    /// Generates a synthetic split. The same `seed` reproduces the same
    /// records, and matches what `run_experiment` sees for `data_seed=seed`.
    #[staticmethod]
    #[pyo3(signature = (n_instances, seed, split = "train", n_annotators = 6,
                        per_instance = 0, positive_rate = 0.15,
                        bias_spread = 0.1, noise_min = 0.05, noise_max = 0.25))]
    #[allow(clippy::too_many_arguments)]
    fn synthetic(
        n_instances: usize,
        seed: u64,
        split: &str,
        n_annotators: usize,
        per_instance: usize,
        positive_rate: f64,
        bias_spread: f64,
        noise_min: f64,
        noise_max: f64,
    ) -> PyResult<Self> {
        let cfg = SynthConfig {
            spec: build_spec(
                n_annotators,
                per_instance,
                positive_rate,
                bias_spread,
                noise_min,
                noise_max,
            ),
            n_instances,
            split: parse_split(split)?,
        };
        let inner = data::generate_synthetic(&cfg, &SeededRng::new(seed)).map_err(verr)?;
        Ok(Dataset { inner })
    }

    /// Loads one split from a JSONL file.
    #[staticmethod]
    fn load_jsonl(path: &str, split: &str) -> PyResult<Self> {
        let inner = data::load_jsonl(path.as_ref(), parse_split(split)?).map_err(verr)?;
        Ok(Dataset { inner })
    }

    /// Writes the split back out as JSONL.
    fn save_jsonl(&self, path: &str) -> PyResult<()> {
        data::write_jsonl(&self.inner, path.as_ref()).map_err(verr)
    }

    fn __len__(&self) -> usize {
        self.inner.records.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(split={:?}, records={}, annotators={})",
            self.inner.split.as_str(),
            self.inner.records.len(),
            self.inner.annotator_pool.len(),
        )
    }

    #[getter]
    fn split(&self) -> &'static str {
        self.inner.split.as_str()
    }

    #[getter]
    fn annotators(&self) -> Vec<String> {
        self.inner.annotator_pool.iter().cloned().collect()
    }

    /// Count of (instance, annotator) pairs after expansion.
    #[getter]
    fn n_pairs(&self) -> usize {
        data::expand_pairs(&self.inner).pairs().len()
    }

    /// One record as `{"id", "text", "annotations": [(annotator, label)]}`.
    fn record<'py>(&self, py: Python<'py>, i: usize) -> PyResult<Bound<'py, PyDict>> {
        let r = self
            .inner
            .records
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("record index {i} out of range")))?;
        let d = PyDict::new(py);
        d.set_item("id", &r.id)?;
        d.set_item("text", &r.text)?;
        let anns: Vec<(String, u8)> = r
            .annotations
            .iter()
            .map(|a| (a.annotator.clone(), a.label))
            .collect();
        d.set_item("annotations", anns)?;
        Ok(d)
    }

    /// Majority label of record `i`; ties go to 1.
    fn majority_label(&self, i: usize) -> PyResult<u8> {
        let r = self
            .inner
            .records
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("record index {i} out of range")))?;
        let labels: Vec<u8> = r.annotations.iter().map(|a| a.label).collect();
        data::majority_vote(&labels).map_err(verr)
    }

    /// Vote variance of record `i`'s labels.
    fn disagreement(&self, i: usize) -> PyResult<f64> {
        let r = self
            .inner
            .records
            .get(i)
            .ok_or_else(|| PyValueError::new_err(format!("record index {i} out of range")))?;
        data::annotation_disagreement(r).map_err(verr)
    }
}

fn round_dict<'py>(py: Python<'py>, r: &RoundReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("round", r.round)?;
    d.set_item("cost", r.cost)?;
    d.set_item("majority_f1", r.majority_f1)?;
    d.set_item("individual_f1", r.individual_f1)?;
    d.set_item("uncertainty_pearson", r.uncertainty_pearson)?;
    d.set_item("majority_f1_undefined", r.majority_f1_undefined)?;
    d.set_item("individual_f1_undefined", r.individual_f1_undefined)?;
    d.set_item("uncertainty_degenerate", r.uncertainty_degenerate)?;
    d.set_item("exhausted", r.exhausted)?;
    Ok(d)
}

fn seed_dict<'py>(py: Python<'py>, s: &SeedRun) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("seed", s.seed)?;
    let rounds = PyList::empty(py);
    for r in &s.rounds {
        rounds.append(round_dict(py, r)?)?;
    }
    d.set_item("rounds", rounds)?;
    Ok(d)
}

/// Runs one experiment arm and returns its results as nested dicts.
///
/// With no path arguments the three splits are generated from `data_seed`
/// and the synthetic knobs; passing `train_path`, `dev_path`, and
/// `test_path` together reads JSONL files instead. Timing is deliberately
/// absent from the result: everything returned is reproducible bit for bit.
#[pyfunction]
#[pyo3(signature = (*, n_train = 1120, n_dev = 140, n_test = 140, data_seed = 0,
                    train_path = None, dev_path = None, test_path = None,
                    n_annotators = 6, per_instance = 0, positive_rate = 0.15,
                    bias_spread = 0.1, noise_min = 0.05, noise_max = 0.25,
                    model = "multi_head", method = "rand_mh", policy = None,
                    group_norm = "centered_l2", bald_passes = 10,
                    hash_dim = 2048, hidden_dim = 128, dropout_rate = 0.1,
                    peak_lr = 2e-5, batch_size = 32, weight_decay = 0.01,
                    patience = 5, max_epochs = 30, class_weighting = true,
                    lr_halving = true, oversample = true,
                    seed_budget = 60, round_budget = 60, n_rounds = 10,
                    seeds = None, aggregation = "macro"))]
#[allow(clippy::too_many_arguments)]
fn run_experiment<'py>(
    py: Python<'py>,
    n_train: usize,
    n_dev: usize,
    n_test: usize,
    data_seed: u64,
    train_path: Option<String>,
    dev_path: Option<String>,
    test_path: Option<String>,
    n_annotators: usize,
    per_instance: usize,
    positive_rate: f64,
    bias_spread: f64,
    noise_min: f64,
    noise_max: f64,
    model: &str,
    method: &str,
    policy: Option<String>,
    group_norm: &str,
    bald_passes: usize,
    hash_dim: usize,
    hidden_dim: usize,
    dropout_rate: f64,
    peak_lr: f64,
    batch_size: usize,
    weight_decay: f64,
    patience: usize,
    max_epochs: usize,
    class_weighting: bool,
    lr_halving: bool,
    oversample: bool,
    seed_budget: usize,
    round_budget: usize,
    n_rounds: usize,
    seeds: Option<Vec<u64>>,
    aggregation: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let data = match (train_path, dev_path, test_path) {
        (None, None, None) => DataSource::Synthetic {
            spec: build_spec(
                n_annotators,
                per_instance,
                positive_rate,
                bias_spread,
                noise_min,
                noise_max,
            ),
            n_train,
            n_dev,
            n_test,
            data_seed,
        },
        (Some(train), Some(dev), Some(test)) => DataSource::Files {
            train: train.into(),
            dev: dev.into(),
            test: test.into(),
        },
        _ => {
            return Err(PyValueError::new_err(
                "pass train_path, dev_path, and test_path together or not at all",
            ))
        }
    };
    let aggregation = match aggregation {
        "macro" => IndividualAggregation::Macro,
        "pooled" => IndividualAggregation::Pooled,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown aggregation {other:?}; expected macro or pooled"
            )))
        }
    };
    let cfg = ExperimentConfig {
        data,
        model_kind: ModelKind::parse(model).map_err(verr)?,
        method: Method::parse(method).map_err(verr)?,
        policy: policy
            .as_deref()
            .map(Policy::parse)
            .transpose()
            .map_err(verr)?,
        group_norm: GroupNorm::parse(group_norm).map_err(verr)?,
        bald_passes,
        encoder: EncoderConfig {
            hash_dim,
            hidden_dim,
            dropout_rate,
        },
        train: TrainConfig {
            peak_lr,
            batch_size,
            weight_decay,
            patience,
            max_epochs,
            class_weighting,
            lr_halving,
            oversample,
            ..TrainConfig::default()
        },
        seed_budget,
        round_budget,
        n_rounds,
        replication_seeds: seeds.unwrap_or_else(|| vec![0]),
        aggregation,
    };
    let result = alloop::run_experiment(&cfg).map_err(verr)?;

    let out = PyDict::new(py);
    out.set_item("method", &result.method)?;
    out.set_item("policy", &result.policy)?;
    out.set_item("exhausted_at", result.exhausted_at)?;
    let seeds_out = PyList::empty(py);
    for s in &result.seeds {
        seeds_out.append(seed_dict(py, s)?)?;
    }
    out.set_item("seeds", seeds_out)?;
    let agg = PyList::empty(py);
    for row in &result.aggregate {
        let d = PyDict::new(py);
        d.set_item("round", row.round)?;
        d.set_item("cost", row.cost)?;
        d.set_item("majority_f1_mean", row.majority_f1_mean)?;
        d.set_item("majority_f1_std", row.majority_f1_std)?;
        d.set_item("individual_f1_mean", row.individual_f1_mean)?;
        d.set_item("individual_f1_std", row.individual_f1_std)?;
        d.set_item("uncertainty_pearson_mean", row.uncertainty_pearson_mean)?;
        d.set_item("uncertainty_pearson_std", row.uncertainty_pearson_std)?;
        agg.append(d)?;
    }
    out.set_item("aggregate", agg)?;
    Ok(out)
}

/// Active learning from individual annotator labels, bound from Rust.
#[pymodule]
fn headcount_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(variance, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(majority_vote, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
