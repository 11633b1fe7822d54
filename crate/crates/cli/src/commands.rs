//! The three subcommands: gen-data, run, report.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use headcount::alloop::{self, ExperimentSummary};
use headcount::data::{self, Split, SynthConfig};
use headcount::numerics::SeededRng;
use serde::{Deserialize, Serialize};

use crate::config::{self, Config};
use crate::svg::{self, Panel, Series, SeriesPoint};
use crate::{CmdResult, Failure, GenDataArgs, ReportArgs, RunArgs};

fn validation(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

fn runtime(msg: impl Into<String>) -> Failure {
    Failure::Runtime(msg.into())
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

pub fn gen_data(args: GenDataArgs) -> CmdResult {
    let spec = config::profile_spec(
        &args.profile,
        args.annotators,
        args.per_instance,
        args.positive_rate,
        args.bias_spread,
        args.noise_min,
        args.noise_max,
    )
    .map_err(validation)?;
    spec.validate().map_err(|e| validation(e.to_string()))?;
    if args.n_instances == 0 {
        return Err(validation("--n-instances must be at least 1"));
    }
    let side = (args.n_instances / 8).max(1);
    let n_dev = args.n_dev.unwrap_or(side);
    let n_test = args.n_test.unwrap_or(side);

    fs::create_dir_all(&args.out_dir)
        .map_err(|e| runtime(format!("create {}: {e}", args.out_dir.display())))?;
    let rng = SeededRng::new(args.seed);
    for (name, n, split) in [
        ("train", args.n_instances, Split::Train),
        ("dev", n_dev, Split::Dev),
        ("test", n_test, Split::Test),
    ] {
        let ds = data::generate_synthetic(
            &SynthConfig {
                spec: spec.clone(),
                n_instances: n,
                split,
            },
            &rng,
        )
        .map_err(|e| validation(e.to_string()))?;
        let path = args.out_dir.join(format!("{name}.jsonl"));
        data::write_jsonl(&ds, &path)
            .map_err(|e| runtime(format!("write {}: {e}", path.display())))?;
        let annotations: usize = ds.records.iter().map(|r| r.labels().len()).sum();
        println!(
            "{}: {} instances, {} annotations",
            path.display(),
            ds.records.len(),
            annotations
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

/// What a results directory remembers about its run.
#[derive(Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub artifacts: BTreeMap<String, String>,
    pub config: Config,
}

const ROUNDS_CSV: &str = "rounds.csv";
const SUMMARY_JSON: &str = "summary.json";
const PARTIAL_CSV: &str = "rounds_partial.csv";
const FAILURE_MARKER: &str = "failure.txt";

pub fn run(args: RunArgs) -> CmdResult {
    let mut cfg = match &args.config {
        Some(path) => config::load_file(path).map_err(validation)?,
        None => Config::default(),
    };
    for kv in &args.set {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| validation(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        config::apply_override(&mut cfg, key, value).map_err(validation)?;
    }
    let shorthand: [(&str, Option<String>); 8] = [
        ("acquisition.method", args.method.clone()),
        ("acquisition.policy", args.policy.clone()),
        ("model.kind", args.model_kind.clone()),
        ("al.rounds", args.rounds.map(|v| v.to_string())),
        ("al.seed_budget", args.seed_budget.map(|v| v.to_string())),
        ("al.round_budget", args.round_budget.map(|v| v.to_string())),
        ("replication.seeds", args.seeds.clone()),
        ("train.peak_lr", args.peak_lr.map(|v| v.to_string())),
    ];
    for (key, value) in shorthand {
        if let Some(value) = value {
            config::apply_override(&mut cfg, key, &value).map_err(validation)?;
        }
    }

    let resolved = config::resolve(&cfg).map_err(validation)?;
    let experiment = &resolved.experiment;
    let loaded = alloop::load_data(&experiment.data).map_err(|e| validation(e.to_string()))?;
    let pool_size = data::expand_pairs(&loaded.train).len();
    if pool_size < experiment.seed_budget {
        return Err(validation(format!(
            "train pool holds {pool_size} pairs but the seed budget is {}",
            experiment.seed_budget
        )));
    }

    let root = args
        .results_dir
        .clone()
        .or_else(|| std::env::var_os("HEADCOUNT_RESULTS_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"));
    let hash = config::config_hash(&resolved.snapshot).map_err(runtime)?;
    let dir = root.join(&hash);
    if dir.join("manifest.json").exists() {
        if !args.force {
            return Err(validation(format!(
                "{} already holds a run for this config; pass --force to replace it",
                dir.display()
            )));
        }
        fs::remove_dir_all(&dir).map_err(|e| runtime(format!("clear {}: {e}", dir.display())))?;
    }
    fs::create_dir_all(&dir).map_err(|e| runtime(format!("create {}: {e}", dir.display())))?;

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: hash.clone(),
        artifacts: BTreeMap::from([
            ("rounds_csv".to_string(), ROUNDS_CSV.to_string()),
            ("summary_json".to_string(), SUMMARY_JSON.to_string()),
        ]),
        config: resolved.snapshot.clone(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    println!("config hash: {hash}");
    println!("results: {}", dir.display());

    let outcome =
        alloop::run_replications(experiment, &loaded).map_err(|e| runtime(e.to_string()))?;
    if !outcome.failures.is_empty() {
        let policy = resolved.snapshot.acquisition.policy.clone();
        if !outcome.completed.is_empty() {
            let mut w = artifact_writer(&dir.join(PARTIAL_CSV))?;
            alloop::write_rounds_rows(
                experiment.method.as_str(),
                &policy,
                &outcome.completed,
                &mut w,
            )
            .map_err(|e| runtime(e.to_string()))?;
            w.flush().map_err(|e| runtime(e.to_string()))?;
        }
        let report: String = outcome
            .failures
            .iter()
            .map(|(seed, msg)| format!("seed {seed}: {msg}\n"))
            .collect();
        fs::write(dir.join(FAILURE_MARKER), &report)
            .map_err(|e| runtime(format!("write failure marker: {e}")))?;
        return Err(runtime(format!(
            "{} of {} replication seeds failed; partial results in {}",
            outcome.failures.len(),
            experiment.replication_seeds.len(),
            dir.display()
        )));
    }

    let result = alloop::assemble_result(experiment, outcome.completed)
        .map_err(|e| runtime(e.to_string()))?;
    let mut w = artifact_writer(&dir.join(ROUNDS_CSV))?;
    alloop::write_round_csv(&result, &mut w).map_err(|e| runtime(e.to_string()))?;
    w.flush().map_err(|e| runtime(e.to_string()))?;
    let mut w = artifact_writer(&dir.join(SUMMARY_JSON))?;
    alloop::write_summary_json(&result, &experiment.replication_seeds, &mut w)
        .map_err(|e| runtime(e.to_string()))?;
    w.flush().map_err(|e| runtime(e.to_string()))?;

    let last = result.aggregate.last().expect("at least one round");
    println!(
        "{} seeds x {} rounds; final cost {}; majority F1 {:.3} +- {:.3}",
        result.seeds.len(),
        result.seeds[0].rounds.len(),
        last.cost,
        last.majority_f1_mean,
        last.majority_f1_std
    );
    if let Some(round) = result.exhausted_at {
        println!("pool exhausted at round {round}");
    }
    Ok(())
}

fn artifact_writer(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| runtime(format!("create {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    let mut w = artifact_writer(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| runtime(format!("write {}: {e}", path.display())))?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| runtime(format!("write {}: {e}", path.display())))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct LoadedRun {
    label: String,
    summary: ExperimentSummary,
    rounds_csv: String,
}

pub fn report(args: ReportArgs) -> CmdResult {
    let mut runs = Vec::new();
    for dir in &args.runs {
        runs.push(load_run(dir)?);
    }

    let reference: Vec<usize> = runs[0].summary.rounds.iter().map(|r| r.cost).collect();
    for run in &runs[1..] {
        let costs: Vec<usize> = run.summary.rounds.iter().map(|r| r.cost).collect();
        if costs != reference {
            eprintln!(
                "warning: cost schedules differ across runs ({} vs {}); \
                 curves keep each run's own schedule",
                runs[0].label, run.label
            );
            break;
        }
    }

    fs::create_dir_all(&args.out_dir)
        .map_err(|e| runtime(format!("create {}: {e}", args.out_dir.display())))?;

    let combined = args.out_dir.join("report.csv");
    let mut w = artifact_writer(&combined)?;
    for (i, run) in runs.iter().enumerate() {
        let mut lines = run.rounds_csv.lines();
        let header = lines.next().unwrap_or_default();
        if i == 0 {
            writeln!(w, "{header}").map_err(|e| runtime(e.to_string()))?;
        }
        for line in lines {
            writeln!(w, "{line}").map_err(|e| runtime(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| runtime(e.to_string()))?;
    println!("wrote {}", combined.display());

    let curves = args.out_dir.join("curves.svg");
    fs::write(&curves, render_curves(&runs))
        .map_err(|e| runtime(format!("write {}: {e}", curves.display())))?;
    println!("wrote {}", curves.display());
    Ok(())
}

fn load_run(dir: &Path) -> Result<LoadedRun, Failure> {
    let manifest_path = dir.join("manifest.json");
    let manifest: RunManifest = fs::read_to_string(&manifest_path)
        .map_err(|e| e.to_string())
        .and_then(|text| serde_json::from_str(&text).map_err(|e| e.to_string()))
        .map_err(|e| {
            validation(format!(
                "missing or corrupt manifest in {}: {e}",
                dir.display()
            ))
        })?;
    let artifact = |key: &str, default: &str| -> PathBuf {
        dir.join(
            manifest
                .artifacts
                .get(key)
                .map(String::as_str)
                .unwrap_or(default),
        )
    };
    let summary_path = artifact("summary_json", SUMMARY_JSON);
    let summary: ExperimentSummary = fs::read_to_string(&summary_path)
        .map_err(|e| e.to_string())
        .and_then(|text| serde_json::from_str(&text).map_err(|e| e.to_string()))
        .map_err(|e| {
            validation(format!(
                "missing or corrupt summary in {}: {e}",
                dir.display()
            ))
        })?;
    let rounds_path = artifact("rounds_csv", ROUNDS_CSV);
    let rounds_csv = fs::read_to_string(&rounds_path)
        .map_err(|e| validation(format!("missing rounds CSV in {}: {e}", dir.display())))?;
    Ok(LoadedRun {
        label: format!("{}/{}", summary.method, summary.policy),
        summary,
        rounds_csv,
    })
}

fn render_curves(runs: &[LoadedRun]) -> String {
    let mut labels: Vec<String> = Vec::new();
    for run in runs {
        let mut label = run.label.clone();
        let mut n = 2;
        while labels.contains(&label) {
            label = format!("{} ({n})", run.label);
            n += 1;
        }
        labels.push(label);
    }
    let series_for = |pick: fn(&headcount::alloop::AggregateRow) -> (f64, f64)| -> Vec<Series> {
        runs.iter()
            .zip(&labels)
            .map(|(run, label)| Series {
                label: label.clone(),
                points: run
                    .summary
                    .rounds
                    .iter()
                    .map(|r| {
                        let (mean, std) = pick(r);
                        SeriesPoint {
                            cost: r.cost as f64,
                            mean,
                            std,
                        }
                    })
                    .collect(),
            })
            .collect()
    };
    let panels = [
        Panel {
            title: "Majority F1".into(),
            y_min: 0.0,
            y_max: 1.0,
            series: series_for(|r| (r.majority_f1_mean, r.majority_f1_std)),
        },
        Panel {
            title: "Individual F1".into(),
            y_min: 0.0,
            y_max: 1.0,
            series: series_for(|r| (r.individual_f1_mean, r.individual_f1_std)),
        },
        Panel {
            title: "Uncertainty correlation".into(),
            y_min: -1.0,
            y_max: 1.0,
            series: series_for(|r| (r.uncertainty_pearson_mean, r.uncertainty_pearson_std)),
        },
    ];
    svg::render(&panels)
}
