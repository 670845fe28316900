//! Repeated-seed experiments: split, train local and federated models,
//! evaluate on a held-out test set and aggregate.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cox::{fedavg_cox, CoxClient, CoxModel, FedAvgConfig};
use crate::data::{train_test_split, Schema, SurvivalDataset};
use crate::error::{Error, Result};
use crate::estimators::kaplan_meier;
use crate::federation::{
    local_split, mean_std, partition, run_local_baselines, run_protocol, train_clients, FederationConfig, Sampling,
};
use crate::forest::{Forest, ForestParams};
use crate::metrics::{EvalSettings, Evaluator, MetricsReport, Scores, SurvivalPredictor};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelId {
    #[serde(rename = "fedsurf")]
    FedSurf,
    #[serde(rename = "fedsurf-ibs")]
    FedSurfIbs,
    #[serde(rename = "cox-local")]
    CoxLocal,
    #[serde(rename = "cox-fedavg")]
    CoxFedAvg,
}

impl ModelId {
    pub const ALL: [ModelId; 4] = [ModelId::FedSurf, ModelId::FedSurfIbs, ModelId::CoxLocal, ModelId::CoxFedAvg];

    pub fn name(self) -> &'static str {
        match self {
            ModelId::FedSurf => "fedsurf",
            ModelId::FedSurfIbs => "fedsurf-ibs",
            ModelId::CoxLocal => "cox-local",
            ModelId::CoxFedAvg => "cox-fedavg",
        }
    }

    fn is_forest(self) -> bool {
        matches!(self, ModelId::FedSurf | ModelId::FedSurfIbs)
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelId::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown model `{s}` (expected fedsurf, fedsurf-ibs, cox-local or cox-fedavg)"
                ))
            })
    }
}

fn default_models() -> Vec<ModelId> {
    vec![ModelId::FedSurf]
}

fn default_repetitions() -> usize {
    5
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub dataset: PathBuf,
    pub schema: PathBuf,
    #[serde(default = "default_models")]
    pub models: Vec<ModelId>,
    #[serde(default)]
    pub federation: FederationConfig,
    #[serde(default)]
    pub forest: ForestParams,
    #[serde(default)]
    pub cox: FedAvgConfig,
    /// Test-set metric grid and horizon.
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Write fitted federated models to `<output_dir>/models`.
    #[serde(default)]
    pub save_models: bool,
}

impl ExperimentSpec {
    /// Reads a JSON spec. Relative paths are resolved against the spec's
    /// directory.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec: ExperimentSpec = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut spec.dataset, &mut spec.schema, &mut spec.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("no models requested".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
        }
        self.forest.validate()?;
        if self.models.iter().any(|m| !m.is_forest()) {
            self.cox.validate()?;
        }
        for p in [&self.dataset, &self.schema] {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn load_data(&self) -> Result<SurvivalDataset> {
        let schema = Schema::from_json_file(&self.schema)?;
        SurvivalDataset::load_csv(&self.dataset, &schema)
    }

    pub fn seed(&self, repetition: usize) -> u64 {
        self.base_seed.wrapping_add(repetition as u64)
    }

    /// Federation and forest settings for one run. Both seeds follow the
    /// run seed so local and federated columns share their splits.
    pub fn run_configs(&self, seed: u64) -> (FederationConfig, ForestParams) {
        (
            FederationConfig {
                seed,
                ..self.federation.clone()
            },
            ForestParams {
                seed,
                ..self.forest.clone()
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub repetition: usize,
    pub seed: u64,
    pub model: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model: String,
    pub setting: String,
    pub split_type: String,
    pub runs: usize,
    pub c_index_mean: f64,
    pub c_index_std: f64,
    pub ibs_mean: f64,
    pub ibs_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub reports: Vec<MetricsReport>,
    pub failures: Vec<RunFailure>,
    pub aggregate: Vec<AggregateRow>,
}

impl ExperimentSummary {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }

    /// Reports as CSV with [`MetricsReport::CSV_HEADER`].
    pub fn reports_csv(&self) -> String {
        let mut out = String::from(MetricsReport::CSV_HEADER);
        out.push('\n');
        for r in &self.reports {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn reports_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.reports {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Aggregate table with metrics scaled by 100.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<12} {:<10} {:<11} {:>4}  {:>13}  {:>13}\n",
            "model", "setting", "split", "runs", "C-index", "IBS"
        );
        for a in &self.aggregate {
            let _ = writeln!(
                out,
                "{:<12} {:<10} {:<11} {:>4}  {:>6.1} ± {:<4.1}  {:>6.1} ± {:<4.1}",
                a.model,
                a.setting,
                a.split_type,
                a.runs,
                100.0 * a.c_index_mean,
                100.0 * a.c_index_std,
                100.0 * a.ibs_mean,
                100.0 * a.ibs_std
            );
        }
        if !self.failures.is_empty() {
            let _ = writeln!(out, "\n{} failed run(s):", self.failures.len());
            for f in &self.failures {
                let _ = writeln!(out, "  repetition {} (seed {}), {}: {}", f.repetition, f.seed, f.model, f.error);
            }
        }
        out
    }

    /// Writes `reports.jsonl`, `reports.csv`, `summary.json` and `summary.txt`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("reports.jsonl", self.reports_jsonl()?),
            ("reports.csv", self.reports_csv()),
            ("summary.json", serde_json::to_string_pretty(self)?),
            ("summary.txt", self.table()),
        ];
        for (name, content) in files {
            let path = dir.join(name);
            fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Mean and standard deviation of every (model, setting, split) group, in
/// first-appearance order.
pub fn aggregate(reports: &[MetricsReport]) -> Vec<AggregateRow> {
    let mut keys: Vec<(String, String, String)> = Vec::new();
    for r in reports {
        let key = (r.model.clone(), r.setting.clone(), r.split_type.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(model, setting, split_type)| {
            let group: Vec<&MetricsReport> = reports
                .iter()
                .filter(|r| r.model == model && r.setting == setting && r.split_type == split_type)
                .collect();
            let (c_index_mean, c_index_std) = mean_std(&group.iter().map(|r| r.c_index).collect::<Vec<_>>());
            let (ibs_mean, ibs_std) = mean_std(&group.iter().map(|r| r.ibs).collect::<Vec<_>>());
            AggregateRow {
                model,
                setting,
                split_type,
                runs: group.len(),
                c_index_mean,
                c_index_std,
                ibs_mean,
                ibs_std,
            }
        })
        .collect()
}

/// Outcome of one repetition.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub reports: Vec<MetricsReport>,
    pub failures: Vec<RunFailure>,
    /// Message logs of federated forest runs, keyed by model name.
    pub message_logs: Vec<(String, String)>,
    /// Serialized federated models, keyed by model name.
    pub models: Vec<(String, String)>,
}

fn report(model: ModelId, setting: &str, split: &str, seed: u64, grid: &[f64], scores: Scores) -> MetricsReport {
    MetricsReport {
        model: model.name().into(),
        setting: setting.into(),
        split_type: split.into(),
        seed,
        c_index: scores.c_index,
        ibs: scores.ibs,
        brier_times: grid.to_vec(),
        brier: scores.brier,
    }
}

/// Mean of client scores, pointwise for the Brier curve.
fn mean_scores(scores: &[Scores]) -> Scores {
    let n = scores.len() as f64;
    let len = scores[0].brier.len();
    Scores {
        c_index: scores.iter().map(|s| s.c_index).sum::<f64>() / n,
        ibs: scores.iter().map(|s| s.ibs).sum::<f64>() / n,
        brier: (0..len).map(|j| scores.iter().map(|s| s.brier[j]).sum::<f64>() / n).collect(),
    }
}

fn cox_clients(train: &SurvivalDataset, federation: &FederationConfig) -> Result<Vec<CoxClient>> {
    partition(train, federation)?
        .iter()
        .enumerate()
        .map(|(k, shard)| {
            let (train, validation) =
                local_split(shard, federation.local_val_fraction, rng::derive_seed(federation.seed, k as u64))?;
            Ok(CoxClient { train, validation })
        })
        .collect()
}

fn score_many<M: SurvivalPredictor + Sync>(models: &[M], evaluator: &Evaluator, test: &SurvivalDataset) -> Result<Scores> {
    let scores = models
        .par_iter()
        .map(|m| evaluator.score(m, test))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_scores(&scores))
}

/// One repetition: split, train every requested model, score on the test set.
pub fn run_repetition(spec: &ExperimentSpec, data: &SurvivalDataset, repetition: usize) -> RunOutput {
    let seed = spec.seed(repetition);
    let mut out = RunOutput::default();
    let fail = |out: &mut RunOutput, model: &str, e: Error| {
        out.failures.push(RunFailure {
            repetition,
            seed,
            model: model.into(),
            error: e.to_string(),
        })
    };

    let prepared = train_test_split(data, spec.test_fraction, seed)
        .map_err(|e| e.in_stage("train_test_split"))
        .and_then(|(train, test)| {
            let evaluator = Evaluator::from_train(&train, &spec.eval).map_err(|e| e.in_stage("evaluation"))?;
            Ok((train, test, evaluator))
        });
    let (train, test, evaluator) = match prepared {
        Ok(p) => p,
        Err(e) => {
            fail(&mut out, "all", e);
            return out;
        }
    };
    let (federation, forest) = spec.run_configs(seed);
    let split = federation.split.name();
    let grid = evaluator.grid.points().to_vec();

    let forest_models: Vec<ModelId> = spec.models.iter().copied().filter(|m| m.is_forest()).collect();
    if !forest_models.is_empty() {
        match train_clients(&train, &federation, &forest) {
            Err(e) => forest_models.iter().for_each(|m| fail(&mut out, m.name(), e_clone(&e))),
            Ok(clients) => {
                let local = run_local_baselines(&clients, &test, &evaluator).map(|s| mean_scores(&s));
                for &m in &forest_models {
                    let sampling = if m == ModelId::FedSurfIbs {
                        Sampling::InverseIbs
                    } else {
                        Sampling::Uniform
                    };
                    let mut clients = clients.clone();
                    let result = run_protocol(&mut clients, federation.n_server_trees, sampling, &federation.ibs_grid, seed)
                        .and_then(|(server, log)| {
                            let scores = evaluator.score(&server.ensemble, &test).map_err(|e| e.in_stage("evaluation"))?;
                            Ok((server, log, scores))
                        });
                    match (&local, result) {
                        (Ok(local), Ok((server, log, scores))) => {
                            out.reports.push(report(m, "local", split, seed, &grid, local.clone()));
                            out.reports.push(report(m, "federated", split, seed, &grid, scores));
                            if let Ok(jsonl) = log.to_jsonl() {
                                out.message_logs.push((m.name().into(), jsonl));
                            }
                            if spec.save_models {
                                match server.ensemble.to_json() {
                                    Ok(json) => out.models.push((m.name().into(), json)),
                                    Err(e) => fail(&mut out, m.name(), e),
                                }
                            }
                        }
                        (Err(e), _) => fail(&mut out, m.name(), e_clone(e).in_stage("evaluation")),
                        (_, Err(e)) => fail(&mut out, m.name(), e),
                    }
                }
            }
        }
    }

    for m in spec.models.iter().copied().filter(|m| !m.is_forest()) {
        let result = (|| -> Result<Vec<MetricsReport>> {
            let clients = cox_clients(&train, &federation).map_err(|e| e.in_stage("partition"))?;
            let config = FedAvgConfig {
                seed,
                ..spec.cox.clone()
            };
            let locals = clients
                .par_iter()
                .map(|c| fedavg_cox(std::slice::from_ref(c), &config).map(|o| o.model))
                .collect::<Result<Vec<CoxModel>>>()
                .map_err(|e| e.in_stage("local_training"))?;
            let local = score_many(&locals, &evaluator, &test).map_err(|e| e.in_stage("evaluation"))?;
            let mut reports = vec![report(m, "local", split, seed, &grid, local)];
            if m == ModelId::CoxFedAvg {
                let model = fedavg_cox(&clients, &config).map_err(|e| e.in_stage("fedavg"))?.model;
                let scores = evaluator.score(&model, &test).map_err(|e| e.in_stage("evaluation"))?;
                reports.push(report(m, "federated", split, seed, &grid, scores));
            }
            Ok(reports)
        })();
        match result {
            Ok(r) => out.reports.extend(r),
            Err(e) => fail(&mut out, m.name(), e),
        }
    }
    out
}

/// Errors are not `Clone`; failures only keep the message.
fn e_clone(e: &Error) -> Error {
    Error::Evaluation(e.to_string())
}

/// Runs every repetition (concurrently on the current rayon pool) and reduces
/// the results in repetition order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<(ExperimentSummary, Vec<RunOutput>)> {
    spec.validate()?;
    let data = spec.load_data()?;
    let runs: Vec<RunOutput> = (0..spec.repetitions)
        .into_par_iter()
        .map(|r| run_repetition(spec, &data, r))
        .collect();
    let reports: Vec<MetricsReport> = runs.iter().flat_map(|r| r.reports.iter().cloned()).collect();
    let failures: Vec<RunFailure> = runs.iter().flat_map(|r| r.failures.iter().cloned()).collect();
    let summary = ExperimentSummary {
        aggregate: aggregate(&reports),
        reports,
        failures,
    };
    Ok((summary, runs))
}

/// Runs the experiment and writes the summary files, per-run message logs
/// and (optionally) federated models under `spec.output_dir`.
pub fn run_and_write(spec: &ExperimentSpec) -> Result<ExperimentSummary> {
    let (summary, runs) = run_experiment(spec)?;
    summary.write(&spec.output_dir)?;
    for (r, run) in runs.iter().enumerate() {
        let seed = spec.seed(r);
        for (model, jsonl) in &run.message_logs {
            let path = spec.output_dir.join(format!("messages-{model}-seed{seed}.jsonl"));
            fs::write(&path, jsonl).map_err(|e| Error::io(&path, e))?;
        }
        if !run.models.is_empty() {
            let dir = spec.output_dir.join("models");
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (model, json) in &run.models {
                let path = dir.join(format!("{model}-seed{seed}.json"));
                fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
            }
        }
    }
    Ok(summary)
}

/// A model read back from disk.
pub enum SavedModel {
    Forest(Forest),
    Cox(CoxModel),
}

impl SavedModel {
    pub fn from_json(json: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(json)?;
        if value.get("trees").is_some() {
            Ok(SavedModel::Forest(Forest::from_json(json)?))
        } else if value.get("beta").is_some() {
            Ok(SavedModel::Cox(CoxModel::from_json(json)?))
        } else {
            Err(Error::argument("file is neither a serialized forest nor a Cox model"))
        }
    }

    pub fn predictor(&self) -> &dyn SurvivalPredictor {
        match self {
            SavedModel::Forest(f) => f,
            SavedModel::Cox(c) => c,
        }
    }
}

/// Scores a saved model on the test split that `seed` produces for `spec`.
pub fn evaluate_saved(spec: &ExperimentSpec, model: &SavedModel, seed: u64) -> Result<Scores> {
    let data = spec.load_data()?;
    let (train, test) = train_test_split(&data, spec.test_fraction, seed)?;
    Evaluator::from_train(&train, &spec.eval)?.score(model.predictor(), &test)
}

/// Writes the train/test split and client shards for `seed`, with a
/// Kaplan-Meier curve per client. Returns the shard sizes.
pub fn materialize_split(spec: &ExperimentSpec, seed: u64, dir: &Path) -> Result<Vec<usize>> {
    let data = spec.load_data()?;
    let (train, test) = train_test_split(&data, spec.test_fraction, seed)?;
    let (federation, _) = spec.run_configs(seed);
    federation.validate(train.len())?;
    let shards = partition(&train, &federation)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    test.save_csv(dir.join("test.csv"))?;
    for (k, shard) in shards.iter().enumerate() {
        shard.save_csv(dir.join(format!("client-{k}.csv")))?;
        let km = kaplan_meier(shard)?;
        let mut csv = String::from("time,survival\n");
        let _ = writeln!(csv, "0,{}", km.initial_value());
        for (t, s) in km.times().iter().zip(km.values()) {
            let _ = writeln!(csv, "{t},{s}");
        }
        let path = dir.join(format!("client-{k}-km.csv"));
        fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    }
    Ok(shards.iter().map(|s| s.len()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rep(model: &str, setting: &str, c: f64, ibs: f64) -> MetricsReport {
        MetricsReport {
            model: model.into(),
            setting: setting.into(),
            split_type: "uniform".into(),
            seed: 0,
            c_index: c,
            ibs,
            brier_times: vec![],
            brier: vec![],
        }
    }

    #[test]
    fn model_ids_parse() {
        assert_eq!("fedsurf-ibs".parse::<ModelId>().unwrap(), ModelId::FedSurfIbs);
        assert!("deepsurv".parse::<ModelId>().is_err());
        let json = serde_json::to_string(&ModelId::ALL).unwrap();
        assert_eq!(json, r#"["fedsurf","fedsurf-ibs","cox-local","cox-fedavg"]"#);
    }

    #[test]
    fn aggregate_groups_in_order() {
        let reports = vec![
            rep("fedsurf", "local", 0.6, 0.2),
            rep("fedsurf", "federated", 0.7, 0.18),
            rep("fedsurf", "local", 0.8, 0.22),
        ];
        let agg = aggregate(&reports);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].setting, "local");
        assert_eq!(agg[0].runs, 2);
        assert!((agg[0].c_index_mean - 0.7).abs() < 1e-12);
        assert!((agg[0].c_index_std - 0.02f64.sqrt()).abs() < 1e-12);
        assert_eq!(agg[1].c_index_std, 0.0);
    }

    #[test]
    fn spec_defaults() {
        let spec: ExperimentSpec = serde_json::from_str(r#"{"dataset": "d.csv", "schema": "s.json"}"#).unwrap();
        assert_eq!(spec.repetitions, 5);
        assert_eq!(spec.models, vec![ModelId::FedSurf]);
        assert_eq!(spec.federation.n_clients, 10);
        assert_eq!(spec.cox.rounds, 500);
        assert!(spec.validate().is_err());
    }
}
