mod common;

use fedsurf::cox::{
    fedavg_cox, fit_cox_from, fit_cox_local, fit_local_model, cox_gradient, CoxClient, FedAvgConfig, Standardizer,
};
use fedsurf::data::train_test_split;
use fedsurf::experiment::{run_experiment, ExperimentSpec, ModelId};
use fedsurf::federation::{
    run_fedsurf, run_local_baselines, FederationConfig, MessageDirection, PayloadType, Sampling, SplitKind,
};
use fedsurf::forest::{fit_forest, Forest, ForestParams};
use fedsurf::metrics::{EvalSettings, Evaluator};
use fedsurf::synthetic::generate_synthetic;

fn small_forest(seed: u64) -> ForestParams {
    ForestParams {
        n_trees: 15,
        seed,
        ..ForestParams::default()
    }
}

fn config(k: usize, sampling: Sampling) -> FederationConfig {
    FederationConfig {
        n_clients: k,
        n_server_trees: 20,
        sampling,
        seed: 5,
        ..FederationConfig::default()
    }
}

#[test]
fn fedsurf_is_deterministic() {
    let (data, _) = generate_synthetic(300, 3, 0.3, 1).unwrap();
    let a = run_fedsurf(&data, &config(3, Sampling::InverseIbs), &small_forest(2)).unwrap();
    let b = run_fedsurf(&data, &config(3, Sampling::InverseIbs), &small_forest(2)).unwrap();
    assert_eq!(a.server.ensemble.to_json().unwrap(), b.server.ensemble.to_json().unwrap());
    assert_eq!(a.log.to_jsonl().unwrap(), b.log.to_jsonl().unwrap());
    assert_eq!(a.server.quotas, b.server.quotas);
    let c = run_fedsurf(&data, &config(3, Sampling::InverseIbs), &small_forest(3)).unwrap();
    assert_ne!(a.server.ensemble.to_json().unwrap(), c.server.ensemble.to_json().unwrap());
}

#[test]
fn single_client_ensemble_is_a_subsample() {
    let (data, _) = generate_synthetic(200, 2, 0.2, 4).unwrap();
    let cfg = FederationConfig {
        n_server_trees: 10,
        ..config(1, Sampling::Uniform)
    };
    let out = run_fedsurf(&data, &cfg, &small_forest(1)).unwrap();
    assert_eq!(out.server.quotas, vec![10]);
    let local: Vec<String> = out.clients[0].model.trees().iter().map(|t| t.to_json().unwrap()).collect();
    for (_, t) in &out.server.collected {
        assert!(local.contains(&t.to_json().unwrap()));
    }
}

#[test]
fn quotas_and_message_log() {
    let (data, _) = generate_synthetic(400, 3, 0.3, 8).unwrap();
    let out = run_fedsurf(&data, &config(4, Sampling::Uniform), &small_forest(1)).unwrap();
    assert_eq!(out.server.quotas.iter().sum::<usize>(), 20);
    assert_eq!(out.server.ensemble.len(), 20);
    for (c, &q) in out.clients.iter().zip(&out.server.quotas) {
        assert!(q <= c.n_trees);
        assert_eq!(c.quota, q);
        assert_eq!(out.server.collected.iter().filter(|(id, _)| *id == c.client_id).count(), q);
    }
    assert_eq!(out.log.tree_rounds(), 1);
    assert_eq!(out.log.count(PayloadType::TreeCount), 4);
    assert_eq!(out.log.count(PayloadType::Quota), 4);
    let trees = out.log.messages().iter().filter(|m| m.payload_type == PayloadType::Trees);
    assert!(trees.clone().all(|m| m.direction == MessageDirection::ClientToServer && m.byte_size > 0));
    let jsonl = out.log.to_jsonl().unwrap();
    let first: serde_json::Value = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
    assert!(first.get("direction").is_some() && first.get("payload_type").is_some() && first.get("byte_size").is_some());
}

#[test]
fn skewed_federation_and_serialization() {
    let (data, _) = generate_synthetic(600, 3, 0.3, 2).unwrap();
    let cfg = FederationConfig {
        split: SplitKind::LabelSkew,
        n_clients: 5,
        min_client_samples: 40,
        ..config(5, Sampling::InverseIbs)
    };
    let out = run_fedsurf(&data, &cfg, &small_forest(4)).unwrap();
    assert!(out.clients.iter().all(|c| c.dataset_size >= 40));
    let json = out.server.ensemble.to_json().unwrap();
    let back = Forest::from_json(&json).unwrap();
    assert_eq!(back.to_json().unwrap(), json);
    let x = &data.records()[0].features;
    assert_eq!(back.predict_chf_values(x).unwrap(), out.server.ensemble.predict_chf_values(x).unwrap());
}

#[test]
fn local_baseline_of_single_client_is_direct_score() {
    let (data, _) = generate_synthetic(300, 2, 0.3, 6).unwrap();
    let (train, test) = train_test_split(&data, 0.2, 1).unwrap();
    let evaluator = Evaluator::from_train(&train, &EvalSettings::default()).unwrap();
    let cfg = FederationConfig {
        n_server_trees: 10,
        ..config(1, Sampling::Uniform)
    };
    let out = run_fedsurf(&train, &cfg, &small_forest(1)).unwrap();
    let local = run_local_baselines(&out.clients, &test, &evaluator).unwrap();
    assert_eq!(local[0], evaluator.score(&out.clients[0].model, &test).unwrap());
}

fn cox_client(seed: u64, n: usize) -> CoxClient {
    let (data, _) = generate_synthetic(n, 3, 0.3, seed).unwrap();
    let (train, validation) = train_test_split(&data, 0.2, seed).unwrap();
    CoxClient { train, validation }
}

fn local_trajectory(client: &CoxClient, lr: f64, rounds: usize) -> Vec<Vec<f64>> {
    let data = Standardizer::fit(&client.train).transform(&client.train);
    let mut beta = vec![0.0; data.n_features()];
    (0..rounds)
        .map(|_| {
            beta = fit_cox_from(beta.clone(), &data, lr, 1).unwrap();
            beta.clone()
        })
        .collect()
}

#[test]
fn fedavg_single_client_follows_local_descent() {
    let client = cox_client(3, 150);
    let cfg = FedAvgConfig {
        rounds: 40,
        ..FedAvgConfig::default()
    };
    let out = fedavg_cox(std::slice::from_ref(&client), &cfg).unwrap();
    assert_eq!(out.trajectory, local_trajectory(&client, 0.01, 40));
    let data = Standardizer::fit(&client.train).transform(&client.train);
    assert_eq!(out.trajectory[39], fit_cox_local(&data, 0.01, 40).unwrap());
}

#[test]
fn fedavg_identical_shards_match_one_client() {
    let client = cox_client(5, 120);
    let cfg = FedAvgConfig {
        rounds: 25,
        ..FedAvgConfig::default()
    };
    let out = fedavg_cox(&[client.clone(), client.clone()], &cfg).unwrap();
    assert_eq!(out.trajectory, local_trajectory(&client, 0.01, 25));
    assert!(out.best_round <= 25);
    assert!(out.best_val_c_index.is_finite());
}

#[test]
fn fedavg_is_client_order_free() {
    let clients = vec![cox_client(1, 100), cox_client(2, 140), cox_client(3, 90)];
    let cfg = FedAvgConfig {
        rounds: 10,
        ..FedAvgConfig::default()
    };
    let a = fedavg_cox(&clients, &cfg).unwrap();
    let reversed: Vec<CoxClient> = clients.iter().rev().cloned().collect();
    let b = fedavg_cox(&reversed, &cfg).unwrap();
    for (x, y) in a.trajectory.iter().zip(&b.trajectory) {
        assert!(x.iter().zip(y).all(|(p, q)| (p - q).abs() < 1e-12));
    }
}

#[test]
fn cox_recovers_coefficient_signs() {
    let (data, beta) = generate_synthetic(400, 3, 0.3, 12).unwrap();
    let model = fit_local_model(&data, 0.005, 100).unwrap();
    for (fitted, truth) in model.beta.iter().zip(&beta) {
        assert_eq!(fitted.signum(), truth.signum(), "{:?} vs {beta:?}", model.beta);
    }
}

#[test]
fn cox_descent_reaches_stationary_point() {
    let (data, _) = generate_synthetic(200, 2, 0.2, 3).unwrap();
    let data = Standardizer::fit(&data).transform(&data);
    let beta = fit_cox_local(&data, 0.01, 600).unwrap();
    let g = cox_gradient(&beta, &data).unwrap();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm < 1e-4, "{norm}");
    let mut losses = Vec::new();
    let mut b = vec![0.0; 2];
    for _ in 0..50 {
        b = fit_cox_from(b, &data, 0.05, 1).unwrap();
        losses.push(fedsurf::cox::cox_neg_partial_loglik(&b, &data).unwrap());
    }
    assert!(losses.windows(2).all(|w| w[1] <= w[0]));
}

fn write_synthetic(dir: &std::path::Path) -> ExperimentSpec {
    let (data, _) = generate_synthetic(400, 3, 0.3, 21).unwrap();
    data.save_csv(dir.join("data.csv")).unwrap();
    std::fs::write(dir.join("schema.json"), serde_json::to_string(data.schema()).unwrap()).unwrap();
    ExperimentSpec {
        dataset: dir.join("data.csv"),
        schema: dir.join("schema.json"),
        models: ModelId::ALL.to_vec(),
        federation: FederationConfig {
            n_clients: 3,
            n_server_trees: 30,
            ..FederationConfig::default()
        },
        forest: ForestParams {
            n_trees: 15,
            ..ForestParams::default()
        },
        cox: FedAvgConfig {
            rounds: 20,
            ..FedAvgConfig::default()
        },
        eval: EvalSettings::default(),
        repetitions: 2,
        base_seed: 7,
        test_fraction: 0.2,
        output_dir: dir.join("out"),
        save_models: false,
    }
}

#[test]
fn experiment_is_reproducible_and_self_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_synthetic(dir.path());
    let (a, _) = run_experiment(&spec).unwrap();
    let (b, _) = run_experiment(&spec).unwrap();
    assert!(a.succeeded(), "{:?}", a.failures);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.table(), b.table());
    // fedsurf, fedsurf-ibs and cox-fedavg report local and federated rows,
    // cox-local only local, for each of two repetitions
    assert_eq!(a.reports.len(), 2 * 7);

    let csv = a.reports_csv();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    for agg in &a.aggregate {
        let group: Vec<&Vec<&str>> = rows
            .iter()
            .filter(|r| r[0] == agg.model && r[1] == agg.setting && r[2] == agg.split_type)
            .collect();
        let c: Vec<f64> = group.iter().map(|r| r[4].parse().unwrap()).collect();
        let ibs: Vec<f64> = group.iter().map(|r| r[5].parse().unwrap()).collect();
        let (cm, cs) = fedsurf::federation::mean_std(&c);
        let (im, is) = fedsurf::federation::mean_std(&ibs);
        assert_eq!(group.len(), agg.runs);
        assert!((cm - agg.c_index_mean).abs() < 1e-12 && (cs - agg.c_index_std).abs() < 1e-12);
        assert!((im - agg.ibs_mean).abs() < 1e-12 && (is - agg.ibs_std).abs() < 1e-12);
    }
    // local and federated columns come from the same run seeds
    let seeds = |setting: &str| -> Vec<u64> {
        a.reports.iter().filter(|r| r.model == "fedsurf" && r.setting == setting).map(|r| r.seed).collect()
    };
    assert_eq!(seeds("local"), seeds("federated"));
    assert_eq!(seeds("local"), vec![7, 8]);
}

#[test]
fn single_repetition_single_model() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec {
        models: vec![ModelId::FedSurf],
        repetitions: 1,
        ..write_synthetic(dir.path())
    };
    let (summary, runs) = run_experiment(&spec).unwrap();
    let federated: Vec<_> = summary.reports.iter().filter(|r| r.setting == "federated").collect();
    assert_eq!(federated.len(), 1);
    assert_eq!(runs[0].message_logs.len(), 1);
}

#[test]
fn failures_are_recorded_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let base = write_synthetic(dir.path());
    let spec = ExperimentSpec {
        models: vec![ModelId::FedSurf, ModelId::CoxLocal],
        federation: FederationConfig {
            split: SplitKind::LabelSkew,
            n_clients: 3,
            min_client_samples: 200,
            ..base.federation.clone()
        },
        ..base
    };
    let (summary, _) = run_experiment(&spec).unwrap();
    assert!(!summary.succeeded());
    assert_eq!(summary.failures.len(), 4);
    assert!(summary.reports.is_empty());
    assert!(summary.table().contains("failed run"));
}

#[test]
fn forest_fit_is_seed_deterministic() {
    let (data, _) = generate_synthetic(150, 3, 0.3, 2).unwrap();
    let a = fit_forest(&data, &small_forest(9)).unwrap();
    let b = fit_forest(&data, &small_forest(9)).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}
