//! One-round federation of random survival forest trees.
//!
//! The protocol has three stages. Clients fit local forests and report their
//! tree counts; the server draws per-client tree quotas in proportion to
//! client dataset sizes; clients send back that many trees, sampled either
//! uniformly or with probability proportional to the inverse IBS of each tree
//! on the client's validation split. The union of received trees is the
//! global forest.

mod partition;
mod sampling;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use partition::{ks_distance, label_skew_split, local_split, time_bins, uniform_split};
pub use sampling::{assign_tree_quotas, weighted_indices, weighted_sample};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::forest::{fit_forest, Forest, ForestParams, SurvivalTree};
use crate::metrics::{censoring_survival, per_tree_ibs, EvalGrid, EvalSettings, Evaluator, Scores};
use crate::rng::{self, streams, Rng};
use crate::step::StepFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Uniform,
    LabelSkew,
}

impl SplitKind {
    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Uniform => "uniform",
            SplitKind::LabelSkew => "label_skew",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Uniform,
    InverseIbs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FederationConfig {
    pub n_clients: usize,
    pub split: SplitKind,
    pub alpha: f64,
    pub min_client_samples: usize,
    pub n_bins: usize,
    pub n_server_trees: usize,
    pub sampling: Sampling,
    pub local_val_fraction: f64,
    /// Grid used by clients to score their trees.
    pub ibs_grid: EvalSettings,
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            n_clients: 10,
            split: SplitKind::Uniform,
            alpha: 8.0,
            min_client_samples: 25,
            n_bins: 10,
            n_server_trees: 100,
            sampling: Sampling::Uniform,
            local_val_fraction: 0.2,
            ibs_grid: EvalSettings::default(),
            seed: 0,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self, train_size: usize) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::Config("n_clients must be at least 1".into()));
        }
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return Err(Error::Config("alpha must be positive".into()));
        }
        if self.n_server_trees == 0 {
            return Err(Error::Config("n_server_trees must be positive".into()));
        }
        if !(self.local_val_fraction > 0.0 && self.local_val_fraction < 1.0) {
            return Err(Error::Config("local_val_fraction must lie in (0, 1)".into()));
        }
        if self.split == SplitKind::LabelSkew && self.min_client_samples * self.n_clients > train_size {
            return Err(Error::Config(format!(
                "{} clients with at least {} records need more than {train_size} training records",
                self.n_clients, self.min_client_samples
            )));
        }
        Ok(())
    }
}

/// Splits the training set into client shards according to `config`.
pub fn partition(train: &SurvivalDataset, config: &FederationConfig) -> Result<Vec<SurvivalDataset>> {
    match config.split {
        SplitKind::Uniform => uniform_split(train, config.n_clients, config.seed),
        SplitKind::LabelSkew => label_skew_split(
            train,
            config.n_clients,
            config.alpha,
            config.min_client_samples,
            config.n_bins,
            config.seed,
        ),
    }
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub local_train: SurvivalDataset,
    pub local_val: SurvivalDataset,
    pub model: Forest,
    pub n_trees: usize,
    pub quota: usize,
    /// Size of the whole client shard, train and validation.
    pub dataset_size: usize,
}

impl ClientState {
    /// Splits `shard` into local train and validation and fits the local
    /// forest. The forest seed is derived from `forest_params.seed` and the
    /// client id.
    pub fn train(
        client_id: usize,
        shard: SurvivalDataset,
        val_fraction: f64,
        split_seed: u64,
        forest_params: &ForestParams,
    ) -> Result<Self> {
        let dataset_size = shard.len();
        let (local_train, local_val) = local_split(&shard, val_fraction, rng::derive_seed(split_seed, client_id as u64))?;
        let params = ForestParams {
            seed: rng::derive_seed(forest_params.seed, client_id as u64),
            ..forest_params.clone()
        };
        let model = fit_forest(&local_train, &params)?;
        Ok(Self {
            client_id,
            n_trees: model.len(),
            quota: 0,
            local_train,
            local_val,
            model,
            dataset_size,
        })
    }

    /// Censoring distribution and scoring grid estimated on local training data.
    pub fn local_scoring(&self, settings: &EvalSettings) -> Result<(StepFunction, EvalGrid)> {
        Ok((
            censoring_survival(&self.local_train)?,
            EvalGrid::from_train(&self.local_train, settings)?,
        ))
    }

    /// Per-tree IBS on the local validation split.
    pub fn tree_ibs(&self, censoring: &StepFunction, grid: &EvalGrid) -> Result<Vec<f64>> {
        if self.local_val.is_empty() {
            return Err(Error::argument(
                "inverse-IBS sampling needs a non-empty validation split; use uniform sampling instead",
            ));
        }
        self.model
            .trees()
            .iter()
            .map(|t| per_tree_ibs(t, &self.local_val, censoring, grid))
            .collect()
    }
}

/// Picks `client.quota` distinct trees from the client's forest. Returns the
/// indices of the chosen trees in the local forest, in draw order.
pub fn select_local_trees(
    client: &ClientState,
    strategy: Sampling,
    censoring: &StepFunction,
    grid: &EvalGrid,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    if client.quota > client.n_trees {
        return Err(Error::argument(format!(
            "client {} has quota {} above its {} trees",
            client.client_id, client.quota, client.n_trees
        )));
    }
    let weights = match strategy {
        Sampling::Uniform => vec![1.0 / client.n_trees as f64; client.n_trees],
        Sampling::InverseIbs => client
            .tree_ibs(censoring, grid)?
            .into_iter()
            .map(|ibs| 1.0 / ibs)
            .collect(),
    };
    weighted_indices(client.quota, &weights, false, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageDirection {
    ClientToServer,
    ServerToClient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadType {
    TreeCount,
    Quota,
    Trees,
}

/// One logged message. The payload itself is the serialized JSON that
/// crossed the simulated link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub direction: MessageDirection,
    pub client_id: usize,
    pub payload_type: PayloadType,
    pub byte_size: usize,
    #[serde(skip)]
    pub payload: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MessageLog {
    messages: Vec<Message>,
}

impl MessageLog {
    fn send(&mut self, direction: MessageDirection, client_id: usize, payload_type: PayloadType, payload: String) -> &str {
        self.messages.push(Message {
            direction,
            client_id,
            payload_type,
            byte_size: payload.len(),
            payload,
        });
        &self.messages.last().unwrap().payload
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn count(&self, payload_type: PayloadType) -> usize {
        self.messages.iter().filter(|m| m.payload_type == payload_type).count()
    }

    /// Number of client-to-server rounds that carried trees: 1 when every
    /// tree payload was sent in the same upload phase.
    pub fn tree_rounds(&self) -> usize {
        let mut rounds = 0;
        let mut in_round = false;
        for m in &self.messages {
            if m.payload_type == PayloadType::Trees {
                if !in_round {
                    rounds += 1;
                    in_round = true;
                }
            } else if in_round {
                in_round = false;
            }
        }
        rounds
    }

    pub fn total_bytes(&self) -> usize {
        self.messages.iter().map(|m| m.byte_size).sum()
    }

    /// JSON lines: direction, client, payload type and byte size.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for m in &self.messages {
            out.push_str(&serde_json::to_string(m)?);
            out.push('\n');
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub quotas: Vec<usize>,
    pub collected: Vec<(usize, SurvivalTree)>,
    pub ensemble: Forest,
}

#[derive(Debug, Clone)]
pub struct FedSurfOutcome {
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub log: MessageLog,
}

#[derive(Serialize, Deserialize)]
struct TreeCountPayload {
    n_trees: usize,
    dataset_size: usize,
}

#[derive(Serialize, Deserialize)]
struct QuotaPayload {
    quota: usize,
}

/// Partitions `train` and fits one local forest per client in parallel.
pub fn train_clients(
    train: &SurvivalDataset,
    config: &FederationConfig,
    forest_params: &ForestParams,
) -> Result<Vec<ClientState>> {
    config.validate(train.len())?;
    let shards = partition(train, config).map_err(|e| e.in_stage("partition"))?;
    shards
        .into_par_iter()
        .enumerate()
        .map(|(k, shard)| ClientState::train(k, shard, config.local_val_fraction, config.seed, forest_params))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("local_training"))
}

/// Runs tree assignment and tree sampling on already trained clients.
/// Client quotas are overwritten.
pub fn run_protocol(
    clients: &mut [ClientState],
    n_server_trees: usize,
    strategy: Sampling,
    ibs_grid: &EvalSettings,
    seed: u64,
) -> Result<(ServerState, MessageLog)> {
    if clients.is_empty() {
        return Err(Error::Config("no clients".into()));
    }
    let mut log = MessageLog::default();

    // clients announce tree counts and dataset sizes
    let mut caps = Vec::with_capacity(clients.len());
    let mut sizes = Vec::with_capacity(clients.len());
    for c in clients.iter() {
        let payload = serde_json::to_string(&TreeCountPayload {
            n_trees: c.n_trees,
            dataset_size: c.dataset_size,
        })?;
        let received: TreeCountPayload =
            serde_json::from_str(log.send(MessageDirection::ClientToServer, c.client_id, PayloadType::TreeCount, payload))?;
        caps.push(received.n_trees);
        sizes.push(received.dataset_size);
    }

    let quotas = assign_tree_quotas(&sizes, &caps, n_server_trees, &mut rng::stream(seed, streams::QUOTAS))
        .map_err(|e| e.in_stage("tree_assignment"))?;
    for (c, &q) in clients.iter_mut().zip(&quotas) {
        let payload = serde_json::to_string(&QuotaPayload { quota: q })?;
        let received: QuotaPayload =
            serde_json::from_str(log.send(MessageDirection::ServerToClient, c.client_id, PayloadType::Quota, payload))?;
        c.quota = received.quota;
    }

    let selections = clients
        .par_iter()
        .map(|c| -> Result<Option<String>> {
            if c.quota == 0 {
                return Ok(None);
            }
            let chosen = match strategy {
                Sampling::Uniform => {
                    let mut rng = rng::stream(rng::derive_seed(seed, c.client_id as u64), streams::SELECTION);
                    // scoring inputs are unused for uniform sampling
                    select_local_trees(c, strategy, &StepFunction::constant(1.0), &EvalGrid::new(vec![0.0])?, &mut rng)?
                }
                Sampling::InverseIbs => {
                    let (censoring, grid) = c.local_scoring(ibs_grid)?;
                    let mut rng = rng::stream(rng::derive_seed(seed, c.client_id as u64), streams::SELECTION);
                    select_local_trees(c, strategy, &censoring, &grid, &mut rng)?
                }
            };
            let trees: Vec<&SurvivalTree> = chosen.iter().map(|&i| &c.model.trees()[i]).collect();
            Ok(Some(serde_json::to_string(&trees)?))
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("tree_sampling"))?;

    let feature_count = clients[0].model.feature_count();
    let mut collected = Vec::with_capacity(n_server_trees);
    for (c, payload) in clients.iter().zip(selections) {
        let Some(payload) = payload else { continue };
        let received = log.send(MessageDirection::ClientToServer, c.client_id, PayloadType::Trees, payload);
        let trees: Vec<SurvivalTree> = serde_json::from_str(received)?;
        if trees.len() != c.quota {
            return Err(Error::Invariant(format!(
                "client {} sent {} trees for a quota of {}",
                c.client_id,
                trees.len(),
                c.quota
            ))
            .in_stage("aggregation"));
        }
        collected.extend(trees.into_iter().map(|t| (c.client_id, t)));
    }
    let ensemble = Forest::from_trees(collected.iter().map(|(_, t)| t.clone()).collect(), feature_count)
        .map_err(|e| e.in_stage("aggregation"))?;
    Ok((
        ServerState {
            quotas,
            collected,
            ensemble,
        },
        log,
    ))
}

/// Full simulation: partition, local training, tree assignment, tree
/// sampling and aggregation.
pub fn run_fedsurf(train: &SurvivalDataset, config: &FederationConfig, forest_params: &ForestParams) -> Result<FedSurfOutcome> {
    let mut clients = train_clients(train, config, forest_params)?;
    let (server, log) = run_protocol(
        &mut clients,
        config.n_server_trees,
        config.sampling,
        &config.ibs_grid,
        config.seed,
    )?;
    Ok(FedSurfOutcome { server, clients, log })
}

/// Each client's own forest scored on the shared test set.
pub fn run_local_baselines(clients: &[ClientState], test: &SurvivalDataset, evaluator: &Evaluator) -> Result<Vec<Scores>> {
    clients
        .par_iter()
        .map(|c| evaluator.score(&c.model, test))
        .collect()
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Schema, SurvivalRecord};

    fn data(n: usize) -> SurvivalDataset {
        let records = (0..n)
            .map(|i| {
                let x = (i % 17) as f64;
                SurvivalRecord::new(vec![x, (i % 5) as f64], i % 3 != 0, 1.0 + 2.0 * x + (i % 7) as f64)
            })
            .collect();
        SurvivalDataset::new(Schema::numerical(2), records).unwrap()
    }

    fn small_forest() -> ForestParams {
        ForestParams {
            n_trees: 10,
            seed: 1,
            ..ForestParams::default()
        }
    }

    #[test]
    fn single_client_federation_subsamples_local_forest() {
        let config = FederationConfig {
            n_clients: 1,
            n_server_trees: 6,
            ..FederationConfig::default()
        };
        let out = run_fedsurf(&data(120), &config, &small_forest()).unwrap();
        assert_eq!(out.server.ensemble.len(), 6);
        assert_eq!(out.server.quotas, vec![6]);
        for (_, t) in &out.server.collected {
            assert!(out.clients[0].model.trees().contains(t));
        }
    }

    #[test]
    fn message_log_has_one_tree_round() {
        let config = FederationConfig {
            n_clients: 3,
            n_server_trees: 12,
            sampling: Sampling::InverseIbs,
            ..FederationConfig::default()
        };
        let out = run_fedsurf(&data(300), &config, &small_forest()).unwrap();
        assert_eq!(out.log.tree_rounds(), 1);
        assert_eq!(out.log.count(PayloadType::Quota), 3);
        assert_eq!(out.log.count(PayloadType::TreeCount), 3);
        let contributing = out.server.quotas.iter().filter(|&&q| q > 0).count();
        assert_eq!(out.log.count(PayloadType::Trees), contributing);
        let jsonl = out.log.to_jsonl().unwrap();
        assert_eq!(jsonl.lines().count(), out.log.messages().len());
        assert!(jsonl.contains("\"payload_type\":\"trees\""));
    }

    #[test]
    fn selection_returns_distinct_trees() {
        let config = FederationConfig {
            n_clients: 2,
            ..FederationConfig::default()
        };
        let mut clients = train_clients(&data(200), &config, &small_forest()).unwrap();
        let c = &mut clients[0];
        c.quota = c.n_trees;
        let (g, grid) = c.local_scoring(&EvalSettings::default()).unwrap();
        for strategy in [Sampling::Uniform, Sampling::InverseIbs] {
            let mut idx = select_local_trees(c, strategy, &g, &grid, &mut rng::stream(3, 0)).unwrap();
            idx.sort_unstable();
            assert_eq!(idx, (0..c.n_trees).collect::<Vec<_>>());
        }
        c.quota = c.n_trees + 1;
        assert!(select_local_trees(c, Sampling::Uniform, &g, &grid, &mut rng::stream(3, 0)).is_err());
    }

    #[test]
    fn inverse_ibs_needs_validation_data() {
        let config = FederationConfig {
            n_clients: 1,
            ..FederationConfig::default()
        };
        let mut clients = train_clients(&data(100), &config, &small_forest()).unwrap();
        let c = &mut clients[0];
        c.quota = 1;
        let (g, grid) = c.local_scoring(&EvalSettings::default()).unwrap();
        c.local_val = c.local_val.with_records(vec![]);
        let err = select_local_trees(c, Sampling::InverseIbs, &g, &grid, &mut rng::stream(3, 0)).unwrap_err();
        assert!(err.to_string().contains("uniform"));
    }

    #[test]
    fn run_is_deterministic() {
        let config = FederationConfig {
            n_clients: 4,
            n_server_trees: 20,
            sampling: Sampling::InverseIbs,
            ..FederationConfig::default()
        };
        let a = run_fedsurf(&data(300), &config, &small_forest()).unwrap();
        let b = run_fedsurf(&data(300), &config, &small_forest()).unwrap();
        assert_eq!(a.server.ensemble, b.server.ensemble);
        assert_eq!(a.server.quotas, b.server.quotas);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn config_validation() {
        let d = data(100);
        let bad = FederationConfig {
            n_clients: 0,
            ..FederationConfig::default()
        };
        assert!(run_fedsurf(&d, &bad, &small_forest()).is_err());
        let infeasible = FederationConfig {
            n_clients: 10,
            split: SplitKind::LabelSkew,
            ..FederationConfig::default()
        };
        assert!(matches!(infeasible.validate(d.len()), Err(Error::Config(_))));
        let too_many_trees = FederationConfig {
            n_clients: 2,
            n_server_trees: 50,
            ..FederationConfig::default()
        };
        let err = run_fedsurf(&d, &too_many_trees, &small_forest()).unwrap_err();
        assert!(err.to_string().contains("tree_assignment"), "{err}");
    }

    #[test]
    fn mean_std_values() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }
}
