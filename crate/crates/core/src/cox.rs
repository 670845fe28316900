//! Cox proportional-hazards baseline: local fitting by gradient descent on
//! the Breslow partial likelihood, and a FedAvg variant whose clients share a
//! pooled Nelson-Aalen baseline hazard.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{is_missing, SurvivalDataset};
use crate::error::{Error, Result};
use crate::estimators::{nelson_aalen, RiskTable};
use crate::metrics::{concordance_index_ipcw, censoring_survival, SurvivalPredictor};
use crate::rng::{self, streams};
use crate::step::StepFunction;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn has_events(data: &SurvivalDataset) -> Result<()> {
    if data.n_events() == 0 {
        Err(Error::argument("partial likelihood needs at least one event"))
    } else {
        Ok(())
    }
}

/// Loss and gradient in one pass over records sorted by decreasing time.
fn loss_and_gradient(beta: &[f64], data: &SurvivalDataset) -> Result<(f64, Vec<f64>)> {
    has_events(data)?;
    let d = data.n_features();
    if beta.len() != d {
        return Err(Error::argument(format!("beta has {} entries for {d} features", beta.len())));
    }
    let records = data.records();
    let eta: Vec<f64> = records.iter().map(|r| dot(beta, &r.features)).collect();
    if eta.iter().any(|e| !e.is_finite()) {
        return Err(Error::argument("linear predictor is not finite (missing features?)"));
    }
    let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[b].time.total_cmp(&records[a].time).then(a.cmp(&b)));

    let mut s0 = 0.0;
    let mut s1 = vec![0.0; d];
    let mut loss = 0.0;
    let mut grad = vec![0.0; d];
    let mut i = 0;
    while i < order.len() {
        let t = records[order[i]].time;
        let mut j = i;
        while j < order.len() && records[order[j]].time == t {
            let k = order[j];
            let w = (eta[k] - shift).exp();
            s0 += w;
            s1.iter_mut().zip(&records[k].features).for_each(|(s, x)| *s += w * x);
            j += 1;
        }
        for &k in &order[i..j] {
            if records[k].event {
                loss += s0.ln() + shift - eta[k];
                grad.iter_mut()
                    .zip(&s1)
                    .zip(&records[k].features)
                    .for_each(|((g, s), x)| *g += s / s0 - x);
            }
        }
        i = j;
    }
    Ok((loss, grad))
}

/// Negative Breslow partial log-likelihood.
pub fn cox_neg_partial_loglik(beta: &[f64], data: &SurvivalDataset) -> Result<f64> {
    Ok(loss_and_gradient(beta, data)?.0)
}

/// Analytic gradient of [`cox_neg_partial_loglik`].
pub fn cox_gradient(beta: &[f64], data: &SurvivalDataset) -> Result<Vec<f64>> {
    Ok(loss_and_gradient(beta, data)?.1)
}

/// One gradient step with step halving until the loss does not increase.
fn descent_step(beta: &mut Vec<f64>, data: &SurvivalDataset, learning_rate: f64) -> Result<f64> {
    let (loss, grad) = loss_and_gradient(beta, data)?;
    if !loss.is_finite() {
        return Err(Error::Divergence(
            "partial likelihood is not finite; try a smaller learning rate".into(),
        ));
    }
    let mut step = learning_rate;
    for _ in 0..60 {
        let candidate: Vec<f64> = beta.iter().zip(&grad).map(|(b, g)| b - step * g).collect();
        let new_loss = cox_neg_partial_loglik(&candidate, data)?;
        if new_loss <= loss {
            *beta = candidate;
            return Ok(new_loss);
        }
        step /= 2.0;
    }
    Ok(loss)
}

/// Gradient descent from `beta = 0` on standardized features.
pub fn fit_cox_local(data: &SurvivalDataset, learning_rate: f64, epochs: usize) -> Result<Vec<f64>> {
    fit_cox_from(vec![0.0; data.n_features()], data, learning_rate, epochs)
}

pub fn fit_cox_from(mut beta: Vec<f64>, data: &SurvivalDataset, learning_rate: f64, epochs: usize) -> Result<Vec<f64>> {
    if learning_rate.is_nan() || learning_rate <= 0.0 {
        return Err(Error::argument("learning rate must be positive"));
    }
    has_events(data)?;
    for _ in 0..epochs {
        descent_step(&mut beta, data, learning_rate)?;
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Divergence("coefficients diverged; try a smaller learning rate".into()));
    }
    Ok(beta)
}

/// Per-feature centering and scaling. Missing values map to 0 after scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Sufficient statistics for pooled standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMoments {
    pub count: Vec<f64>,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl FeatureMoments {
    pub fn of(data: &SurvivalDataset) -> Self {
        let d = data.n_features();
        let mut m = Self {
            count: vec![0.0; d],
            sum: vec![0.0; d],
            sum_sq: vec![0.0; d],
        };
        for r in data.records() {
            for (j, &v) in r.features.iter().enumerate() {
                if !is_missing(v) {
                    m.count[j] += 1.0;
                    m.sum[j] += v;
                    m.sum_sq[j] += v * v;
                }
            }
        }
        m
    }

    pub fn merge(parts: &[FeatureMoments]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::argument("no moments to merge"))?;
        let mut out = first.clone();
        for p in &parts[1..] {
            for j in 0..out.count.len() {
                out.count[j] += p.count[j];
                out.sum[j] += p.sum[j];
                out.sum_sq[j] += p.sum_sq[j];
            }
        }
        Ok(out)
    }
}

impl Standardizer {
    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    pub fn from_moments(m: &FeatureMoments) -> Self {
        let mut mean = Vec::with_capacity(m.count.len());
        let mut scale = Vec::with_capacity(m.count.len());
        for j in 0..m.count.len() {
            let n = m.count[j];
            let mu = if n > 0.0 { m.sum[j] / n } else { 0.0 };
            let var = if n > 0.0 { (m.sum_sq[j] / n - mu * mu).max(0.0) } else { 0.0 };
            mean.push(mu);
            scale.push(if var > 1e-24 { var.sqrt() } else { 1.0 });
        }
        Self { mean, scale }
    }

    pub fn fit(data: &SurvivalDataset) -> Self {
        Self::from_moments(&FeatureMoments::of(data))
    }

    pub fn transform_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(&v, (m, s))| if is_missing(v) { 0.0 } else { (v - m) / s })
            .collect()
    }

    pub fn transform(&self, data: &SurvivalDataset) -> SurvivalDataset {
        data.with_records(
            data.records()
                .iter()
                .map(|r| crate::data::SurvivalRecord {
                    features: self.transform_row(&r.features),
                    ..r.clone()
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    /// Coefficients on the standardized feature scale.
    pub beta: Vec<f64>,
    pub standardizer: Standardizer,
    pub baseline_cum_hazard: StepFunction,
}

impl CoxModel {
    pub fn new(beta: Vec<f64>, standardizer: Standardizer, baseline_cum_hazard: StepFunction) -> Result<Self> {
        if beta.len() != standardizer.mean.len() {
            return Err(Error::Invariant("beta and standardizer dimensions differ".into()));
        }
        if !baseline_cum_hazard.is_cumulative_hazard() {
            return Err(Error::Invariant("baseline is not a cumulative hazard".into()));
        }
        Ok(Self {
            beta,
            standardizer,
            baseline_cum_hazard,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let m: CoxModel = serde_json::from_str(json)?;
        Self::new(m.beta, m.standardizer, m.baseline_cum_hazard)
    }

    /// `S(t | x) = exp(-H0(t) exp(<beta, x>))`.
    pub fn predict_survival(&self, x: &[f64]) -> Result<StepFunction> {
        let r = cox_predict_risk(self, x)?.exp();
        Ok(self.baseline_cum_hazard.map(|h| (-h * r).exp()))
    }
}

/// Linear predictor `<beta, x>` on standardized features.
pub fn cox_predict_risk(model: &CoxModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.beta.len() {
        return Err(Error::argument(format!(
            "sample has {} features, model expects {}",
            x.len(),
            model.beta.len()
        )));
    }
    Ok(dot(&model.beta, &model.standardizer.transform_row(x)))
}

impl SurvivalPredictor for CoxModel {
    fn risk(&self, x: &[f64]) -> Result<f64> {
        cox_predict_risk(self, x)
    }

    fn survival_at(&self, x: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict_survival(x)?.eval_sorted(grid))
    }
}

/// Fits a local model: standardize on `train`, descend for `epochs`, attach
/// the Nelson-Aalen baseline of `train`.
pub fn fit_local_model(train: &SurvivalDataset, learning_rate: f64, epochs: usize) -> Result<CoxModel> {
    let standardizer = Standardizer::fit(train);
    let beta = fit_cox_local(&standardizer.transform(train), learning_rate, epochs)?;
    CoxModel::new(beta, standardizer, nelson_aalen(train)?)
}

/// Per-client counts at every distinct observed time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSummary {
    pub times: Vec<f64>,
    pub events: Vec<u64>,
    /// Records leaving the risk set at each time (events and censorings).
    pub removed: Vec<u64>,
}

impl RiskSummary {
    pub fn of(data: &SurvivalDataset) -> Self {
        let mut obs: Vec<(f64, bool)> = data.records().iter().map(|r| (r.time, r.event)).collect();
        obs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut s = RiskSummary {
            times: Vec::new(),
            events: Vec::new(),
            removed: Vec::new(),
        };
        for (t, e) in obs {
            if s.times.last() != Some(&t) {
                s.times.push(t);
                s.events.push(0);
                s.removed.push(0);
            }
            *s.events.last_mut().unwrap() += u64::from(e);
            *s.removed.last_mut().unwrap() += 1;
        }
        s
    }
}

/// Nelson-Aalen estimate on the pooled data, rebuilt from client summaries.
pub fn shared_baseline_hazard(summaries: &[RiskSummary]) -> Result<StepFunction> {
    if summaries.is_empty() || summaries.iter().all(|s| s.times.is_empty()) {
        return Err(Error::argument("no client summaries to merge"));
    }
    let mut merged: Vec<(f64, u64, u64)> = summaries
        .iter()
        .flat_map(|s| {
            s.times
                .iter()
                .zip(&s.events)
                .zip(&s.removed)
                .map(|((&t, &d), &r)| (t, d, r))
        })
        .collect();
    merged.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut at_risk: u64 = merged.iter().map(|m| m.2).sum();
    let mut table = RiskTable {
        times: Vec::new(),
        events: Vec::new(),
        at_risk: Vec::new(),
    };
    let mut i = 0;
    while i < merged.len() {
        let t = merged[i].0;
        let (mut d, mut removed) = (0, 0);
        while i < merged.len() && merged[i].0 == t {
            d += merged[i].1;
            removed += merged[i].2;
            i += 1;
        }
        if d > 0 {
            table.times.push(t);
            table.events.push(d);
            table.at_risk.push(at_risk);
        }
        at_risk -= removed;
    }
    Ok(table.cumulative_hazard())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FedAvgConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub client_fraction: f64,
    pub seed: u64,
}

impl Default for FedAvgConfig {
    fn default() -> Self {
        Self {
            rounds: 500,
            local_epochs: 1,
            learning_rate: 0.01,
            client_fraction: 1.0,
            seed: 0,
        }
    }
}

impl FedAvgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.local_epochs == 0 {
            return Err(Error::Config("rounds and local_epochs must be positive".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::Config("client_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// A client's private data for the FedAvg baseline.
#[derive(Debug, Clone)]
pub struct CoxClient {
    pub train: SurvivalDataset,
    pub validation: SurvivalDataset,
}

#[derive(Debug, Clone)]
pub struct FedAvgOutcome {
    pub model: CoxModel,
    /// Round (1-based) whose coefficients were kept; 0 means the initial zeros.
    pub best_round: usize,
    pub best_val_c_index: f64,
    /// Aggregated coefficients after every round.
    pub trajectory: Vec<Vec<f64>>,
}

/// Size-weighted average of client coefficient vectors.
pub fn aggregate(betas: &[Vec<f64>], sizes: &[usize]) -> Vec<f64> {
    let total: usize = sizes.iter().sum();
    let d = betas[0].len();
    let mut out = vec![0.0; d];
    for (b, &n) in betas.iter().zip(sizes) {
        let w = n as f64 / total as f64;
        out.iter_mut().zip(b).for_each(|(o, v)| *o += w * v);
    }
    out
}

/// FedAvg on the Cox partial likelihood. Features are standardized with
/// pooled moments, and the kept coefficients are those with the best
/// C-index on the union of client validation splits.
pub fn fedavg_cox(clients: &[CoxClient], config: &FedAvgConfig) -> Result<FedAvgOutcome> {
    config.validate()?;
    if clients.is_empty() {
        return Err(Error::argument("FedAvg needs at least one client"));
    }
    for (k, c) in clients.iter().enumerate() {
        if c.train.n_events() == 0 {
            return Err(Error::argument(format!("client {k} has no events in its training split")));
        }
    }
    let moments: Vec<FeatureMoments> = clients.iter().map(|c| FeatureMoments::of(&c.train)).collect();
    let standardizer = Standardizer::from_moments(&FeatureMoments::merge(&moments)?);
    let local: Vec<SurvivalDataset> = clients.iter().map(|c| standardizer.transform(&c.train)).collect();
    let sizes: Vec<usize> = clients.iter().map(|c| c.train.len()).collect();
    let baseline = shared_baseline_hazard(&clients.iter().map(|c| RiskSummary::of(&c.train)).collect::<Vec<_>>())?;

    let val = SurvivalDataset::concat(clients.iter().map(|c| &c.validation))?;
    let val_std = standardizer.transform(&val);
    let pooled_train = SurvivalDataset::concat(clients.iter().map(|c| &c.train))?;
    let censoring = censoring_survival(&pooled_train)?;
    let score = |beta: &[f64]| -> Option<f64> {
        if val_std.is_empty() {
            return None;
        }
        let risks: Vec<f64> = val_std.records().iter().map(|r| dot(beta, &r.features)).collect();
        concordance_index_ipcw(&censoring, &val_std, &risks, f64::INFINITY).ok()
    };

    let d = standardizer.mean.len();
    let mut beta = vec![0.0; d];
    let mut best = (score(&beta).unwrap_or(f64::NEG_INFINITY), 0usize, beta.clone());
    let mut trajectory = Vec::with_capacity(config.rounds);
    let mut rng = rng::stream(config.seed, streams::SELECTION);
    let n_selected = ((config.client_fraction * clients.len() as f64).round() as usize).clamp(1, clients.len());

    for round in 1..=config.rounds {
        let selected: Vec<usize> = if n_selected == clients.len() {
            (0..clients.len()).collect()
        } else {
            let mut idx: Vec<usize> = (0..clients.len()).collect();
            for i in 0..n_selected {
                let j = rng.gen_range(i..idx.len());
                idx.swap(i, j);
            }
            idx.truncate(n_selected);
            idx.sort_unstable();
            idx
        };
        let updates = selected
            .iter()
            .map(|&k| fit_cox_from(beta.clone(), &local[k], config.learning_rate, config.local_epochs))
            .collect::<Result<Vec<_>>>()?;
        let weights: Vec<usize> = selected.iter().map(|&k| sizes[k]).collect();
        beta = aggregate(&updates, &weights);
        if let Some(c) = score(&beta) {
            if c > best.0 {
                best = (c, round, beta.clone());
            }
        }
        trajectory.push(beta.clone());
    }

    let (best_val_c_index, best_round, best_beta) = if best.0.is_finite() {
        best
    } else {
        (f64::NAN, config.rounds, beta)
    };
    Ok(FedAvgOutcome {
        model: CoxModel::new(best_beta, standardizer, baseline)?,
        best_round,
        best_val_c_index,
        trajectory,
    })
}
