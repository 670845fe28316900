//! IPCW evaluation: censoring distribution, Brier score, integrated Brier
//! score and Uno's concordance index.

use serde::{Deserialize, Serialize};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::estimators::kaplan_meier;
use crate::forest::{Forest, SurvivalTree};
use crate::step::StepFunction;

/// Lower bound applied to a per-tree IBS before it is inverted into a weight.
pub const IBS_FLOOR: f64 = 1e-6;

/// Anything that yields a scalar risk and a survival curve per sample.
pub trait SurvivalPredictor {
    fn risk(&self, x: &[f64]) -> Result<f64>;

    /// Predicted `S(t | x)` at each point of a sorted grid.
    fn survival_at(&self, x: &[f64], grid: &[f64]) -> Result<Vec<f64>>;
}

impl SurvivalPredictor for Forest {
    fn risk(&self, x: &[f64]) -> Result<f64> {
        self.predict_risk(x)
    }

    fn survival_at(&self, x: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict_survival(x)?.eval_sorted(grid))
    }
}

impl SurvivalPredictor for SurvivalTree {
    fn risk(&self, x: &[f64]) -> Result<f64> {
        Ok(self.leaf_chf(x).iter().sum())
    }

    fn survival_at(&self, x: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict_survival(x).eval_sorted(grid))
    }
}

/// Integration grid for the Brier score and horizon for the C-index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalGrid {
    points: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub n_points: usize,
    pub lower_percentile: f64,
    pub upper_percentile: f64,
    /// C-index truncation horizon; defaults to the last grid point.
    pub tau: Option<f64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            n_points: 100,
            lower_percentile: 5.0,
            upper_percentile: 95.0,
            tau: None,
        }
    }
}

/// Linear-interpolation percentile of sorted values (`q` in [0, 100]).
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = (q / 100.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl EvalGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::argument("evaluation grid is empty"));
        }
        if points.iter().any(|p| !p.is_finite()) || points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::argument("evaluation grid must be finite and strictly increasing"));
        }
        Ok(Self { points })
    }

    /// Equally spaced points between two percentiles of the observed event
    /// times of `train`, kept strictly below the largest event time.
    pub fn from_train(train: &SurvivalDataset, settings: &EvalSettings) -> Result<Self> {
        let mut times: Vec<f64> = train.records().iter().filter(|r| r.event).map(|r| r.time).collect();
        if times.len() < 2 {
            return Err(Error::argument(
                "at least two observed events are needed to build an evaluation grid",
            ));
        }
        times.sort_by(f64::total_cmp);
        let max_event = *times.last().unwrap();
        let lo = percentile(&times, settings.lower_percentile);
        let mut hi = percentile(&times, settings.upper_percentile);
        if hi >= max_event {
            hi = times.iter().rev().copied().find(|&t| t < max_event).unwrap_or(lo);
        }
        if settings.n_points == 0 {
            return Err(Error::argument("evaluation grid needs at least one point"));
        }
        if settings.n_points == 1 || hi <= lo {
            return Self::new(vec![lo.min(hi)]);
        }
        let step = (hi - lo) / (settings.n_points - 1) as f64;
        let mut points: Vec<f64> = (0..settings.n_points).map(|i| lo + step * i as f64).collect();
        *points.last_mut().unwrap() = hi;
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn first(&self) -> f64 {
        self.points[0]
    }

    pub fn last(&self) -> f64 {
        *self.points.last().unwrap()
    }
}

/// Kaplan-Meier estimate of the censoring survival `G(t)`.
pub fn censoring_survival(train: &SurvivalDataset) -> Result<StepFunction> {
    if train.is_empty() {
        return Err(Error::argument("censoring distribution of an empty dataset"));
    }
    kaplan_meier(&train.flipped())
}

fn weight(g: f64, t: f64) -> Result<f64> {
    if g > 0.0 {
        Ok(g)
    } else {
        Err(Error::Evaluation(format!(
            "censoring survival is zero at t = {t}"
        )))
    }
}

/// IPCW Brier score at time `t`; `surv_at_t[i]` is the predicted survival of
/// test record `i` at `t`.
pub fn brier_score(
    censoring: &StepFunction,
    test: &SurvivalDataset,
    surv_at_t: &[f64],
    t: f64,
) -> Result<f64> {
    if surv_at_t.len() != test.len() {
        return Err(Error::argument(format!(
            "{} predictions for {} test records",
            surv_at_t.len(),
            test.len()
        )));
    }
    if test.is_empty() {
        return Err(Error::argument("brier score on an empty test set"));
    }
    let g_t = censoring.eval(t);
    let mut total = 0.0;
    for (r, &s) in test.records().iter().zip(surv_at_t) {
        if r.time <= t && r.event {
            total += s * s / weight(censoring.eval_left(r.time), t)?;
        } else if r.time > t {
            total += (1.0 - s) * (1.0 - s) / weight(g_t, t)?;
        }
    }
    Ok(total / test.len() as f64)
}

/// Brier score at every grid point. `surv[i][k]` is the prediction for
/// record `i` at grid point `k`.
pub fn brier_curve(
    censoring: &StepFunction,
    test: &SurvivalDataset,
    surv: &[Vec<f64>],
    grid: &EvalGrid,
) -> Result<Vec<f64>> {
    if surv.len() != test.len() {
        return Err(Error::argument("one survival curve per test record is required"));
    }
    let mut column = vec![0.0; test.len()];
    grid.points()
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            for (c, row) in column.iter_mut().zip(surv) {
                *c = row[k];
            }
            brier_score(censoring, test, &column, t)
        })
        .collect()
}

/// Trapezoidal integral of `values` over `grid`, normalized by its span.
pub fn integrate(grid: &EvalGrid, values: &[f64]) -> f64 {
    let p = grid.points();
    if p.len() == 1 {
        return values[0];
    }
    let area: f64 = p
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| (t[1] - t[0]) * (v[0] + v[1]) / 2.0)
        .sum();
    area / (grid.last() - grid.first())
}

pub fn integrated_brier_score(
    censoring: &StepFunction,
    test: &SurvivalDataset,
    surv_curves: &[StepFunction],
    grid: &EvalGrid,
) -> Result<f64> {
    let surv: Vec<Vec<f64>> = surv_curves.iter().map(|c| c.eval_sorted(grid.points())).collect();
    let curve = brier_curve(censoring, test, &surv, grid)?;
    Ok(integrate(grid, &curve))
}

/// Uno's IPCW concordance index truncated at `tau`.
///
/// Pairs `(i, j)` with `δ_i = 1`, `t_i < t_j` and `t_i < tau` are comparable;
/// each is weighted by `G(t_i-)^-2`. Tied risks count one half.
pub fn concordance_index_ipcw(
    censoring: &StepFunction,
    test: &SurvivalDataset,
    risks: &[f64],
    tau: f64,
) -> Result<f64> {
    if risks.len() != test.len() {
        return Err(Error::argument(format!(
            "{} risks for {} test records",
            risks.len(),
            test.len()
        )));
    }
    let records = test.records();
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for (i, ri) in records.iter().enumerate() {
        if !ri.event || ri.time >= tau {
            continue;
        }
        let g = weight(censoring.eval_left(ri.time), ri.time)?;
        let w = 1.0 / (g * g);
        for (j, rj) in records.iter().enumerate() {
            if rj.time <= ri.time {
                continue;
            }
            denominator += w;
            if risks[i] > risks[j] {
                numerator += w;
            } else if risks[i] == risks[j] {
                numerator += 0.5 * w;
            }
        }
    }
    if denominator == 0.0 {
        return Err(Error::Evaluation("no comparable pairs".into()));
    }
    Ok(numerator / denominator)
}

/// IBS of a single tree on a validation split, floored at [`IBS_FLOOR`].
pub fn per_tree_ibs(
    tree: &SurvivalTree,
    validation: &SurvivalDataset,
    censoring: &StepFunction,
    grid: &EvalGrid,
) -> Result<f64> {
    if validation.is_empty() {
        return Err(Error::argument("per-tree IBS needs a non-empty validation split"));
    }
    let surv = validation
        .records()
        .iter()
        .map(|r| tree.survival_at(&r.features, grid.points()))
        .collect::<Result<Vec<_>>>()?;
    let curve = brier_curve(censoring, validation, &surv, grid)?;
    Ok(integrate(grid, &curve).max(IBS_FLOOR))
}

/// Test-set scores of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    /// `local` or `federated`.
    pub setting: String,
    pub split_type: String,
    pub seed: u64,
    pub c_index: f64,
    pub ibs: f64,
    pub brier_times: Vec<f64>,
    pub brier: Vec<f64>,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "model,setting,split_type,seed,c_index,ibs";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.model, self.setting, self.split_type, self.seed, self.c_index, self.ibs
        )
    }
}

/// C-index, IBS and Brier curve of `model` on `test`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub c_index: f64,
    pub ibs: f64,
    pub brier: Vec<f64>,
}

/// Everything needed to score a model on a fixed test set.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub censoring: StepFunction,
    pub grid: EvalGrid,
    pub tau: f64,
}

impl Evaluator {
    /// Censoring distribution and grid estimated from `train`.
    pub fn from_train(train: &SurvivalDataset, settings: &EvalSettings) -> Result<Self> {
        let grid = EvalGrid::from_train(train, settings)?;
        Ok(Self {
            censoring: censoring_survival(train)?,
            tau: settings.tau.unwrap_or_else(|| grid.last()),
            grid,
        })
    }

    pub fn score<M: SurvivalPredictor + ?Sized>(&self, model: &M, test: &SurvivalDataset) -> Result<Scores> {
        let mut risks = Vec::with_capacity(test.len());
        let mut surv = Vec::with_capacity(test.len());
        for r in test.records() {
            risks.push(model.risk(&r.features)?);
            surv.push(model.survival_at(&r.features, self.grid.points())?);
        }
        let c_index = concordance_index_ipcw(&self.censoring, test, &risks, self.tau)?;
        let brier = brier_curve(&self.censoring, test, &surv, &self.grid)?;
        Ok(Scores {
            c_index,
            ibs: integrate(&self.grid, &brier),
            brier,
        })
    }
}
