//! Log-rank split search.

use crate::data::{is_missing, SurvivalDataset, SurvivalRecord};

/// Side that records with a missing split feature are sent to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub statistic: f64,
    /// Direction for missing values: the child with more non-missing samples.
    pub missing: Direction,
}

/// Leaf-size constraints a split must satisfy on both children.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitConstraints {
    pub min_samples_leaf: usize,
    pub min_events_leaf: usize,
}

impl Default for SplitConstraints {
    fn default() -> Self {
        Self {
            min_samples_leaf: 1,
            min_events_leaf: 1,
        }
    }
}

/// Standardized two-sample log-rank statistic from per-event-time counts of
/// group one (`d1`, `n1`) and of the pooled sample (`d`, `n`).
pub(crate) fn log_rank_from_counts(d1: &[u32], n1: &[u32], d: &[u32], n: &[u32]) -> f64 {
    let mut numerator = 0.0;
    let mut variance = 0.0;
    for j in 0..d.len() {
        let (dj, nj) = (d[j] as f64, n[j] as f64);
        if nj == 0.0 {
            continue;
        }
        let (d1j, n1j) = (d1[j] as f64, n1[j] as f64);
        let p = n1j / nj;
        numerator += d1j - dj * p;
        if nj > 1.0 {
            variance += dj * p * (1.0 - p) * (nj - dj) / (nj - 1.0);
        }
    }
    if variance > 0.0 {
        numerator.abs() / variance.sqrt()
    } else {
        0.0
    }
}

/// Two-sample log-rank statistic. `None` when either group is empty or the
/// pooled sample has no events.
pub fn log_rank_statistic(left: &SurvivalDataset, right: &SurvivalDataset) -> Option<f64> {
    log_rank_records(left.records(), right.records())
}

pub(crate) fn log_rank_records(left: &[SurvivalRecord], right: &[SurvivalRecord]) -> Option<f64> {
    if left.is_empty() || right.is_empty() {
        return None;
    }
    let mut times: Vec<f64> = left
        .iter()
        .chain(right)
        .filter(|r| r.event)
        .map(|r| r.time)
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    if times.is_empty() {
        return None;
    }
    let counts = |group: &[SurvivalRecord]| {
        let mut d = vec![0u32; times.len()];
        let mut n = vec![0u32; times.len()];
        for r in group {
            let at_risk_until = times.partition_point(|&t| t <= r.time);
            n[..at_risk_until].iter_mut().for_each(|c| *c += 1);
            if r.event {
                let j = times.partition_point(|&t| t < r.time);
                d[j] += 1;
            }
        }
        (d, n)
    };
    let (d1, n1) = counts(left);
    let (d2, n2) = counts(right);
    let d: Vec<u32> = d1.iter().zip(&d2).map(|(a, b)| a + b).collect();
    let n: Vec<u32> = n1.iter().zip(&n2).map(|(a, b)| a + b).collect();
    Some(log_rank_from_counts(&d1, &n1, &d, &n))
}

/// Best log-rank split of the records `samples` (indices into `records`,
/// repeats allowed) over `candidate_features`.
///
/// Thresholds are midpoints between consecutive distinct non-missing values;
/// a record goes left when `value <= threshold`. Ties in the statistic keep
/// the lowest feature index, then the lowest threshold.
pub(crate) fn best_split_indices(
    records: &[SurvivalRecord],
    samples: &[usize],
    candidate_features: &[usize],
    constraints: SplitConstraints,
) -> Option<Split> {
    let mut features = candidate_features.to_vec();
    features.sort_unstable();
    features.dedup();

    let mut best: Option<Split> = None;
    // (value, time, event) scratch reused across features
    let mut items: Vec<(f64, f64, bool)> = Vec::with_capacity(samples.len());
    for &feature in &features {
        items.clear();
        items.extend(samples.iter().filter_map(|&i| {
            let r = &records[i];
            let v = r.features[feature];
            (!is_missing(v)).then_some((v, r.time, r.event))
        }));
        let Some(candidate) = best_split_for_feature(&mut items, constraints) else {
            continue;
        };
        let candidate = Split {
            feature,
            ..candidate
        };
        if best.is_none_or(|b| candidate.statistic > b.statistic) {
            best = Some(candidate);
        }
    }
    best
}

fn best_split_for_feature(
    items: &mut [(f64, f64, bool)],
    constraints: SplitConstraints,
) -> Option<Split> {
    let total = items.len();
    if total < 2 * constraints.min_samples_leaf.max(1) {
        return None;
    }
    items.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    if items[0].0 == items[total - 1].0 {
        return None;
    }

    let mut times: Vec<f64> = items.iter().filter(|x| x.2).map(|x| x.1).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    if times.is_empty() {
        return None;
    }
    let n_times = times.len();
    let total_events = items.iter().filter(|x| x.2).count();

    // at-risk range [0, at_risk_until) and event slot for every item
    let slots: Vec<(usize, Option<usize>)> = items
        .iter()
        .map(|&(_, t, e)| {
            let until = times.partition_point(|&x| x <= t);
            (until, e.then(|| times.partition_point(|&x| x < t)))
        })
        .collect();

    let mut d = vec![0u32; n_times];
    let mut n = vec![0u32; n_times];
    for &(until, ev) in &slots {
        n[..until].iter_mut().for_each(|c| *c += 1);
        if let Some(j) = ev {
            d[j] += 1;
        }
    }

    let mut dl = vec![0u32; n_times];
    let mut nl = vec![0u32; n_times];
    let mut left_count = 0usize;
    let mut left_events = 0usize;
    let mut best: Option<Split> = None;

    let mut i = 0;
    while i < total {
        let value = items[i].0;
        while i < total && items[i].0 == value {
            let (until, ev) = slots[i];
            nl[..until].iter_mut().for_each(|c| *c += 1);
            if let Some(j) = ev {
                dl[j] += 1;
                left_events += 1;
            }
            left_count += 1;
            i += 1;
        }
        if i == total {
            break;
        }
        let right_count = total - left_count;
        let right_events = total_events - left_events;
        if left_count < constraints.min_samples_leaf
            || right_count < constraints.min_samples_leaf
            || left_events < constraints.min_events_leaf
            || right_events < constraints.min_events_leaf
        {
            continue;
        }
        let next = items[i].0;
        let mut threshold = value + (next - value) / 2.0;
        if threshold >= next {
            threshold = value;
        }
        let statistic = log_rank_from_counts(&dl, &nl, &d, &n);
        if best.is_none_or(|b| statistic > b.statistic) {
            best = Some(Split {
                feature: 0,
                threshold,
                statistic,
                missing: if left_count >= right_count {
                    Direction::Left
                } else {
                    Direction::Right
                },
            });
        }
    }
    best
}

/// Best split of a whole node dataset. Returns `None` when no threshold
/// satisfies the leaf constraints.
pub fn best_split(
    node_data: &SurvivalDataset,
    candidate_features: &[usize],
    constraints: SplitConstraints,
) -> Option<Split> {
    let samples: Vec<usize> = (0..node_data.len()).collect();
    best_split_indices(node_data.records(), &samples, candidate_features, constraints)
}
