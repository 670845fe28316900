//! Independent reference implementations used as test oracles. They favour
//! direct, quadratic-time formulas over speed.

#![allow(dead_code)]

use fedsurf::data::{Schema, SurvivalDataset, SurvivalRecord};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dataset(rows: Vec<(Vec<f64>, f64, bool)>) -> SurvivalDataset {
    let d = rows.first().map_or(1, |r| r.0.len());
    SurvivalDataset::new(
        Schema::numerical(d),
        rows.into_iter().map(|(x, t, e)| SurvivalRecord::new(x, e, t)).collect(),
    )
    .unwrap()
}

/// Random data with small integer features and times, so ties are common.
pub fn random_discrete(r: &mut ChaCha8Rng, n: usize, d: usize, levels: u32, max_time: u32) -> SurvivalDataset {
    let rows = (0..n)
        .map(|_| {
            let x = (0..d).map(|_| r.gen_range(0..levels) as f64).collect();
            (x, r.gen_range(1..=max_time) as f64, r.gen_bool(0.7))
        })
        .collect();
    dataset(rows)
}

/// Random data with continuous features and times.
pub fn random_continuous(r: &mut ChaCha8Rng, n: usize, d: usize, event_prob: f64) -> SurvivalDataset {
    let rows = (0..n)
        .map(|_| {
            let x = (0..d).map(|_| r.gen_range(-2.0..2.0)).collect();
            (x, r.gen_range(0.1..10.0), r.gen_bool(event_prob))
        })
        .collect();
    dataset(rows)
}

fn distinct_event_times(times: &[f64], events: &[bool]) -> Vec<f64> {
    let mut ts: Vec<f64> = times.iter().zip(events).filter(|(_, &e)| e).map(|(&t, _)| t).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts
}

fn counts(times: &[f64], events: &[bool], s: f64) -> (f64, f64) {
    let d = times.iter().zip(events).filter(|(&t, &e)| e && t == s).count();
    let n = times.iter().filter(|&&t| t >= s).count();
    (d as f64, n as f64)
}

/// Nelson-Aalen at `t`, summing `d/n` over distinct event times `<= t`.
pub fn nelson_aalen_at(times: &[f64], events: &[bool], t: f64) -> f64 {
    distinct_event_times(times, events)
        .into_iter()
        .filter(|&s| s <= t)
        .map(|s| {
            let (d, n) = counts(times, events, s);
            d / n
        })
        .sum()
}

/// Kaplan-Meier at `t`.
pub fn kaplan_meier_at(times: &[f64], events: &[bool], t: f64) -> f64 {
    distinct_event_times(times, events)
        .into_iter()
        .filter(|&s| s <= t)
        .map(|s| {
            let (d, n) = counts(times, events, s);
            1.0 - d / n
        })
        .product()
}

/// Standardized log-rank statistic from observed-minus-expected counts.
pub fn log_rank(left: &[(f64, bool)], right: &[(f64, bool)]) -> f64 {
    let all: Vec<(f64, bool)> = left.iter().chain(right).copied().collect();
    let mut ts: Vec<f64> = all.iter().filter(|o| o.1).map(|o| o.0).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let (mut o_minus_e, mut v) = (0.0, 0.0);
    for s in ts {
        let n = all.iter().filter(|o| o.0 >= s).count() as f64;
        let d = all.iter().filter(|o| o.1 && o.0 == s).count() as f64;
        let n1 = left.iter().filter(|o| o.0 >= s).count() as f64;
        let d1 = left.iter().filter(|o| o.1 && o.0 == s).count() as f64;
        o_minus_e += d1 - d * n1 / n;
        if n > 1.0 {
            v += d * (n1 / n) * (1.0 - n1 / n) * (n - d) / (n - 1.0);
        }
    }
    if v > 0.0 {
        o_minus_e.abs() / v.sqrt()
    } else {
        0.0
    }
}

/// Every valid `(feature, threshold, statistic)` split, in feature then
/// threshold order.
pub fn all_splits(data: &SurvivalDataset, min_leaf: usize, min_events: usize) -> Vec<(usize, f64, f64)> {
    let recs = data.records();
    let mut out = Vec::new();
    for f in 0..data.n_features() {
        let mut values: Vec<f64> = recs.iter().map(|r| r.features[f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let thr = (w[0] + w[1]) / 2.0;
            let left: Vec<(f64, bool)> =
                recs.iter().filter(|r| r.features[f] <= thr).map(|r| (r.time, r.event)).collect();
            let right: Vec<(f64, bool)> =
                recs.iter().filter(|r| r.features[f] > thr).map(|r| (r.time, r.event)).collect();
            let ev = |g: &[(f64, bool)]| g.iter().filter(|o| o.1).count();
            if left.len() < min_leaf || right.len() < min_leaf || ev(&left) < min_events || ev(&right) < min_events {
                continue;
            }
            out.push((f, thr, log_rank(&left, &right)));
        }
    }
    out
}

/// Harrell's C over pairs with `t_i < t_j` and `δ_i = 1`.
pub fn harrell_c(times: &[f64], events: &[bool], risks: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..times.len() {
        for j in 0..times.len() {
            if events[i] && times[i] < times[j] {
                den += 1.0;
                if risks[i] > risks[j] {
                    num += 1.0;
                } else if risks[i] == risks[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

/// Central finite-difference gradient.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut hi = x.to_vec();
            let mut lo = x.to_vec();
            hi[j] += h;
            lo[j] -= h;
            (f(&hi) - f(&lo)) / (2.0 * h)
        })
        .collect()
}

/// Breslow negative partial log-likelihood by direct double sum.
pub fn cox_loss(beta: &[f64], data: &SurvivalDataset) -> f64 {
    let recs = data.records();
    let eta = |x: &[f64]| x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
    recs.iter()
        .filter(|r| r.event)
        .map(|ri| {
            let denom: f64 = recs.iter().filter(|rj| rj.time >= ri.time).map(|rj| eta(&rj.features).exp()).sum();
            denom.ln() - eta(&ri.features)
        })
        .sum()
}
