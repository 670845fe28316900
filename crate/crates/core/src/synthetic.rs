//! Synthetic survival data with a known log-linear hazard.

use rand::Rng as _;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::data::{Schema, SurvivalDataset, SurvivalRecord};
use crate::error::{Error, Result};
use crate::rng::{self, streams};

const BASE_RATE: f64 = 0.1;

/// Ground-truth coefficients used by [`generate_synthetic`]: alternating
/// signs with decreasing magnitude, the first one positive.
pub fn true_beta(d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign / (1.0 + j as f64 / 2.0)
        })
        .collect()
}

/// Probability that `Uniform(0, m)` censoring precedes an `Exp(rate)` event.
fn censor_probability(rate: f64, m: f64) -> f64 {
    let x = rate * m;
    if x < 1e-12 {
        1.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// Upper bound `m` of the censoring distribution whose expected censored
/// fraction over `rates` equals `target`.
fn censoring_scale(rates: &[f64], target: f64) -> f64 {
    let mean = |m: f64| rates.iter().map(|&r| censor_probability(r, m)).sum::<f64>() / rates.len() as f64;
    // the censored fraction decreases in m; bisect in log space
    let (mut lo, mut hi) = (-30.0f64, 30.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean(mid.exp()) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// `n` records with standard normal features and exponential event times of
/// rate `0.1 * exp(<beta, x>)`, censored by an independent uniform variable
/// whose scale targets `censor_rate`. Returns the data and `beta`.
pub fn generate_synthetic(n: usize, d: usize, censor_rate: f64, seed: u64) -> Result<(SurvivalDataset, Vec<f64>)> {
    if n == 0 || d == 0 {
        return Err(Error::argument("n and d must both be at least 1"));
    }
    if !(0.0..1.0).contains(&censor_rate) {
        return Err(Error::argument(format!("censor_rate must lie in [0, 1), got {censor_rate}")));
    }
    let beta = true_beta(d);
    let mut rng = rng::stream(seed, streams::SYNTHETIC);
    let features: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let rates: Vec<f64> = features
        .iter()
        .map(|x| BASE_RATE * x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>().exp())
        .collect();
    let scale = (censor_rate > 0.0).then(|| censoring_scale(&rates, censor_rate));
    let records = features
        .into_iter()
        .zip(&rates)
        .map(|(x, &rate)| {
            let t = Exp::new(rate).expect("positive rate").sample(&mut rng);
            match scale {
                Some(m) => {
                    let c = rng.gen::<f64>() * m;
                    if c < t {
                        SurvivalRecord::new(x, false, c)
                    } else {
                        SurvivalRecord::new(x, true, t)
                    }
                }
                None => SurvivalRecord::new(x, true, t),
            }
        })
        .collect();
    Ok((SurvivalDataset::new(Schema::numerical(d), records)?, beta))
}
