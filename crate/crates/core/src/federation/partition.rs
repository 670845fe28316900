//! Splitting a training set into client shards.

use rand::Rng as _;
use rand_distr::{Distribution, Gamma};

use crate::data::{split_fraction, SurvivalDataset};
use crate::error::{Error, Result};
use crate::rng::{self, streams};

const MAX_UNIFORM_ATTEMPTS: u64 = 100;

fn shards_from_assignment(train: &SurvivalDataset, assignment: &[usize], k: usize) -> Vec<SurvivalDataset> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in assignment.iter().enumerate() {
        members[c].push(i);
    }
    members.iter().map(|m| train.subset(m)).collect()
}

/// Assigns every record to one of `k` clients with equal probability. An
/// assignment that leaves a client empty is redrawn with a derived seed.
pub fn uniform_split(train: &SurvivalDataset, k: usize, seed: u64) -> Result<Vec<SurvivalDataset>> {
    if k == 0 {
        return Err(Error::Config("at least one client is required".into()));
    }
    for attempt in 0..MAX_UNIFORM_ATTEMPTS {
        let mut rng = rng::stream(rng::derive_seed(seed, attempt), streams::PARTITION);
        let assignment: Vec<usize> = (0..train.len()).map(|_| rng.gen_range(0..k)).collect();
        let mut sizes = vec![0usize; k];
        assignment.iter().for_each(|&c| sizes[c] += 1);
        if sizes.iter().all(|&s| s > 0) {
            return Ok(shards_from_assignment(train, &assignment, k));
        }
    }
    Err(Error::Config(format!(
        "uniform split left a client empty after {MAX_UNIFORM_ATTEMPTS} attempts ({} records, {k} clients)",
        train.len()
    )))
}

/// Quantile bin of every record's observed time. Records sharing a time
/// always share a bin.
pub fn time_bins(train: &SurvivalDataset, n_bins: usize) -> Vec<usize> {
    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| train.records()[a].time.total_cmp(&train.records()[b].time).then(a.cmp(&b)));
    let mut bins = vec![0; n];
    let mut first_rank = 0;
    for (rank, &i) in order.iter().enumerate() {
        if rank > 0 && train.records()[order[rank - 1]].time != train.records()[i].time {
            first_rank = rank;
        }
        bins[i] = (first_rank * n_bins / n).min(n_bins - 1);
    }
    bins
}

/// Label-skewed split: observed times are cut into `n_bins` quantile bins and
/// each bin is spread over the clients by a Dirichlet(`alpha`) draw. Shards
/// below `min_client_samples` are then topped up from the largest shard.
pub fn label_skew_split(
    train: &SurvivalDataset,
    k: usize,
    alpha: f64,
    min_client_samples: usize,
    n_bins: usize,
    seed: u64,
) -> Result<Vec<SurvivalDataset>> {
    if k == 0 {
        return Err(Error::Config("at least one client is required".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
    }
    if n_bins < 2 {
        return Err(Error::Config("label skew needs at least two time bins".into()));
    }
    if min_client_samples * k > train.len() || train.len() < k {
        return Err(Error::Config(format!(
            "cannot give {k} clients at least {} records from {} records",
            min_client_samples.max(1),
            train.len()
        )));
    }
    let mut rng = rng::stream(seed, streams::PARTITION);
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let bins = time_bins(train, n_bins);

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for bin in 0..n_bins {
        let mut p: Vec<f64> = (0..k).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = p.iter().sum();
        if total > 0.0 && total.is_finite() {
            p.iter_mut().for_each(|v| *v /= total);
        } else {
            p.iter_mut().for_each(|v| *v = 1.0 / k as f64);
        }
        for (i, _) in bins.iter().enumerate().filter(|(_, &b)| b == bin) {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut client = k - 1;
            for (c, &pc) in p.iter().enumerate() {
                acc += pc;
                if u < acc {
                    client = c;
                    break;
                }
            }
            members[client].push(i);
        }
    }

    let floor = min_client_samples.max(1);
    loop {
        let (smallest, small_len) = members
            .iter()
            .enumerate()
            .map(|(c, m)| (c, m.len()))
            .min_by_key(|&(c, len)| (len, c))
            .unwrap();
        if small_len >= floor {
            break;
        }
        let largest = members
            .iter()
            .enumerate()
            .max_by_key(|&(c, m)| (m.len(), std::cmp::Reverse(c)))
            .map(|(c, _)| c)
            .unwrap();
        let pick = rng.gen_range(0..members[largest].len());
        let record = members[largest].swap_remove(pick);
        members[smallest].push(record);
    }

    Ok(members
        .iter_mut()
        .map(|m| {
            m.sort_unstable();
            train.subset(m)
        })
        .collect())
}

/// Client-local `(train, validation)` split.
pub fn local_split(shard: &SurvivalDataset, val_fraction: f64, seed: u64) -> Result<(SurvivalDataset, SurvivalDataset)> {
    split_fraction(shard, val_fraction, &mut rng::stream(seed, streams::LOCAL_SPLIT))
}

/// Two-sample Kolmogorov-Smirnov distance between observed time samples.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Schema, SurvivalRecord};

    fn data(n: usize) -> SurvivalDataset {
        let records = (0..n)
            .map(|i| SurvivalRecord::new(vec![i as f64], i % 3 != 0, ((i * 37) % 101) as f64 + 1.0))
            .collect();
        SurvivalDataset::new(Schema::numerical(1), records).unwrap()
    }

    fn ids(shards: &[SurvivalDataset]) -> Vec<f64> {
        let mut all: Vec<f64> = shards
            .iter()
            .flat_map(|s| s.records().iter().map(|r| r.features[0]))
            .collect();
        all.sort_by(f64::total_cmp);
        all
    }

    #[test]
    fn single_client_gets_everything() {
        let d = data(30);
        let shards = uniform_split(&d, 1, 4).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0].times(), d.times());
    }

    #[test]
    fn uniform_split_is_a_partition() {
        let d = data(200);
        let shards = uniform_split(&d, 7, 9).unwrap();
        assert_eq!(shards.len(), 7);
        assert!(shards.iter().all(|s| !s.is_empty()));
        assert_eq!(ids(&shards), (0..200).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn uniform_split_fails_when_clients_outnumber_records() {
        assert!(uniform_split(&data(3), 5, 0).is_err());
        assert!(uniform_split(&data(3), 0, 0).is_err());
    }

    #[test]
    fn label_skew_respects_floor_and_partitions() {
        let d = data(300);
        let shards = label_skew_split(&d, 10, 0.5, 25, 10, 3).unwrap();
        assert!(shards.iter().all(|s| s.len() >= 25));
        assert_eq!(ids(&shards), (0..300).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn label_skew_infeasible_floor() {
        let err = label_skew_split(&data(100), 5, 1.0, 25, 10, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(label_skew_split(&data(100), 5, 0.0, 5, 10, 0).is_err());
        assert!(label_skew_split(&data(100), 5, 1.0, 5, 1, 0).is_err());
    }

    #[test]
    fn bins_keep_ties_together() {
        let d = SurvivalDataset::from_times(&[1.0, 1.0, 1.0, 2.0, 3.0, 4.0], &[true; 6]).unwrap();
        let b = time_bins(&d, 3);
        assert_eq!(b[0], b[1]);
        assert_eq!(b[1], b[2]);
        assert!(b.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn local_split_sizes() {
        let (a, b) = local_split(&data(100), 0.2, 1).unwrap();
        assert_eq!((a.len(), b.len()), (80, 20));
        let (a, b) = local_split(&data(25), 0.2, 1).unwrap();
        assert_eq!((a.len(), b.len()), (20, 5));
        let (c, _) = local_split(&data(25), 0.2, 1).unwrap();
        assert_eq!(a.times(), c.times());
    }

    #[test]
    fn ks_distance_extremes() {
        assert_eq!(ks_distance(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(ks_distance(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        assert!((ks_distance(&[1.0, 2.0, 3.0, 4.0], &[3.0, 4.0]) - 0.5).abs() < 1e-15);
    }
}
