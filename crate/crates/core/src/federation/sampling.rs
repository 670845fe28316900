use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

fn draw(weights: &[f64], active: &[bool], rng: &mut Rng) -> usize {
    let total: f64 = weights.iter().zip(active).filter(|(_, &a)| a).map(|(w, _)| w).sum();
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, (&w, &a)) in weights.iter().zip(active).enumerate() {
        if !a {
            continue;
        }
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Indices of `n` draws with probability proportional to `weights`, either
/// independently or sequentially without replacement.
pub fn weighted_indices(n: usize, weights: &[f64], with_replacement: bool, rng: &mut Rng) -> Result<Vec<usize>> {
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::argument(format!("sampling weight {w} is not positive")));
    }
    if weights.is_empty() && n > 0 {
        return Err(Error::argument("cannot sample from an empty set"));
    }
    if !with_replacement && n > weights.len() {
        return Err(Error::argument(format!(
            "cannot draw {n} items without replacement from {}",
            weights.len()
        )));
    }
    let mut active = vec![true; weights.len()];
    Ok((0..n)
        .map(|_| {
            let i = draw(weights, &active, rng);
            if !with_replacement {
                active[i] = false;
            }
            i
        })
        .collect())
}

pub fn weighted_sample<T: Clone>(
    n: usize,
    items: &[T],
    weights: &[f64],
    with_replacement: bool,
    rng: &mut Rng,
) -> Result<Vec<T>> {
    if items.len() != weights.len() {
        return Err(Error::argument("items and weights differ in length"));
    }
    Ok(weighted_indices(n, weights, with_replacement, rng)?
        .into_iter()
        .map(|i| items[i].clone())
        .collect())
}

/// Server-side tree assignment: `n_server` times, pick a client with
/// probability proportional to its dataset size among clients whose counter
/// is still below their tree count, and increment its counter.
pub fn assign_tree_quotas(sizes: &[usize], caps: &[usize], n_server: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if sizes.len() != caps.len() {
        return Err(Error::argument("sizes and caps differ in length"));
    }
    if sizes.contains(&0) {
        return Err(Error::Config("every client needs a non-empty dataset".into()));
    }
    let available: usize = caps.iter().sum();
    if available < n_server {
        return Err(Error::Config(format!(
            "clients hold {available} trees but the server needs {n_server}"
        )));
    }
    let weights: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let mut quotas = vec![0usize; sizes.len()];
    let mut active: Vec<bool> = caps.iter().map(|&c| c > 0).collect();
    for _ in 0..n_server {
        let k = draw(&weights, &active, rng);
        quotas[k] += 1;
        if quotas[k] == caps[k] {
            active[k] = false;
        }
    }
    Ok(quotas)
}
