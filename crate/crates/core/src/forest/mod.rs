//! Random survival forests.
//!
//! Trees are grown on bootstrap samples with log-rank splitting over random
//! feature subsets. Each leaf stores the Nelson-Aalen cumulative hazard of its
//! in-bag records; the forest prediction is the pointwise mean of the leaf
//! hazards reached by a sample.

mod split;
mod tree;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use split::{best_split, log_rank_statistic, Direction, Split, SplitConstraints};
pub use tree::{bootstrap_indices, fit_tree, grow_tree, Node, SurvivalTree};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::step::StepFunction;

pub const FOREST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried per node; `None` means `ceil(sqrt(d))`.
    pub max_features: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub min_events_leaf: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_features: None,
            max_depth: None,
            min_samples_split: 10,
            min_samples_leaf: 5,
            min_events_leaf: 1,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be positive".into()));
        }
        if self.max_features == Some(0) {
            return Err(Error::Config("max_features must be positive".into()));
        }
        if self.min_samples_split == 0 || self.min_samples_leaf == 0 || self.min_events_leaf == 0 {
            return Err(Error::Config("minimum sample counts must be positive".into()));
        }
        if self.min_samples_leaf > self.min_samples_split {
            return Err(Error::Config(
                "min_samples_leaf must not exceed min_samples_split".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn resolved_max_features(&self, d: usize) -> Result<usize> {
        match self.max_features {
            Some(m) if m > d => Err(Error::Config(format!(
                "max_features {m} exceeds the {d} available features"
            ))),
            Some(m) => Ok(m),
            None => Ok((d as f64).sqrt().ceil() as usize),
        }
    }
}

/// Ensemble of survival trees.
///
/// Trees may carry different time grids (a federated ensemble mixes trees
/// from several clients); the forest grid is their union and every tree's
/// hazard is read off it by right-continuous lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<SurvivalTree>,
    feature_count: usize,
    time_grid: Arc<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ForestFile {
    version: u32,
    feature_count: usize,
    time_grid: Arc<Vec<f64>>,
    trees: Vec<SurvivalTree>,
}

impl Forest {
    pub fn from_trees(trees: Vec<SurvivalTree>, feature_count: usize) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::argument("a forest needs at least one tree"));
        }
        for tree in &trees {
            tree.check(feature_count)?;
        }
        let first = Arc::clone(trees[0].time_grid());
        let time_grid = if trees.iter().all(|t| t.time_grid()[..] == first[..]) {
            first
        } else {
            let mut grid: Vec<f64> = trees
                .iter()
                .flat_map(|t| t.time_grid().iter().copied())
                .collect();
            grid.sort_by(f64::total_cmp);
            grid.dedup();
            Arc::new(grid)
        };
        Ok(Self {
            trees,
            feature_count,
            time_grid,
        })
    }

    pub fn trees(&self) -> &[SurvivalTree] {
        &self.trees
    }

    pub fn into_trees(self) -> Vec<SurvivalTree> {
        self.trees
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn time_grid(&self) -> &[f64] {
        &self.time_grid
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.feature_count {
            return Err(Error::argument(format!(
                "sample has {} features, forest expects {}",
                x.len(),
                self.feature_count
            )));
        }
        Ok(())
    }

    /// Mean leaf hazard on the forest grid.
    pub fn predict_chf_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let grid = &self.time_grid;
        let mut acc = vec![0.0; grid.len()];
        for tree in &self.trees {
            let chf = tree.leaf_chf(x);
            if Arc::ptr_eq(tree.time_grid(), grid) || tree.time_grid()[..] == grid[..] {
                acc.iter_mut().zip(chf).for_each(|(a, v)| *a += v);
            } else {
                let tree_grid = tree.time_grid();
                let mut k = 0;
                for (a, &t) in acc.iter_mut().zip(grid.iter()) {
                    while k < tree_grid.len() && tree_grid[k] <= t {
                        k += 1;
                    }
                    if k > 0 {
                        *a += chf[k - 1];
                    }
                }
            }
        }
        let n = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }

    pub fn predict_chf(&self, x: &[f64]) -> Result<StepFunction> {
        let values = self.predict_chf_values(x)?;
        StepFunction::new(self.time_grid.to_vec(), values, 0.0)
    }

    /// Scalar risk: the ensemble hazard summed over the forest grid.
    pub fn predict_risk(&self, x: &[f64]) -> Result<f64> {
        Ok(self.predict_chf_values(x)?.iter().sum())
    }

    pub fn predict_survival(&self, x: &[f64]) -> Result<StepFunction> {
        Ok(self.predict_chf(x)?.map(|h| (-h).exp()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ForestFile {
            version: FOREST_FORMAT_VERSION,
            feature_count: self.feature_count,
            time_grid: Arc::clone(&self.time_grid),
            trees: self.trees.clone(),
        })?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: ForestFile = serde_json::from_str(json)?;
        if file.version != FOREST_FORMAT_VERSION {
            return Err(Error::Invariant(format!(
                "unsupported forest format version {}",
                file.version
            )));
        }
        let mut forest = Self::from_trees(file.trees, file.feature_count)?;
        if forest.time_grid[..] != file.time_grid[..] {
            return Err(Error::Invariant(
                "forest time grid is not the union of its tree grids".into(),
            ));
        }
        // share one allocation between trees that carry the forest grid
        let grid = Arc::clone(&forest.time_grid);
        for tree in &mut forest.trees {
            tree.share_grid(&grid);
        }
        Ok(forest)
    }
}

impl SurvivalTree {
    /// Serialized form used for tree payloads.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str, feature_count: usize) -> Result<Self> {
        let tree: SurvivalTree = serde_json::from_str(json)?;
        tree.check(feature_count)?;
        Ok(tree)
    }
}

/// Fits `params.n_trees` trees in parallel. Tree `i` uses its own random
/// stream derived from `(params.seed, i)`, so the result does not depend on
/// the number of worker threads.
pub fn fit_forest(data: &SurvivalDataset, params: &ForestParams) -> Result<Forest> {
    params.validate()?;
    if data.is_empty() {
        return Err(Error::argument("cannot fit a forest on an empty dataset"));
    }
    params.resolved_max_features(data.n_features())?;
    let grid = Arc::new(data.event_times());
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(rng::derive_seed(params.seed, i as u64), streams::FOREST);
            tree::fit_tree_on_grid(data, Arc::clone(&grid), params, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Forest::from_trees(trees, data.n_features())
}
