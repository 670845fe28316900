use std::sync::Arc;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::split::{best_split_indices, Direction, SplitConstraints};
use super::ForestParams;
use crate::data::{is_missing, SurvivalDataset, SurvivalRecord};
use crate::error::{Error, Result};
use crate::estimators::nelson_aalen_from;
use crate::rng::Rng;
use crate::step::StepFunction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        missing: Direction,
        left: usize,
        right: usize,
    },
    /// Cumulative hazard aligned with the owning tree's time grid.
    Leaf { chf: Vec<f64> },
}

/// Binary survival tree. Node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalTree {
    time_grid: Arc<Vec<f64>>,
    nodes: Vec<Node>,
    /// Number of distinct training records in the bootstrap sample.
    in_bag_count: usize,
}

impl SurvivalTree {
    pub fn time_grid(&self) -> &Arc<Vec<f64>> {
        &self.time_grid
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn in_bag_count(&self) -> usize {
        self.in_bag_count
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Index of the leaf `x` is routed to.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    missing,
                    left,
                    right,
                } => {
                    let v = x[*feature];
                    let go_left = if is_missing(v) {
                        *missing == Direction::Left
                    } else {
                        v <= *threshold
                    };
                    i = if go_left { *left } else { *right };
                }
            }
        }
    }

    /// Leaf cumulative hazard values for `x`, aligned with `time_grid`.
    pub fn leaf_chf(&self, x: &[f64]) -> &[f64] {
        match &self.nodes[self.leaf_index(x)] {
            Node::Leaf { chf } => chf,
            Node::Split { .. } => unreachable!("leaf_index returns a leaf"),
        }
    }

    pub fn predict_chf(&self, x: &[f64]) -> StepFunction {
        StepFunction::new(self.time_grid.to_vec(), self.leaf_chf(x).to_vec(), 0.0)
            .expect("tree grid is strictly increasing")
    }

    pub fn predict_survival(&self, x: &[f64]) -> StepFunction {
        self.predict_chf(x).map(|h| (-h).exp())
    }

    pub(crate) fn share_grid(&mut self, grid: &Arc<Vec<f64>>) {
        if self.time_grid[..] == grid[..] {
            self.time_grid = Arc::clone(grid);
        }
    }

    pub(crate) fn check(&self, feature_count: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Invariant("tree has no nodes".into()));
        }
        if self.time_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invariant("tree time grid not strictly increasing".into()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Split {
                    feature,
                    left,
                    right,
                    threshold,
                    ..
                } => {
                    if *feature >= feature_count || !threshold.is_finite() {
                        return Err(Error::Invariant(format!("node {i} has an invalid split")));
                    }
                    if *left <= i || *right <= i || *left >= self.nodes.len() || *right >= self.nodes.len() {
                        return Err(Error::Invariant(format!("node {i} has invalid children")));
                    }
                }
                Node::Leaf { chf } => {
                    if chf.len() != self.time_grid.len() {
                        return Err(Error::Invariant(format!(
                            "leaf {i} has {} values for a grid of {}",
                            chf.len(),
                            self.time_grid.len()
                        )));
                    }
                    if chf.first().is_some_and(|&v| v < 0.0) || chf.windows(2).any(|w| w[0] > w[1]) {
                        return Err(Error::Invariant(format!("leaf {i} hazard is decreasing")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// `n` draws with replacement from `0..n`.
pub fn bootstrap_indices(n: usize, rng: &mut Rng) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Draws a bootstrap sample from `rng` and grows a tree on it, with leaf
/// hazards on the distinct event times of `data`.
pub fn fit_tree(data: &SurvivalDataset, params: &ForestParams, rng: &mut Rng) -> Result<SurvivalTree> {
    fit_tree_on_grid(data, Arc::new(data.event_times()), params, rng)
}

pub(crate) fn fit_tree_on_grid(
    data: &SurvivalDataset,
    grid: Arc<Vec<f64>>,
    params: &ForestParams,
    rng: &mut Rng,
) -> Result<SurvivalTree> {
    if data.is_empty() {
        return Err(Error::argument("cannot fit a tree on an empty dataset"));
    }
    let sample = bootstrap_indices(data.len(), rng);
    grow_tree(data, &sample, grid, params, rng)
}

/// Grows a tree on the given in-bag sample (indices into `data`, repeats
/// allowed). `rng` drives only the per-node feature subsampling.
pub fn grow_tree(
    data: &SurvivalDataset,
    sample: &[usize],
    grid: Arc<Vec<f64>>,
    params: &ForestParams,
    rng: &mut Rng,
) -> Result<SurvivalTree> {
    if sample.is_empty() {
        return Err(Error::argument("cannot grow a tree on an empty sample"));
    }
    let d = data.n_features();
    let max_features = params.resolved_max_features(d)?;
    let mut distinct = sample.to_vec();
    distinct.sort_unstable();
    distinct.dedup();

    let mut grower = Grower {
        records: data.records(),
        grid: &grid,
        params,
        max_features,
        n_features: d,
        nodes: Vec::new(),
    };
    grower.grow(sample.to_vec(), 0, rng);
    let nodes = grower.nodes;
    Ok(SurvivalTree {
        time_grid: grid,
        nodes,
        in_bag_count: distinct.len(),
    })
}

struct Grower<'a> {
    records: &'a [SurvivalRecord],
    grid: &'a [f64],
    params: &'a ForestParams,
    max_features: usize,
    n_features: usize,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn leaf(&self, samples: &[usize]) -> Node {
        let times: Vec<f64> = samples.iter().map(|&i| self.records[i].time).collect();
        let events: Vec<bool> = samples.iter().map(|&i| self.records[i].event).collect();
        let chf = nelson_aalen_from(&times, &events).expect("node samples are non-empty");
        Node::Leaf {
            chf: chf.eval_sorted(self.grid),
        }
    }

    fn grow(&mut self, samples: Vec<usize>, depth: usize, rng: &mut Rng) -> usize {
        let id = self.nodes.len();
        let has_event = samples.iter().any(|&i| self.records[i].event);
        let stop = self.params.max_depth.is_some_and(|m| depth >= m)
            || samples.len() < self.params.min_samples_split
            || !has_event
            || self.n_features == 0;
        let split = if stop {
            None
        } else {
            let candidates = index::sample(rng, self.n_features, self.max_features).into_vec();
            best_split_indices(
                self.records,
                &samples,
                &candidates,
                SplitConstraints {
                    min_samples_leaf: self.params.min_samples_leaf,
                    min_events_leaf: self.params.min_events_leaf,
                },
            )
        };
        let Some(split) = split else {
            let leaf = self.leaf(&samples);
            self.nodes.push(leaf);
            return id;
        };

        let (left, right): (Vec<usize>, Vec<usize>) = samples.iter().partition(|&&i| {
            let v = self.records[i].features[split.feature];
            if is_missing(v) {
                split.missing == Direction::Left
            } else {
                v <= split.threshold
            }
        });
        // placeholder, patched once children exist
        self.nodes.push(Node::Leaf { chf: Vec::new() });
        let left_id = self.grow(left, depth + 1, rng);
        let right_id = self.grow(right, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            missing: split.missing,
            left: left_id,
            right: right_id,
        };
        id
    }
}
