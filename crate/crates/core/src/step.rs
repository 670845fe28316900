//! Right-continuous piecewise-constant functions of time.
//!
//! Survival curves, cumulative hazards and censoring distributions all share
//! this representation. Only jump points are stored; the function is constant
//! between them and equals `initial_value` before the first time point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    times: Vec<f64>,
    values: Vec<f64>,
    initial_value: f64,
}

impl StepFunction {
    /// Builds a step function, checking that `times` is strictly increasing
    /// and finite and that both vectors have the same length.
    pub fn new(times: Vec<f64>, values: Vec<f64>, initial_value: f64) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Invariant(format!(
                "step function has {} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Invariant("step function time is not finite".into()));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invariant(
                "step function times must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            times,
            values,
            initial_value,
        })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            times: Vec::new(),
            values: Vec::new(),
            initial_value: value,
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn initial_value(&self) -> f64 {
        self.initial_value
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Value of the last time point `<= t`, or the initial value before the
    /// first point.
    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&x| x <= t);
        if idx == 0 {
            self.initial_value
        } else {
            self.values[idx - 1]
        }
    }

    /// Left limit `f(t-)`: the value of the last time point strictly below `t`.
    pub fn eval_left(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&x| x < t);
        if idx == 0 {
            self.initial_value
        } else {
            self.values[idx - 1]
        }
    }

    /// Evaluates on a sorted grid with a single merge pass.
    pub fn eval_sorted(&self, grid: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(grid.len());
        let mut idx = 0;
        for &t in grid {
            while idx < self.times.len() && self.times[idx] <= t {
                idx += 1;
            }
            out.push(if idx == 0 {
                self.initial_value
            } else {
                self.values[idx - 1]
            });
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            times: self.times.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            initial_value: f(self.initial_value),
        }
    }

    pub fn is_survival(&self) -> bool {
        self.initial_value == 1.0
            && self.values.iter().all(|v| (0.0..=1.0).contains(v))
            && self
                .values
                .iter()
                .try_fold(1.0_f64, |prev, &v| (v <= prev).then_some(v))
                .is_some()
    }

    pub fn is_cumulative_hazard(&self) -> bool {
        self.initial_value == 0.0
            && self
                .values
                .iter()
                .try_fold(0.0_f64, |prev, &v| (v >= prev && v.is_finite()).then_some(v))
                .is_some()
    }
}
