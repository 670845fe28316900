//! Kaplan-Meier and Nelson-Aalen estimators.

use serde::{Deserialize, Serialize};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::step::StepFunction;

/// Event counts `d_j` and at-risk counts `n_j` at each distinct event time.
///
/// A subject censored at an event time is still at risk at that time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskTable {
    pub times: Vec<f64>,
    pub events: Vec<u64>,
    pub at_risk: Vec<u64>,
}

impl RiskTable {
    pub fn from_observations(times: &[f64], events: &[bool]) -> Self {
        let mut obs: Vec<(f64, bool)> = times.iter().copied().zip(events.iter().copied()).collect();
        obs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut table = RiskTable {
            times: Vec::new(),
            events: Vec::new(),
            at_risk: Vec::new(),
        };
        let n = obs.len();
        let mut i = 0;
        while i < n {
            let t = obs[i].0;
            let mut j = i;
            let mut d = 0u64;
            while j < n && obs[j].0 == t {
                d += u64::from(obs[j].1);
                j += 1;
            }
            if d > 0 {
                table.times.push(t);
                table.events.push(d);
                table.at_risk.push((n - i) as u64);
            }
            i = j;
        }
        table
    }

    pub fn from_dataset(data: &SurvivalDataset) -> Self {
        Self::from_observations(&data.times(), &data.events())
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Nelson-Aalen cumulative hazard `sum d_j / n_j`.
    pub fn cumulative_hazard(&self) -> StepFunction {
        let mut acc = 0.0;
        let values = self
            .events
            .iter()
            .zip(&self.at_risk)
            .map(|(&d, &n)| {
                acc += d as f64 / n as f64;
                acc
            })
            .collect();
        StepFunction::new(self.times.clone(), values, 0.0).expect("risk table times are sorted")
    }

    /// Product-limit survival `prod (1 - d_j / n_j)`.
    pub fn product_limit(&self) -> StepFunction {
        let mut acc = 1.0;
        let values = self
            .events
            .iter()
            .zip(&self.at_risk)
            .map(|(&d, &n)| {
                acc *= 1.0 - d as f64 / n as f64;
                acc
            })
            .collect();
        StepFunction::new(self.times.clone(), values, 1.0).expect("risk table times are sorted")
    }
}

fn non_empty(data: &SurvivalDataset) -> Result<()> {
    if data.is_empty() {
        Err(Error::argument("estimator called on an empty dataset"))
    } else {
        Ok(())
    }
}

pub fn kaplan_meier(data: &SurvivalDataset) -> Result<StepFunction> {
    non_empty(data)?;
    Ok(RiskTable::from_dataset(data).product_limit())
}

pub fn nelson_aalen(data: &SurvivalDataset) -> Result<StepFunction> {
    non_empty(data)?;
    Ok(RiskTable::from_dataset(data).cumulative_hazard())
}

/// Nelson-Aalen on raw observations; repeated entries count with multiplicity.
pub fn nelson_aalen_from(times: &[f64], events: &[bool]) -> Result<StepFunction> {
    if times.is_empty() {
        return Err(Error::argument("estimator called on an empty sample"));
    }
    Ok(RiskTable::from_observations(times, events).cumulative_hazard())
}

/// `S(t) = exp(-H(t))` on the same grid.
pub fn chf_to_survival(chf: &StepFunction) -> Result<StepFunction> {
    if !chf.is_cumulative_hazard() {
        return Err(Error::Invariant(
            "cumulative hazard must start at 0 and be non-decreasing".into(),
        ));
    }
    Ok(chf.map(|h| (-h).exp()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(times: &[f64], events: &[u8]) -> SurvivalDataset {
        let ev: Vec<bool> = events.iter().map(|&e| e == 1).collect();
        SurvivalDataset::from_times(times, &ev).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn km_all_events() {
        let s = kaplan_meier(&ds(&[1.0, 2.0, 3.0], &[1, 1, 1])).unwrap();
        assert_eq!(s.eval(0.5), 1.0);
        assert!(close(s.eval(1.0), 2.0 / 3.0));
        assert!(close(s.eval(2.5), 1.0 / 3.0));
        assert!(close(s.eval(3.0), 0.0));
        assert!(close(s.eval(10.0), 0.0));
    }

    #[test]
    fn km_all_censored_is_one() {
        let s = kaplan_meier(&ds(&[1.0, 2.0, 3.0], &[0, 0, 0])).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.eval(100.0), 1.0);
    }

    #[test]
    fn km_tie_with_censoring() {
        let s = kaplan_meier(&ds(&[1.0, 1.0, 2.0, 3.0], &[1, 0, 1, 1])).unwrap();
        assert!(close(s.eval(1.0), 0.75));
        assert!(close(s.eval(2.0), 0.375));
        assert!(close(s.eval(3.0), 0.0));
    }

    #[test]
    fn na_all_events() {
        let h = nelson_aalen(&ds(&[1.0, 2.0, 3.0], &[1, 1, 1])).unwrap();
        assert!(close(h.eval(1.0), 1.0 / 3.0));
        assert!(close(h.eval(2.0), 1.0 / 3.0 + 0.5));
        assert!(close(h.eval(3.0), 1.0 / 3.0 + 0.5 + 1.0));
        assert_eq!(h.eval(0.0), 0.0);
    }

    #[test]
    fn na_all_censored_is_zero() {
        let h = nelson_aalen(&ds(&[1.0, 5.0], &[0, 0])).unwrap();
        assert_eq!(h.eval(10.0), 0.0);
    }

    #[test]
    fn na_tied_events() {
        let h = nelson_aalen(&ds(&[1.0, 1.0, 2.0], &[1, 1, 0])).unwrap();
        assert!(close(h.eval(1.0), 2.0 / 3.0));
        assert!(close(h.eval(5.0), 2.0 / 3.0));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let empty = ds(&[], &[]);
        assert!(kaplan_meier(&empty).is_err());
        assert!(nelson_aalen(&empty).is_err());
    }

    #[test]
    fn chf_conversion() {
        let s = chf_to_survival(&StepFunction::constant(0.0)).unwrap();
        assert_eq!(s.eval(3.0), 1.0);

        let h = StepFunction::new(vec![1.0], vec![2f64.ln()], 0.0).unwrap();
        let s = chf_to_survival(&h).unwrap();
        assert!(close(s.eval(1.0), 0.5));
        assert!(close(s.eval(9.0), 0.5));

        let h = nelson_aalen(&ds(&[1.0, 2.0, 3.0], &[1, 1, 1])).unwrap();
        let s = chf_to_survival(&h).unwrap();
        assert!((s.eval(1.0) - 0.716_531_310_573_789_3).abs() < 1e-12);

        let decreasing = StepFunction::new(vec![1.0, 2.0], vec![1.0, 0.5], 0.0).unwrap();
        assert!(chf_to_survival(&decreasing).is_err());
    }
}
