use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ActionId, Mdp, StateId};

/// Memoryless randomized policy over the states of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryPolicy {
    /// Which model the policy addresses, e.g. `P_o` or `M'_r`.
    pub domain: String,
    pub rule: Vec<Vec<(ActionId, f64)>>,
}

impl StationaryPolicy {
    pub fn empty(domain: impl Into<String>, n: usize) -> Self {
        StationaryPolicy { domain: domain.into(), rule: vec![Vec::new(); n] }
    }

    /// Deterministic policy picking the `k`-th choice of every state.
    pub fn from_choice_indices(domain: impl Into<String>, m: &impl Mdp, idx: &[Option<usize>]) -> Self {
        let rule = idx
            .iter()
            .enumerate()
            .map(|(s, k)| match k {
                Some(k) => vec![(m.choices(s)[*k].action, 1.0)],
                None => Vec::new(),
            })
            .collect();
        StationaryPolicy { domain: domain.into(), rule }
    }

    pub fn get(&self, s: StateId) -> &[(ActionId, f64)] {
        self.rule.get(s).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_defined(&self, s: StateId) -> bool {
        !self.get(s).is_empty()
    }

    /// Picks an action using a uniform draw `u` in [0, 1).
    pub fn sample(&self, s: StateId, u: f64) -> Option<ActionId> {
        sample_dist(self.get(s), u)
    }

    /// Checks that every distribution is normalized and uses allowed actions.
    pub fn check(&self, m: &impl Mdp) -> Result<()> {
        if self.rule.len() > m.num_states() {
            return Err(Error::PolicyDomainMismatch {
                state: m.num_states(),
                reason: format!("policy covers {} states, model has {}", self.rule.len(), m.num_states()),
            });
        }
        for (s, dist) in self.rule.iter().enumerate() {
            check_dist(m, s, dist)?;
        }
        Ok(())
    }
}

pub(crate) fn check_dist(m: &impl Mdp, s: StateId, dist: &[(ActionId, f64)]) -> Result<()> {
    if dist.is_empty() {
        return Ok(());
    }
    let mut sum = 0.0;
    for &(a, p) in dist {
        if p > 0.0 && m.choice(s, a).is_none() {
            return Err(Error::PolicyDomainMismatch { state: s, reason: format!("action {} not allowed", a) });
        }
        if p.is_nan() || p < 0.0 {
            return Err(Error::PolicyDomainMismatch { state: s, reason: format!("negative probability {}", p) });
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::PolicyDomainMismatch { state: s, reason: format!("distribution sums to {}", sum) });
    }
    Ok(())
}

pub(crate) fn sample_dist<T: Copy>(dist: &[(T, f64)], u: f64) -> Option<T> {
    let mut acc = 0.0;
    for &(a, p) in dist {
        acc += p;
        if u < acc {
            return Some(a);
        }
    }
    dist.iter().rev().find(|(_, p)| *p > 0.0).map(|(a, _)| *a)
}

/// Values in [0, 1], clamped on construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub values: Vec<f64>,
}

impl ValueFunction {
    pub fn new(mut values: Vec<f64>) -> Self {
        for v in &mut values {
            *v = v.clamp(0.0, 1.0);
        }
        ValueFunction { values }
    }

    pub fn get(&self, s: StateId) -> f64 {
        self.values[s]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Choice;

    #[test]
    fn sampling_follows_cumulative_mass() {
        let d = [(3usize, 0.25), (5, 0.75)];
        assert_eq!(sample_dist(&d, 0.1), Some(3));
        assert_eq!(sample_dist(&d, 0.25), Some(5));
        assert_eq!(sample_dist(&d, 0.999_999_999_9), Some(5));
    }

    #[test]
    fn check_rejects_foreign_action() {
        let m = vec![vec![Choice::new(0, 1.0, vec![(0, 1.0)])]];
        let mut pi = StationaryPolicy::empty("m", 1);
        pi.rule[0] = vec![(1, 1.0)];
        assert!(matches!(pi.check(&m), Err(Error::PolicyDomainMismatch { state: 0, .. })));
        pi.rule[0] = vec![(0, 1.0)];
        pi.check(&m).unwrap();
    }
}
