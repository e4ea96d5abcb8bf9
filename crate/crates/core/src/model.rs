//! Labeled MDPs, the shared transition representation and run traces.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type StateId = usize;
pub type ActionId = usize;

/// Row sums must match 1 within this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Maximum number of atomic propositions of a model.
pub const MAX_AP: usize = 64;

/// Set of atomic propositions, as a bitmask over the model's AP list.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelSet(pub u64);

impl LabelSet {
    pub const EMPTY: LabelSet = LabelSet(0);

    pub fn from_indices(idx: impl IntoIterator<Item = usize>) -> Self {
        let mut bits = 0u64;
        for i in idx {
            bits |= 1u64 << i;
        }
        LabelSet(bits)
    }

    pub fn contains(self, i: usize) -> bool {
        i < 64 && self.0 & (1u64 << i) != 0
    }

    pub fn insert(&mut self, i: usize) {
        self.0 |= 1u64 << i;
    }

    pub fn remove(&mut self, i: usize) {
        self.0 &= !(1u64 << i);
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn indices(self) -> impl Iterator<Item = usize> {
        (0..64).filter(move |i| self.0 & (1u64 << i) != 0)
    }

    pub fn names(self, ap: &[String]) -> Vec<&str> {
        self.indices().filter_map(|i| ap.get(i).map(String::as_str)).collect()
    }

    /// Human readable form, e.g. `{a,b}`.
    pub fn display(self, ap: &[String]) -> String {
        format!("{{{}}}", self.names(ap).join(","))
    }
}

/// One allowed action at a state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub action: ActionId,
    pub cost: f64,
    /// Expected number of primitive steps; 1 for ordinary MDPs.
    pub duration: f64,
    pub succ: Vec<(StateId, f64)>,
}

impl Choice {
    pub fn new(action: ActionId, cost: f64, succ: Vec<(StateId, f64)>) -> Self {
        Choice { action, cost, duration: 1.0, succ }
    }

    /// Probability mass sent into states satisfying `pred`.
    pub fn mass_into(&self, mut pred: impl FnMut(StateId) -> bool) -> f64 {
        self.succ.iter().filter(|(t, _)| pred(*t)).map(|(_, p)| p).sum()
    }
}

/// Common view of anything with states and probabilistic choices.
pub trait Mdp {
    fn num_states(&self) -> usize;
    fn choices(&self, s: StateId) -> &[Choice];

    fn choice(&self, s: StateId, a: ActionId) -> Option<&Choice> {
        self.choices(s).iter().find(|c| c.action == a)
    }

    fn num_choices(&self) -> usize {
        (0..self.num_states()).map(|s| self.choices(s).len()).sum()
    }
}

impl Mdp for Vec<Vec<Choice>> {
    fn num_states(&self) -> usize {
        self.len()
    }
    fn choices(&self, s: StateId) -> &[Choice] {
        &self[s]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "MdpJson", try_from = "MdpJson")]
pub struct LabeledMdp {
    pub ap: Vec<String>,
    pub actions: Vec<String>,
    pub labels: Vec<LabelSet>,
    pub initial: StateId,
    pub choices: Vec<Vec<Choice>>,
    /// Optional planar coordinates, used for heatmaps.
    pub coords: Option<Vec<(i64, i64)>>,
}

impl Mdp for LabeledMdp {
    fn num_states(&self) -> usize {
        self.labels.len()
    }
    fn choices(&self, s: StateId) -> &[Choice] {
        &self.choices[s]
    }
}

/// Violations found by [`validate_mdp`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        write!(f, "{}", self.violations.join("; "))
    }
}

pub fn validate_mdp(m: &LabeledMdp) -> ValidationReport {
    let mut v = Vec::new();
    let n = m.labels.len();
    if m.choices.len() != n {
        v.push(format!("{} label entries but {} transition rows", n, m.choices.len()));
    }
    if m.ap.len() > MAX_AP {
        v.push(format!("{} propositions exceed the limit of {}", m.ap.len(), MAX_AP));
    }
    if n == 0 {
        v.push("model has no states".into());
    } else if m.initial >= n {
        v.push(format!("initial state {} out of range", m.initial));
    }
    for (x, l) in m.labels.iter().enumerate() {
        if let Some(i) = l.indices().find(|&i| i >= m.ap.len()) {
            v.push(format!("label of state {} uses unknown proposition {}", x, i));
        }
    }
    if let Some(c) = &m.coords {
        if c.len() != n {
            v.push(format!("{} coordinates for {} states", c.len(), n));
        }
    }
    for (x, row) in m.choices.iter().enumerate() {
        if row.is_empty() {
            v.push(format!("dead state {}: no allowed action", x));
        }
        for (k, ch) in row.iter().enumerate() {
            let name = m.actions.get(ch.action).map(String::as_str).unwrap_or("?");
            if ch.action >= m.actions.len() {
                v.push(format!("unknown action id {} at state {}", ch.action, x));
            }
            if row[..k].iter().any(|o| o.action == ch.action) {
                v.push(format!("duplicate action {} at state {}", name, x));
            }
            if !(ch.cost > 0.0 && ch.cost.is_finite()) {
                v.push(format!("non-positive cost {} at ({}, {})", ch.cost, x, name));
            }
            if !(ch.duration > 0.0 && ch.duration.is_finite()) {
                v.push(format!("non-positive duration at ({}, {})", x, name));
            }
            let mut sum = 0.0;
            for &(t, p) in &ch.succ {
                if t >= n {
                    v.push(format!("successor {} of ({}, {}) out of range", t, x, name));
                }
                if !(0.0..=1.0 + STOCHASTIC_TOL).contains(&p) || !p.is_finite() {
                    v.push(format!("invalid probability {} at ({}, {})", p, x, name));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                v.push(format!("row-stochasticity at ({}, {}): sum {}", x, name, sum));
            }
        }
    }
    ValidationReport { violations: v }
}

impl LabeledMdp {
    /// Builds a model and rejects it unless it validates.
    pub fn new(
        ap: Vec<String>,
        actions: Vec<String>,
        labels: Vec<LabelSet>,
        initial: StateId,
        choices: Vec<Vec<Choice>>,
    ) -> Result<Self> {
        let m = LabeledMdp { ap, actions, labels, initial, choices, coords: None };
        m.check()?;
        Ok(m)
    }

    pub fn check(&self) -> Result<()> {
        let r = validate_mdp(self);
        if r.is_ok() {
            Ok(())
        } else {
            Err(Error::InvalidModel(r.to_string()))
        }
    }

    pub fn ap_index(&self, name: &str) -> Option<usize> {
        self.ap.iter().position(|a| a == name)
    }

    pub fn action_index(&self, name: &str) -> Option<ActionId> {
        self.actions.iter().position(|a| a == name)
    }

    pub fn has_label(&self, x: StateId, prop: &str) -> bool {
        self.ap_index(prop).is_some_and(|i| self.labels[x].contains(i))
    }

    /// States whose label contains `prop`.
    pub fn states_with(&self, prop: &str) -> Vec<StateId> {
        match self.ap_index(prop) {
            Some(i) => (0..self.num_states()).filter(|&x| self.labels[x].contains(i)).collect(),
            None => Vec::new(),
        }
    }

    pub fn max_cost(&self) -> f64 {
        self.choices.iter().flatten().map(|c| c.cost).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&MdpJson::from(self)).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: MdpJson = serde_json::from_str(text)?;
        let m = raw.into_model()?;
        m.check()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

fn is_one(x: &f64) -> bool {
    *x == 1.0
}

fn one() -> f64 {
    1.0
}

#[derive(Serialize, Deserialize)]
struct TransitionJson {
    from: StateId,
    action: String,
    cost: f64,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    duration: f64,
    dist: Vec<(StateId, f64)>,
}

/// On-disk model format. Floats are written in shortest round-trip form.
#[derive(Serialize, Deserialize)]
struct MdpJson {
    states: usize,
    ap: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    actions: Option<Vec<String>>,
    labels: Vec<Vec<usize>>,
    initial: StateId,
    transitions: Vec<TransitionJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coords: Option<Vec<(i64, i64)>>,
}

impl From<&LabeledMdp> for MdpJson {
    fn from(m: &LabeledMdp) -> Self {
        let mut transitions = Vec::with_capacity(m.num_choices());
        for (x, row) in m.choices.iter().enumerate() {
            for ch in row {
                transitions.push(TransitionJson {
                    from: x,
                    action: m.actions[ch.action].clone(),
                    cost: ch.cost,
                    duration: ch.duration,
                    dist: ch.succ.clone(),
                });
            }
        }
        MdpJson {
            states: m.num_states(),
            ap: m.ap.clone(),
            actions: Some(m.actions.clone()),
            labels: m.labels.iter().map(|l| l.indices().collect()).collect(),
            initial: m.initial,
            transitions,
            coords: m.coords.clone(),
        }
    }
}

impl From<LabeledMdp> for MdpJson {
    fn from(m: LabeledMdp) -> Self {
        MdpJson::from(&m)
    }
}

impl TryFrom<MdpJson> for LabeledMdp {
    type Error = Error;

    fn try_from(raw: MdpJson) -> Result<Self> {
        let m = raw.into_model()?;
        m.check()?;
        Ok(m)
    }
}

impl MdpJson {
    fn into_model(self) -> Result<LabeledMdp> {
        if self.labels.len() != self.states {
            return Err(Error::InvalidModel(format!(
                "{} label entries for {} states",
                self.labels.len(),
                self.states
            )));
        }
        let mut actions = self.actions.unwrap_or_default();
        let mut index: BTreeMap<String, ActionId> =
            actions.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        let mut choices = vec![Vec::new(); self.states];
        for t in self.transitions {
            if t.from >= self.states {
                return Err(Error::InvalidModel(format!("transition from unknown state {}", t.from)));
            }
            let id = *index.entry(t.action.clone()).or_insert_with(|| {
                actions.push(t.action.clone());
                actions.len() - 1
            });
            choices[t.from].push(Choice { action: id, cost: t.cost, duration: t.duration, succ: t.dist });
        }
        let mut labels = Vec::with_capacity(self.states);
        for l in &self.labels {
            if let Some(&bad) = l.iter().find(|&&i| i >= self.ap.len() || i >= MAX_AP) {
                return Err(Error::InvalidModel(format!("label index {} out of range", bad)));
            }
            labels.push(LabelSet::from_indices(l.iter().copied()));
        }
        Ok(LabeledMdp {
            ap: self.ap,
            actions,
            labels,
            initial: self.initial,
            choices,
            coords: self.coords,
        })
    }
}

/// One step of an executed run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    pub x: StateId,
    pub q: usize,
    pub action: String,
    pub label: String,
    pub cost: f64,
    pub mode: String,
}

/// Executed trajectory `x_0 u_0 x_1 ...` with automaton states and mode tags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub steps: Vec<TraceStep>,
}

impl RunTrace {
    pub const CSV_HEADER: &'static str = "t,x,q,action,label,cost,mode";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for s in &self.steps {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.t, s.x, s.q, s.action, s.label, s.cost, s.mode
            ));
        }
        out
    }

    pub fn total_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.cost).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> LabeledMdp {
        LabeledMdp::new(
            vec!["a".into()],
            vec!["go".into(), "stay".into()],
            vec![LabelSet::EMPTY, LabelSet::from_indices([0])],
            0,
            vec![
                vec![Choice::new(0, 1.0, vec![(1, 0.3), (0, 0.7)])],
                vec![Choice::new(1, 2.5, vec![(1, 1.0)])],
            ],
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_row() {
        let mut m = two_state();
        m.choices[0][0].succ = vec![(1, 0.3), (0, 0.6)];
        let r = validate_mdp(&m);
        assert!(r.violations.iter().any(|v| v.contains("row-stochasticity at (0, go)")), "{r}");
    }

    #[test]
    fn rejects_zero_cost_and_dead_state() {
        let mut m = two_state();
        m.choices[1][0].cost = 0.0;
        assert!(validate_mdp(&m).violations.iter().any(|v| v.contains("non-positive cost")));
        m.choices[1].clear();
        assert!(validate_mdp(&m).violations.iter().any(|v| v.contains("dead state 1")));
    }

    #[test]
    fn json_roundtrip_is_lossless() {
        let mut m = two_state();
        m.choices[0][0].succ = vec![(1, 0.1 + 0.2), (0, 1.0 - (0.1 + 0.2))];
        m.choices[0][0].cost = std::f64::consts::PI;
        let back = LabeledMdp::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn json_without_action_list_orders_by_appearance() {
        let text = r#"{"states":1,"ap":[],"labels":[[]],"initial":0,
            "transitions":[{"from":0,"action":"b","cost":1,"dist":[[0,1]]},
                           {"from":0,"action":"a","cost":1,"dist":[[0,1]]}]}"#;
        let m = LabeledMdp::from_json(text).unwrap();
        assert_eq!(m.actions, vec!["b".to_string(), "a".to_string()]);
    }

    #[test]
    fn label_set_ops() {
        let mut l = LabelSet::from_indices([0, 3]);
        assert!(l.contains(3) && !l.contains(1));
        l.remove(3);
        l.insert(1);
        assert_eq!(l.indices().collect::<Vec<_>>(), vec![0, 1]);
        let ap: Vec<String> = ["p", "q"].iter().map(|s| s.to_string()).collect();
        assert_eq!(l.display(&ap), "{p,q}");
    }
}
