//! Feature-based abstraction: semi-MDPs over feature states whose macro
//! actions are option policies executed in the low-level model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::automata::{effective_features, Dra, Letter};
use crate::chain::transient_visits;
use crate::error::{Error, Result};
use crate::lp::{LpOutcome, LpProblem, Sense};
use crate::model::{Choice, LabelSet, LabeledMdp, Mdp, StateId};
use crate::policy::StationaryPolicy;
use crate::reach::{greedy_choices, max_reach_values, max_terminal_values};
use crate::synthesis::{SafetyMode, BOUND_TOL, OCC_TOL};

/// Action distribution of an option rule at one state.
type Row = Vec<(usize, f64)>;

/// Mass below which an absorption entry is dropped.
pub const MASS_TOL: f64 = 1e-12;

/// Closed-loop low-level policy realizing the macro action `(source, target)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptionPolicy {
    pub source: StateId,
    pub target: StateId,
    /// Rule over low-level states; empty rows mean the run is trapped.
    pub rule: StationaryPolicy,
    pub reach_prob: f64,
    /// Expected accumulated cost until absorption.
    pub expected_cost: f64,
    /// Expected number of low-level steps until absorption.
    pub expected_steps: f64,
    /// Expected sum of extended return values over visited states.
    pub safety_score: f64,
    /// Smallest extended return value the option can visit.
    pub min_safety: f64,
    /// Low-level sink states and absorption mass.
    pub absorption: Vec<(StateId, f64)>,
    /// Mass never reaching a sink.
    pub bottom: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemiMdp {
    /// States are the feature states followed by the trap `⊥`.
    pub model: LabeledMdp,
    /// Low-level state of every non-trap semi state.
    pub features: Vec<StateId>,
    pub bottom: StateId,
    pub options: Vec<OptionPolicy>,
    /// Per semi state, `(action, option index)` of its macro actions.
    pub macros: Vec<Vec<(usize, usize)>>,
}

impl SemiMdp {
    pub fn semi_state(&self, x: StateId) -> Option<StateId> {
        self.features.binary_search(&x).ok()
    }

    pub fn option_for(&self, s: StateId, action: usize) -> Option<&OptionPolicy> {
        self.macros.get(s)?.iter().find(|m| m.0 == action).map(|m| &self.options[m.1])
    }

    pub fn num_macros(&self) -> usize {
        self.options.len()
    }
}

/// Return value extended to every low-level state, with the approach policy
/// that steers toward the best feature state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtendedReturnValue {
    pub values: Vec<f64>,
    pub approach: StationaryPolicy,
    /// Low-level states where the approach phase ends.
    pub features: Vec<StateId>,
}

/// Low-level states whose label is a nonempty effective feature of `d`.
pub fn feature_states(m: &LabeledMdp, d: &Dra, theta: &[Letter]) -> Result<Vec<StateId>> {
    let proj = d.projection(&m.ap)?;
    Ok((0..m.num_states())
        .filter(|&x| {
            let l = Dra::letter_of(&proj, m.labels[x]);
            l != 0 && theta.binary_search(&l).is_ok()
        })
        .collect())
}

/// How the safe-return requirement shapes option synthesis.
#[derive(Clone, Copy, Debug)]
pub enum OptionConstraint<'a> {
    Free,
    Safe { v_ext: &'a [f64], chi_r: f64, mode: SafetyMode },
}

fn chain_of(m: &LabeledMdp, rule: &[Vec<(usize, f64)>], is_sink: &[bool]) -> Vec<Vec<(StateId, f64)>> {
    (0..m.num_states())
        .map(|s| {
            if is_sink[s] || rule[s].is_empty() {
                return vec![(s, 1.0)];
            }
            let mut row = Vec::new();
            for &(k, w) in &rule[s] {
                for &(t, p) in &m.choices[s][k].succ {
                    row.push((t, w * p));
                }
            }
            row
        })
        .collect()
}

/// Synthesizes the option for `(x_f, x_t)`; `None` when `x_t` is unreachable
/// or no option meets the constraint.
pub fn synthesize_option(
    m: &LabeledMdp,
    is_sink: &[bool],
    x_f: StateId,
    x_t: StateId,
    constraint: OptionConstraint,
) -> Result<Option<OptionPolicy>> {
    let n = m.num_states();
    let (v_ext, chi_r, statewise) = match constraint {
        OptionConstraint::Free => (None, 0.0, false),
        OptionConstraint::Safe { v_ext, chi_r, mode } => (Some(v_ext), chi_r, mode == SafetyMode::Statewise),
    };
    let safe = |s: StateId| v_ext.is_none_or(|v| v[s] >= chi_r - BOUND_TOL);
    if statewise && !safe(x_f) {
        return Ok(None);
    }
    let allowed = |s: StateId, c: &Choice| {
        !is_sink[s] && (!statewise || (safe(s) && c.succ.iter().all(|&(t, p)| p == 0.0 || safe(t))))
    };
    let mut target = vec![false; n];
    target[x_t] = true;
    let v = max_reach_values(m, &target, &allowed);
    if v[x_f] <= 0.0 {
        return Ok(None);
    }
    let pick = greedy_choices(m, &v, &target, &allowed);
    let v_any = max_reach_values(m, is_sink, &allowed);
    let pick_any = greedy_choices(m, &v_any, is_sink, &allowed);
    let mut rule: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|s| {
            if is_sink[s] {
                return Vec::new();
            }
            let k = if v[s] > 0.0 { pick[s] } else if v_any[s] > 0.0 { pick_any[s] } else { None };
            k.map(|k| vec![(k, 1.0)]).unwrap_or_default()
        })
        .collect();
    let mut option = evaluate_option(m, is_sink, x_f, x_t, &rule, v_ext);
    if let (Some(v_ext), false) = (v_ext, statewise) {
        if option.safety_score < chi_r - BOUND_TOL {
            match cumulative_option_lp(m, is_sink, x_f, x_t, v_ext, chi_r, &v_any, &rule)? {
                Some(r) => rule = r,
                None => return Ok(None),
            }
            option = evaluate_option(m, is_sink, x_f, x_t, &rule, Some(v_ext));
        }
    }
    if option.reach_prob <= MASS_TOL {
        return Ok(None);
    }
    Ok(Some(option))
}

fn evaluate_option(
    m: &LabeledMdp,
    is_sink: &[bool],
    x_f: StateId,
    x_t: StateId,
    rule: &[Vec<(usize, f64)>],
    v_ext: Option<&[f64]>,
) -> OptionPolicy {
    let n = m.num_states();
    let rows = chain_of(m, rule, is_sink);
    let tv = transient_visits(&rows, is_sink, x_f);
    let mut into = vec![0.0; n];
    let mut cost = 0.0;
    let mut steps = 0.0;
    let mut score = 0.0;
    let val = |s: StateId| v_ext.map(|v| v[s]).unwrap_or(1.0);
    let mut min_safety = val(x_f);
    let mut kept = StationaryPolicy::empty(format!("option {}->{}", x_f, x_t), n);
    for (i, &s) in tv.states.iter().enumerate() {
        let nv = tv.visits[i];
        steps += nv;
        score += nv * val(s);
        min_safety = min_safety.min(val(s));
        for &(k, w) in &rule[s] {
            cost += nv * w * m.choices[s][k].cost;
        }
        kept.rule[s] = rule[s].iter().map(|&(k, w)| (m.choices[s][k].action, w)).collect();
        for &(t, p) in &rows[s] {
            if is_sink[t] {
                into[t] += nv * p;
            }
            if p > 0.0 {
                min_safety = min_safety.min(val(t));
            }
        }
    }
    let absorption: Vec<(StateId, f64)> =
        (0..n).filter(|&t| is_sink[t] && into[t] > MASS_TOL).map(|t| (t, into[t].min(1.0))).collect();
    let total: f64 = absorption.iter().map(|e| e.1).sum();
    OptionPolicy {
        source: x_f,
        target: x_t,
        rule: kept,
        reach_prob: into[x_t].min(1.0),
        expected_cost: cost,
        expected_steps: steps,
        safety_score: score,
        min_safety,
        absorption,
        bottom: (1.0 - total).max(0.0),
    }
}

/// Occupancy LP maximizing reach of `x_t` subject to the cumulative
/// safety bound; returns a randomized rule.
#[allow(clippy::too_many_arguments)]
fn cumulative_option_lp(
    m: &LabeledMdp,
    is_sink: &[bool],
    x_f: StateId,
    x_t: StateId,
    v_ext: &[f64],
    chi_r: f64,
    v_any: &[f64],
    fallback: &[Vec<(usize, f64)>],
) -> Result<Option<Vec<Row>>> {
    let n = m.num_states();
    let transient: Vec<bool> = (0..n).map(|s| !is_sink[s] && v_any[s] > 0.0).collect();
    let mut lp = LpProblem { maximize: true, ..Default::default() };
    let mut vars: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for s in 0..n {
        if transient[s] {
            for k in 0..m.choices[s].len() {
                vars[s].push((k, lp.add_var(format!("y_{}_{}", s, k))));
            }
        }
    }
    let mut balance: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut safe_row = Vec::new();
    for s in 0..n {
        for &(k, y) in &vars[s] {
            let c = &m.choices[s][k];
            balance[s].push((y, 1.0));
            for &(t, p) in &c.succ {
                if transient[t] {
                    balance[t].push((y, -p));
                }
            }
            let into = c.mass_into(|t| t == x_t);
            if into > 0.0 {
                lp.objective.push((y, into));
            }
            safe_row.push((y, v_ext[s]));
        }
    }
    for s in 0..n {
        if transient[s] {
            lp.add_row(format!("bal_{}", s), std::mem::take(&mut balance[s]), Sense::Eq, if s == x_f { 1.0 } else { 0.0 });
        }
    }
    lp.add_row("safety", safe_row, Sense::Ge, chi_r);
    let x = match lp.solve()? {
        LpOutcome::Optimal { x, .. } => x,
        LpOutcome::Infeasible => return Ok(None),
        LpOutcome::Unbounded => return Err(Error::Solver("option LP is unbounded".into())),
    };
    let rule = (0..n)
        .map(|s| {
            let total: f64 = vars[s].iter().map(|&(_, y)| x[y]).sum();
            if total > OCC_TOL {
                vars[s].iter().filter(|&&(_, y)| x[y] > 0.0).map(|&(k, y)| (k, x[y] / total)).collect()
            } else {
                fallback[s].clone()
            }
        })
        .collect();
    Ok(Some(rule))
}

/// Semi-MDP over `features` (sorted low-level states) with one macro action
/// per reachable ordered pair.
pub fn build_semi_mdp(m: &LabeledMdp, features: &[StateId], constraint: OptionConstraint) -> Result<SemiMdp> {
    if features.is_empty() {
        return Err(Error::EmptyFeatureSet);
    }
    let k = features.len();
    let n = m.num_states();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|f| (0..k).filter(move |&t| t != f).map(move |t| (f, t))).collect();
    let results: Vec<Result<Option<OptionPolicy>>> = pairs
        .par_iter()
        .map(|&(f, t)| {
            let mut is_sink = vec![false; n];
            for (i, &x) in features.iter().enumerate() {
                is_sink[x] = i != f;
            }
            synthesize_option(m, &is_sink, features[f], features[t], constraint)
        })
        .collect();
    let bottom = k;
    let halt = k;
    let stay = k + 1;
    let mut actions: Vec<String> = features.iter().map(|x| format!("goto:{}", x)).collect();
    actions.push("halt".into());
    actions.push("stay".into());
    let trap_cost = m.max_cost().max(f64::MIN_POSITIVE);
    let mut choices: Vec<Vec<Choice>> = vec![Vec::new(); k + 1];
    let mut macros: Vec<Vec<(usize, usize)>> = vec![Vec::new(); k + 1];
    let mut options = Vec::new();
    for (&(f, t), r) in pairs.iter().zip(results) {
        let Some(opt) = r? else { continue };
        let mut succ: Vec<(StateId, f64)> =
            opt.absorption.iter().map(|&(x, p)| (features.binary_search(&x).expect("sink is a feature"), p)).collect();
        let total: f64 = succ.iter().map(|e| e.1).sum();
        if total < 1.0 {
            succ.push((bottom, 1.0 - total));
        } else if let Some(first) = succ.first_mut() {
            first.1 -= total - 1.0;
        }
        choices[f].push(Choice {
            action: t,
            cost: opt.expected_cost.max(f64::MIN_POSITIVE),
            duration: opt.expected_steps.max(1.0),
            succ,
        });
        macros[f].push((t, options.len()));
        options.push(opt);
    }
    for row in choices.iter_mut().take(k) {
        if row.is_empty() {
            row.push(Choice::new(halt, trap_cost, vec![(bottom, 1.0)]));
        }
    }
    choices[bottom].push(Choice::new(stay, trap_cost, vec![(bottom, 1.0)]));
    let mut labels: Vec<LabelSet> = features.iter().map(|&x| m.labels[x]).collect();
    labels.push(LabelSet::EMPTY);
    let initial = features.binary_search(&m.initial).unwrap_or(0);
    let mut model = LabeledMdp::new(m.ap.clone(), actions, labels, initial, choices)?;
    if let Some(c) = &m.coords {
        let mut cc: Vec<(i64, i64)> = features.iter().map(|&x| c[x]).collect();
        cc.push((-1, -1));
        model.coords = Some(cc);
    }
    Ok(SemiMdp { model, features: features.to_vec(), bottom, options, macros })
}

/// Safe-return semi-MDP: feature states of the return automaton, free options.
pub fn build_safe_semi_mdp(m: &LabeledMdp, dra_r: &Dra) -> Result<SemiMdp> {
    let theta = effective_features(dra_r);
    let features = feature_states(m, dra_r, &theta)?;
    build_semi_mdp(m, &features, OptionConstraint::Free)
}

/// Task semi-MDP: feature states of the task automaton plus the initial
/// state, with options constrained by the extended return value.
pub fn build_task_semi_mdp(
    m: &LabeledMdp,
    dra_o: &Dra,
    v_ext: &ExtendedReturnValue,
    chi_r: f64,
    mode: SafetyMode,
) -> Result<SemiMdp> {
    let theta = effective_features(dra_o);
    let mut features = feature_states(m, dra_o, &theta)?;
    if let Err(i) = features.binary_search(&m.initial) {
        features.insert(i, m.initial);
    }
    build_semi_mdp(m, &features, OptionConstraint::Safe { v_ext: &v_ext.values, chi_r, mode })
}

/// Best expected semi-level value collected on first arrival at a feature
/// state; equals `v_semi` on the feature states themselves.
pub fn extend_return_value(m: &LabeledMdp, semi_r: &SemiMdp, v_semi: &[f64]) -> ExtendedReturnValue {
    let n = m.num_states();
    let mut reward: Vec<Option<f64>> = vec![None; n];
    let mut terminal = vec![false; n];
    for (i, &x) in semi_r.features.iter().enumerate() {
        reward[x] = Some(v_semi[i].clamp(0.0, 1.0));
        terminal[x] = true;
    }
    let values: Vec<f64> = max_terminal_values(m, &reward, &|_, _| true).into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let pick = greedy_choices(m, &values, &terminal, &|_, _| true);
    let mut approach = StationaryPolicy::from_choice_indices("approach", m, &pick);
    for &x in &semi_r.features {
        approach.rule[x].clear();
    }
    ExtendedReturnValue { values, approach, features: semi_r.features.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Corridor 0 - 1 - 2 - 3 with a fork at 1: "right" moves on with
    /// probability 0.5 and otherwise falls to 4.
    fn corridor() -> LabeledMdp {
        let ap = vec!["f".to_string()];
        let choices = vec![
            vec![Choice::new(0, 1.0, vec![(1, 1.0)])],
            vec![Choice::new(0, 1.0, vec![(2, 0.5), (4, 0.5)])],
            vec![Choice::new(0, 1.0, vec![(3, 1.0)])],
            vec![Choice::new(0, 1.0, vec![(3, 1.0)])],
            vec![Choice::new(0, 1.0, vec![(4, 1.0)])],
        ];
        let f = LabelSet(1);
        let labels = vec![f, LabelSet(0), LabelSet(0), f, f];
        LabeledMdp::new(ap, vec!["go".into()], labels, 0, choices).unwrap()
    }

    #[test]
    fn branch_splits_absorption() {
        let m = corridor();
        let sem = build_semi_mdp(&m, &[0, 3, 4], OptionConstraint::Free).unwrap();
        let o = sem.option_for(0, 1).unwrap();
        assert!((o.reach_prob - 0.5).abs() < 1e-12);
        assert!((o.expected_cost - 2.5).abs() < 1e-12);
        let row = &sem.model.choices[0][0];
        let p3: f64 = row.succ.iter().filter(|e| e.0 == 1).map(|e| e.1).sum();
        let p4: f64 = row.succ.iter().filter(|e| e.0 == 2).map(|e| e.1).sum();
        assert!((p3 - 0.5).abs() < 1e-12 && (p4 - 0.5).abs() < 1e-12);
        // 3 and 4 are absorbing, so they only get halt
        assert_eq!(sem.model.actions[sem.model.choices[1][0].action], "halt");
    }

    #[test]
    fn statewise_option_is_removed_through_unsafe_region() {
        let m = corridor();
        let v_ext = vec![1.0, 1.0, 1.0, 1.0, 0.0];
        let c = OptionConstraint::Safe { v_ext: &v_ext, chi_r: 0.9, mode: SafetyMode::Statewise };
        let sem = build_semi_mdp(&m, &[0, 3, 4], c).unwrap();
        assert!(sem.option_for(0, 1).is_none());
        let free = OptionConstraint::Safe { v_ext: &v_ext, chi_r: 0.0, mode: SafetyMode::Statewise };
        assert!(build_semi_mdp(&m, &[0, 3, 4], free).unwrap().option_for(0, 1).is_some());
    }

    #[test]
    fn deterministic_path_cost_equals_length() {
        let m = corridor();
        let mut m2 = m.clone();
        m2.choices[1] = vec![Choice::new(0, 1.0, vec![(2, 1.0)])];
        let sem = build_semi_mdp(&m2, &[0, 3], OptionConstraint::Free).unwrap();
        let o = sem.option_for(0, 1).unwrap();
        assert_eq!(o.reach_prob, 1.0);
        assert!((o.expected_cost - 3.0).abs() < 1e-12);
        assert!((o.expected_steps - 3.0).abs() < 1e-12);
    }

    #[test]
    fn extension_takes_best_feature() {
        let m = corridor();
        let sem = build_semi_mdp(&m, &[0, 3, 4], OptionConstraint::Free).unwrap();
        let ext = extend_return_value(&m, &sem, &[0.2, 1.0, 0.0]);
        assert!((ext.values[1] - 0.5).abs() < 1e-12);
        assert!((ext.values[2] - 1.0).abs() < 1e-12);
        assert_eq!(ext.values[0], 0.2);
    }
}
