//! Policy synthesis on products: maximal reachability, policy evaluation,
//! the constrained prefix LP and the average-cost suffix LP.

use serde::{Deserialize, Serialize};

use crate::chain::{chain_reach_probability, solve_fixed_point};
use crate::error::{Error, Result};
use crate::lp::{LpOutcome, LpProblem, Sense};
use crate::model::{Choice, Mdp, StateId};
use crate::policy::{StationaryPolicy, ValueFunction};
use crate::product::Amec;
use crate::reach::{greedy_choices, max_reach_values};

/// Mass below which an occupancy row counts as empty.
pub const OCC_TOL: f64 = 1e-12;
/// Slack granted to value comparisons against the bounds.
pub const BOUND_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SafetyMode {
    /// Expected sum of return values over the prefix is at least `chi_r`.
    Cumulative,
    /// Every visited state has return value at least `chi_r`.
    Statewise,
}

impl std::str::FromStr for SafetyMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cumulative" => Ok(SafetyMode::Cumulative),
            "statewise" => Ok(SafetyMode::Statewise),
            _ => Err(Error::InvalidConfig(format!("unknown safety mode '{}'", s))),
        }
    }
}

pub fn mask(n: usize, set: &[StateId]) -> Vec<bool> {
    let mut v = vec![false; n];
    for &s in set {
        v[s] = true;
    }
    v
}

/// Optimal reach policy and values; targets keep their first allowed choice.
pub fn solve_max_reachability<M: Mdp>(p: &M, target: &[bool], domain: &str) -> Result<(StationaryPolicy, ValueFunction)> {
    solve_max_reachability_within(p, target, domain, &|_, _| true)
}

pub fn solve_max_reachability_within<M: Mdp>(
    p: &M,
    target: &[bool],
    domain: &str,
    allowed: &dyn Fn(StateId, &Choice) -> bool,
) -> Result<(StationaryPolicy, ValueFunction)> {
    if !target.iter().any(|&t| t) {
        return Err(Error::EmptyTarget);
    }
    let v = max_reach_values(p, target, &allowed);
    let pick = greedy_choices(p, &v, target, &allowed);
    Ok((StationaryPolicy::from_choice_indices(domain, p, &pick), ValueFunction::new(v)))
}

/// Occupancy-measure LP for maximal reachability, used as an independent
/// check of value iteration. Returns the optimum from `from`.
pub fn max_reach_lp<M: Mdp>(p: &M, target: &[bool], from: StateId) -> Result<f64> {
    if target[from] {
        return Ok(1.0);
    }
    let n = p.num_states();
    // states with a graph path to the target; others contribute nothing
    let mut live = target.to_vec();
    loop {
        let mut changed = false;
        for s in 0..n {
            if !live[s] && p.choices(s).iter().any(|c| c.succ.iter().any(|&(t, q)| q > 0.0 && live[t])) {
                live[s] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if !live[from] {
        return Ok(0.0);
    }
    let mut lp = LpProblem { maximize: true, ..Default::default() };
    let mut vars: Vec<Vec<usize>> = vec![Vec::new(); n];
    for s in 0..n {
        if live[s] && !target[s] {
            for k in 0..p.choices(s).len() {
                vars[s].push(lp.add_var(format!("y_{}_{}", s, k)));
            }
        }
    }
    let mut balance: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for s in 0..n {
        for (k, &y) in vars[s].iter().enumerate() {
            let c = &p.choices(s)[k];
            balance[s].push((y, 1.0));
            for &(t, q) in &c.succ {
                if vars[t].is_empty() {
                    continue;
                }
                balance[t].push((y, -q));
            }
            let into = c.mass_into(|t| target[t]);
            if into > 0.0 {
                lp.objective.push((y, into));
            }
        }
    }
    for s in 0..n {
        if !vars[s].is_empty() {
            let rhs = if s == from { 1.0 } else { 0.0 };
            lp.add_row(format!("bal_{}", s), std::mem::take(&mut balance[s]), Sense::Eq, rhs);
        }
    }
    match lp.solve()? {
        LpOutcome::Optimal { objective, .. } => Ok(objective.clamp(0.0, 1.0)),
        other => Err(Error::Solver(format!("reachability LP ended with {:?}", other))),
    }
}

/// Probability of reaching `target` in the chain induced by `pi`.
/// States without a rule must be unreachable from states with one.
pub fn evaluate_policy_reach<M: Mdp>(p: &M, pi: &StationaryPolicy, target: &[bool]) -> Result<ValueFunction> {
    pi.check(p)?;
    let n = p.num_states();
    let mut rows: Vec<Vec<(StateId, f64)>> = vec![Vec::new(); n];
    for s in 0..n {
        if target[s] {
            rows[s] = vec![(s, 1.0)];
            continue;
        }
        for &(a, w) in pi.get(s) {
            let c = p.choice(s, a).expect("checked policy");
            for &(t, q) in &c.succ {
                if w * q > 0.0 && !target[t] && !pi.is_defined(t) {
                    return Err(Error::PolicyDomainMismatch { state: t, reason: "reached state has no rule".into() });
                }
                rows[s].push((t, w * q));
            }
        }
    }
    Ok(ValueFunction::new(chain_reach_probability(&rows, target)))
}

/// Outcome of the constrained prefix LP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixSolution {
    pub policy: StationaryPolicy,
    /// Probability of entering the accepting union.
    pub reach: f64,
    /// Expected sum of return values over prefix visits.
    pub cumulative_safety: f64,
    /// Smallest return value on states the policy may occupy.
    pub min_safety: f64,
    /// Expected accumulated prefix cost.
    pub cost: f64,
    /// Mass entering each accepting state.
    pub entry: Vec<(StateId, f64)>,
}

/// Choices admitted by the statewise safety restriction.
pub fn statewise_allowed<'a>(v_ret: &'a [f64], chi_r: f64) -> impl Fn(StateId, &Choice) -> bool + 'a {
    move |s, c| v_ret[s] >= chi_r - BOUND_TOL && c.succ.iter().all(|&(t, p)| p == 0.0 || v_ret[t] >= chi_r - BOUND_TOL)
}

/// Minimum-cost prefix policy that enters `s_xi` with probability at least
/// `chi_o` while meeting the safety bound `chi_r` in the chosen mode.
#[allow(clippy::too_many_arguments)]
pub fn solve_constrained_prefix<M: Mdp>(
    p: &M,
    initial: StateId,
    s_xi: &[bool],
    v_ret: &[f64],
    chi_o: f64,
    chi_r: f64,
    mode: SafetyMode,
    domain: &str,
) -> Result<PrefixSolution> {
    let n = p.num_states();
    let sw = statewise_allowed(v_ret, chi_r);
    let allowed = |s: StateId, c: &Choice| mode == SafetyMode::Cumulative || sw(s, c);
    if s_xi[initial] {
        let v = v_ret[initial];
        if mode == SafetyMode::Statewise && v < chi_r - BOUND_TOL {
            return Err(Error::Infeasible(format!("return value {:.6} at the initial state is below {}", v, chi_r)));
        }
        let mut policy = StationaryPolicy::empty(domain, n);
        fill_greedy(p, s_xi, &allowed, &mut policy);
        return Ok(PrefixSolution {
            policy,
            reach: 1.0,
            cumulative_safety: v,
            min_safety: v,
            cost: 0.0,
            entry: vec![(initial, 1.0)],
        });
    }
    if mode == SafetyMode::Statewise && v_ret[initial] < chi_r - BOUND_TOL {
        return Err(Error::Infeasible(format!(
            "return value {:.6} at the initial state is below {}",
            v_ret[initial], chi_r
        )));
    }
    let (lp, vars) = prefix_lp(p, initial, s_xi, v_ret, chi_o, chi_r, mode, &allowed);
    let (x, cost) = match lp.solve()? {
        LpOutcome::Optimal { x, objective } => (x, objective),
        LpOutcome::Infeasible => {
            return Err(Error::Infeasible(format!(
                "no prefix policy meets chi_o = {} and chi_r = {} ({:?})",
                chi_o, chi_r, mode
            )))
        }
        LpOutcome::Unbounded => return Err(Error::Solver("prefix LP is unbounded".into())),
    };
    let mut policy = StationaryPolicy::empty(domain, n);
    let mut got = 0.0;
    let mut cum = 0.0;
    let mut min_safety = v_ret[initial];
    let mut into = vec![0.0; n];
    for s in 0..n {
        let total: f64 = vars[s].iter().map(|&(_, y)| x[y]).sum();
        if total <= OCC_TOL {
            continue;
        }
        min_safety = min_safety.min(v_ret[s]);
        cum += total * v_ret[s];
        policy.rule[s] = vars[s]
            .iter()
            .filter(|&&(_, y)| x[y] > 0.0)
            .map(|&(k, y)| (p.choices(s)[k].action, x[y] / total))
            .collect();
        for &(k, y) in &vars[s] {
            for &(t, q) in &p.choices(s)[k].succ {
                if s_xi[t] {
                    into[t] += x[y] * q;
                    got += x[y] * q;
                }
                if x[y] * q > OCC_TOL {
                    min_safety = min_safety.min(v_ret[t]);
                }
            }
        }
    }
    fill_greedy(p, s_xi, &allowed, &mut policy);
    let entry = (0..n).filter(|&t| into[t] > 0.0).map(|t| (t, into[t])).collect();
    Ok(PrefixSolution { policy, reach: got.min(1.0), cumulative_safety: cum, min_safety, cost, entry })
}

/// Occupancy LP of the constrained prefix, with the `(choice index, variable)`
/// list of every state.
#[allow(clippy::too_many_arguments)]
fn prefix_lp<M: Mdp>(
    p: &M,
    initial: StateId,
    s_xi: &[bool],
    v_ret: &[f64],
    chi_o: f64,
    chi_r: f64,
    mode: SafetyMode,
    allowed: &dyn Fn(StateId, &Choice) -> bool,
) -> (LpProblem, Vec<Vec<(usize, usize)>>) {
    let n = p.num_states();
    let reach = max_reach_values(p, s_xi, &allowed);
    let transient: Vec<bool> = (0..n).map(|s| !s_xi[s] && reach[s] > 0.0).collect();
    let mut lp = LpProblem::default();
    let mut vars: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for s in 0..n {
        if !transient[s] {
            continue;
        }
        for (k, c) in p.choices(s).iter().enumerate() {
            if allowed(s, c) {
                vars[s].push((k, lp.add_var(format!("y_{}_{}", s, k))));
            }
        }
    }
    let mut balance: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut reach_row = Vec::new();
    let mut safe_row = Vec::new();
    for s in 0..n {
        for &(k, y) in &vars[s] {
            let c = &p.choices(s)[k];
            balance[s].push((y, 1.0));
            for &(t, q) in &c.succ {
                if transient[t] {
                    balance[t].push((y, -q));
                }
            }
            let into = c.mass_into(|t| s_xi[t]);
            if into > 0.0 {
                reach_row.push((y, into));
            }
            if v_ret[s] > 0.0 {
                safe_row.push((y, v_ret[s]));
            }
            lp.objective.push((y, c.cost));
        }
    }
    if transient[initial] {
        for s in 0..n {
            if transient[s] {
                let rhs = if s == initial { 1.0 } else { 0.0 };
                lp.add_row(format!("bal_{}", s), std::mem::take(&mut balance[s]), Sense::Eq, rhs);
            }
        }
    }
    lp.add_row("reach", reach_row, Sense::Ge, chi_o);
    if mode == SafetyMode::Cumulative {
        // an initial state outside the LP is still occupied once
        let rhs = if transient[initial] { chi_r } else { chi_r - v_ret[initial] };
        lp.add_row("safety", safe_row, Sense::Ge, rhs);
    }
    (lp, vars)
}

/// The prefix LP in MPS form, for inspection.
#[allow(clippy::too_many_arguments)]
pub fn prefix_lp_mps<M: Mdp>(
    p: &M,
    initial: StateId,
    s_xi: &[bool],
    v_ret: &[f64],
    chi_o: f64,
    chi_r: f64,
    mode: SafetyMode,
) -> String {
    let sw = statewise_allowed(v_ret, chi_r);
    let allowed = |s: StateId, c: &Choice| mode == SafetyMode::Cumulative || sw(s, c);
    prefix_lp(p, initial, s_xi, v_ret, chi_o, chi_r, mode, &allowed).0.to_mps("prefix")
}

/// Fills undefined rules with the max-reach greedy action toward `target`,
/// falling back to the lowest allowed (or any) choice.
fn fill_greedy<M: Mdp>(p: &M, target: &[bool], allowed: &dyn Fn(StateId, &Choice) -> bool, pi: &mut StationaryPolicy) {
    let v = max_reach_values(p, target, &allowed);
    let pick = greedy_choices(p, &v, target, &allowed);
    for s in 0..p.num_states() {
        if pi.rule[s].is_empty() && !target[s] {
            let k = pick[s].unwrap_or(0);
            if let Some(c) = p.choices(s).get(k) {
                pi.rule[s] = vec![(c.action, 1.0)];
            }
        }
    }
}

/// Suffix policy for one accepting component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuffixSolution {
    pub component: usize,
    /// Optimal long-run cost per primitive step.
    pub lp_gain: f64,
    /// Long-run cost per primitive step of the blended policy.
    pub blended_gain: f64,
    pub policy: StationaryPolicy,
}

/// Minimum average-cost stationary policy inside component `c`, blended
/// with the uniform choice over the component's actions with weight `eps`.
pub fn solve_suffix_average_cost<M: Mdp>(p: &M, amec: &Amec, c: usize, eps: f64, domain: &str) -> Result<SuffixSolution> {
    let comp = amec.components.get(c).ok_or(Error::EmptyAmec)?;
    let ec = &comp.ec;
    let n = p.num_states();
    let mut lp = LpProblem::default();
    let mut vars: Vec<Vec<(usize, usize)>> = Vec::with_capacity(ec.states.len());
    for (i, &s) in ec.states.iter().enumerate() {
        vars.push(ec.actions[i].iter().map(|&k| (k, lp.add_var(format!("y_{}_{}", s, k)))).collect());
    }
    let local = |s: StateId| ec.states.binary_search(&s).ok();
    let mut balance: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ec.states.len()];
    let mut norm = Vec::new();
    for (i, &s) in ec.states.iter().enumerate() {
        for &(k, y) in &vars[i] {
            let ch = &p.choices(s)[k];
            balance[i].push((y, 1.0));
            for &(t, q) in &ch.succ {
                if let Some(j) = local(t) {
                    balance[j].push((y, -q));
                }
            }
            norm.push((y, ch.duration));
            lp.objective.push((y, ch.cost));
        }
    }
    for (i, row) in balance.into_iter().enumerate() {
        lp.add_row(format!("bal_{}", i), row, Sense::Eq, 0.0);
    }
    lp.add_row("norm", norm, Sense::Eq, 1.0);
    let (x, lp_gain) = match lp.solve()? {
        LpOutcome::Optimal { x, objective } => (x, objective),
        other => return Err(Error::Solver(format!("suffix LP ended with {:?}", other))),
    };
    // LP rule on its support, attractor toward the support elsewhere
    let mut pick: Vec<Option<Vec<(usize, f64)>>> = vec![None; ec.states.len()];
    let mut support = vec![false; n];
    for (i, &s) in ec.states.iter().enumerate() {
        let total: f64 = vars[i].iter().map(|&(_, y)| x[y]).sum();
        if total > OCC_TOL {
            support[s] = true;
            pick[i] = Some(vars[i].iter().filter(|&&(_, y)| x[y] > 0.0).map(|&(k, y)| (k, x[y] / total)).collect());
        }
    }
    let inside = |s: StateId, ch: &Choice| {
        local(s).is_some_and(|i| ec.actions[i].iter().any(|&k| p.choices(s)[k].action == ch.action))
    };
    let v = max_reach_values(p, &support, &inside);
    let greedy = greedy_choices(p, &v, &support, &inside);
    let mut policy = StationaryPolicy::empty(domain, n);
    for (i, &s) in ec.states.iter().enumerate() {
        let base: Vec<(usize, f64)> = match &pick[i] {
            Some(d) => d.clone(),
            None => vec![(greedy[s].unwrap_or(ec.actions[i][0]), 1.0)],
        };
        let m = ec.actions[i].len() as f64;
        let mut dist: Vec<(usize, f64)> = ec.actions[i].iter().map(|&k| (k, eps / m)).collect();
        for (k, w) in base {
            let slot = dist.iter_mut().find(|e| e.0 == k).expect("component action");
            slot.1 += (1.0 - eps) * w;
        }
        policy.rule[s] = dist.into_iter().filter(|e| e.1 > 0.0).map(|(k, w)| (p.choices(s)[k].action, w)).collect();
    }
    let blended_gain = chain_gain(p, &policy, &ec.states)?;
    Ok(SuffixSolution { component: c, lp_gain, blended_gain, policy })
}

/// Long-run cost per primitive step of `pi` on a closed set of states.
pub fn chain_gain<M: Mdp>(p: &M, pi: &StationaryPolicy, states: &[StateId]) -> Result<f64> {
    let m = states.len();
    let local = |s: StateId| states.binary_search(&s).ok();
    let mut cost = vec![0.0; m];
    let mut dur = vec![0.0; m];
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    for (i, &s) in states.iter().enumerate() {
        for &(a, w) in pi.get(s) {
            let c = p.choice(s, a).ok_or(Error::PolicyDomainMismatch { state: s, reason: "unknown action".into() })?;
            cost[i] += w * c.cost;
            dur[i] += w * c.duration;
            for &(t, q) in &c.succ {
                let j = local(t).ok_or(Error::PolicyDomainMismatch { state: s, reason: "leaves the component".into() })?;
                rows[i].push((j, w * q));
            }
        }
    }
    let dist = stationary_distribution(&rows);
    let c: f64 = dist.iter().zip(&cost).map(|(d, c)| d * c).sum();
    let d: f64 = dist.iter().zip(&dur).map(|(d, t)| d * t).sum();
    Ok(if d > 0.0 { c / d } else { 0.0 })
}

/// Stationary distribution of an irreducible chain, started uniform.
pub fn stationary_distribution(rows: &[Vec<(usize, f64)>]) -> Vec<f64> {
    let m = rows.len();
    if m == 0 {
        return Vec::new();
    }
    // regenerative form: n_j = P(0, j) + sum_{i != 0} n_i P(i, j), n_0 = 1
    let mut a: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    let mut b = vec![0.0; m];
    for (i, row) in rows.iter().enumerate() {
        for &(j, q) in row {
            if j == 0 {
                continue;
            }
            if i == 0 {
                b[j] += q;
            } else {
                a[j].push((i, q));
            }
        }
    }
    let mut nvis = solve_fixed_point(&a, &b);
    nvis[0] = 1.0;
    let total: f64 = nvis.iter().sum();
    nvis.iter().map(|v| v / total).collect()
}
