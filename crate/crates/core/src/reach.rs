//! Maximal reachability: graph precomputation, value iteration and
//! progress-respecting greedy policy extraction.

use std::collections::VecDeque;

use crate::model::{Choice, LabeledMdp, Mdp, StateId};
use crate::policy::ValueFunction;

/// Sup-norm stopping threshold of value iteration.
pub const VI_TOL: f64 = 1e-12;
/// Slack under which a choice counts as optimal during extraction.
pub const OPT_TOL: f64 = 1e-9;
const MAX_SWEEPS: usize = 5_000_000;

fn predecessors<M: Mdp, F: Fn(StateId, &Choice) -> bool>(m: &M, allowed: &F) -> Vec<Vec<(StateId, usize)>> {
    let mut preds = vec![Vec::new(); m.num_states()];
    for s in 0..m.num_states() {
        for (k, c) in m.choices(s).iter().enumerate() {
            if !allowed(s, c) {
                continue;
            }
            for &(t, p) in &c.succ {
                if p > 0.0 && preds[t].last() != Some(&(s, k)) {
                    preds[t].push((s, k));
                }
            }
        }
    }
    preds
}

/// States with a path into `seed` using allowed choices, with BFS distance.
fn backward_layers(preds: &[Vec<(StateId, usize)>], seed: &[bool], stop: &[bool]) -> (Vec<bool>, Vec<StateId>) {
    let n = seed.len();
    let mut seen = seed.to_vec();
    let mut order: Vec<StateId> = (0..n).filter(|&s| seed[s]).collect();
    let mut queue: VecDeque<StateId> = order.iter().copied().collect();
    while let Some(t) = queue.pop_front() {
        for &(s, _) in &preds[t] {
            if !seen[s] && !stop[s] {
                seen[s] = true;
                order.push(s);
                queue.push_back(s);
            }
        }
    }
    (seen, order)
}

/// States from which `target` is reached with probability one under some policy.
pub fn prob1_max<M: Mdp, F: Fn(StateId, &Choice) -> bool>(m: &M, target: &[bool], allowed: &F) -> Vec<bool> {
    let n = m.num_states();
    let preds = predecessors(m, allowed);
    let (mut u, _) = backward_layers(&preds, target, target);
    loop {
        let mut r = target.to_vec();
        let mut queue: VecDeque<StateId> = (0..n).filter(|&s| target[s]).collect();
        while let Some(t) = queue.pop_front() {
            for &(s, k) in &preds[t] {
                if r[s] || !u[s] {
                    continue;
                }
                if m.choices(s)[k].succ.iter().all(|&(x, p)| p == 0.0 || u[x]) {
                    r[s] = true;
                    queue.push_back(s);
                }
            }
        }
        if r == u {
            return u;
        }
        u = r;
    }
}

fn q_value(c: &Choice, v: &[f64]) -> f64 {
    c.succ.iter().map(|&(t, p)| p * v[t]).sum()
}

/// Gauss-Seidel value iteration with fixed terminal values.
fn iterate<M: Mdp, F: Fn(StateId, &Choice) -> bool>(
    m: &M,
    v: &mut [f64],
    order: &[StateId],
    free: &[bool],
    allowed: &F,
) {
    let sweep: Vec<StateId> = order.iter().copied().filter(|&s| free[s]).collect();
    for _ in 0..MAX_SWEEPS {
        let mut delta: f64 = 0.0;
        for &s in &sweep {
            let best = m
                .choices(s)
                .iter()
                .filter(|c| allowed(s, c))
                .map(|c| q_value(c, v))
                .fold(0.0, f64::max);
            delta = delta.max((best - v[s]).abs());
            v[s] = best;
        }
        if delta < VI_TOL {
            break;
        }
    }
}

/// Maximal probability of reaching `target`, using only allowed choices.
pub fn max_reach_values<M: Mdp, F: Fn(StateId, &Choice) -> bool>(m: &M, target: &[bool], allowed: &F) -> Vec<f64> {
    let n = m.num_states();
    let preds = predecessors(m, allowed);
    let (can, order) = backward_layers(&preds, target, target);
    let one = prob1_max(m, target, allowed);
    let mut v = vec![0.0; n];
    let mut free = vec![false; n];
    for s in 0..n {
        if one[s] {
            v[s] = 1.0;
        } else if can[s] {
            free[s] = true;
        }
    }
    iterate(m, &mut v, &order, &free, allowed);
    for x in &mut v {
        *x = x.clamp(0.0, 1.0);
    }
    v
}

/// Maximal expected terminal reward collected on first arrival at a terminal state.
pub fn max_terminal_values<M: Mdp, F: Fn(StateId, &Choice) -> bool>(
    m: &M,
    reward: &[Option<f64>],
    allowed: &F,
) -> Vec<f64> {
    let n = m.num_states();
    let preds = predecessors(m, allowed);
    let positive: Vec<bool> = reward.iter().map(|r| r.is_some_and(|r| r > 0.0)).collect();
    let terminal: Vec<bool> = reward.iter().map(Option::is_some).collect();
    let (can, order) = backward_layers(&preds, &positive, &terminal);
    let mut v = vec![0.0; n];
    let mut free = vec![false; n];
    for s in 0..n {
        match reward[s] {
            Some(r) => v[s] = r,
            None => free[s] = can[s],
        }
    }
    iterate(m, &mut v, &order, &free, allowed);
    v
}

/// Greedy extraction that only keeps optimal choices making progress
/// toward `goal` (terminal states with positive value), so that the
/// extracted policy attains the values instead of idling on self-loops.
/// Terminal states get their lowest allowed choice. `None` marks states
/// without any allowed choice.
pub fn greedy_choices<M: Mdp, F: Fn(StateId, &Choice) -> bool>(
    m: &M,
    v: &[f64],
    terminal: &[bool],
    allowed: &F,
) -> Vec<Option<usize>> {
    let n = m.num_states();
    let mut pick: Vec<Option<usize>> = vec![None; n];
    let mut done = vec![false; n];
    let mut queue = VecDeque::new();
    for s in 0..n {
        if terminal[s] {
            done[s] = true;
            if v[s] > 0.0 {
                queue.push_back(s);
            }
        }
    }
    let mut preds: Vec<Vec<(StateId, usize)>> = vec![Vec::new(); n];
    for s in 0..n {
        if terminal[s] || v[s] <= 0.0 {
            continue;
        }
        for (k, c) in m.choices(s).iter().enumerate() {
            if !allowed(s, c) || q_value(c, v) < v[s] - OPT_TOL {
                continue;
            }
            for &(t, p) in &c.succ {
                if p > 0.0 && preds[t].last() != Some(&(s, k)) {
                    preds[t].push((s, k));
                }
            }
        }
    }
    for list in &mut preds {
        list.sort_unstable();
    }
    let mut layer = vec![usize::MAX; n];
    for &t in &queue {
        layer[t] = 0;
    }
    while let Some(t) = queue.pop_front() {
        for &(s, k) in &preds[t] {
            if !done[s] {
                done[s] = true;
                pick[s] = Some(k);
                layer[s] = layer[t] + 1;
                queue.push_back(s);
            }
        }
    }
    // among optimal choices, prefer the most mass into lower layers
    for s in 0..n {
        if terminal[s] || layer[s] == usize::MAX {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (k, c) in m.choices(s).iter().enumerate() {
            if !allowed(s, c) || q_value(c, v) < v[s] - OPT_TOL {
                continue;
            }
            let down = c.mass_into(|t| layer[t] < layer[s]);
            if down > 0.0 && best.is_none_or(|(_, b)| down > b + OPT_TOL) {
                best = Some((k, down));
            }
        }
        if let Some((k, _)) = best {
            pick[s] = Some(k);
        }
    }
    for s in 0..n {
        if pick[s].is_some() {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (k, c) in m.choices(s).iter().enumerate() {
            if !allowed(s, c) {
                continue;
            }
            let q = if terminal[s] { 0.0 } else { q_value(c, v) };
            if best.is_none_or(|(_, b)| q > b + OPT_TOL) {
                best = Some((k, q));
            }
        }
        pick[s] = best.map(|b| b.0);
    }
    pick
}

/// Optimal reach probabilities on a labeled MDP.
pub fn reachability_value_iteration(m: &LabeledMdp, target: &[StateId]) -> ValueFunction {
    let mut t = vec![false; m.num_states()];
    for &s in target {
        t[s] = true;
    }
    ValueFunction::new(max_reach_values(m, &t, &|_, _| true))
}

pub fn all_allowed(_: StateId, _: &Choice) -> bool {
    true
}
