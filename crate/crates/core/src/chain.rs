//! Markov chains induced by policies, absorption analysis and linear solves.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Mdp, StateId};
use crate::policy::{check_dist, StationaryPolicy};

/// Systems with at most this many unknowns are solved by dense LU; larger
/// ones by sparse LU.
pub const DENSE_LIMIT: usize = 400;
/// Residual tolerance of iterative solves.
pub const SOLVE_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 2_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovChain {
    pub rows: Vec<Vec<(StateId, f64)>>,
    pub initial: Vec<(StateId, f64)>,
    /// Expected one-step cost under the inducing policy.
    pub cost: Vec<f64>,
    /// Expected one-step duration under the inducing policy.
    pub duration: Vec<f64>,
}

impl MarkovChain {
    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    pub fn is_absorbing(&self, s: StateId) -> bool {
        self.rows[s].iter().all(|&(t, p)| t == s || p == 0.0)
    }
}

fn merge_row(row: &mut Vec<(StateId, f64)>) {
    row.sort_by_key(|e| e.0);
    let mut out: Vec<(StateId, f64)> = Vec::with_capacity(row.len());
    for &(t, p) in row.iter() {
        match out.last_mut() {
            Some(last) if last.0 == t => last.1 += p,
            _ => out.push((t, p)),
        }
    }
    out.retain(|e| e.1 > 0.0);
    *row = out;
}

/// Chain `P(x, y) = sum_u pi(x, u) p(x, u, y)`; every state needs a rule.
pub fn induce_chain(m: &impl Mdp, pi: &StationaryPolicy, initial: StateId) -> Result<MarkovChain> {
    let n = m.num_states();
    let mut rows = Vec::with_capacity(n);
    let mut cost = vec![0.0; n];
    let mut duration = vec![0.0; n];
    for s in 0..n {
        let dist = pi.get(s);
        if dist.is_empty() {
            return Err(Error::PolicyDomainMismatch { state: s, reason: "no action selected".into() });
        }
        check_dist(m, s, dist)?;
        let mut row = Vec::new();
        for &(a, w) in dist {
            if w == 0.0 {
                continue;
            }
            let ch = m.choice(s, a).expect("checked");
            cost[s] += w * ch.cost;
            duration[s] += w * ch.duration;
            row.extend(ch.succ.iter().map(|&(t, p)| (t, w * p)));
        }
        merge_row(&mut row);
        rows.push(row);
    }
    Ok(MarkovChain { rows, initial: vec![(initial, 1.0)], cost, duration })
}

/// Absorption probabilities from one start state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Absorption {
    /// Mass per sink, in the order the sinks were given.
    pub mass: Vec<(StateId, f64)>,
    /// Probability of never reaching a sink.
    pub bottom: f64,
}

impl Absorption {
    pub fn mass_at(&self, s: StateId) -> f64 {
        self.mass.iter().find(|e| e.0 == s).map_or(0.0, |e| e.1)
    }
}

/// Expected visit counts of the transient states before absorption.
#[derive(Clone, Debug)]
pub struct TransientVisits {
    pub states: Vec<StateId>,
    pub visits: Vec<f64>,
}

/// Visits of states that can still reach a sink, starting from `from`.
/// States that cannot reach any sink count as absorbed into the bottom.
pub fn transient_visits(rows: &[Vec<(StateId, f64)>], is_sink: &[bool], from: StateId) -> TransientVisits {
    let n = rows.len();
    // backward: which states can reach a sink
    let mut preds: Vec<Vec<StateId>> = vec![Vec::new(); n];
    for (s, row) in rows.iter().enumerate() {
        if is_sink[s] {
            continue;
        }
        for &(t, p) in row {
            if p > 0.0 {
                preds[t].push(s);
            }
        }
    }
    let mut live = is_sink.to_vec();
    let mut queue: VecDeque<StateId> = (0..n).filter(|&s| is_sink[s]).collect();
    while let Some(t) = queue.pop_front() {
        for &s in &preds[t] {
            if !live[s] {
                live[s] = true;
                queue.push_back(s);
            }
        }
    }
    if is_sink[from] || !live[from] {
        return TransientVisits { states: Vec::new(), visits: Vec::new() };
    }
    // forward: transient states reachable from `from`
    let mut local = vec![usize::MAX; n];
    let mut states = vec![from];
    local[from] = 0;
    let mut k = 0;
    while k < states.len() {
        let s = states[k];
        k += 1;
        for &(t, p) in &rows[s] {
            if p > 0.0 && !is_sink[t] && live[t] && local[t] == usize::MAX {
                local[t] = states.len();
                states.push(t);
            }
        }
    }
    // n = e_from + P^T n over the transient block
    let mut trans: Vec<Vec<(usize, f64)>> = vec![Vec::new(); states.len()];
    for (i, &s) in states.iter().enumerate() {
        for &(t, p) in &rows[s] {
            if p > 0.0 && local[t] != usize::MAX {
                trans[local[t]].push((i, p));
            }
        }
    }
    let mut b = vec![0.0; states.len()];
    b[0] = 1.0;
    let visits = solve_fixed_point(&trans, &b);
    TransientVisits { states, visits }
}

/// Distribution over `sinks` plus the never-absorbed mass.
pub fn absorbing_distribution(c: &MarkovChain, sinks: &[StateId], from: StateId) -> Result<Absorption> {
    let n = c.num_states();
    let mut is_sink = vec![false; n];
    for &s in sinks {
        if !c.is_absorbing(s) {
            return Err(Error::NonAbsorbingSink(s));
        }
        is_sink[s] = true;
    }
    if is_sink[from] {
        let mass = sinks.iter().map(|&s| (s, if s == from { 1.0 } else { 0.0 })).collect();
        return Ok(Absorption { mass, bottom: 0.0 });
    }
    let tv = transient_visits(&c.rows, &is_sink, from);
    let mut into = vec![0.0; n];
    for (i, &s) in tv.states.iter().enumerate() {
        for &(t, p) in &c.rows[s] {
            if is_sink[t] {
                into[t] += tv.visits[i] * p;
            }
        }
    }
    let mass: Vec<(StateId, f64)> = sinks.iter().map(|&s| (s, into[s].clamp(0.0, 1.0))).collect();
    let total: f64 = mass.iter().map(|e| e.1).sum();
    Ok(Absorption { mass, bottom: (1.0 - total).max(0.0) })
}

/// Solves `x = b + A x` for a substochastic `A` given as sparse rows.
pub fn solve_fixed_point(a: &[Vec<(usize, f64)>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    if n == 0 {
        return Vec::new();
    }
    if n <= DENSE_LIMIT {
        let mut mat = DMatrix::<f64>::identity(n, n);
        for (i, row) in a.iter().enumerate() {
            for &(j, p) in row {
                mat[(i, j)] -= p;
            }
        }
        if let Some(x) = mat.lu().solve(&DVector::from_column_slice(b)) {
            if x.iter().all(|v| v.is_finite()) {
                return x.iter().copied().collect();
            }
        }
    } else if let Some(x) = sparse_lu(a, b) {
        return x;
    }
    gauss_seidel(a, b)
}

fn sparse_lu(a: &[Vec<(usize, f64)>], b: &[f64]) -> Option<Vec<f64>> {
    use faer::prelude::Solve;
    use faer::sparse::{SparseColMat, Triplet};
    let n = b.len();
    let mut t = Vec::with_capacity(n + a.iter().map(Vec::len).sum::<usize>());
    for (i, row) in a.iter().enumerate() {
        t.push(Triplet::new(i, i, 1.0));
        for &(j, p) in row {
            t.push(Triplet::new(i, j, -p));
        }
    }
    // duplicate entries are summed
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &t).ok()?;
    let lu = mat.sp_lu().ok()?;
    let x = lu.solve(faer::Mat::<f64>::from_fn(n, 1, |i, _| b[i]));
    let x: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn gauss_seidel(a: &[Vec<(usize, f64)>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = b.to_vec();
    for _ in 0..MAX_SWEEPS {
        let mut delta: f64 = 0.0;
        for i in 0..n {
            let mut acc = b[i];
            let mut diag = 0.0;
            for &(j, p) in &a[i] {
                if j == i {
                    diag += p;
                } else {
                    acc += p * x[j];
                }
            }
            let new = if diag < 1.0 { acc / (1.0 - diag) } else { acc };
            let d = (new - x[i]).abs() / new.abs().max(1.0);
            delta = delta.max(d);
            x[i] = new;
        }
        if delta < SOLVE_TOL {
            break;
        }
    }
    x
}

/// Probability of eventually reaching `target` in the chain, from every state.
pub fn chain_reach_probability(rows: &[Vec<(StateId, f64)>], target: &[bool]) -> Vec<f64> {
    let n = rows.len();
    let mut preds: Vec<Vec<StateId>> = vec![Vec::new(); n];
    for (s, row) in rows.iter().enumerate() {
        for &(t, p) in row {
            if p > 0.0 {
                preds[t].push(s);
            }
        }
    }
    let mut can = target.to_vec();
    let mut queue: VecDeque<StateId> = (0..n).filter(|&s| target[s]).collect();
    while let Some(t) = queue.pop_front() {
        for &s in &preds[t] {
            if !can[s] {
                can[s] = true;
                queue.push_back(s);
            }
        }
    }
    let unknown: Vec<StateId> = (0..n).filter(|&s| can[s] && !target[s]).collect();
    let mut local = vec![usize::MAX; n];
    for (i, &s) in unknown.iter().enumerate() {
        local[s] = i;
    }
    let mut a = vec![Vec::new(); unknown.len()];
    let mut b = vec![0.0; unknown.len()];
    for (i, &s) in unknown.iter().enumerate() {
        for &(t, p) in &rows[s] {
            if target[t] {
                b[i] += p;
            } else if local[t] != usize::MAX {
                a[i].push((local[t], p));
            }
        }
    }
    let x = solve_fixed_point(&a, &b);
    let mut v = vec![0.0; n];
    for s in 0..n {
        if target[s] {
            v[s] = 1.0;
        }
    }
    for (i, &s) in unknown.iter().enumerate() {
        v[s] = x[i].clamp(0.0, 1.0);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Choice;

    fn chain(rows: Vec<Vec<(StateId, f64)>>) -> MarkovChain {
        let n = rows.len();
        MarkovChain { rows, initial: vec![(0, 1.0)], cost: vec![1.0; n], duration: vec![1.0; n] }
    }

    #[test]
    fn direct_absorption() {
        let c = chain(vec![vec![(1, 1.0)], vec![(1, 1.0)]]);
        let a = absorbing_distribution(&c, &[1], 0).unwrap();
        assert_eq!(a.mass, vec![(1, 1.0)]);
        assert_eq!(a.bottom, 0.0);
    }

    #[test]
    fn symmetric_split() {
        let c = chain(vec![vec![(1, 0.5), (2, 0.5)], vec![(1, 1.0)], vec![(2, 1.0)]]);
        let a = absorbing_distribution(&c, &[1, 2], 0).unwrap();
        assert!((a.mass_at(1) - 0.5).abs() < 1e-12 && (a.mass_at(2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn trapped_mass_matches_power_iteration() {
        // 0 -> trap loop {1,2} w.p. 0.5, -> sink 3 w.p. 0.5
        let c = chain(vec![
            vec![(1, 0.5), (3, 0.5)],
            vec![(2, 1.0)],
            vec![(1, 1.0)],
            vec![(3, 1.0)],
        ]);
        let a = absorbing_distribution(&c, &[3], 0).unwrap();
        let mut dist = vec![1.0, 0.0, 0.0, 0.0];
        for _ in 0..10_000 {
            let mut next = vec![0.0; 4];
            for (s, row) in c.rows.iter().enumerate() {
                for &(t, p) in row {
                    next[t] += dist[s] * p;
                }
            }
            dist = next;
        }
        assert!((a.mass_at(3) - dist[3]).abs() < 1e-8);
        assert!((a.bottom - (dist[1] + dist[2])).abs() < 1e-8);
    }

    #[test]
    fn non_absorbing_sink_rejected() {
        let c = chain(vec![vec![(1, 1.0)], vec![(0, 1.0)]]);
        assert!(matches!(absorbing_distribution(&c, &[1], 0), Err(Error::NonAbsorbingSink(1))));
    }

    #[test]
    fn induce_matches_hand_product() {
        let m = vec![
            vec![Choice::new(0, 1.0, vec![(1, 0.5), (2, 0.5)]), Choice::new(1, 2.0, vec![(0, 0.2), (2, 0.8)])],
            vec![Choice::new(0, 1.0, vec![(2, 1.0)])],
            vec![Choice::new(0, 1.0, vec![(0, 0.3), (1, 0.7)])],
        ];
        let pi = StationaryPolicy {
            domain: "m".into(),
            rule: vec![vec![(0, 0.4), (1, 0.6)], vec![(0, 1.0)], vec![(0, 1.0)]],
        };
        let c = induce_chain(&m, &pi, 0).unwrap();
        assert_eq!(c.rows[0].len(), 3);
        let p = |t: usize| c.rows[0].iter().find(|e| e.0 == t).unwrap().1;
        assert!((p(0) - 0.12).abs() < 1e-12);
        assert!((p(1) - 0.2).abs() < 1e-12);
        assert!((p(2) - 0.68).abs() < 1e-12);
        assert!((c.cost[0] - 1.6).abs() < 1e-12);
    }

    #[test]
    fn gauss_seidel_agrees_with_dense() {
        // random walk on a line with absorbing ends
        let n = 30;
        let a: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                let mut r = Vec::new();
                if i > 0 {
                    r.push((i - 1, 0.45));
                }
                if i + 1 < n {
                    r.push((i + 1, 0.45));
                }
                r
            })
            .collect();
        let b: Vec<f64> = (0..n).map(|i| if i + 1 == n { 0.45 } else { 0.0 }).collect();
        let dense = solve_fixed_point(&a, &b);
        let gs = gauss_seidel(&a, &b);
        for i in 0..n {
            assert!((dense[i] - gs[i]).abs() < 1e-9, "{} {} {}", i, dense[i], gs[i]);
        }
    }

    #[test]
    fn sparse_lu_agrees_with_dense() {
        let n = 60;
        let a: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| vec![((i + 1) % n, 0.5), ((i * 7 + 3) % n, 0.3), ((i * 7 + 3) % n, 0.1)])
            .collect();
        let b: Vec<f64> = (0..n).map(|i| (i % 5) as f64 * 0.02).collect();
        let dense = solve_fixed_point(&a, &b);
        let sparse = sparse_lu(&a, &b).unwrap();
        for i in 0..n {
            assert!((dense[i] - sparse[i]).abs() < 1e-9, "{} {} {}", i, dense[i], sparse[i]);
        }
    }
}
