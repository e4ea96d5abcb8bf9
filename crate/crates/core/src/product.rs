//! Product of a labeled MDP with a Rabin automaton, and its accepting
//! maximal end components.

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::automata::{Dra, Letter, RabinPair};
use crate::error::Result;
use crate::model::{Choice, LabeledMdp, Mdp, StateId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "ProductData")]
pub struct ProductMdp {
    /// `(model state, automaton state)` for every product state.
    pub states: Vec<(StateId, usize)>,
    pub choices: Vec<Vec<Choice>>,
    pub initial: usize,
    pub pairs: Vec<RabinPair>,
    /// Product states built from a rejecting model state (the trap `⊥`).
    pub rejecting: Vec<bool>,
    pub dra_initial: usize,
    pub dra_states: usize,
    #[serde(skip)]
    index: HashMap<(StateId, usize), usize>,
}

impl Mdp for ProductMdp {
    fn num_states(&self) -> usize {
        self.states.len()
    }
    fn choices(&self, s: StateId) -> &[Choice] {
        &self.choices[s]
    }
}

/// Serialized form; the lookup index is rebuilt on load.
#[derive(Deserialize)]
struct ProductData {
    states: Vec<(StateId, usize)>,
    choices: Vec<Vec<Choice>>,
    initial: usize,
    pairs: Vec<RabinPair>,
    rejecting: Vec<bool>,
    dra_initial: usize,
    dra_states: usize,
}

impl From<ProductData> for ProductMdp {
    fn from(d: ProductData) -> Self {
        let index = d.states.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        ProductMdp {
            states: d.states,
            choices: d.choices,
            initial: d.initial,
            pairs: d.pairs,
            rejecting: d.rejecting,
            dra_initial: d.dra_initial,
            dra_states: d.dra_states,
            index,
        }
    }
}

impl ProductMdp {
    pub fn lookup(&self, x: StateId, q: usize) -> Option<usize> {
        self.index.get(&(x, q)).copied()
    }

    pub fn model_state(&self, s: usize) -> StateId {
        self.states[s].0
    }

    pub fn dra_state(&self, s: usize) -> usize {
        self.states[s].1
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("product serializes")
    }
}

/// Product reachable from `⟨x0, q0⟩`.
pub fn build_product(m: &LabeledMdp, a: &Dra) -> Result<ProductMdp> {
    build_product_from(m, a, &[m.initial], &[])
}

/// Product reachable from every `⟨x, q0⟩` with `x` in `seeds`; the first
/// seed is the initial state. Model states listed in `rejecting` become
/// rejecting product states, excluded from every accepting component.
pub fn build_product_from(m: &LabeledMdp, a: &Dra, seeds: &[StateId], rejecting: &[StateId]) -> Result<ProductMdp> {
    let proj = a.projection(&m.ap)?;
    let letters: Vec<Letter> = m.labels.iter().map(|&l| Dra::letter_of(&proj, l)).collect();
    let mut bad = vec![false; m.num_states()];
    for &x in rejecting {
        bad[x] = true;
    }
    let mut index: HashMap<(StateId, usize), usize> = HashMap::new();
    let mut states: Vec<(StateId, usize)> = Vec::new();
    let mut queue = VecDeque::new();
    for &x in seeds {
        let key = (x, a.initial);
        if let std::collections::hash_map::Entry::Vacant(e) = index.entry(key) {
            e.insert(states.len());
            states.push(key);
            queue.push_back(states.len() - 1);
        }
    }
    let mut choices: Vec<Vec<Choice>> = Vec::new();
    while let Some(s) = queue.pop_front() {
        let (x, q) = states[s];
        let nq = a.step(q, letters[x]);
        let mut row = Vec::with_capacity(m.choices[x].len());
        for c in &m.choices[x] {
            let succ = c
                .succ
                .iter()
                .map(|&(y, p)| {
                    let key = (y, nq);
                    let t = *index.entry(key).or_insert_with(|| {
                        states.push(key);
                        queue.push_back(states.len() - 1);
                        states.len() - 1
                    });
                    (t, p)
                })
                .collect();
            row.push(Choice { action: c.action, cost: c.cost, duration: c.duration, succ });
        }
        if choices.len() <= s {
            choices.resize(s + 1, Vec::new());
        }
        choices[s] = row;
    }
    choices.resize(states.len(), Vec::new());
    let rejecting: Vec<bool> = states.iter().map(|&(x, _)| bad[x]).collect();
    let pairs = a
        .pairs
        .iter()
        .map(|p| {
            let fin = (0..states.len()).filter(|&s| p.in_fin(states[s].1) || rejecting[s]);
            let inf = (0..states.len()).filter(|&s| p.in_inf(states[s].1) && !rejecting[s]);
            RabinPair::new(fin, inf)
        })
        .collect();
    Ok(ProductMdp {
        states,
        choices,
        initial: 0,
        pairs,
        rejecting,
        dra_initial: a.initial,
        dra_states: a.num_states,
        index,
    })
}

/// Strongly connected components of a digraph given by adjacency lists.
pub fn tarjan_scc(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    let mut counter = 0;
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut i)) = call.last_mut() {
            if *i < adj[v].len() {
                let w = adj[v][*i];
                *i += 1;
                if index[w] == usize::MAX {
                    index[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(u, _)) = call.last() {
                    low[u] = low[u].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    out.push(comp);
                }
            }
        }
    }
    out
}

/// End component: states plus, per state, the indices of the retained choices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndComponent {
    pub states: Vec<StateId>,
    pub actions: Vec<Vec<usize>>,
}

impl EndComponent {
    pub fn choice_indices(&self, s: StateId) -> Option<&[usize]> {
        self.states.binary_search(&s).ok().map(|i| self.actions[i].as_slice())
    }
}

/// Maximal end components inside `candidate`, by iterated SCC pruning.
pub fn maximal_end_components<M: Mdp>(
    m: &M,
    candidate: &[bool],
    allowed: &dyn Fn(StateId, &Choice) -> bool,
) -> Vec<EndComponent> {
    let n = m.num_states();
    let mut alive = candidate.to_vec();
    let mut keep: Vec<Vec<usize>> = (0..n)
        .map(|s| {
            if !alive[s] {
                return Vec::new();
            }
            (0..m.choices(s).len()).filter(|&k| allowed(s, &m.choices(s)[k])).collect()
        })
        .collect();
    let mut comp_of = vec![usize::MAX; n];
    loop {
        // drop choices leaving the alive set, and dead states, to a fixpoint
        loop {
            let mut changed = false;
            for s in 0..n {
                if !alive[s] {
                    continue;
                }
                let before = keep[s].len();
                keep[s].retain(|&k| m.choices(s)[k].succ.iter().all(|&(t, p)| p == 0.0 || alive[t]));
                if keep[s].is_empty() {
                    alive[s] = false;
                    changed = true;
                } else if keep[s].len() != before {
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let nodes: Vec<StateId> = (0..n).filter(|&s| alive[s]).collect();
        let local: HashMap<StateId, usize> = nodes.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let adj: Vec<Vec<usize>> = nodes
            .iter()
            .map(|&s| {
                let mut v: Vec<usize> = keep[s]
                    .iter()
                    .flat_map(|&k| m.choices(s)[k].succ.iter().filter(|e| e.1 > 0.0).map(|e| local[&e.0]))
                    .collect();
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect();
        let sccs = tarjan_scc(&adj);
        for (c, comp) in sccs.iter().enumerate() {
            for &i in comp {
                comp_of[nodes[i]] = c;
            }
        }
        let mut changed = false;
        for &s in &nodes {
            let before = keep[s].len();
            let cs = comp_of[s];
            keep[s].retain(|&k| m.choices(s)[k].succ.iter().all(|&(t, p)| p == 0.0 || comp_of[t] == cs));
            if keep[s].len() != before {
                changed = true;
            }
            if keep[s].is_empty() {
                alive[s] = false;
                changed = true;
            }
        }
        if !changed {
            let mut out: Vec<EndComponent> = sccs
                .into_iter()
                .map(|comp| {
                    let states: Vec<StateId> = comp.iter().map(|&i| nodes[i]).collect();
                    let actions = states.iter().map(|&s| keep[s].clone()).collect();
                    EndComponent { states, actions }
                })
                .collect();
            out.sort_by_key(|c| c.states[0]);
            return out;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmecComponent {
    pub ec: EndComponent,
    /// Accepting pair witnessing acceptance.
    pub pair: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Amec {
    pub components: Vec<AmecComponent>,
    /// Component owning each product state (the first one, if several overlap).
    pub member: Vec<Option<usize>>,
}

impl Amec {
    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn union(&self) -> Vec<bool> {
        self.member.iter().map(Option::is_some).collect()
    }

    pub fn contains(&self, s: StateId) -> bool {
        self.member.get(s).is_some_and(Option::is_some)
    }

    pub fn num_states(&self) -> usize {
        self.member.iter().filter(|m| m.is_some()).count()
    }
}

/// Accepting maximal end components over the allowed choices of `m`.
pub fn accepting_end_components<M: Mdp>(
    m: &M,
    pairs: &[RabinPair],
    allowed: &dyn Fn(StateId, &Choice) -> bool,
) -> Amec {
    let n = m.num_states();
    let mut seen: BTreeSet<Vec<StateId>> = BTreeSet::new();
    let mut components = Vec::new();
    for (i, pair) in pairs.iter().enumerate() {
        if pair.inf.is_empty() {
            continue;
        }
        let mut cand = vec![true; n];
        for &s in &pair.fin {
            cand[s] = false;
        }
        for ec in maximal_end_components(m, &cand, allowed) {
            if ec.states.iter().any(|&s| pair.in_inf(s)) && seen.insert(ec.states.clone()) {
                components.push(AmecComponent { ec, pair: i });
            }
        }
    }
    let mut member = vec![None; n];
    for (c, comp) in components.iter().enumerate() {
        for &s in &comp.ec.states {
            member[s].get_or_insert(c);
        }
    }
    Amec { components, member }
}

pub fn compute_amecs(p: &ProductMdp) -> Amec {
    accepting_end_components(p, &p.pairs, &|_, _| true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automata::{template_dra, TemplateSpec};
    use crate::model::LabelSet;

    fn line_world() -> LabeledMdp {
        // 0 -- 1 -- 2, label "a" on 2, deterministic left/right
        let ap = vec!["a".to_string()];
        let go = |to: usize| vec![(to, 1.0)];
        let choices = vec![
            vec![Choice::new(0, 1.0, go(0)), Choice::new(1, 1.0, go(1))],
            vec![Choice::new(0, 1.0, go(0)), Choice::new(1, 1.0, go(2))],
            vec![Choice::new(0, 1.0, go(1)), Choice::new(1, 1.0, go(2))],
        ];
        LabeledMdp::new(ap, vec!["l".into(), "r".into()], vec![LabelSet(0), LabelSet(0), LabelSet(1)], 0, choices)
            .unwrap()
    }

    #[test]
    fn product_follows_current_label() {
        let m = line_world();
        let d = template_dra(&TemplateSpec::Reach("a".into())).unwrap();
        let p = build_product(&m, &d).unwrap();
        assert!(p.states.len() <= 6);
        let s2 = p.lookup(2, 0).unwrap();
        let next = p.choices[s2][1].succ[0].0;
        assert_eq!(p.states[next], (2, 1));
        for s in 0..p.num_states() {
            for c in &p.choices[s] {
                let total: f64 = c.succ.iter().map(|e| e.1).sum();
                assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn surveillance_amec_spans_the_line() {
        let m = line_world();
        let d = template_dra(&TemplateSpec::Surveillance(vec!["a".into()])).unwrap();
        let p = build_product(&m, &d).unwrap();
        let a = compute_amecs(&p);
        assert_eq!(a.components.len(), 1);
        assert_eq!(a.num_states(), p.num_states());
    }

    #[test]
    fn alphabet_mismatch_is_reported() {
        let m = line_world();
        let d = template_dra(&TemplateSpec::Reach("zz".into())).unwrap();
        assert!(build_product(&m, &d).is_err());
    }

    #[test]
    fn rejecting_states_never_accept() {
        let m = line_world();
        let d = Dra::accept_all(vec!["a".into()]);
        let p = build_product_from(&m, &d, &[0], &[2]).unwrap();
        let a = compute_amecs(&p);
        assert!(a.components.iter().all(|c| !c.ec.states.iter().any(|&s| p.rejecting[s])));
        assert!(!a.is_empty());
    }

    #[test]
    fn json_round_trip_rebuilds_index() {
        let m = line_world();
        let d = template_dra(&TemplateSpec::Reach("a".into())).unwrap();
        let p = build_product(&m, &d).unwrap();
        let q: ProductMdp = serde_json::from_str(&p.to_json()).unwrap();
        assert_eq!(q, p);
        assert_eq!(q.lookup(2, 1), p.lookup(2, 1));
    }

    #[test]
    fn tarjan_on_small_graph() {
        let adj = vec![vec![1], vec![2], vec![0, 3], vec![]];
        let mut s = tarjan_scc(&adj);
        s.sort();
        assert_eq!(s, vec![vec![0, 1, 2], vec![3]]);
    }
}
