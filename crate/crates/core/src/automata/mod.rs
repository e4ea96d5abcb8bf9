//! Deterministic Rabin automata, the LTL lasso oracle, HOA import/export
//! and hand-built template automata.

mod hoa;
mod ltl;
mod templates;

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LabelSet;

pub use hoa::{parse_hoa, serialize_hoa};
pub use ltl::{ltl_eval_lasso, parse_ltl, CompiledLtl, LtlFormula};
pub use templates::{template_dra, TemplateSpec};

/// Letters are label-sets encoded as bitmasks over the automaton's AP.
pub type Letter = u32;

/// Largest alphabet an automaton may use (2^16 letters per state).
pub const MAX_DRA_AP: usize = 16;

/// Accepting pair: visit `fin` finitely often and `inf` infinitely often.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RabinPair {
    pub fin: Vec<usize>,
    pub inf: Vec<usize>,
}

impl RabinPair {
    pub fn new(fin: impl IntoIterator<Item = usize>, inf: impl IntoIterator<Item = usize>) -> Self {
        let fin: BTreeSet<usize> = fin.into_iter().collect();
        let inf: BTreeSet<usize> = inf.into_iter().collect();
        RabinPair { fin: fin.into_iter().collect(), inf: inf.into_iter().collect() }
    }

    pub fn in_fin(&self, q: usize) -> bool {
        self.fin.binary_search(&q).is_ok()
    }

    pub fn in_inf(&self, q: usize) -> bool {
        self.inf.binary_search(&q).is_ok()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dra {
    pub ap: Vec<String>,
    pub num_states: usize,
    /// `delta[q * 2^|ap| + letter]`.
    pub delta: Vec<usize>,
    pub initial: usize,
    pub pairs: Vec<RabinPair>,
}

/// Ultimately periodic word `prefix . cycle^omega` over some AP list.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LassoWord {
    pub prefix: Vec<LabelSet>,
    pub cycle: Vec<LabelSet>,
}

impl LassoWord {
    pub fn new(prefix: Vec<LabelSet>, cycle: Vec<LabelSet>) -> Self {
        assert!(!cycle.is_empty(), "lasso cycle must be nonempty");
        LassoWord { prefix, cycle }
    }

    /// Same word with the first cycle letter moved into the prefix.
    pub fn unrolled(&self) -> Self {
        let mut prefix = self.prefix.clone();
        prefix.push(self.cycle[0]);
        let mut cycle = self.cycle[1..].to_vec();
        cycle.push(self.cycle[0]);
        LassoWord { prefix, cycle }
    }

    pub fn len(&self) -> usize {
        self.prefix.len() + self.cycle.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl Dra {
    pub fn new(ap: Vec<String>, num_states: usize, delta: Vec<usize>, initial: usize, pairs: Vec<RabinPair>) -> Result<Self> {
        let d = Dra { ap, num_states, delta, initial, pairs };
        d.check()?;
        Ok(d)
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ParseError { line: 0, msg: m });
        if self.ap.len() > MAX_DRA_AP {
            return Err(Error::AlphabetMismatch(format!("{} propositions exceed {}", self.ap.len(), MAX_DRA_AP)));
        }
        if self.num_states == 0 || self.initial >= self.num_states {
            return bad("initial state out of range".into());
        }
        if self.delta.len() != self.num_states * self.num_letters() {
            return bad("transition table has wrong size".into());
        }
        if self.delta.iter().any(|&q| q >= self.num_states) {
            return bad("transition to unknown state".into());
        }
        if self.pairs.is_empty() {
            return bad("no accepting pairs".into());
        }
        for p in &self.pairs {
            if p.fin.iter().chain(&p.inf).any(|&q| q >= self.num_states) {
                return bad("accepting pair mentions unknown state".into());
            }
        }
        Ok(())
    }

    pub fn num_letters(&self) -> usize {
        1usize << self.ap.len()
    }

    pub fn step(&self, q: usize, letter: Letter) -> usize {
        self.delta[q * self.num_letters() + letter as usize]
    }

    /// Automaton that accepts every word.
    pub fn accept_all(ap: Vec<String>) -> Self {
        let n = 1usize << ap.len();
        Dra { ap, num_states: 1, delta: vec![0; n], initial: 0, pairs: vec![RabinPair::new([], [0])] }
    }

    pub fn ap_index(&self, name: &str) -> Option<usize> {
        self.ap.iter().position(|a| a == name)
    }

    /// Maps every proposition of the automaton to its index in `other_ap`.
    pub fn projection(&self, other_ap: &[String]) -> Result<Vec<usize>> {
        self.ap
            .iter()
            .map(|a| {
                other_ap.iter().position(|b| b == a).ok_or_else(|| {
                    Error::AlphabetMismatch(format!("proposition '{}' is not declared by the model", a))
                })
            })
            .collect()
    }

    /// Letter seen by the automaton for a label over `other_ap`.
    pub fn letter_of(proj: &[usize], label: LabelSet) -> Letter {
        let mut l = 0;
        for (i, &j) in proj.iter().enumerate() {
            if label.contains(j) {
                l |= 1 << i;
            }
        }
        l
    }

    /// Same language over a larger alphabet; extra propositions are ignored.
    pub fn lift(&self, ap: &[String]) -> Result<Dra> {
        if self.ap.as_slice() == ap {
            return Ok(self.clone());
        }
        if ap.len() > MAX_DRA_AP {
            return Err(Error::AlphabetMismatch(format!("{} propositions exceed {}", ap.len(), MAX_DRA_AP)));
        }
        let proj = self.projection(ap)?;
        let n = 1usize << ap.len();
        let mut delta = vec![0; self.num_states * n];
        for q in 0..self.num_states {
            for l in 0..n {
                let own = Self::letter_of(&proj, LabelSet(l as u64));
                delta[q * n + l] = self.step(q, own);
            }
        }
        Ok(Dra { ap: ap.to_vec(), num_states: self.num_states, delta, initial: self.initial, pairs: self.pairs.clone() })
    }

    /// Acceptance of a lasso whose letters are already over this automaton's AP.
    pub fn accepts_letters(&self, prefix: &[Letter], cycle: &[Letter]) -> bool {
        let mut q = self.initial;
        for &l in prefix {
            q = self.step(q, l);
        }
        let c = cycle.len();
        // first time each (state, cycle index) pair was seen
        let mut seen = vec![usize::MAX; self.num_states * c];
        let mut run = Vec::new();
        let mut i = 0;
        loop {
            let key = q * c + i;
            if seen[key] != usize::MAX {
                let start = seen[key];
                let visited = &run[start..];
                return self.pairs.iter().any(|p| {
                    visited.iter().all(|&s| !p.in_fin(s)) && visited.iter().any(|&s| p.in_inf(s))
                });
            }
            seen[key] = run.len();
            run.push(q);
            q = self.step(q, cycle[i]);
            i = (i + 1) % c;
        }
    }

    /// Number of non-rejecting-sink edges, counted per (state, letter).
    pub fn num_edges(&self) -> usize {
        self.delta.len()
    }
}

/// Acceptance of `w`, whose label-sets range over `ap`.
pub fn dra_accepts_lasso(d: &Dra, ap: &[String], w: &LassoWord) -> bool {
    let proj: Vec<Option<usize>> = d.ap.iter().map(|a| ap.iter().position(|b| b == a)).collect();
    let conv = |l: &LabelSet| -> Letter {
        let mut out = 0;
        for (i, j) in proj.iter().enumerate() {
            if j.is_some_and(|j| l.contains(j)) {
                out |= 1 << i;
            }
        }
        out
    };
    let prefix: Vec<Letter> = w.prefix.iter().map(conv).collect();
    let cycle: Vec<Letter> = w.cycle.iter().map(conv).collect();
    d.accepts_letters(&prefix, &cycle)
}

/// Union of two proposition lists, keeping first-seen order.
pub fn merge_ap(a: &[String], b: &[String]) -> Vec<String> {
    let mut out = a.to_vec();
    for x in b {
        if !out.contains(x) {
            out.push(x.clone());
        }
    }
    out
}

/// Largest number of pair combinations handled by [`dra_intersection`].
pub const MAX_PAIR_PRODUCT: usize = 40;

/// Rabin automaton for `L(a) ∩ L(b)`.
///
/// Alphabets are merged first. Each combination of a pair `i` of `a` with a
/// pair `j` of `b` becomes one pair of the result; the conjunction of the
/// two infinitely-often conditions is tracked by a three-valued round
/// counter per combination. The result therefore has at most
/// `Na * Nb` pairs and `|Qa| * |Qb| * 3^(Na * Nb)` states, of which only
/// the reachable ones are built.
pub fn dra_intersection(a: &Dra, b: &Dra) -> Result<Dra> {
    let ap = merge_ap(&a.ap, &b.ap);
    let a = a.lift(&ap)?;
    let b = b.lift(&ap)?;
    let combos: Vec<(usize, usize)> =
        (0..a.pairs.len()).flat_map(|i| (0..b.pairs.len()).map(move |j| (i, j))).collect();
    if combos.len() > MAX_PAIR_PRODUCT {
        return Err(Error::UnsupportedTemplate(format!(
            "intersection would need {} accepting pairs (limit {})",
            combos.len(),
            MAX_PAIR_PRODUCT
        )));
    }
    let nl = 1usize << ap.len();
    type Key = (usize, usize, u64);
    let flag = |f: u64, k: usize| -> u64 { (f / 3u64.pow(k as u32)) % 3 };
    let update = |f: u64, qa: usize, qb: usize| -> u64 {
        let mut out = 0u64;
        for (k, &(i, j)) in combos.iter().enumerate() {
            let w = match flag(f, k) {
                2 => 0,
                x => x,
            };
            let ia = a.pairs[i].in_inf(qa);
            let ib = b.pairs[j].in_inf(qb);
            let nf = match (w, ia, ib) {
                (0, true, true) => 2,
                (0, true, false) => 1,
                (0, false, _) => 0,
                (_, _, true) => 2,
                _ => 1,
            };
            out += nf * 3u64.pow(k as u32);
        }
        out
    };
    let start: Key = (a.initial, b.initial, 0);
    let mut index: HashMap<Key, usize> = HashMap::new();
    let mut states: Vec<Key> = vec![start];
    index.insert(start, 0);
    let mut delta = Vec::new();
    let mut queue = VecDeque::from([0usize]);
    while let Some(s) = queue.pop_front() {
        let (qa, qb, f) = states[s];
        let base = s * nl;
        if delta.len() < base + nl {
            delta.resize(base + nl, 0);
        }
        for l in 0..nl {
            let na = a.step(qa, l as Letter);
            let nb = b.step(qb, l as Letter);
            let key = (na, nb, update(f, na, nb));
            let t = *index.entry(key).or_insert_with(|| {
                states.push(key);
                queue.push_back(states.len() - 1);
                states.len() - 1
            });
            delta[base + l] = t;
        }
    }
    delta.resize(states.len() * nl, 0);
    let pairs = combos
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let fin = states
                .iter()
                .enumerate()
                .filter(|(_, &(qa, qb, _))| a.pairs[i].in_fin(qa) || b.pairs[j].in_fin(qb))
                .map(|(s, _)| s);
            let inf = states.iter().enumerate().filter(|(_, &(_, _, f))| flag(f, k) == 2).map(|(s, _)| s);
            RabinPair::new(fin, inf)
        })
        .collect();
    Dra::new(ap, states.len(), delta, 0, pairs)
}

/// All letters (label-sets over the automaton AP) driving a non-self transition.
pub fn effective_features(d: &Dra) -> Vec<Letter> {
    let nl = d.num_letters();
    (0..nl as Letter)
        .filter(|&l| (0..d.num_states).any(|q| d.step(q, l) != q))
        .collect()
}

/// Enumerates every lasso with `prefix.len() <= max_prefix` and
/// `1 <= cycle.len() <= max_cycle` over `num_letters` letters.
pub fn for_each_lasso(num_letters: u32, max_prefix: usize, max_cycle: usize, mut f: impl FnMut(&[Letter], &[Letter])) {
    fn words(num_letters: u32, len: usize, f: &mut dyn FnMut(&[Letter])) {
        let mut w = vec![0 as Letter; len];
        loop {
            f(&w);
            let mut i = 0;
            loop {
                if i == len {
                    return;
                }
                w[i] += 1;
                if w[i] < num_letters {
                    break;
                }
                w[i] = 0;
                i += 1;
            }
        }
    }
    for p in 0..=max_prefix {
        words(num_letters, p, &mut |pre: &[Letter]| {
            for c in 1..=max_cycle {
                words(num_letters, c, &mut |cyc: &[Letter]| f(pre, cyc));
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ap(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn w(prefix: &[u64], cycle: &[u64]) -> LassoWord {
        LassoWord::new(prefix.iter().map(|&b| LabelSet(b)).collect(), cycle.iter().map(|&b| LabelSet(b)).collect())
    }

    #[test]
    fn accept_all_and_reject_all() {
        let all = Dra::accept_all(ap(&["a"]));
        let none = Dra { pairs: vec![RabinPair::new([], [])], ..all.clone() };
        for word in [w(&[], &[0]), w(&[1, 0], &[1, 1, 0])] {
            assert!(dra_accepts_lasso(&all, &ap(&["a"]), &word));
            assert!(!dra_accepts_lasso(&none, &ap(&["a"]), &word));
        }
    }

    #[test]
    fn eventually_template_hand_trace() {
        let d = template_dra(&TemplateSpec::Reach("a".into())).unwrap();
        assert!(dra_accepts_lasso(&d, &ap(&["a"]), &w(&[1], &[0])));
        assert!(!dra_accepts_lasso(&d, &ap(&["a"]), &w(&[0, 0], &[0])));
    }

    #[test]
    fn lasso_count_matches_formula() {
        let mut count = 0usize;
        for_each_lasso(2, 2, 2, |_, _| count += 1);
        assert_eq!(count, (1 + 2 + 4) * (2 + 4));
    }

    #[test]
    fn features_of_accept_all_are_empty() {
        assert!(effective_features(&Dra::accept_all(ap(&["a", "b"]))).is_empty());
    }

    #[test]
    fn intersection_with_accept_all_keeps_language() {
        let b = template_dra(&TemplateSpec::Surveillance(vec!["a".into(), "b".into()])).unwrap();
        let i = dra_intersection(&Dra::accept_all(ap(&["a", "b"])), &b).unwrap();
        for_each_lasso(4, 3, 3, |p, c| assert_eq!(i.accepts_letters(p, c), b.accepts_letters(p, c)));
    }

    #[test]
    fn lift_ignores_new_propositions() {
        let d = template_dra(&TemplateSpec::Reach("a".into())).unwrap();
        let l = d.lift(&ap(&["z", "a"])).unwrap();
        assert!(l.accepts_letters(&[0b01, 0b10], &[0]));
        assert!(!l.accepts_letters(&[0b01], &[0b01]));
        assert!(matches!(d.lift(&ap(&["z"])), Err(Error::AlphabetMismatch(_))));
    }
}
