//! Independent brute-force checks and random instance generators, shared by
//! the integration and acceptance suites.

use rand::Rng;

use crate::automata::{
    dra_accepts_lasso, for_each_lasso, ltl_eval_lasso, template_dra, Dra, LassoWord, RabinPair, TemplateSpec,
};
use crate::error::Result;
use crate::model::{Choice, LabelSet, LabeledMdp, Mdp, StateId};

fn s(x: &str) -> String {
    x.to_string()
}

/// Every template shape, instantiated over at most three propositions.
pub fn template_catalog() -> Vec<TemplateSpec> {
    use TemplateSpec as T;
    let ret = |prefix: TemplateSpec, stay: &[&str]| T::SafeReturn {
        prefix: Box::new(prefix),
        stay: stay.iter().map(|x| s(x)).collect(),
    };
    vec![
        T::True,
        T::Surveillance(vec![s("a")]),
        T::Surveillance(vec![s("a"), s("b"), s("c")]),
        T::Reach(s("a")),
        T::SeqReach(s("a"), s("b")),
        T::AvoidReach(s("a"), s("b")),
        T::Response(s("a"), s("b")),
        T::UntilGuard(s("a"), s("b")),
        ret(T::True, &["a", "b"]),
        ret(T::Reach(s("a")), &["b"]),
        ret(T::SeqReach(s("a"), s("b")), &["c"]),
        T::And(Box::new(T::Surveillance(vec![s("a"), s("b")])), Box::new(ret(T::True, &["c"]))),
        T::And(Box::new(T::Reach(s("a"))), Box::new(T::Response(s("b"), s("c")))),
        T::And(Box::new(T::SeqReach(s("a"), s("b"))), Box::new(T::AvoidReach(s("c"), s("b")))),
    ]
}

/// Lasso words a template is certified on.
#[derive(Clone, Copy, Debug)]
pub struct LassoBudget {
    pub max_prefix: usize,
    pub max_cycle: usize,
    pub random: usize,
    pub seed: u64,
}

impl Default for LassoBudget {
    fn default() -> Self {
        LassoBudget { max_prefix: 4, max_cycle: 3, random: 10_000, seed: 0 }
    }
}

/// Counts lassos on which the automaton and the formula disagree, with the
/// first disagreement as a witness.
pub fn lasso_mismatches(d: &Dra, f: &crate::automata::LtlFormula, budget: LassoBudget) -> (usize, usize, Option<LassoWord>) {
    use rand::SeedableRng;
    let ap = d.ap.clone();
    let word = |p: &[u32], c: &[u32]| {
        LassoWord::new(p.iter().map(|&l| LabelSet(l as u64)).collect(), c.iter().map(|&l| LabelSet(l as u64)).collect())
    };
    let mut checked = 0;
    let mut bad = 0;
    let mut witness = None;
    let mut test = |w: LassoWord| {
        checked += 1;
        if dra_accepts_lasso(d, &ap, &w) != ltl_eval_lasso(f, &ap, &w) {
            bad += 1;
            witness.get_or_insert(w);
        }
    };
    let nl = d.num_letters() as u32;
    for_each_lasso(nl, budget.max_prefix, budget.max_cycle, |p, c| test(word(p, c)));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(budget.seed);
    for _ in 0..budget.random {
        let p: Vec<u32> = (0..rng.gen_range(0..=8)).map(|_| rng.gen_range(0..nl)).collect();
        let c: Vec<u32> = (0..rng.gen_range(1..=6)).map(|_| rng.gen_range(0..nl)).collect();
        test(word(&p, &c));
    }
    (checked, bad, witness)
}

/// Certifies a template automaton against its formula.
pub fn certify_template(spec: &TemplateSpec, budget: LassoBudget) -> Result<(usize, usize, Option<LassoWord>)> {
    let d = template_dra(spec)?;
    Ok(lasso_mismatches(&d, &spec.formula(), budget))
}

/// Random sparse distribution over `n` states with up to `k` successors.
fn random_row(rng: &mut impl Rng, n: usize, k: usize) -> Vec<(StateId, f64)> {
    let m = rng.gen_range(1..=k.min(n));
    let mut targets: Vec<StateId> = Vec::new();
    while targets.len() < m {
        let t = rng.gen_range(0..n);
        if !targets.contains(&t) {
            targets.push(t);
        }
    }
    let w: Vec<f64> = targets.iter().map(|_| rng.gen_range(1..=4) as f64).collect();
    let total: f64 = w.iter().sum();
    targets.into_iter().zip(w).map(|(t, x)| (t, x / total)).collect()
}

/// Random labeled MDP with `n` states, up to `actions` actions per state and
/// labels over `ap`.
pub fn random_mdp(rng: &mut impl Rng, n: usize, actions: usize, ap: &[&str]) -> LabeledMdp {
    let choices: Vec<Vec<Choice>> = (0..n)
        .map(|_| {
            (0..rng.gen_range(1..=actions))
                .map(|a| Choice::new(a, rng.gen_range(1..=5) as f64, random_row(rng, n, 3)))
                .collect()
        })
        .collect();
    let labels = (0..n).map(|_| LabelSet(rng.gen_range(0..1u64 << ap.len()))).collect();
    let names = (0..actions).map(|a| format!("a{}", a)).collect();
    LabeledMdp::new(ap.iter().map(|x| s(x)).collect(), names, labels, 0, choices).expect("random model is valid")
}

/// Random complete Rabin automaton over `ap`.
pub fn random_dra(rng: &mut impl Rng, ap: &[&str], states: usize, pairs: usize) -> Dra {
    let nl = 1usize << ap.len();
    let delta = (0..states * nl).map(|_| rng.gen_range(0..states)).collect();
    let pairs = (0..pairs)
        .map(|_| {
            let fin: Vec<usize> = (0..states).filter(|_| rng.gen_bool(0.4)).collect();
            let inf: Vec<usize> = (0..states).filter(|_| rng.gen_bool(0.4)).collect();
            RabinPair::new(fin, inf)
        })
        .collect();
    Dra::new(ap.iter().map(|x| s(x)).collect(), states, delta, 0, pairs).expect("random automaton is valid")
}

/// Copy of `m` in which a random `frac` of the states outside `keep` become
/// absorbing. Reachability on random models is almost always 0 or 1; sinks
/// make fractional values common.
pub fn with_sinks<M: Mdp>(m: &M, rng: &mut impl Rng, frac: f64, keep: &[bool]) -> Vec<Vec<Choice>> {
    (0..m.num_states())
        .map(|x| {
            if !keep[x] && rng.gen_bool(frac) {
                vec![Choice::new(0, 1.0, vec![(x, 1.0)])]
            } else {
                m.choices(x).to_vec()
            }
        })
        .collect()
}

/// Union of all accepting end components, by enumerating every state subset.
/// A subset counts if each member keeps a choice staying inside it, those
/// choices connect it strongly, and some pair accepts it.
pub fn brute_force_accepting_union<M: Mdp>(m: &M, pairs: &[RabinPair]) -> Vec<bool> {
    let n = m.num_states();
    assert!(n <= 16, "exhaustive enumeration is limited to 16 states");
    let mut union = vec![false; n];
    for set in 1u32..(1u32 << n) {
        let inside = |t: StateId| set & (1 << t) != 0;
        let members: Vec<StateId> = (0..n).filter(|&x| inside(x)).collect();
        let accepted = pairs.iter().any(|p| members.iter().all(|&x| !p.in_fin(x)) && members.iter().any(|&x| p.in_inf(x)));
        if !accepted {
            continue;
        }
        let kept: Vec<Vec<&Choice>> = members
            .iter()
            .map(|&x| m.choices(x).iter().filter(|c| c.succ.iter().all(|&(t, q)| q <= 0.0 || inside(t))).collect())
            .collect();
        if kept.iter().any(Vec::is_empty) {
            continue;
        }
        // successor masks over the kept choices
        let mut succ = vec![0u32; n];
        for (k, &x) in members.iter().enumerate() {
            for c in &kept[k] {
                for &(t, q) in &c.succ {
                    if q > 0.0 {
                        succ[x] |= 1 << t;
                    }
                }
            }
        }
        let reach = |from: StateId, forward: bool| -> u32 {
            let mut seen = 1u32 << from;
            let mut stack = vec![from];
            while let Some(x) = stack.pop() {
                for &y in &members {
                    let linked = if forward { succ[x] & (1 << y) != 0 } else { succ[y] & (1 << x) != 0 };
                    if linked && seen & (1 << y) == 0 {
                        seen |= 1 << y;
                        stack.push(y);
                    }
                }
            }
            seen
        };
        let root = members[0];
        if reach(root, true) == set && reach(root, false) == set {
            for &x in &members {
                union[x] = true;
            }
        }
    }
    union
}
