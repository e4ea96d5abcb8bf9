use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saferet::automata::RabinPair;
use saferet::model::Mdp;
use saferet::oracle::{brute_force_accepting_union, random_dra, random_mdp};
use saferet::product::{build_product, compute_amecs, ProductMdp};

/// Pairs with rejecting states folded into every `fin` set.
fn effective_pairs(p: &ProductMdp) -> Vec<RabinPair> {
    let bad: Vec<usize> = (0..p.num_states()).filter(|&s| p.rejecting[s]).collect();
    p.pairs
        .iter()
        .map(|pr| RabinPair::new(pr.fin.iter().copied().chain(bad.iter().copied()), pr.inf.iter().copied()))
        .collect()
}

fn small_products(count: usize, seed: u64) -> Vec<ProductMdp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let n = rng.gen_range(1..=4);
        let m = random_mdp(&mut rng, n, 3, &["a", "b"]);
        let q = rng.gen_range(1..=2);
        let pairs = rng.gen_range(1..=2);
        let d = random_dra(&mut rng, &["a", "b"], q, pairs);
        let p = build_product(&m, &d).unwrap();
        if p.num_states() <= 8 {
            out.push(p);
        }
    }
    out
}

#[test]
fn amec_union_equals_exhaustive_enumeration() {
    let mut nonempty = 0;
    for (i, p) in small_products(200, 5).iter().enumerate() {
        let fast = compute_amecs(p).union();
        let slow = brute_force_accepting_union(p, &effective_pairs(p));
        assert_eq!(fast, slow, "product {}: {:?}", i, p);
        nonempty += slow.iter().any(|&b| b) as usize;
    }
    // the sample must exercise both outcomes
    assert!(nonempty > 20 && nonempty < 190, "{} nonempty", nonempty);
}

#[test]
fn components_are_closed_connected_and_accepting() {
    for p in small_products(100, 9) {
        let amec = compute_amecs(&p);
        for comp in &amec.components {
            let inside = |t: usize| comp.ec.states.binary_search(&t).is_ok();
            let pair = &p.pairs[comp.pair];
            assert!(comp.ec.states.iter().all(|&s| !pair.in_fin(s) && !p.rejecting[s]));
            assert!(comp.ec.states.iter().any(|&s| pair.in_inf(s)));
            for (k, &s) in comp.ec.states.iter().enumerate() {
                assert!(!comp.ec.actions[k].is_empty());
                for &ci in &comp.ec.actions[k] {
                    assert!(p.choices(s)[ci].succ.iter().all(|&(t, _)| inside(t)));
                }
            }
        }
    }
}
