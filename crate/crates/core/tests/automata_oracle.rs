use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use saferet::automata::{
    dra_accepts_lasso, dra_intersection, parse_hoa, serialize_hoa, template_dra, LassoWord, LtlFormula,
};
use saferet::model::LabelSet;
use saferet::oracle::{certify_template, lasso_mismatches, random_dra, template_catalog, LassoBudget};

#[test]
fn every_template_matches_the_formula() {
    let results: Vec<_> = template_catalog()
        .into_par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let budget = LassoBudget { seed: i as u64, ..Default::default() };
            (spec.to_string(), certify_template(&spec, budget).unwrap())
        })
        .collect();
    for (name, (checked, bad, witness)) in results {
        assert!(checked > 10_000, "{}: only {} lassos", name, checked);
        assert_eq!(bad, 0, "{}: {} mismatches, e.g. {:?}", name, bad, witness);
    }
}

#[test]
fn hoa_round_trip_keeps_the_language() {
    for spec in template_catalog() {
        let d = template_dra(&spec).unwrap();
        let back = parse_hoa(&serialize_hoa(&d)).unwrap();
        let budget = LassoBudget { random: 2_000, ..Default::default() };
        let (_, bad, w) = lasso_mismatches(&back, &spec.formula(), budget);
        assert_eq!(bad, 0, "{}: {:?}", spec, w);
    }
}

#[test]
fn intersection_is_conjunction_on_random_automata() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let a = random_dra(&mut rng, &["a", "b"], 3, 2);
        let b = random_dra(&mut rng, &["b", "c"], 2, 1);
        let both = dra_intersection(&a, &b).unwrap();
        let nl = both.num_letters() as u64;
        let ap = &both.ap;
        for _ in 0..300 {
            let p: Vec<LabelSet> = (0..rng.gen_range(0..5)).map(|_| LabelSet(rng.gen_range(0..nl))).collect();
            let c: Vec<LabelSet> = (0..rng.gen_range(1..4)).map(|_| LabelSet(rng.gen_range(0..nl))).collect();
            let w = LassoWord::new(p, c);
            let expect = dra_accepts_lasso(&a, ap, &w) && dra_accepts_lasso(&b, ap, &w);
            assert_eq!(dra_accepts_lasso(&both, ap, &w), expect);
        }
    }
}

#[test]
fn oracle_detects_a_wrong_automaton() {
    // the reach automaton does not recognise "always a"
    let d = template_dra(&"reach(a)".parse().unwrap()).unwrap();
    let f = LtlFormula::always(LtlFormula::prop("a"));
    let (_, bad, w) = lasso_mismatches(&d, &f, LassoBudget { random: 0, ..Default::default() });
    assert!(bad > 0 && w.is_some());
}
