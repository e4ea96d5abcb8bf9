use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saferet::model::Mdp;
use saferet::oracle::{random_dra, random_mdp, with_sinks};
use saferet::product::{build_product, compute_amecs};
use saferet::reach::{all_allowed, max_reach_values};
use saferet::synthesis::{evaluate_policy_reach, max_reach_lp, solve_max_reachability};

const TOL: f64 = 1e-6;

#[test]
fn reachability_lp_agrees_with_value_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut done = 0;
    let mut interior = 0;
    while done < 100 {
        let n = rng.gen_range(5..=25);
        let m = random_mdp(&mut rng, n, 3, &["a", "b"]);
        let d = random_dra(&mut rng, &["a", "b"], 2, 2);
        let p = build_product(&m, &d).unwrap();
        if p.num_states() > 50 {
            continue;
        }
        let amec = compute_amecs(&p);
        let target = if amec.is_empty() {
            (0..p.num_states()).map(|_| rng.gen_bool(0.1)).collect()
        } else {
            amec.union()
        };
        if !target.contains(&true) {
            continue;
        }
        let initial = p.initial;
        let p = with_sinks(&p, &mut rng, 0.15, &target);
        let vi = max_reach_values(&p, &target, &all_allowed);
        let mut probes = vec![initial];
        probes.extend((0..4).map(|_| rng.gen_range(0..p.num_states())));
        for s in probes {
            let lp = max_reach_lp(&p, &target, s).unwrap();
            assert!((lp - vi[s]).abs() < TOL, "product {} state {}: lp {} vi {}", done, s, lp, vi[s]);
            interior += (vi[s] > 1e-6 && vi[s] < 1.0 - 1e-6) as usize;
        }
        // the extracted policy attains the value
        let (pi, v) = solve_max_reachability(&p, &target, "test").unwrap();
        let achieved = evaluate_policy_reach(&p, &pi, &target).unwrap();
        for s in 0..p.num_states() {
            assert!((achieved.get(s) - v.get(s)).abs() < TOL, "policy value {} vs {}", achieved.get(s), v.get(s));
        }
        done += 1;
    }
    assert!(interior > 20, "only {} probes with a fractional value", interior);
}
