use std::collections::VecDeque;

use saferet::automata::template_dra;
use saferet::model::{validate_mdp, LabeledMdp, Mdp};
use saferet::planner::{plan_hierarchical, PlanConfig};
use saferet::reach::reachability_value_iteration;
use saferet::workspace::{corpus, grid_to_mdp, terrain_to_mdp, GridSpec, TerrainSpec};

fn corpus_models() -> Vec<(&'static str, LabeledMdp)> {
    corpus::ALL
        .iter()
        .map(|&(name, text, terrain)| {
            let m = if terrain {
                terrain_to_mdp(&TerrainSpec::parse(text).unwrap()).unwrap()
            } else {
                grid_to_mdp(&GridSpec::parse(text).unwrap()).unwrap()
            };
            (name, m)
        })
        .collect()
}

/// States with a graph path into `target`.
fn graph_can_reach(m: &LabeledMdp, target: &[bool]) -> Vec<bool> {
    let n = m.num_states();
    let mut preds = vec![Vec::new(); n];
    for s in 0..n {
        for c in m.choices(s) {
            for &(t, q) in &c.succ {
                if q > 0.0 {
                    preds[t].push(s);
                }
            }
        }
    }
    let mut seen = target.to_vec();
    let mut queue: VecDeque<usize> = (0..n).filter(|&s| target[s]).collect();
    while let Some(t) = queue.pop_front() {
        for &s in &preds[t] {
            if !seen[s] {
                seen[s] = true;
                queue.push_back(s);
            }
        }
    }
    seen
}

#[test]
fn corpus_models_validate_and_round_trip() {
    for &(name, text, terrain) in corpus::ALL.iter() {
        if terrain {
            let t = TerrainSpec::parse(text).unwrap();
            assert_eq!(TerrainSpec::parse(&t.serialize()).unwrap(), t, "{}", name);
        } else {
            let g = GridSpec::parse(text).unwrap();
            assert_eq!(GridSpec::parse(&g.serialize()).unwrap(), g, "{}", name);
        }
    }
    for (name, m) in corpus_models() {
        let r = validate_mdp(&m);
        assert!(r.is_ok(), "{}: {}", name, r);
        assert!(!m.states_with("bs").is_empty(), "{} has no base station", name);
        let back = LabeledMdp::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m, "{}", name);
    }
}

#[test]
fn hardware_map_has_the_expected_scale() {
    let g = GridSpec::parse(corpus::HARDWARE).unwrap();
    let interior = (g.height() - 2) * (g.width() - 2);
    assert_eq!(interior, 80);
}

#[test]
fn return_values_vanish_exactly_where_base_is_unreachable() {
    let dra_o = template_dra(&"surveil(s1, s2)".parse().unwrap()).unwrap();
    let dra_r = template_dra(&"safe_return(true; bs)".parse().unwrap()).unwrap();
    let t = TerrainSpec::parse(corpus::TERRAIN).unwrap();
    let m = terrain_to_mdp(&t).unwrap();
    let cfg = PlanConfig { chi_r: 0.0, ..Default::default() };
    let plan = plan_hierarchical(&m, &dra_o, &dra_r, &cfg).unwrap();
    let base: Vec<bool> = (0..m.num_states()).map(|s| m.has_label(s, "bs")).collect();
    let reach = graph_can_reach(&m, &base);
    let exact = reachability_value_iteration(&m, &m.states_with("bs"));
    let mut zeros = 0;
    for (s, &r) in reach.iter().enumerate() {
        let v = plan.extended.values[s];
        assert_eq!(v < 1e-6, !r, "state {}: value {} graph {}", s, v, r);
        assert!(v <= exact.get(s) + 1e-6, "state {}: {} above plain reachability {}", s, v, exact.get(s));
        zeros += (!r) as usize;
    }
    assert!(zeros > 0, "terrain map must contain a trap");
}
