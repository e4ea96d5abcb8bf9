//! Flat and hierarchical planning pipelines, plan artifacts and the
//! two-level extended model.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::abstraction::{
    build_safe_semi_mdp, build_task_semi_mdp, extend_return_value, ExtendedReturnValue, SemiMdp,
};
use crate::automata::{serialize_hoa, Dra};
use crate::error::{Error, Result};
use crate::model::{Choice, LabeledMdp, Mdp, StateId};
use crate::policy::{StationaryPolicy, ValueFunction};
use crate::product::{accepting_end_components, build_product_from, compute_amecs, Amec, ProductMdp};
use crate::reach::max_reach_values;
use crate::synthesis::{
    prefix_lp_mps, solve_constrained_prefix, solve_max_reachability, solve_suffix_average_cost, statewise_allowed, PrefixSolution,
    SafetyMode, SuffixSolution,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub chi_o: f64,
    pub chi_r: f64,
    pub safety_mode: SafetyMode,
    pub epsilon_suffix: f64,
    pub rng_seed: u64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig { chi_o: 0.8, chi_r: 0.9, safety_mode: SafetyMode::Cumulative, epsilon_suffix: 0.05, rng_seed: 0 }
    }
}

impl PlanConfig {
    pub fn check(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.chi_o) || !unit(self.chi_r) {
            return Err(Error::InvalidConfig("bounds must lie in [0, 1]".into()));
        }
        if !(self.epsilon_suffix > 0.0 && self.epsilon_suffix <= 0.5) {
            return Err(Error::InvalidConfig("epsilon_suffix must lie in (0, 0.5]".into()));
        }
        Ok(())
    }
}

/// Prefix and per-component suffix policies of the outbound phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outbound {
    pub prefix: PrefixSolution,
    pub suffix: Vec<SuffixSolution>,
    /// Entry mass per accepting component.
    pub entry_by_component: Vec<f64>,
    /// Entry-weighted long-run cost per primitive step.
    pub plan_cost: f64,
}

impl Outbound {
    pub fn suffix_policy(&self, component: usize) -> Option<&StationaryPolicy> {
        self.suffix.iter().find(|s| s.component == component).map(|s| &s.policy)
    }
}

/// Solves prefix and suffix and diagnoses which bound fails when no plan exists.
#[allow(clippy::too_many_arguments)]
pub fn co_optimize_prefix_suffix<M: Mdp>(
    p: &M,
    initial: StateId,
    amec: &Amec,
    unrestricted: &Amec,
    v_ret: &[f64],
    chi_o: f64,
    chi_r: f64,
    mode: SafetyMode,
    eps: f64,
) -> Result<Outbound> {
    let achievable = || {
        let target = unrestricted.union();
        if !target.iter().any(|&t| t) {
            return 0.0;
        }
        max_reach_values(p, &target, &|_, _| true)[initial]
    };
    let diagnose = |reason: String| -> Error {
        let best = achievable();
        if best + 1e-9 < chi_o || unrestricted.is_empty() {
            Error::TaskInfeasible { required: chi_o, achievable: best }
        } else {
            Error::SafetyUnsatisfiable(reason)
        }
    };
    if amec.is_empty() {
        return Err(diagnose(format!("no accepting component keeps return values above {}", chi_r)));
    }
    let s_xi = amec.union();
    let prefix = match solve_constrained_prefix(p, initial, &s_xi, v_ret, chi_o, chi_r, mode, "outbound prefix") {
        Ok(pre) => pre,
        Err(Error::Infeasible(msg)) => return Err(diagnose(msg)),
        Err(e) => return Err(e),
    };
    let mut entry_by_component = vec![0.0; amec.components.len()];
    for &(s, w) in &prefix.entry {
        if let Some(c) = amec.member[s] {
            entry_by_component[c] += w;
        }
    }
    let mut suffix = Vec::with_capacity(amec.components.len());
    for c in 0..amec.components.len() {
        suffix.push(solve_suffix_average_cost(p, amec, c, eps, &format!("outbound suffix {}", c))?);
    }
    let mass: f64 = entry_by_component.iter().sum();
    let plan_cost = if mass > 0.0 {
        entry_by_component.iter().zip(&suffix).map(|(w, s)| w * s.blended_gain).sum::<f64>() / mass
    } else {
        suffix.iter().map(|s| s.blended_gain).fold(f64::INFINITY, f64::min)
    };
    Ok(Outbound { prefix, suffix, entry_by_component, plan_cost })
}

fn hex(d: impl AsRef<[u8]>) -> String {
    d.as_ref().iter().map(|b| format!("{:02x}", b)).collect()
}

/// Content hash of a model, checked by the executor.
pub fn model_hash(m: &LabeledMdp) -> String {
    hex(Sha256::digest(m.to_json()))
}

/// Content hash of the planning inputs.
pub fn fingerprint(m: &LabeledMdp, dra_o: &Dra, dra_r: &Dra, cfg: &PlanConfig, method: &str) -> String {
    let mut h = Sha256::new();
    h.update(m.to_json());
    h.update(serialize_hoa(dra_o));
    h.update(serialize_hoa(dra_r));
    h.update(serde_json::to_string(cfg).expect("config serializes"));
    h.update(method);
    hex(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselinePlan {
    pub config: PlanConfig,
    pub fingerprint: String,
    pub model_hash: String,
    pub task_dra: Dra,
    pub return_dra: Dra,
    pub return_product: ProductMdp,
    pub return_amec: Amec,
    pub return_policy: StationaryPolicy,
    pub return_value: ValueFunction,
    pub task_product: ProductMdp,
    pub task_amec: Amec,
    /// Return value of every task product state.
    pub v_ret: Vec<f64>,
    pub outbound: Outbound,
}

impl BaselinePlan {
    /// Return value of low-level state `x` at request time.
    pub fn return_value_at(&self, x: StateId) -> f64 {
        self.return_product.lookup(x, self.return_product.dra_initial).map(|s| self.return_value.get(s)).unwrap_or(0.0)
    }
}

fn return_side(m: &LabeledMdp, dra_r: &Dra) -> Result<(ProductMdp, Amec, StationaryPolicy, ValueFunction)> {
    let seeds: Vec<StateId> = std::iter::once(m.initial).chain(0..m.num_states()).collect();
    let p_r = build_product_from(m, dra_r, &seeds, &[])?;
    let amec_r = compute_amecs(&p_r);
    let (pi_r, v_r) = if amec_r.is_empty() {
        (StationaryPolicy::empty("return", p_r.num_states()), ValueFunction::new(vec![0.0; p_r.num_states()]))
    } else {
        solve_max_reachability(&p_r, &amec_r.union(), "return")?
    };
    Ok((p_r, amec_r, pi_r, v_r))
}

/// Flat pipeline: return product and policy, then the constrained outbound policy.
pub fn plan_baseline(m: &LabeledMdp, dra_o: &Dra, dra_r: &Dra, cfg: &PlanConfig) -> Result<BaselinePlan> {
    cfg.check()?;
    let (p_r, amec_r, pi_r, v_r) = return_side(m, dra_r)?;
    let v_at = |x: StateId| p_r.lookup(x, dra_r.initial).map(|s| v_r.get(s)).unwrap_or(0.0);
    if cfg.chi_r > 0.0 && (0..m.num_states()).all(|x| v_at(x) <= 0.0) {
        return Err(Error::SafetyUnsatisfiable("no state can return to the safe region".into()));
    }
    let p_o = build_product_from(m, dra_o, &[m.initial], &[])?;
    let v_ret: Vec<f64> = p_o.states.iter().map(|&(x, _)| v_at(x)).collect();
    let unrestricted = compute_amecs(&p_o);
    let amec_o = match cfg.safety_mode {
        SafetyMode::Cumulative => unrestricted.clone(),
        SafetyMode::Statewise => {
            let ok = statewise_allowed(&v_ret, cfg.chi_r);
            accepting_end_components(&p_o, &p_o.pairs, &ok)
        }
    };
    let outbound = co_optimize_prefix_suffix(
        &p_o,
        p_o.initial,
        &amec_o,
        &unrestricted,
        &v_ret,
        cfg.chi_o,
        cfg.chi_r,
        cfg.safety_mode,
        cfg.epsilon_suffix,
    )?;
    Ok(BaselinePlan {
        config: cfg.clone(),
        fingerprint: fingerprint(m, dra_o, dra_r, cfg, "baseline"),
        model_hash: model_hash(m),
        task_dra: dra_o.clone(),
        return_dra: dra_r.clone(),
        return_product: p_r,
        return_amec: amec_r,
        return_policy: pi_r,
        return_value: v_r,
        task_product: p_o,
        task_amec: amec_o,
        v_ret,
        outbound,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalPlan {
    pub config: PlanConfig,
    pub fingerprint: String,
    pub model_hash: String,
    pub task_dra: Dra,
    pub return_dra: Dra,
    pub safe_semi: SemiMdp,
    pub safe_product: ProductMdp,
    pub safe_amec: Amec,
    pub return_policy: StationaryPolicy,
    pub return_value: ValueFunction,
    pub extended: ExtendedReturnValue,
    pub task_semi: SemiMdp,
    pub task_product: ProductMdp,
    pub task_amec: Amec,
    pub outbound: Outbound,
}

/// Hierarchical pipeline over feature-state abstractions.
pub fn plan_hierarchical(m: &LabeledMdp, dra_o: &Dra, dra_r: &Dra, cfg: &PlanConfig) -> Result<HierarchicalPlan> {
    cfg.check()?;
    let safe_semi = match build_safe_semi_mdp(m, dra_r) {
        Ok(s) => s,
        Err(Error::EmptyFeatureSet) => {
            return Err(Error::SafetyUnsatisfiable("the return task has no feature states".into()))
        }
        Err(e) => return Err(e),
    };
    let seeds: Vec<StateId> = (0..safe_semi.features.len()).collect();
    let safe_product = build_product_from(&safe_semi.model, dra_r, &seeds, &[safe_semi.bottom])?;
    let safe_amec = compute_amecs(&safe_product);
    if safe_amec.is_empty() && cfg.chi_r > 0.0 {
        return Err(Error::SafetyUnsatisfiable("the return task has no accepting component".into()));
    }
    let (return_policy, return_value) = if safe_amec.is_empty() {
        let n = safe_product.num_states();
        (StationaryPolicy::empty("return", n), ValueFunction::new(vec![0.0; n]))
    } else {
        solve_max_reachability(&safe_product, &safe_amec.union(), "return")?
    };
    let v_semi: Vec<f64> = seeds
        .iter()
        .map(|&i| safe_product.lookup(i, dra_r.initial).map(|s| return_value.get(s)).unwrap_or(0.0))
        .collect();
    let extended = extend_return_value(m, &safe_semi, &v_semi);
    if cfg.safety_mode == SafetyMode::Statewise && extended.values[m.initial] < cfg.chi_r - 1e-9 {
        return Err(Error::SafetyUnsatisfiable(format!(
            "return value {:.6} at the initial state is below {}",
            extended.values[m.initial], cfg.chi_r
        )));
    }
    let task_semi = build_task_semi_mdp(m, dra_o, &extended, cfg.chi_r, cfg.safety_mode)?;
    let task_product = build_product_from(&task_semi.model, dra_o, &[task_semi.model.initial], &[task_semi.bottom])?;
    let task_amec = compute_amecs(&task_product);
    let v_ret: Vec<f64> = task_product
        .states
        .iter()
        .map(|&(i, _)| task_semi.features.get(i).map(|&x| extended.values[x]).unwrap_or(0.0))
        .collect();
    let outbound = match co_optimize_prefix_suffix(
        &task_product,
        task_product.initial,
        &task_amec,
        &task_amec,
        &v_ret,
        cfg.chi_o,
        0.0,
        SafetyMode::Cumulative,
        cfg.epsilon_suffix,
    ) {
        Err(Error::TaskInfeasible { required, achievable }) if cfg.chi_r > 0.0 => {
            // distinguish a task bound that fails only because of safety
            let free = build_task_semi_mdp(m, dra_o, &extended, 0.0, cfg.safety_mode)?;
            let fp = build_product_from(&free.model, dra_o, &[free.model.initial], &[free.bottom])?;
            let fa = compute_amecs(&fp);
            let best = if fa.is_empty() { 0.0 } else { max_reach_values(&fp, &fa.union(), &|_, _| true)[fp.initial] };
            if best + 1e-9 >= cfg.chi_o {
                return Err(Error::SafetyUnsatisfiable(format!(
                    "safe options reach the task with probability {:.6} < {}",
                    achievable, required
                )));
            }
            return Err(Error::TaskInfeasible { required, achievable: best });
        }
        other => other?,
    };
    Ok(HierarchicalPlan {
        config: cfg.clone(),
        fingerprint: fingerprint(m, dra_o, dra_r, cfg, "hierarchical"),
        model_hash: model_hash(m),
        task_dra: dra_o.clone(),
        return_dra: dra_r.clone(),
        safe_semi,
        safe_product,
        safe_amec,
        return_policy,
        return_value,
        extended,
        task_semi,
        task_product,
        task_amec,
        outbound,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
#[allow(clippy::large_enum_variant)]
pub enum Plan {
    Baseline(BaselinePlan),
    Hierarchical(HierarchicalPlan),
}

impl Plan {
    pub fn fingerprint(&self) -> &str {
        match self {
            Plan::Baseline(p) => &p.fingerprint,
            Plan::Hierarchical(p) => &p.fingerprint,
        }
    }

    pub fn model_hash(&self) -> &str {
        match self {
            Plan::Baseline(p) => &p.model_hash,
            Plan::Hierarchical(p) => &p.model_hash,
        }
    }

    pub fn config(&self) -> &PlanConfig {
        match self {
            Plan::Baseline(p) => &p.config,
            Plan::Hierarchical(p) => &p.config,
        }
    }

    pub fn outbound(&self) -> &Outbound {
        match self {
            Plan::Baseline(p) => &p.outbound,
            Plan::Hierarchical(p) => &p.outbound,
        }
    }

    pub fn method(&self) -> &'static str {
        match self {
            Plan::Baseline(_) => "baseline",
            Plan::Hierarchical(_) => "hierarchical",
        }
    }

    /// Number of task product states.
    pub fn task_product_size(&self) -> usize {
        match self {
            Plan::Baseline(p) => p.task_product.num_states(),
            Plan::Hierarchical(p) => p.task_product.num_states(),
        }
    }

    /// Return value at every low-level state, at request time.
    pub fn low_level_return_values(&self, n: usize) -> Vec<f64> {
        match self {
            Plan::Baseline(p) => (0..n).map(|x| p.return_value_at(x)).collect(),
            Plan::Hierarchical(p) => p.extended.values.clone(),
        }
    }

    /// The outbound prefix LP in MPS form.
    pub fn prefix_lp_mps(&self) -> String {
        match self {
            Plan::Baseline(p) => {
                let c = &p.config;
                let s_xi = p.task_amec.union();
                prefix_lp_mps(&p.task_product, p.task_product.initial, &s_xi, &p.v_ret, c.chi_o, c.chi_r, c.safety_mode)
            }
            Plan::Hierarchical(p) => {
                let v_ret: Vec<f64> = p
                    .task_product
                    .states
                    .iter()
                    .map(|&(i, _)| p.task_semi.features.get(i).map(|&x| p.extended.values[x]).unwrap_or(0.0))
                    .collect();
                let s_xi = p.task_amec.union();
                let chi_o = p.config.chi_o;
                prefix_lp_mps(&p.task_product, p.task_product.initial, &s_xi, &v_ret, chi_o, 0.0, SafetyMode::Cumulative)
            }
        }
    }

    /// Task product as JSON.
    pub fn task_product_json(&self) -> String {
        match self {
            Plan::Baseline(p) => p.task_product.to_json(),
            Plan::Hierarchical(p) => p.task_product.to_json(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Two-level model: on level 0 every transition also jumps to level 1 with
/// probability one half; level 1 copies the original dynamics.
pub fn build_extended_model(m: &LabeledMdp) -> LabeledMdp {
    let n = m.num_states();
    let mut choices = Vec::with_capacity(2 * n);
    for x in 0..n {
        choices.push(
            m.choices[x]
                .iter()
                .map(|c| Choice {
                    succ: c.succ.iter().flat_map(|&(y, p)| [(y, 0.5 * p), (y + n, 0.5 * p)]).collect(),
                    ..c.clone()
                })
                .collect(),
        );
    }
    for x in 0..n {
        choices.push(
            m.choices[x]
                .iter()
                .map(|c| Choice { succ: c.succ.iter().map(|&(y, p)| (y + n, p)).collect(), ..c.clone() })
                .collect(),
        );
    }
    let labels = m.labels.iter().chain(m.labels.iter()).copied().collect();
    let coords = m.coords.as_ref().map(|c| c.iter().chain(c.iter()).copied().collect());
    LabeledMdp { ap: m.ap.clone(), actions: m.actions.clone(), labels, initial: m.initial, choices, coords }
}
