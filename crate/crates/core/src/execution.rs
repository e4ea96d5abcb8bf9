//! Monte-Carlo execution of plans: outbound task, stochastic return
//! requests, and the return phase.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::automata::Dra;
use crate::error::{Error, Result};
use crate::model::{ActionId, LabelSet, LabeledMdp, Mdp, RunTrace, StateId, TraceStep};
use crate::planner::{model_hash, BaselinePlan, HierarchicalPlan, Plan};
use crate::policy::StationaryPolicy;

/// Law of the time at which the return request arrives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RequestLaw {
    Never,
    /// `P(T = t) = (1 - rate)^t rate`.
    Geometric { rate: f64 },
    Fixed { time: usize },
    /// Uniform over `lo..=hi`.
    Uniform { lo: usize, hi: usize },
}

impl RequestLaw {
    pub fn check(&self) -> Result<()> {
        match *self {
            RequestLaw::Geometric { rate } if !(rate > 0.0 && rate <= 1.0) => {
                Err(Error::InvalidConfig(format!("request rate {} outside (0, 1]", rate)))
            }
            RequestLaw::Uniform { lo, hi } if lo > hi => {
                Err(Error::InvalidConfig(format!("empty request window {}..={}", lo, hi)))
            }
            _ => Ok(()),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Option<usize> {
        match *self {
            RequestLaw::Never => None,
            RequestLaw::Geometric { rate } => {
                if rate >= 1.0 {
                    return Some(0);
                }
                let u: f64 = 1.0 - rng.gen::<f64>();
                let t = (u.ln() / (1.0 - rate).ln()).floor();
                Some(if t.is_finite() && t < usize::MAX as f64 { t as usize } else { usize::MAX })
            }
            RequestLaw::Fixed { time } => Some(time),
            RequestLaw::Uniform { lo, hi } => Some(rng.gen_range(lo..=hi)),
        }
    }
}

impl fmt::Display for RequestLaw {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match *self {
            RequestLaw::Never => write!(f, "none"),
            RequestLaw::Geometric { rate } => write!(f, "geometric:{}", rate),
            RequestLaw::Fixed { time } => write!(f, "fixed:{}", time),
            RequestLaw::Uniform { lo, hi } => write!(f, "uniform:{},{}", lo, hi),
        }
    }
}

impl FromStr for RequestLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("bad request law '{}'", s));
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        let law = match kind.trim() {
            "none" | "never" => RequestLaw::Never,
            "geometric" => RequestLaw::Geometric { rate: arg.trim().parse().map_err(|_| bad())? },
            "fixed" => RequestLaw::Fixed { time: arg.trim().parse().map_err(|_| bad())? },
            "uniform" => {
                let (lo, hi) = arg.split_once(',').ok_or_else(bad)?;
                RequestLaw::Uniform {
                    lo: lo.trim().parse().map_err(|_| bad())?,
                    hi: hi.trim().parse().map_err(|_| bad())?,
                }
            }
            _ => return Err(bad()),
        };
        law.check()?;
        Ok(law)
    }
}

/// Removes proposition `prop` from the labels the automata read once it has
/// been seen `after_visits` times in a run. Used to push runs off plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelMask {
    pub prop: String,
    pub after_visits: usize,
}

impl FromStr for LabelMask {
    type Err = Error;

    /// `prop@k`.
    fn from_str(s: &str) -> Result<Self> {
        let (prop, k) = s.split_once('@').ok_or_else(|| Error::InvalidConfig(format!("bad label mask '{}'", s)))?;
        let after_visits = k.trim().parse().map_err(|_| Error::InvalidConfig(format!("bad label mask '{}'", s)))?;
        Ok(LabelMask { prop: prop.trim().to_string(), after_visits })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub runs: usize,
    pub horizon: usize,
    pub seed: u64,
    pub request: RequestLaw,
    /// Trailing fraction of the outbound phase used for the suffix cost.
    pub suffix_window: f64,
    pub masks: Vec<LabelMask>,
    /// Number of leading runs whose traces are kept.
    pub keep_traces: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            runs: 1000,
            horizon: 500,
            seed: 0,
            request: RequestLaw::Never,
            suffix_window: 0.5,
            masks: Vec::new(),
            keep_traces: 0,
        }
    }
}

impl SimConfig {
    pub fn check(&self) -> Result<()> {
        if self.runs == 0 || self.horizon == 0 {
            return Err(Error::InvalidConfig("runs and horizon must be positive".into()));
        }
        if !(self.suffix_window > 0.0 && self.suffix_window <= 1.0) {
            return Err(Error::InvalidConfig("suffix window must lie in (0, 1]".into()));
        }
        self.request.check()
    }
}

/// Result of one simulated run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    /// Entered an accepting component before any request.
    pub satisfied: bool,
    pub requested: bool,
    /// Completed the return phase.
    pub returned: bool,
    /// Reached a state with no way back, or a state without a rule.
    pub trapped: bool,
    /// Took at least one action not prescribed by the plan.
    pub off_plan: bool,
    pub total_cost: f64,
    /// Cost accumulated before entering the accepting component.
    pub prefix_cost: Option<f64>,
    /// Mean cost per step over the trailing window of the outbound phase.
    pub suffix_cost: Option<f64>,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub method: String,
    pub runs: usize,
    pub horizon: usize,
    pub request: String,
    pub sat_rate: f64,
    pub requests: usize,
    /// Fraction of requested runs that completed the return.
    pub safe_rate: Option<f64>,
    pub trapped_rate: f64,
    pub off_plan_rate: f64,
    pub mean_cost: f64,
    pub std_cost: f64,
    pub mean_suffix_cost: Option<f64>,
    pub std_suffix_cost: Option<f64>,
    pub suffix_runs: usize,
    pub mean_prefix_cost: Option<f64>,
    #[serde(skip)]
    pub outcomes: Vec<RunOutcome>,
    #[serde(skip)]
    pub traces: Vec<RunTrace>,
}

fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Some((mean, var.sqrt()))
}

impl SimulationReport {
    fn aggregate(method: &str, cfg: &SimConfig, outcomes: Vec<RunOutcome>, traces: Vec<RunTrace>) -> Self {
        let n = outcomes.len() as f64;
        let rate = |f: fn(&RunOutcome) -> bool| outcomes.iter().filter(|o| f(o)).count() as f64 / n;
        let requests = outcomes.iter().filter(|o| o.requested).count();
        let safe_rate = (requests > 0)
            .then(|| outcomes.iter().filter(|o| o.requested && o.returned).count() as f64 / requests as f64);
        let costs: Vec<f64> = outcomes.iter().map(|o| o.total_cost).collect();
        let (mean_cost, std_cost) = mean_std(&costs).unwrap_or((0.0, 0.0));
        let suffix: Vec<f64> = outcomes.iter().filter_map(|o| o.suffix_cost).collect();
        let prefix: Vec<f64> = outcomes.iter().filter_map(|o| o.prefix_cost).collect();
        let ms = mean_std(&suffix);
        SimulationReport {
            method: method.into(),
            runs: outcomes.len(),
            horizon: cfg.horizon,
            request: cfg.request.to_string(),
            sat_rate: rate(|o| o.satisfied),
            requests,
            safe_rate,
            trapped_rate: rate(|o| o.trapped),
            off_plan_rate: rate(|o| o.off_plan),
            mean_cost,
            std_cost,
            mean_suffix_cost: ms.map(|m| m.0),
            std_suffix_cost: ms.map(|m| m.1),
            suffix_runs: suffix.len(),
            mean_prefix_cost: mean_std(&prefix).map(|m| m.0),
            outcomes,
            traces,
        }
    }

    /// Standard error of the satisfaction rate.
    pub fn sat_stderr(&self) -> f64 {
        (self.sat_rate * (1.0 - self.sat_rate) / self.runs as f64).sqrt()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// All kept traces, one block per run, prefixed by a run column.
    pub fn traces_csv(&self) -> String {
        let mut out = format!("run,{}\n", RunTrace::CSV_HEADER);
        for (r, tr) in self.traces.iter().enumerate() {
            for line in tr.to_csv().lines().skip(1) {
                out.push_str(&format!("{},{}\n", r, line));
            }
        }
        out
    }
}

impl fmt::Display for SimulationReport {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        let opt = |v: Option<f64>| v.map(|v| format!("{:.4}", v)).unwrap_or_else(|| "-".into());
        writeln!(f, "method        {}", self.method)?;
        writeln!(f, "runs          {} (horizon {}, requests {})", self.runs, self.horizon, self.request)?;
        writeln!(f, "sat_rate      {:.4} +- {:.4}", self.sat_rate, self.sat_stderr())?;
        writeln!(f, "safe_rate     {} over {} requests", opt(self.safe_rate), self.requests)?;
        writeln!(f, "trapped_rate  {:.4}", self.trapped_rate)?;
        writeln!(f, "off_plan_rate {:.4}", self.off_plan_rate)?;
        writeln!(f, "cost          {:.4} +- {:.4}", self.mean_cost, self.std_cost)?;
        writeln!(f, "suffix_cost   {} over {} runs", opt(self.mean_suffix_cost), self.suffix_runs)?;
        write!(f, "prefix_cost   {}", opt(self.mean_prefix_cost))
    }
}

/// Tracks the low-level state, cost and trace of one run.
struct Runner<'a> {
    m: &'a LabeledMdp,
    rng: ChaCha8Rng,
    masks: Vec<(usize, usize, usize)>,
    x: StateId,
    t: usize,
    horizon: usize,
    request_at: Option<usize>,
    cost: f64,
    outbound_costs: Vec<f64>,
    trace: Option<RunTrace>,
    out: RunOutcome,
}

/// Why an inner loop stopped.
#[derive(Clone, Copy, PartialEq, Debug)]
enum Stop {
    Request,
    Horizon,
    Trapped,
}

impl<'a> Runner<'a> {
    fn new(m: &'a LabeledMdp, cfg: &SimConfig, run: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(run as u64);
        let request_at = cfg.request.sample(&mut rng);
        let masks = cfg.masks.iter().filter_map(|k| m.ap_index(&k.prop).map(|i| (i, k.after_visits, 0))).collect();
        Runner {
            m,
            rng,
            masks,
            x: m.initial,
            t: 0,
            horizon: cfg.horizon,
            request_at,
            cost: 0.0,
            outbound_costs: Vec::new(),
            trace: (run < cfg.keep_traces).then(RunTrace::default),
            out: RunOutcome::default(),
        }
    }

    /// Label read by the automata at the current state; updates mask counters.
    fn read_label(&mut self) -> LabelSet {
        let mut l = self.m.labels[self.x];
        for (i, after, seen) in self.masks.iter_mut() {
            if l.contains(*i) {
                *seen += 1;
                if *seen > *after {
                    l.remove(*i);
                }
            }
        }
        l
    }

    fn outbound_stop(&self) -> Option<Stop> {
        if self.request_at.is_some_and(|r| self.t >= r) {
            Some(Stop::Request)
        } else if self.t >= self.horizon {
            Some(Stop::Horizon)
        } else {
            None
        }
    }

    fn step(&mut self, a: ActionId, q: usize, mode: &str) {
        let c = self.m.choice(self.x, a).expect("policy action is enabled");
        let u: f64 = self.rng.gen();
        let mut acc = 0.0;
        let mut next = c.succ.last().map(|e| e.0).unwrap_or(self.x);
        for &(y, p) in &c.succ {
            acc += p;
            if u < acc {
                next = y;
                break;
            }
        }
        if let Some(tr) = self.trace.as_mut() {
            tr.steps.push(TraceStep {
                t: self.t,
                x: self.x,
                q,
                action: self.m.actions[a].clone(),
                label: self.m.labels[self.x].display(&self.m.ap),
                cost: c.cost,
                mode: mode.into(),
            });
        }
        if mode != "return" && mode != "approach" {
            self.outbound_costs.push(c.cost);
        }
        self.cost += c.cost;
        self.t += 1;
        self.x = next;
    }

    fn sample(&mut self, pi: &StationaryPolicy, s: StateId) -> Option<ActionId> {
        let u: f64 = self.rng.gen();
        pi.sample(s, u)
    }

    /// Action maximizing the expected value of the successor; ties go to the
    /// lowest index.
    fn fallback_action(&self, v: &[f64]) -> ActionId {
        let mut best = (f64::NEG_INFINITY, 0);
        for c in self.m.choices(self.x) {
            let e: f64 = c.succ.iter().map(|&(y, p)| p * v[y]).sum();
            if e > best.0 + 1e-12 {
                best = (e, c.action);
            }
        }
        best.1
    }

    fn enter_suffix(&mut self) {
        if !self.out.satisfied {
            self.out.satisfied = true;
            self.out.prefix_cost = Some(self.cost);
        }
    }

    fn finish(mut self, window: f64) -> (RunOutcome, Option<RunTrace>) {
        self.out.steps = self.t;
        if self.out.trapped {
            self.out.total_cost = self.m.max_cost() * self.horizon as f64;
        } else {
            self.out.total_cost = self.cost;
            if self.out.satisfied && !self.out.requested && !self.outbound_costs.is_empty() {
                let n = self.outbound_costs.len();
                let k = ((n as f64 * window).ceil() as usize).clamp(1, n);
                self.out.suffix_cost = Some(self.outbound_costs[n - k..].iter().sum::<f64>() / k as f64);
            }
        }
        (self.out, self.trace)
    }
}

/// Letter projection of a model label for an automaton.
struct Reader {
    proj: Vec<usize>,
}

impl Reader {
    fn new(d: &Dra, m: &LabeledMdp) -> Result<Self> {
        Ok(Reader { proj: d.projection(&m.ap)? })
    }

    fn next(&self, d: &Dra, q: usize, l: LabelSet) -> usize {
        d.step(q, Dra::letter_of(&self.proj, l))
    }
}

fn has_return_region(v: &[f64]) -> bool {
    v.iter().any(|&x| x > 0.0)
}

struct BaselineExec<'a> {
    m: &'a LabeledMdp,
    plan: &'a BaselinePlan,
    read_o: Reader,
    read_r: Reader,
    v_low: Vec<f64>,
    guard: bool,
}

impl<'a> BaselineExec<'a> {
    fn new(m: &'a LabeledMdp, plan: &'a BaselinePlan) -> Result<Self> {
        let v_low: Vec<f64> = (0..m.num_states()).map(|x| plan.return_value_at(x)).collect();
        Ok(BaselineExec {
            m,
            plan,
            read_o: Reader::new(&plan.task_dra, m)?,
            read_r: Reader::new(&plan.return_dra, m)?,
            guard: has_return_region(&v_low),
            v_low,
        })
    }

    fn run(&self, cfg: &SimConfig, run: usize) -> (RunOutcome, Option<RunTrace>) {
        let mut r = Runner::new(self.m, cfg, run);
        match self.outbound(&mut r) {
            Stop::Request => {
                r.out.requested = true;
                self.ret(&mut r);
            }
            Stop::Trapped => r.out.trapped = true,
            Stop::Horizon => {}
        }
        r.finish(cfg.suffix_window)
    }

    fn outbound(&self, r: &mut Runner) -> Stop {
        let p = &self.plan.task_product;
        let ob = &self.plan.outbound;
        let d = &self.plan.task_dra;
        let mut q = d.initial;
        let mut s = p.lookup(r.x, q);
        let mut comp: Option<usize> = None;
        loop {
            if let Some(stop) = r.outbound_stop() {
                return stop;
            }
            if let (None, Some(si)) = (comp, s) {
                if let Some(c) = self.plan.task_amec.member[si] {
                    comp = Some(c);
                    r.enter_suffix();
                }
            }
            let pi = match comp {
                None => Some(&ob.prefix.policy),
                Some(c) => ob.suffix_policy(c),
            };
            let (a, mode) = match (s, pi) {
                (Some(si), Some(pi)) => match r.sample(pi, si) {
                    Some(a) => (a, if comp.is_some() { "suffix" } else { "prefix" }),
                    None => (r.fallback_action(&self.v_low), "offplan"),
                },
                _ => (r.fallback_action(&self.v_low), "offplan"),
            };
            if mode == "offplan" {
                r.out.off_plan = true;
            }
            let l = r.read_label();
            let q_next = self.read_o.next(d, q, l);
            r.step(a, q, mode);
            q = q_next;
            s = p.lookup(r.x, q);
            if self.guard && self.v_low[r.x] <= 0.0 {
                return Stop::Trapped;
            }
        }
    }

    fn ret(&self, r: &mut Runner) {
        let p = &self.plan.return_product;
        let d = &self.plan.return_dra;
        let mut q = d.initial;
        let mut s = p.lookup(r.x, q);
        loop {
            let Some(si) = s else {
                r.out.trapped = true;
                return;
            };
            if self.plan.return_amec.member[si].is_some() {
                r.out.returned = true;
                return;
            }
            if r.t >= r.horizon {
                return;
            }
            let Some(a) = r.sample(&self.plan.return_policy, si) else {
                r.out.trapped = true;
                return;
            };
            let l = r.read_label();
            let q_next = self.read_r.next(d, q, l);
            r.step(a, q, "return");
            q = q_next;
            s = p.lookup(r.x, q);
            if s.is_some_and(|si| self.plan.return_value.get(si) <= 0.0) {
                r.out.trapped = true;
                return;
            }
        }
    }
}

struct HierExec<'a> {
    m: &'a LabeledMdp,
    plan: &'a HierarchicalPlan,
    read_o: Reader,
    read_r: Reader,
    guard: bool,
}

impl<'a> HierExec<'a> {
    fn new(m: &'a LabeledMdp, plan: &'a HierarchicalPlan) -> Result<Self> {
        Ok(HierExec {
            m,
            plan,
            read_o: Reader::new(&plan.task_dra, m)?,
            read_r: Reader::new(&plan.return_dra, m)?,
            guard: has_return_region(&plan.extended.values),
        })
    }

    fn run(&self, cfg: &SimConfig, run: usize) -> (RunOutcome, Option<RunTrace>) {
        let mut r = Runner::new(self.m, cfg, run);
        match self.outbound(&mut r) {
            Stop::Request => {
                r.out.requested = true;
                self.ret(&mut r);
            }
            Stop::Trapped => r.out.trapped = true,
            Stop::Horizon => {}
        }
        r.finish(cfg.suffix_window)
    }

    fn trapped_at(&self, x: StateId) -> bool {
        self.guard && self.plan.extended.values[x] <= 0.0
    }

    fn outbound(&self, r: &mut Runner) -> Stop {
        let semi = &self.plan.task_semi;
        let p = &self.plan.task_product;
        let ob = &self.plan.outbound;
        let d = &self.plan.task_dra;
        let mut q = d.initial;
        let mut comp: Option<usize> = None;
        loop {
            if let Some(stop) = r.outbound_stop() {
                return stop;
            }
            // r.x is a feature state here, or we are drifting off plan
            let i = semi.semi_state(r.x);
            let s = i.and_then(|i| p.lookup(i, q));
            if let (None, Some(si)) = (comp, s) {
                if let Some(c) = self.plan.task_amec.member[si] {
                    comp = Some(c);
                    r.enter_suffix();
                }
            }
            let pi = match comp {
                None => Some(&ob.prefix.policy),
                Some(c) => ob.suffix_policy(c),
            };
            let opt = match (i, s, pi) {
                (Some(i), Some(si), Some(pi)) => match r.sample(pi, si) {
                    Some(a) => match semi.option_for(i, a) {
                        Some(o) => Some(o),
                        None => return Stop::Trapped,
                    },
                    None => None,
                },
                _ => None,
            };
            let l = r.read_label();
            let q_next = if i.is_some() { self.read_o.next(d, q, l) } else { q };
            let Some(opt) = opt else {
                // off plan: one safest step, then look again
                r.out.off_plan = true;
                let a = r.fallback_action(&self.plan.extended.values);
                r.step(a, q, "offplan");
                q = q_next;
                if self.trapped_at(r.x) {
                    return Stop::Trapped;
                }
                continue;
            };
            let mode = if comp.is_some() { "suffix" } else { "prefix" };
            let source = opt.source;
            loop {
                if let Some(stop) = r.outbound_stop() {
                    return stop;
                }
                let Some(a) = r.sample(&opt.rule, r.x) else { return Stop::Trapped };
                r.step(a, q, mode);
                if self.trapped_at(r.x) {
                    return Stop::Trapped;
                }
                if r.x != source && semi.semi_state(r.x).is_some() {
                    break;
                }
            }
            q = q_next;
        }
    }

    fn ret(&self, r: &mut Runner) {
        let semi = &self.plan.safe_semi;
        let p = &self.plan.safe_product;
        let d = &self.plan.return_dra;
        while semi.semi_state(r.x).is_none() {
            if r.t >= r.horizon {
                return;
            }
            let Some(a) = r.sample(&self.plan.extended.approach, r.x) else {
                r.out.trapped = true;
                return;
            };
            r.step(a, d.initial, "approach");
        }
        let mut q = d.initial;
        loop {
            let j = semi.semi_state(r.x).expect("options end at feature states");
            let Some(si) = p.lookup(j, q) else {
                r.out.trapped = true;
                return;
            };
            if self.plan.safe_amec.member[si].is_some() {
                r.out.returned = true;
                return;
            }
            if r.t >= r.horizon {
                return;
            }
            let Some(opt) = r.sample(&self.plan.return_policy, si).and_then(|a| semi.option_for(j, a)) else {
                r.out.trapped = true;
                return;
            };
            let l = r.read_label();
            let q_next = self.read_r.next(d, q, l);
            let source = opt.source;
            loop {
                if r.t >= r.horizon {
                    return;
                }
                let Some(a) = r.sample(&opt.rule, r.x) else {
                    r.out.trapped = true;
                    return;
                };
                r.step(a, q, "return");
                if r.x != source && semi.semi_state(r.x).is_some() {
                    break;
                }
            }
            q = q_next;
        }
    }
}

fn collect(
    method: &str,
    cfg: &SimConfig,
    run: impl Fn(usize) -> (RunOutcome, Option<RunTrace>) + Sync + Send,
) -> SimulationReport {
    let results: Vec<(RunOutcome, Option<RunTrace>)> = (0..cfg.runs).into_par_iter().map(run).collect();
    let mut outcomes = Vec::with_capacity(results.len());
    let mut traces = Vec::new();
    for (o, t) in results {
        outcomes.push(o);
        traces.extend(t);
    }
    SimulationReport::aggregate(method, cfg, outcomes, traces)
}

pub fn execute_baseline(m: &LabeledMdp, plan: &BaselinePlan, cfg: &SimConfig) -> Result<SimulationReport> {
    cfg.check()?;
    if plan.model_hash != model_hash(m) {
        return Err(Error::PlanModelMismatch);
    }
    let ex = BaselineExec::new(m, plan)?;
    Ok(collect("baseline", cfg, |run| ex.run(cfg, run)))
}

pub fn execute_hierarchical(m: &LabeledMdp, plan: &HierarchicalPlan, cfg: &SimConfig) -> Result<SimulationReport> {
    cfg.check()?;
    if plan.model_hash != model_hash(m) {
        return Err(Error::PlanModelMismatch);
    }
    let ex = HierExec::new(m, plan)?;
    Ok(collect("hierarchical", cfg, |run| ex.run(cfg, run)))
}

pub fn simulate(m: &LabeledMdp, plan: &Plan, cfg: &SimConfig) -> Result<SimulationReport> {
    match plan {
        Plan::Baseline(p) => execute_baseline(m, p, cfg),
        Plan::Hierarchical(p) => execute_hierarchical(m, p, cfg),
    }
}

/// Runs option `option` of the task semi-MDP from its source, switches to the
/// return phase at a uniformly drawn interior step, and counts completed
/// returns. Returns `(returned, trials)`.
pub fn option_interrupt_trials(
    m: &LabeledMdp,
    plan: &HierarchicalPlan,
    option: usize,
    trials: usize,
    horizon: usize,
    seed: u64,
) -> Result<(usize, usize)> {
    if plan.model_hash != model_hash(m) {
        return Err(Error::PlanModelMismatch);
    }
    let opt = plan
        .task_semi
        .options
        .get(option)
        .ok_or_else(|| Error::InvalidConfig(format!("no option {}", option)))?;
    let ex = HierExec::new(m, plan)?;
    let cfg = SimConfig { runs: trials, horizon, seed, ..SimConfig::default() };
    let semi = &plan.task_semi;
    let ok = (0..trials)
        .into_par_iter()
        .filter(|&run| {
            let mut r = Runner::new(m, &cfg, run);
            r.request_at = None;
            r.x = opt.source;
            let mut path = vec![r.x];
            while r.t < horizon {
                let Some(a) = r.sample(&opt.rule, r.x) else { break };
                r.step(a, 0, "prefix");
                path.push(r.x);
                if r.x != opt.source && semi.semi_state(r.x).is_some() {
                    break;
                }
            }
            let k = if path.len() > 2 { r.rng.gen_range(1..path.len() - 1) } else { 0 };
            r.x = path[k];
            r.t = 0;
            r.horizon = horizon;
            ex.ret(&mut r);
            r.out.returned
        })
        .count();
    Ok((ok, trials))
}

/// One row of a method comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub method: String,
    pub product_states: usize,
    pub synthesis_seconds: f64,
    pub plan_cost: f64,
    pub report: SimulationReport,
}

const COMPARISON_HEADER: [&str; 11] = [
    "name",
    "method",
    "product_states",
    "synthesis_s",
    "plan_cost",
    "sat_rate",
    "safe_rate",
    "trapped_rate",
    "mean_cost",
    "std_cost",
    "suffix_cost",
];

fn comparison_cells(r: &ComparisonRow) -> Vec<String> {
    let opt = |v: Option<f64>| v.map(|v| format!("{:.4}", v)).unwrap_or_else(|| "-".into());
    vec![
        r.name.clone(),
        r.method.clone(),
        r.product_states.to_string(),
        format!("{:.3}", r.synthesis_seconds),
        format!("{:.4}", r.plan_cost),
        format!("{:.4}", r.report.sat_rate),
        opt(r.report.safe_rate),
        format!("{:.4}", r.report.trapped_rate),
        format!("{:.4}", r.report.mean_cost),
        format!("{:.4}", r.report.std_cost),
        opt(r.report.mean_suffix_cost),
    ]
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = COMPARISON_HEADER.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&comparison_cells(r).join(","));
        out.push('\n');
    }
    out
}

/// Column-aligned text table.
pub fn comparison_text(rows: &[ComparisonRow]) -> String {
    let mut table: Vec<Vec<String>> = vec![COMPARISON_HEADER.iter().map(|s| s.to_string()).collect()];
    table.extend(rows.iter().map(comparison_cells));
    let widths: Vec<usize> =
        (0..COMPARISON_HEADER.len()).map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in &table {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{:<w$}", c, w = w)).collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}
