//! Sparse linear programs, solved with HiGHS, plus an MPS writer for
//! cross-checking with external solvers.

use std::fmt::Write as _;

use highs::{HighsModelStatus, RowProblem, Sense as HSense};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpRow {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// `min/max c.x` subject to rows, with `x >= 0`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    pub var_names: Vec<String>,
    pub objective: Vec<(usize, f64)>,
    pub maximize: bool,
    pub rows: Vec<LpRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn is_optimal(&self) -> bool {
        matches!(self, LpOutcome::Optimal { .. })
    }
}

const FEAS_TOL: f64 = 1e-9;

fn merged(coeffs: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let mut v = coeffs.to_vec();
    v.sort_by_key(|e| e.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(v.len());
    for (j, a) in v {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 += a,
            _ => out.push((j, a)),
        }
    }
    out.retain(|e| e.1 != 0.0);
    out
}

impl LpProblem {
    pub fn add_var(&mut self, name: impl Into<String>) -> usize {
        self.var_names.push(name.into());
        self.var_names.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn add_row(&mut self, name: impl Into<String>, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        self.rows.push(LpRow { name: name.into(), coeffs, sense, rhs });
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|&(j, c)| c * x[j]).sum()
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = x.iter().map(|&v| (-v).max(0.0)).fold(0.0, f64::max);
        for r in &self.rows {
            let lhs: f64 = r.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            let v = match r.sense {
                Sense::Le => lhs - r.rhs,
                Sense::Ge => r.rhs - lhs,
                Sense::Eq => (lhs - r.rhs).abs(),
            };
            worst = worst.max(v);
        }
        worst
    }

    pub fn solve(&self) -> Result<LpOutcome> {
        let n = self.num_vars();
        if n == 0 {
            let ok = self.max_violation(&[]) <= FEAS_TOL;
            return Ok(if ok { LpOutcome::Optimal { x: Vec::new(), objective: 0.0 } } else { LpOutcome::Infeasible });
        }
        let mut obj = vec![0.0; n];
        for &(j, c) in &self.objective {
            obj[j] += c;
        }
        let mut pb = RowProblem::default();
        let cols: Vec<_> = obj.iter().map(|&c| pb.add_column(c, 0.0..)).collect();
        for r in &self.rows {
            let coeffs: Vec<_> = merged(&r.coeffs).into_iter().map(|(j, a)| (cols[j], a)).collect();
            match r.sense {
                Sense::Le => pb.add_row(..=r.rhs, coeffs),
                Sense::Ge => pb.add_row(r.rhs.., coeffs),
                Sense::Eq => pb.add_row(r.rhs..=r.rhs, coeffs),
            }
        }
        let sense = if self.maximize { HSense::Maximise } else { HSense::Minimise };
        let mut model = pb.try_optimise(sense).map_err(|e| Error::Solver(format!("{:?}", e)))?;
        model.make_quiet();
        model.set_option("threads", 1);
        model.set_option("primal_feasibility_tolerance", FEAS_TOL);
        model.set_option("dual_feasibility_tolerance", FEAS_TOL);
        let solved = model.try_solve().map_err(|e| Error::Solver(format!("{:?}", e)))?;
        match solved.status() {
            HighsModelStatus::Optimal => {
                let x: Vec<f64> = solved.get_solution().columns().iter().map(|&v| v.max(0.0)).collect();
                let objective = self.objective_value(&x);
                Ok(LpOutcome::Optimal { x, objective })
            }
            HighsModelStatus::Infeasible => Ok(LpOutcome::Infeasible),
            HighsModelStatus::Unbounded | HighsModelStatus::UnboundedOrInfeasible => Ok(LpOutcome::Unbounded),
            other => Err(Error::Solver(format!("solver stopped with status {:?}", other))),
        }
    }

    /// Fixed-column MPS text.
    pub fn to_mps(&self, name: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "NAME          {}", name);
        if self.maximize {
            let _ = writeln!(s, "OBJSENSE\n    MAX");
        }
        let _ = writeln!(s, "ROWS");
        let _ = writeln!(s, " N  COST");
        let rname = |i: usize| format!("R{}", i);
        for (i, r) in self.rows.iter().enumerate() {
            let t = match r.sense {
                Sense::Le => "L",
                Sense::Ge => "G",
                Sense::Eq => "E",
            };
            let _ = writeln!(s, " {}  {}", t, rname(i));
        }
        let _ = writeln!(s, "COLUMNS");
        let mut by_col: Vec<Vec<(String, f64)>> = vec![Vec::new(); self.num_vars()];
        for (j, c) in merged(&self.objective) {
            by_col[j].push(("COST".into(), c));
        }
        for (i, r) in self.rows.iter().enumerate() {
            for (j, a) in merged(&r.coeffs) {
                by_col[j].push((rname(i), a));
            }
        }
        for (j, entries) in by_col.iter().enumerate() {
            let cname = format!("C{}", j);
            if entries.is_empty() {
                let _ = writeln!(s, "    {:<8}  {:<8}  {:>12}", cname, "COST", 0);
            }
            for (row, v) in entries {
                let _ = writeln!(s, "    {:<8}  {:<8}  {:>12}", cname, row, v);
            }
        }
        let _ = writeln!(s, "RHS");
        for (i, r) in self.rows.iter().enumerate() {
            if r.rhs != 0.0 {
                let _ = writeln!(s, "    {:<8}  {:<8}  {:>12}", "RHS", rname(i), r.rhs);
            }
        }
        let _ = writeln!(s, "ENDATA");
        s
    }
}
