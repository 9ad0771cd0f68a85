//! Generic mixed-integer linear programming: model representation, an exact
//! branch-and-bound solver over an embedded bounded-variable simplex, and
//! MPS export.

mod branch_bound;
mod mps;
mod simplex;

use std::collections::BTreeMap;

use crate::error::{GridError, Result};

pub use branch_bound::{solve, solve_with_cuts, solve_with_cuts_warm, SolveLimits};
pub use mps::export_mps;

pub const FEASIBILITY_TOL: f64 = 1e-7;
pub const INTEGRALITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Binary,
    Continuous,
}

#[derive(Debug, Clone)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub name: String,
    pub coefficients: BTreeMap<usize, f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// Minimization model over binary and continuous variables.
#[derive(Debug, Clone, Default)]
pub struct MilpModel {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub objective: BTreeMap<usize, f64>,
    pub metadata: BTreeMap<String, String>,
}

impl MilpModel {
    pub fn add_variable(&mut self, name: impl Into<String>, kind: VarKind, lower: f64, upper: f64) -> usize {
        self.variables.push(Variable { name: name.into(), kind, lower, upper });
        self.variables.len() - 1
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> usize {
        self.add_variable(name, VarKind::Binary, 0.0, 1.0)
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        coefficients: BTreeMap<usize, f64>,
        relation: Relation,
        rhs: f64,
    ) {
        self.constraints.push(Constraint { name: name.into(), coefficients, relation, rhs });
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = std::collections::BTreeSet::new();
        for v in &self.variables {
            if !names.insert(&v.name) {
                return Err(GridError::Milp(format!("duplicate variable name {}", v.name)));
            }
            if v.kind == VarKind::Binary && (v.lower != 0.0 || v.upper != 1.0) {
                return Err(GridError::Milp(format!("binary {} must have bounds [0,1]", v.name)));
            }
            if !v.lower.is_finite() {
                return Err(GridError::Milp(format!("{} needs a finite lower bound", v.name)));
            }
            if v.upper < v.lower {
                return Err(GridError::Milp(format!("{} has crossed bounds", v.name)));
            }
        }
        let mut rnames = std::collections::BTreeSet::new();
        for c in &self.constraints {
            if !rnames.insert(&c.name) {
                return Err(GridError::Milp(format!("duplicate constraint name {}", c.name)));
            }
            for (j, coef) in &c.coefficients {
                if *j >= self.variables.len() {
                    return Err(GridError::Milp(format!("{} references unknown variable", c.name)));
                }
                if !coef.is_finite() {
                    return Err(GridError::Milp(format!("{} has a non-finite coefficient", c.name)));
                }
            }
            if !c.rhs.is_finite() {
                return Err(GridError::Milp(format!("{} has a non-finite rhs", c.name)));
            }
        }
        for (j, coef) in &self.objective {
            if *j >= self.variables.len() || !coef.is_finite() {
                return Err(GridError::Milp("bad objective entry".into()));
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.iter().map(|(j, c)| c * values[*j]).sum()
    }

    /// Constraint violation magnitude (0 when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            let lhs: f64 = c.coefficients.iter().map(|(j, a)| a * values[*j]).sum();
            let v = match c.relation {
                Relation::Le => (lhs - c.rhs).max(0.0),
                Relation::Ge => (c.rhs - lhs).max(0.0),
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(v);
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct MilpSolution {
    pub status: SolveStatus,
    pub values: Vec<f64>,
    pub objective_value: f64,
    pub simplex_iterations: u64,
    pub nodes: u64,
}
