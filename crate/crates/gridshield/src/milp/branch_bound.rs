//! Depth-first branch and bound with most-fractional branching, a
//! best-bound re-sort every 64 nodes, and optional lazy row generation.

use super::simplex::{solve_lp_with_basis_hint, LpOutcome, LpStatus, StandardLp};
use super::{Constraint, MilpModel, MilpSolution, Relation, SolveStatus, VarKind, INTEGRALITY_TOL};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct SolveLimits {
    pub max_nodes: u64,
    pub max_simplex_iterations: u64,
}

impl Default for SolveLimits {
    fn default() -> Self {
        SolveLimits { max_nodes: 2_000_000, max_simplex_iterations: 2_000_000_000 }
    }
}

/// Rows a separator may add: they must be valid for every integer-feasible
/// point of the model (they may cut off fractional LP points only).
pub type Separator<'a> = &'a dyn Fn(&[f64]) -> Vec<Constraint>;

struct Node {
    parent: Option<usize>,
    var: usize,
    lower: f64,
    upper: f64,
    bound: f64,
}

pub fn solve(model: &MilpModel, limits: SolveLimits) -> Result<MilpSolution> {
    solve_with_cuts(model, limits, None)
}

pub fn solve_with_cuts(
    model: &MilpModel,
    limits: SolveLimits,
    separator: Option<Separator<'_>>,
) -> Result<MilpSolution> {
    solve_with_cuts_warm(model, limits, separator, None)
}

/// `warm` seeds the incumbent with a known feasible point (checked); the
/// search then only explores nodes that can beat it.
pub fn solve_with_cuts_warm(
    model: &MilpModel,
    limits: SolveLimits,
    separator: Option<Separator<'_>>,
    warm: Option<Vec<f64>>,
) -> Result<MilpSolution> {
    model.validate()?;
    let nvars = model.variables.len();
    let mut cuts: Vec<Constraint> = Vec::new();
    let mut arena: Vec<Node> = Vec::new();
    let mut stack: Vec<Option<usize>> = vec![None]; // None = root
    let mut incumbent: Option<(Vec<f64>, f64)> = None;
    if let Some(values) = warm {
        let integral = model
            .variables
            .iter()
            .enumerate()
            .all(|(j, v)| v.kind != VarKind::Binary || (values[j] - values[j].round()).abs() <= INTEGRALITY_TOL);
        if values.len() == nvars && integral && model.violation(&values) <= 1e-6 {
            let obj = model.objective_value(&values);
            incumbent = Some((values, obj));
        }
    }
    let mut total_iterations: u64 = 0;
    let mut nodes_processed: u64 = 0;
    let mut hit_limit = false;
    let mut root_unbounded = false;

    while let Some(entry) = stack.pop() {
        if nodes_processed >= limits.max_nodes || total_iterations >= limits.max_simplex_iterations
        {
            hit_limit = true;
            break;
        }
        nodes_processed += 1;

        // prune on the parent's bound
        if let (Some(idx), Some((_, best))) = (entry, &incumbent) {
            if arena[idx].bound >= *best - 1e-9 {
                continue;
            }
        }

        let (lowers, uppers) = materialize_bounds(model, &arena, entry);
        let mut outcome;
        loop {
            outcome = solve_node_lp(model, &cuts, &lowers, &uppers, limits, total_iterations);
            total_iterations += outcome.iterations;
            match outcome.status {
                LpStatus::Optimal => {}
                LpStatus::Infeasible => break,
                LpStatus::Unbounded => break,
                LpStatus::IterLimit => {
                    hit_limit = true;
                    break;
                }
            }
            // lazy rows: only worth separating while the solution is useful
            if let Some(sep) = separator {
                if incumbent.as_ref().map_or(true, |(_, best)| outcome.objective < best - 1e-9) {
                    let new_rows = sep(&outcome.x[..nvars]);
                    if !new_rows.is_empty() {
                        for (k, mut row) in new_rows.into_iter().enumerate() {
                            row.name = format!("lazy{}_{}", cuts.len(), k);
                            cuts.push(row);
                        }
                        continue;
                    }
                }
            }
            break;
        }
        if hit_limit {
            break;
        }
        match outcome.status {
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => {
                if entry.is_none() {
                    root_unbounded = true;
                    break;
                }
                // a bounded parent cannot spawn an unbounded child with
                // narrower bounds; treat as numerically infeasible
                continue;
            }
            _ => {}
        }
        let bound = outcome.objective;
        if let Some((_, best)) = &incumbent {
            if bound >= *best - 1e-9 {
                continue;
            }
        }
        let x = outcome.x[..nvars].to_vec();

        // most-fractional binary, ties to the lowest index
        let mut branch_var: Option<(usize, f64)> = None;
        for (j, var) in model.variables.iter().enumerate() {
            if var.kind != VarKind::Binary {
                continue;
            }
            let f = x[j] - x[j].round();
            let frac = f.abs();
            if frac <= INTEGRALITY_TOL {
                continue;
            }
            let dist = frac.min(1.0 - frac);
            match branch_var {
                Some((_, best_dist)) if dist <= best_dist => {}
                _ => branch_var = Some((j, dist)),
            }
        }

        match branch_var {
            None => {
                // integral: snap binaries and accept as incumbent
                let mut snapped = x.clone();
                for (j, var) in model.variables.iter().enumerate() {
                    if var.kind == VarKind::Binary {
                        snapped[j] = snapped[j].round();
                    }
                }
                let obj = model.objective_value(&snapped);
                debug_assert!(model.violation(&snapped) <= 1e-5, "incumbent violates model");
                match &incumbent {
                    Some((_, best)) if obj >= *best => {}
                    _ => incumbent = Some((snapped, obj)),
                }
            }
            Some((j, _)) => {
                let nearest = x[j].round();
                let (near_lo, near_hi) = (nearest, nearest);
                let far = 1.0 - nearest;
                // far child first so the nearest-integer child pops first
                arena.push(Node { parent: entry, var: j, lower: far, upper: far, bound });
                stack.push(Some(arena.len() - 1));
                arena.push(Node { parent: entry, var: j, lower: near_lo, upper: near_hi, bound });
                stack.push(Some(arena.len() - 1));
            }
        }
        if nodes_processed % 64 == 0 {
            // best-bound re-sort: lowest bound pops next
            stack.sort_by(|a, b| {
                let ba = a.map_or(f64::NEG_INFINITY, |i| arena[i].bound);
                let bb = b.map_or(f64::NEG_INFINITY, |i| arena[i].bound);
                bb.partial_cmp(&ba).unwrap()
            });
        }
    }

    if root_unbounded {
        return Ok(MilpSolution {
            status: SolveStatus::Unbounded,
            values: vec![],
            objective_value: f64::NEG_INFINITY,
            simplex_iterations: total_iterations,
            nodes: nodes_processed,
        });
    }
    let status = if hit_limit {
        SolveStatus::IterationLimit
    } else if incumbent.is_some() {
        SolveStatus::Optimal
    } else {
        SolveStatus::Infeasible
    };
    let (values, objective_value) = incumbent.unwrap_or((vec![], f64::INFINITY));
    Ok(MilpSolution {
        status,
        values,
        objective_value,
        simplex_iterations: total_iterations,
        nodes: nodes_processed,
    })
}

fn materialize_bounds(
    model: &MilpModel,
    arena: &[Node],
    entry: Option<usize>,
) -> (Vec<f64>, Vec<f64>) {
    let mut lowers: Vec<f64> = model.variables.iter().map(|v| v.lower).collect();
    let mut uppers: Vec<f64> = model.variables.iter().map(|v| v.upper).collect();
    let mut chain = Vec::new();
    let mut cursor = entry;
    while let Some(idx) = cursor {
        chain.push(idx);
        cursor = arena[idx].parent;
    }
    for idx in chain.into_iter().rev() {
        let node = &arena[idx];
        lowers[node.var] = lowers[node.var].max(node.lower);
        uppers[node.var] = uppers[node.var].min(node.upper);
    }
    (lowers, uppers)
}

fn solve_node_lp(
    model: &MilpModel,
    cuts: &[Constraint],
    lowers: &[f64],
    uppers: &[f64],
    limits: SolveLimits,
    spent: u64,
) -> LpOutcome {
    let nvars = model.variables.len();
    let nrows = model.constraints.len() + cuts.len();
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nvars];
    let mut rhs = Vec::with_capacity(nrows);
    let mut lower = lowers.to_vec();
    let mut upper = uppers.to_vec();
    let mut cost = vec![0.0; nvars];
    for (j, c) in &model.objective {
        cost[*j] = *c;
    }
    let mut slack_of_row: Vec<Option<usize>> = vec![None; nrows];
    for (i, con) in model.constraints.iter().chain(cuts.iter()).enumerate() {
        for (j, a) in &con.coefficients {
            if *a != 0.0 {
                cols[*j].push((i, *a));
            }
        }
        rhs.push(con.rhs);
        match con.relation {
            Relation::Le => {
                slack_of_row[i] = Some(cols.len());
                cols.push(vec![(i, 1.0)]);
                lower.push(0.0);
                upper.push(f64::INFINITY);
                cost.push(0.0);
            }
            Relation::Ge => {
                slack_of_row[i] = Some(cols.len());
                cols.push(vec![(i, -1.0)]);
                lower.push(0.0);
                upper.push(f64::INFINITY);
                cost.push(0.0);
            }
            Relation::Eq => {}
        }
    }
    let lp = StandardLp { cols, lower, upper, cost, rhs, rows: nrows };
    let budget = limits.max_simplex_iterations.saturating_sub(spent).min(5_000_000);
    solve_lp_with_basis_hint(&lp, budget, &slack_of_row)
}
