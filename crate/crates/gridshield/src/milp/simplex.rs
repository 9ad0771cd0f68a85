//! Bounded-variable primal simplex with a two-phase start, Dantzig pricing
//! and a Bland's-rule fallback after 1000 degenerate pivots.

use super::FEASIBILITY_TOL;

const REDUCED_COST_TOL: f64 = 1e-9;
const DEGENERATE_STEP_TOL: f64 = 1e-10;
const BLAND_TRIGGER: u64 = 1000;
const REFACTOR_EVERY: u64 = 64;
const RATIO_EPS: f64 = 1e-11;
const RATIO_RELAX: f64 = 1e-9;
const PIVOT_MIN: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

pub struct LpOutcome {
    pub status: LpStatus,
    /// Values for all columns (structural plus slack).
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: u64,
}

/// Equality-form LP: A x = b with column bounds. Callers add slacks; all
/// lower bounds must be finite.
pub struct StandardLp {
    pub cols: Vec<Vec<(usize, f64)>>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cost: Vec<f64>,
    pub rhs: Vec<f64>,
    pub rows: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Status {
    Basic,
    AtLower,
    AtUpper,
}

enum ColRef<'a> {
    Sparse(&'a [(usize, f64)]),
    Artificial(usize, f64),
}

struct Tableau<'a> {
    lp: &'a StandardLp,
    ncols: usize,
    nrows: usize,
    /// artificial column i lives at index ncols + i with coefficient
    /// art_sign[i] in row i
    art_sign: Vec<f64>,
    basis: Vec<usize>,
    status: Vec<Status>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    cost: Vec<f64>,
    iterations: u64,
    degenerate: u64,
    pivots_since_refactor: u64,
    budget: u64,
    phase2: bool,
}

impl<'a> Tableau<'a> {
    fn col(&self, j: usize) -> ColRef<'_> {
        if j < self.ncols {
            ColRef::Sparse(&self.lp.cols[j])
        } else {
            ColRef::Artificial(j - self.ncols, self.art_sign[j - self.ncols])
        }
    }

    fn lower(&self, j: usize) -> f64 {
        if j < self.ncols {
            self.lp.lower[j]
        } else {
            0.0
        }
    }

    fn upper(&self, j: usize) -> f64 {
        if j < self.ncols {
            self.lp.upper[j]
        } else if self.phase2 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        match self.status[j] {
            Status::AtLower => self.lower(j),
            Status::AtUpper => {
                let u = self.upper(j);
                if u.is_finite() {
                    u
                } else {
                    self.lower(j)
                }
            }
            Status::Basic => unreachable!("basic variable asked for a bound value"),
        }
    }

    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.nrows;
        let mut w = vec![0.0; m];
        match self.col(j) {
            ColRef::Sparse(entries) => {
                for &(i, a) in entries {
                    if a == 0.0 {
                        continue;
                    }
                    for k in 0..m {
                        w[k] += self.binv[k * m + i] * a;
                    }
                }
            }
            ColRef::Artificial(i, s) => {
                for k in 0..m {
                    w[k] = self.binv[k * m + i] * s;
                }
            }
        }
        w
    }

    fn compute_xb(&mut self) {
        let m = self.nrows;
        let mut eff = self.lp.rhs.clone();
        for j in 0..self.ncols + m {
            if self.status[j] == Status::Basic {
                continue;
            }
            let v = self.nonbasic_value(j);
            if v == 0.0 {
                continue;
            }
            match self.col(j) {
                ColRef::Sparse(entries) => {
                    for &(i, a) in entries {
                        eff[i] -= a * v;
                    }
                }
                ColRef::Artificial(i, s) => eff[i] -= s * v,
            }
        }
        for k in 0..m {
            self.xb[k] = (0..m).map(|i| self.binv[k * m + i] * eff[i]).sum();
        }
    }

    fn refactorize(&mut self) -> bool {
        let m = self.nrows;
        let mut a = vec![0.0; m * m];
        for (k, &j) in self.basis.iter().enumerate() {
            match self.col(j) {
                ColRef::Sparse(entries) => {
                    for &(i, v) in entries {
                        a[i * m + k] = v;
                    }
                }
                ColRef::Artificial(i, s) => a[i * m + k] = s,
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for col in 0..m {
            let mut best = col;
            for r in col..m {
                if a[r * m + col].abs() > a[best * m + col].abs() {
                    best = r;
                }
            }
            if a[best * m + col].abs() < 1e-12 {
                return false;
            }
            if best != col {
                for j in 0..m {
                    a.swap(col * m + j, best * m + j);
                    inv.swap(col * m + j, best * m + j);
                }
            }
            let p = a[col * m + col];
            for j in 0..m {
                a[col * m + j] /= p;
                inv[col * m + j] /= p;
            }
            for r in 0..m {
                if r != col {
                    let f = a[r * m + col];
                    if f != 0.0 {
                        for j in 0..m {
                            a[r * m + j] -= f * a[col * m + j];
                            inv[r * m + j] -= f * inv[col * m + j];
                        }
                    }
                }
            }
        }
        self.binv = inv;
        self.pivots_since_refactor = 0;
        self.compute_xb();
        true
    }

    fn optimize(&mut self) -> LpStatus {
        let m = self.nrows;
        let mut banned: Vec<bool> = vec![false; self.ncols + m];
        loop {
            if self.iterations >= self.budget {
                return LpStatus::IterLimit;
            }
            // duals y = c_B B^-1
            let mut y = vec![0.0; m];
            for (k, &j) in self.basis.iter().enumerate() {
                let cb = self.cost[j];
                if cb != 0.0 {
                    for i in 0..m {
                        y[i] += cb * self.binv[k * m + i];
                    }
                }
            }
            let bland = self.degenerate > BLAND_TRIGGER;
            let mut entering: Option<(usize, f64, bool)> = None;
            for j in 0..self.ncols + m {
                if self.status[j] == Status::Basic || banned[j] {
                    continue;
                }
                if j >= self.ncols && self.phase2 {
                    continue;
                }
                let d = self.cost[j]
                    - match self.col(j) {
                        ColRef::Sparse(entries) => {
                            entries.iter().map(|&(i, a)| y[i] * a).sum::<f64>()
                        }
                        ColRef::Artificial(i, s) => y[i] * s,
                    };
                let from_lower = match self.status[j] {
                    Status::AtLower => {
                        if d >= -REDUCED_COST_TOL {
                            continue;
                        }
                        true
                    }
                    Status::AtUpper => {
                        if d <= REDUCED_COST_TOL {
                            continue;
                        }
                        false
                    }
                    Status::Basic => continue,
                };
                if bland {
                    entering = Some((j, d.abs(), from_lower));
                    break;
                }
                match entering {
                    Some((_, best, _)) if d.abs() <= best => {}
                    _ => entering = Some((j, d.abs(), from_lower)),
                }
            }
            let Some((q, _, from_lower)) = entering else {
                return LpStatus::Optimal;
            };
            self.iterations += 1;

            let w = self.ftran(q);
            let dir = if from_lower { 1.0 } else { -1.0 };
            let range = self.upper(q) - self.lower(q);

            // Harris-style two-pass ratio test: pass 1 finds the slightly
            // relaxed minimum step, pass 2 picks the largest pivot within it
            let mut t_relaxed = if range.is_finite() { range } else { f64::INFINITY };
            for k in 0..m {
                let jk = self.basis[k];
                let delta = dir * w[k];
                if delta > RATIO_EPS {
                    let t = ((self.xb[k] - self.lower(jk) + RATIO_RELAX) / delta).max(0.0);
                    t_relaxed = t_relaxed.min(t);
                } else if delta < -RATIO_EPS {
                    let u = self.upper(jk);
                    if u.is_finite() {
                        let t = ((u - self.xb[k] + RATIO_RELAX) / (-delta)).max(0.0);
                        t_relaxed = t_relaxed.min(t);
                    }
                }
            }
            if t_relaxed.is_infinite() {
                return LpStatus::Unbounded;
            }
            let mut leave: Option<(usize, Status, f64)> = None;
            for k in 0..m {
                let jk = self.basis[k];
                let delta = dir * w[k];
                let candidate = if delta > RATIO_EPS {
                    let t = ((self.xb[k] - self.lower(jk)) / delta).max(0.0);
                    (t <= t_relaxed).then_some((t, Status::AtLower))
                } else if delta < -RATIO_EPS {
                    let u = self.upper(jk);
                    if u.is_finite() {
                        let t = ((u - self.xb[k]) / (-delta)).max(0.0);
                        (t <= t_relaxed).then_some((t, Status::AtUpper))
                    } else {
                        None
                    }
                } else {
                    None
                };
                if let Some((t, hit)) = candidate {
                    let take = match &leave {
                        None => true,
                        Some((r, _, _)) => {
                            if bland {
                                jk < self.basis[*r]
                            } else {
                                w[k].abs() > w[*r].abs()
                            }
                        }
                    };
                    if take {
                        leave = Some((k, hit, t));
                    }
                }
            }
            // bound flip when it undercuts the chosen leaving step
            let flip = match &leave {
                None => true,
                Some((_, _, t)) => range.is_finite() && range <= *t,
            };
            if flip {
                if !range.is_finite() {
                    return LpStatus::Unbounded;
                }
                let t_star = range;
                if t_star <= DEGENERATE_STEP_TOL {
                    self.degenerate += 1;
                }
                for k in 0..m {
                    self.xb[k] -= dir * t_star * w[k];
                }
                self.status[q] = if from_lower { Status::AtUpper } else { Status::AtLower };
                banned.iter_mut().for_each(|b| *b = false);
                continue;
            }
            let (r, hit, t_exact) = leave.expect("checked above");
            if w[r].abs() < PIVOT_MIN {
                // numerically dependent column: leave it out of pricing
                // until the next successful pivot
                banned[q] = true;
                continue;
            }
            let t_star = t_exact;
            if t_star <= DEGENERATE_STEP_TOL {
                self.degenerate += 1;
            }
            for k in 0..m {
                self.xb[k] -= dir * t_star * w[k];
            }
            let leaving = self.basis[r];
            self.status[leaving] = hit;
            self.status[q] = Status::Basic;
            let new_val =
                if from_lower { self.lower(q) + t_star } else { self.upper(q) - t_star };
            self.basis[r] = q;
            let wr = w[r];
            let row_r: Vec<f64> = (0..m).map(|i| self.binv[r * m + i] / wr).collect();
            for k in 0..m {
                if k == r {
                    continue;
                }
                let f = w[k];
                if f != 0.0 {
                    for i in 0..m {
                        self.binv[k * m + i] -= f * row_r[i];
                    }
                }
            }
            for i in 0..m {
                self.binv[r * m + i] = row_r[i];
            }
            self.xb[r] = new_val;
            self.pivots_since_refactor += 1;
            if self.pivots_since_refactor >= REFACTOR_EVERY && !self.refactorize() {
                // basis corrupted beyond repair: report as a limit, never
                // as infeasibility
                if std::env::var("GRIDSHIELD_LP_DEBUG").is_ok() {
                    eprintln!("mid-run refactorize failed at iter {}", self.iterations);
                }
                return LpStatus::IterLimit;
            }
            banned.iter_mut().for_each(|b| *b = false);
        }
    }

    fn value_of(&self, j: usize) -> f64 {
        if self.status[j] == Status::Basic {
            let k = self.basis.iter().position(|&b| b == j).expect("basic var in basis");
            self.xb[k]
        } else {
            self.nonbasic_value(j)
        }
    }

    fn phase1_objective(&self) -> f64 {
        (0..self.nrows).map(|i| self.value_of(self.ncols + i)).sum()
    }
}

/// Solve the equality-form LP. `budget` caps total pivots.
pub fn solve_lp(lp: &StandardLp, budget: u64) -> LpOutcome {
    solve_lp_with_basis_hint(lp, budget, &[])
}

/// `slack_of_row[i]` optionally names the slack column of row i; rows
/// whose slack starts feasible are seeded with it so phase 1 only repairs
/// the genuinely violated rows.
pub fn solve_lp_with_basis_hint(
    lp: &StandardLp,
    budget: u64,
    slack_of_row: &[Option<usize>],
) -> LpOutcome {
    let m = lp.rows;
    let ncols = lp.cols.len();
    debug_assert!(lp.lower.iter().all(|l| l.is_finite()), "finite lower bounds required");

    let mut status = vec![Status::AtLower; ncols + m];
    let mut eff = lp.rhs.clone();
    for j in 0..ncols {
        let v = lp.lower[j];
        if v != 0.0 {
            for &(i, a) in &lp.cols[j] {
                eff[i] -= a * v;
            }
        }
    }
    // basis per row: prefer the slack when its implied value is feasible
    let mut basis: Vec<usize> = Vec::with_capacity(m);
    let mut art_sign = vec![1.0; m];
    let mut any_artificial_load = false;
    for i in 0..m {
        let mut chosen = None;
        if let Some(sj) = slack_of_row.get(i).copied().flatten() {
            let coef =
                lp.cols[sj].iter().find(|(r, _)| *r == i).map(|(_, a)| *a).unwrap_or(0.0);
            if coef.abs() > 0.5 {
                let val = eff[i] / coef;
                if val >= lp.lower[sj] - 1e-12 && val <= lp.upper[sj] + 1e-12 {
                    chosen = Some(sj);
                }
            }
        }
        match chosen {
            Some(sj) => {
                basis.push(sj);
                status[sj] = Status::Basic;
            }
            None => {
                art_sign[i] = if eff[i] >= 0.0 { 1.0 } else { -1.0 };
                basis.push(ncols + i);
                status[ncols + i] = Status::Basic;
                if eff[i].abs() > FEASIBILITY_TOL {
                    any_artificial_load = true;
                }
            }
        }
    }
    let mut cost = vec![0.0; ncols + m];
    for i in 0..m {
        cost[ncols + i] = 1.0;
    }

    let mut t = Tableau {
        lp,
        ncols,
        nrows: m,
        art_sign,
        basis,
        status,
        binv: vec![0.0; m * m],
        xb: vec![0.0; m],
        cost,
        iterations: 0,
        degenerate: 0,
        pivots_since_refactor: 0,
        budget,
        phase2: false,
    };
    if !t.refactorize() {
        if std::env::var("GRIDSHIELD_LP_DEBUG").is_ok() {
            eprintln!("initial refactorize failed (m={m})");
        }
        return LpOutcome { status: LpStatus::IterLimit, x: vec![], objective: 0.0, iterations: 0 };
    }

    if any_artificial_load {
        let p1 = t.optimize();
        if p1 == LpStatus::IterLimit {
            return LpOutcome {
                status: LpStatus::IterLimit,
                x: vec![],
                objective: 0.0,
                iterations: t.iterations,
            };
        }
        let infeasibility = t.phase1_objective();
        if infeasibility > FEASIBILITY_TOL {
            return LpOutcome {
                status: LpStatus::Infeasible,
                x: vec![],
                objective: infeasibility,
                iterations: t.iterations,
            };
        }
    }

    t.phase2 = true;
    for j in 0..ncols {
        t.cost[j] = lp.cost[j];
    }
    for i in 0..m {
        t.cost[ncols + i] = 0.0;
    }
    t.degenerate = 0;
    match t.optimize() {
        LpStatus::Optimal => {
            let x: Vec<f64> = (0..ncols).map(|j| t.value_of(j)).collect();
            let objective = lp.cost.iter().zip(&x).map(|(c, v)| c * v).sum();
            LpOutcome { status: LpStatus::Optimal, x, objective, iterations: t.iterations }
        }
        LpStatus::Unbounded => LpOutcome {
            status: LpStatus::Unbounded,
            x: vec![],
            objective: f64::NEG_INFINITY,
            iterations: t.iterations,
        },
        other => LpOutcome { status: other, x: vec![], objective: 0.0, iterations: t.iterations },
    }
}

#[cfg(test)]
mod tests {

    use super::*;

    #[test]
    fn tiny_lp_with_upper_bounds() {
        // min -x1 - 2x2 s.t. x1 + x2 + s = 3, x in [0,2]^2
        let lp = StandardLp {
            cols: vec![vec![(0, 1.0)], vec![(0, 1.0)], vec![(0, 1.0)]],
            lower: vec![0.0, 0.0, 0.0],
            upper: vec![2.0, 2.0, f64::INFINITY],
            cost: vec![-1.0, -2.0, 0.0],
            rhs: vec![3.0],
            rows: 1,
        };
        let out = solve_lp(&lp, 10_000);
        assert_eq!(out.status, LpStatus::Optimal);
        assert!((out.objective - (-5.0)).abs() < 1e-9);
        assert!((out.x[1] - 2.0).abs() < 1e-9);
        assert!((out.x[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_lp() {
        // x + s1 = 1 with x <= 1 forced >= 2 via second row x - s2 = 2
        let lp = StandardLp {
            cols: vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 1.0)], vec![(1, -1.0)]],
            lower: vec![0.0, 0.0, 0.0],
            upper: vec![1.0, f64::INFINITY, f64::INFINITY],
            cost: vec![0.0, 0.0, 0.0],
            rhs: vec![1.0, 2.0],
            rows: 2,
        };
        let out = solve_lp(&lp, 10_000);
        assert_eq!(out.status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_lp() {
        // min -x, x free above: x - s = 0
        let lp = StandardLp {
            cols: vec![vec![(0, 1.0)], vec![(0, -1.0)]],
            lower: vec![0.0, 0.0],
            upper: vec![f64::INFINITY, f64::INFINITY],
            cost: vec![-1.0, 0.0],
            rhs: vec![0.0],
            rows: 1,
        };
        let out = solve_lp(&lp, 10_000);
        assert_eq!(out.status, LpStatus::Unbounded);
    }
}
