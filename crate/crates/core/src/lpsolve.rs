//! Dense two-phase simplex.
//!
//! Problems are stated as `maximize c·x` over general linear constraints and
//! per-variable bounds. Internally every variable is shifted or split so the
//! tableau only holds non-negative columns, Phase I drives artificial
//! variables to zero and Phase II optimizes the real objective. Pivoting uses
//! Bland's rule throughout, so the solver always terminates and always
//! returns the same vertex for the same input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub row: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    /// Coefficients of the objective to maximize.
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    /// (lower, upper) per variable; infinite values mean unbounded.
    pub bounds: Vec<(f64, f64)>,
}

impl LinearProgram {
    /// New maximization problem with default bounds `0 <= x < inf`.
    pub fn maximize(objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            objective,
            constraints: Vec::new(),
            bounds: vec![(0.0, f64::INFINITY); n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn constrain(&mut self, row: Vec<f64>, relation: Relation, rhs: f64) -> &mut Self {
        self.constraints.push(Constraint { row, relation, rhs });
        self
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) -> &mut Self {
        self.bounds[var] = (lower, upper);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.num_vars();
        if v == 0 {
            return Err(Error::usage("linear program has no variables"));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::usage("objective has non-finite coefficients"));
        }
        if self.bounds.len() != v {
            return Err(Error::usage(format!(
                "{} bounds given for {v} variables",
                self.bounds.len()
            )));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if c.row.len() != v {
                return Err(Error::usage(format!(
                    "constraint {i} has {} coefficients, expected {v}",
                    c.row.len()
                )));
            }
            if c.row.iter().any(|a| !a.is_finite()) || !c.rhs.is_finite() {
                return Err(Error::usage(format!("constraint {i} is not finite")));
            }
        }
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(Error::usage(format!("variable {i} has invalid bounds")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Variable values; only meaningful when `status` is `Optimal`.
    pub values: Vec<f64>,
    pub objective_value: f64,
}

const ENTER_TOL: f64 = 1e-9;
const PIVOT_ELIGIBLE: f64 = 1e-9;
const PIVOT_MIN: f64 = 1e-11;
const RATIO_TIE: f64 = 1e-12;
const FEAS_TOL: f64 = 1e-8;
const ZERO_FLUSH: f64 = 1e-13;
const REFACTOR_EVERY: usize = 25;
// accepted violation of an original constraint, relative to its size
const CHECK_TOL: f64 = 1e-7;
const MAX_PIVOTS: usize = 200_000;

/// How an original variable is expressed through tableau columns:
/// `x = shift + Σ coef · column`.
struct VarMap {
    shift: f64,
    terms: Vec<(usize, f64)>,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    // the equilibrated starting rows, kept to rebuild `rows` from the basis
    original: Vec<Vec<f64>>,
    basis: Vec<usize>,
    ncols: usize,
    // columns that may no longer enter (artificials after Phase I)
    blocked: Vec<bool>,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.ncols]
    }

    fn remove_row(&mut self, i: usize) {
        self.rows.remove(i);
        self.original.remove(i);
        self.basis.remove(i);
    }

    /// Recomputes the tableau as B⁻¹·A from the original rows, discarding
    /// the round-off accumulated by successive pivots.
    fn refactor(&mut self) -> Result<()> {
        let m = self.rows.len();
        let width = self.ncols + 1;
        // augmented system [B | A]
        let mut aug: Vec<Vec<f64>> = self
            .original
            .iter()
            .map(|row| {
                let mut r: Vec<f64> = self.basis.iter().map(|&b| row[b]).collect();
                r.extend_from_slice(row);
                r
            })
            .collect();
        for col in 0..m {
            let piv = (col..m)
                .max_by(|&a, &b| aug[a][col].abs().total_cmp(&aug[b][col].abs()))
                .unwrap_or(col);
            let p = aug[piv][col];
            if p.abs() < PIVOT_MIN {
                return Err(Error::IllConditioned(p.abs()));
            }
            aug.swap(col, piv);
            let pivot_row: Vec<f64> = aug[col].iter().map(|v| v / p).collect();
            for (i, row) in aug.iter_mut().enumerate() {
                if i == col {
                    continue;
                }
                let f = row[col];
                if f != 0.0 {
                    row.iter_mut().zip(&pivot_row).for_each(|(a, b)| *a -= f * b);
                }
            }
            aug[col] = pivot_row;
        }
        for (i, row) in aug.into_iter().enumerate() {
            let mut fresh = row[m..m + width].to_vec();
            fresh.iter_mut().for_each(|v| {
                if v.abs() < ZERO_FLUSH {
                    *v = 0.0;
                }
            });
            fresh[self.basis[i]] = 1.0;
            self.rows[i] = fresh;
        }
        Ok(())
    }

    fn pivot(&mut self, r: usize, c: usize) -> Result<()> {
        let p = self.rows[r][c];
        if p.abs() < PIVOT_MIN {
            return Err(Error::IllConditioned(p.abs()));
        }
        let width = self.ncols + 1;
        for j in 0..width {
            self.rows[r][j] /= p;
        }
        self.rows[r][c] = 1.0;
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f == 0.0 {
                continue;
            }
            for j in 0..width {
                row[j] -= f * pivot_row[j];
                // cancellation residue must not become a pivot candidate later
                if row[j].abs() < ZERO_FLUSH {
                    row[j] = 0.0;
                }
            }
            row[c] = 0.0;
        }
        self.basis[r] = c;
        Ok(())
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut r = cost.to_vec();
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = cost[b];
            if cb == 0.0 {
                continue;
            }
            for (j, rj) in r.iter_mut().enumerate() {
                *rj -= cb * self.rows[i][j];
            }
        }
        r
    }

    /// Maximizes `cost` from the current feasible basis. Returns false when
    /// the problem is unbounded.
    fn optimize(&mut self, cost: &[f64], pivots: &mut usize) -> Result<bool> {
        let mut since_refactor = 0usize;
        loop {
            let reduced = self.reduced_costs(cost);
            let entering = (0..self.ncols).find(|&j| !self.blocked[j] && reduced[j] > ENTER_TOL);
            let Some(c) = entering else {
                if since_refactor > 0 {
                    // confirm optimality on a clean tableau
                    self.refactor()?;
                    since_refactor = 0;
                    continue;
                }
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][c];
                if a <= PIVOT_ELIGIBLE {
                    continue;
                }
                let ratio = self.rhs(i).max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((bi, br)) => {
                        if ratio < br - RATIO_TIE
                            || (ratio <= br + RATIO_TIE && self.basis[i] < self.basis[bi])
                        {
                            Some((i, ratio))
                        } else {
                            Some((bi, br))
                        }
                    }
                };
            }
            let Some((r, _)) = leave else {
                return Ok(false);
            };
            self.pivot(r, c)?;
            since_refactor += 1;
            if since_refactor == REFACTOR_EVERY {
                self.refactor()?;
                since_refactor = 0;
            }
            *pivots += 1;
            if *pivots > MAX_PIVOTS {
                return Err(Error::IterationLimit(MAX_PIVOTS));
            }
        }
    }
}

pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    let nvars = lp.num_vars();

    // Map every variable onto non-negative columns; finite upper bounds on
    // shifted variables become extra rows.
    let mut maps = Vec::with_capacity(nvars);
    let mut ncols = 0usize;
    let mut extra_rows: Vec<(usize, f64)> = Vec::new();
    for &(lo, hi) in &lp.bounds {
        if lo.is_finite() {
            maps.push(VarMap {
                shift: lo,
                terms: vec![(ncols, 1.0)],
            });
            if hi.is_finite() {
                extra_rows.push((ncols, hi - lo));
            }
            ncols += 1;
        } else if hi.is_finite() {
            maps.push(VarMap {
                shift: hi,
                terms: vec![(ncols, -1.0)],
            });
            ncols += 1;
        } else {
            maps.push(VarMap {
                shift: 0.0,
                terms: vec![(ncols, 1.0), (ncols + 1, -1.0)],
            });
            ncols += 2;
        }
    }
    let structural = ncols;

    // Rows in structural columns, rhs made non-negative.
    let mut rows: Vec<(Vec<f64>, Relation, f64)> = Vec::new();
    for con in &lp.constraints {
        let mut row = vec![0.0; structural];
        let mut rhs = con.rhs;
        for (a, map) in con.row.iter().zip(&maps) {
            if *a == 0.0 {
                continue;
            }
            rhs -= a * map.shift;
            for &(col, coef) in &map.terms {
                row[col] += a * coef;
            }
        }
        rows.push((row, con.relation, rhs));
    }
    for &(col, cap) in &extra_rows {
        let mut row = vec![0.0; structural];
        row[col] = 1.0;
        rows.push((row, Relation::Le, cap));
    }
    for (row, rel, rhs) in rows.iter_mut() {
        // equilibrate so the pivot tolerances mean the same thing on every row
        let scale = row.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        if scale > 0.0 {
            row.iter_mut().for_each(|a| *a /= scale);
            *rhs /= scale;
        }
        if *rhs < 0.0 {
            row.iter_mut().for_each(|a| *a = -*a);
            *rhs = -*rhs;
            *rel = match *rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }

    let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let total = structural + n_slack + n_art;
    let art_start = structural + n_slack;
    let mut tableau = Tableau {
        rows: Vec::with_capacity(rows.len()),
        original: Vec::with_capacity(rows.len()),
        basis: Vec::with_capacity(rows.len()),
        ncols: total,
        blocked: vec![false; total],
    };
    let (mut next_slack, mut next_art) = (structural, art_start);
    for (row, rel, rhs) in rows {
        let mut full = row;
        full.resize(total + 1, 0.0);
        full[total] = rhs;
        match rel {
            Relation::Le => {
                full[next_slack] = 1.0;
                tableau.basis.push(next_slack);
                next_slack += 1;
            }
            Relation::Ge => {
                full[next_slack] = -1.0;
                next_slack += 1;
                full[next_art] = 1.0;
                tableau.basis.push(next_art);
                next_art += 1;
            }
            Relation::Eq => {
                full[next_art] = 1.0;
                tableau.basis.push(next_art);
                next_art += 1;
            }
        }
        tableau.original.push(full.clone());
        tableau.rows.push(full);
    }

    let mut pivots = 0usize;
    if n_art > 0 {
        let mut phase1 = vec![0.0; total];
        phase1[art_start..].iter_mut().for_each(|c| *c = -1.0);
        // Phase I is bounded above by zero.
        tableau.optimize(&phase1, &mut pivots)?;
        let infeasibility: f64 = tableau
            .basis
            .iter()
            .enumerate()
            .filter(|(_, &b)| b >= art_start)
            .map(|(i, _)| tableau.rhs(i))
            .sum();
        if infeasibility > FEAS_TOL {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                values: vec![0.0; nvars],
                objective_value: f64::NAN,
            });
        }
        // Pivot remaining (zero-valued) artificials out; drop redundant rows.
        let mut i = 0;
        while i < tableau.rows.len() {
            if tableau.basis[i] >= art_start {
                let col = (0..art_start).find(|&j| tableau.rows[i][j].abs() > PIVOT_ELIGIBLE);
                match col {
                    Some(j) => {
                        tableau.pivot(i, j)?;
                        i += 1;
                    }
                    None => tableau.remove_row(i),
                }
            } else {
                i += 1;
            }
        }
        for j in art_start..total {
            tableau.blocked[j] = true;
        }
    }

    let mut cost = vec![0.0; total];
    for (c, map) in lp.objective.iter().zip(&maps) {
        for &(col, coef) in &map.terms {
            cost[col] += c * coef;
        }
    }
    if !tableau.optimize(&cost, &mut pivots)? {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            values: vec![0.0; nvars],
            objective_value: f64::INFINITY,
        });
    }

    let mut col_values = vec![0.0; total];
    for (i, &b) in tableau.basis.iter().enumerate() {
        col_values[b] = tableau.rhs(i).max(0.0);
    }
    let values: Vec<f64> = maps
        .iter()
        .map(|m| m.shift + m.terms.iter().map(|&(c, k)| k * col_values[c]).sum::<f64>())
        .collect();
    check_feasible(lp, &values)?;
    let objective_value = lp.objective.iter().zip(&values).map(|(c, x)| c * x).sum();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        values,
        objective_value,
    })
}

/// Rejects a final point that misses the original constraints, which only
/// happens when round-off has built up in the tableau.
fn check_feasible(lp: &LinearProgram, x: &[f64]) -> Result<()> {
    let mut worst = 0.0f64;
    for c in &lp.constraints {
        let lhs: f64 = c.row.iter().zip(x).map(|(a, b)| a * b).sum();
        let size = c.row.iter().zip(x).fold(c.rhs.abs(), |m, (a, b)| m.max((a * b).abs()));
        let gap = match c.relation {
            Relation::Le => lhs - c.rhs,
            Relation::Ge => c.rhs - lhs,
            Relation::Eq => (lhs - c.rhs).abs(),
        };
        worst = worst.max(gap / (1.0 + size));
    }
    for (&v, &(lo, hi)) in x.iter().zip(&lp.bounds) {
        worst = worst.max((lo - v) / (1.0 + lo.abs())).max((v - hi) / (1.0 + hi.abs()));
    }
    if worst > CHECK_TOL {
        return Err(Error::IllConditioned(worst));
    }
    Ok(())
}
