//! Linear program container and solver backends.
//!
//! Everything downstream talks to a single narrow interface ([`solve_lp`]),
//! so the backend is interchangeable. Two backends are provided: a
//! self-contained dense revised simplex (exact vertex solutions, used for
//! small programs and as the reference in tests) and a sparse interior-point
//! backend for the large dualized dispatch programs.

use thiserror::Error;

mod interior;
mod simplex;

/// One linear row `sum coeffs * x <= rhs` (or `= rhs` for equality rows).
#[derive(Debug, Clone)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// Sparse linear program `min c'x  s.t.  A x <= b,  A_eq x = b_eq,  lo <= x <= hi`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub ineq: Vec<Row>,
    pub eq: Vec<Row>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal point; meaningful only when `status == Optimal`.
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// Pick a backend from the problem size.
    Auto,
    /// Self-contained dense revised simplex (two-phase, Bland fallback).
    DenseSimplex,
    /// Sparse interior-point method.
    InteriorPoint,
}

#[derive(Debug, Error)]
pub enum LpError {
    #[error("malformed linear program: {0}")]
    InvalidProblem(String),
    #[error("numerical failure in LP solve: {0}")]
    NumericalFailure(String),
}

impl LinearProgram {
    /// New program with `n` free variables and zero objective.
    pub fn new(n: usize) -> Self {
        LinearProgram {
            objective: vec![0.0; n],
            ineq: Vec::new(),
            eq: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.ineq.len() + self.eq.len()
    }

    pub fn add_ineq(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.ineq.push(Row { coeffs, rhs });
    }

    pub fn add_eq(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) {
        self.eq.push(Row { coeffs, rhs });
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    pub fn nnz(&self) -> usize {
        self.ineq
            .iter()
            .chain(self.eq.iter())
            .map(|r| r.coeffs.len())
            .sum()
    }

    /// Dimension and NaN checks; every backend calls this first.
    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.n_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::InvalidProblem(format!(
                "bounds length {}/{} does not match {} variables",
                self.lower.len(),
                self.upper.len(),
                n
            )));
        }
        if self.objective.iter().any(|c| c.is_nan()) {
            return Err(LpError::InvalidProblem("NaN in objective".into()));
        }
        for (i, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(LpError::InvalidProblem(format!(
                    "invalid bounds [{lo}, {hi}] on variable {i}"
                )));
            }
        }
        for (name, rows) in [("ineq", &self.ineq), ("eq", &self.eq)] {
            for (r, row) in rows.iter().enumerate() {
                if row.rhs.is_nan() {
                    return Err(LpError::InvalidProblem(format!("NaN rhs in {name} row {r}")));
                }
                for &(j, v) in &row.coeffs {
                    if j >= n {
                        return Err(LpError::InvalidProblem(format!(
                            "{name} row {r} references variable {j} (n = {n})"
                        )));
                    }
                    if v.is_nan() {
                        return Err(LpError::InvalidProblem(format!(
                            "NaN coefficient in {name} row {r}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// `c'x` for a candidate point.
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest absolute constraint/bound violation of a candidate point.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for row in &self.ineq {
            let lhs: f64 = row.coeffs.iter().map(|&(j, v)| v * x[j]).sum();
            worst = worst.max(lhs - row.rhs);
        }
        for row in &self.eq {
            let lhs: f64 = row.coeffs.iter().map(|&(j, v)| v * x[j]).sum();
            worst = worst.max((lhs - row.rhs).abs());
        }
        for (j, xv) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - xv).max(xv - self.upper[j]);
        }
        worst
    }
}

/// Size cutoff below which [`Backend::Auto`] stays on the dense simplex.
const DENSE_LIMIT: usize = 500;

/// Solve with automatic backend selection.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    solve_lp_with(lp, Backend::Auto)
}

pub fn solve_lp_with(lp: &LinearProgram, backend: Backend) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let backend = match backend {
        Backend::Auto => {
            if lp.n_vars() <= DENSE_LIMIT && lp.n_rows() <= DENSE_LIMIT {
                Backend::DenseSimplex
            } else {
                Backend::InteriorPoint
            }
        }
        b => b,
    };
    match backend {
        Backend::DenseSimplex => simplex::solve(lp),
        Backend::InteriorPoint => interior::solve(lp),
        Backend::Auto => unreachable!(),
    }
}
