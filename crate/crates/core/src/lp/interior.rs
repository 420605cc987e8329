//! Sparse interior-point backend for large programs, built on Clarabel.

use super::{LinearProgram, LpError, LpSolution, LpStatus};
use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

/// Assemble a CSC matrix from (row, col, value) triplets.
fn csc_from_triplets(m: usize, n: usize, triplets: &mut Vec<(usize, usize, f64)>) -> CscMatrix {
    triplets.sort_unstable_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
    let nnz = triplets.len();
    let mut colptr = vec![0usize; n + 1];
    let mut rowval = Vec::with_capacity(nnz);
    let mut nzval = Vec::with_capacity(nnz);
    for &(r, c, v) in triplets.iter() {
        colptr[c + 1] += 1;
        rowval.push(r);
        nzval.push(v);
    }
    for c in 0..n {
        colptr[c + 1] += colptr[c];
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}

pub(super) fn solve(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    let n = lp.n_vars();
    let n_eq = lp.eq.len();

    // Constraint order: equality rows (zero cone), then inequality rows and
    // finite bounds (nonnegative cone). Clarabel form: A x + s = b, s in K.
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(lp.nnz() + 2 * n);
    let mut b: Vec<f64> = Vec::new();

    for (r, row) in lp.eq.iter().enumerate() {
        for &(j, v) in &row.coeffs {
            triplets.push((r, j, v));
        }
        b.push(row.rhs);
    }
    let mut r = n_eq;
    for row in &lp.ineq {
        for &(j, v) in &row.coeffs {
            triplets.push((r, j, v));
        }
        b.push(row.rhs);
        r += 1;
    }
    for j in 0..n {
        if lp.upper[j].is_finite() {
            triplets.push((r, j, 1.0));
            b.push(lp.upper[j]);
            r += 1;
        }
        if lp.lower[j].is_finite() {
            triplets.push((r, j, -1.0));
            b.push(-lp.lower[j]);
            r += 1;
        }
    }
    let m = r;
    let n_nonneg = m - n_eq;

    let a = csc_from_triplets(m, n, &mut triplets);
    let p = CscMatrix::zeros((n, n));

    let cones: Vec<SupportedConeT<f64>> = vec![
        SupportedConeT::ZeroConeT(n_eq),
        SupportedConeT::NonnegativeConeT(n_nonneg),
    ];

    let settings = DefaultSettings {
        verbose: false,
        max_iter: 400,
        ..DefaultSettings::default()
    };

    let mut solver = DefaultSolver::new(&p, &lp.objective, &a, &b, &cones, settings);
    solver.solve();

    let iterations = solver.info.iterations as usize;
    let status = match solver.solution.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => LpStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            LpStatus::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => LpStatus::Unbounded,
        other => {
            return Err(LpError::NumericalFailure(format!(
                "interior-point solver stopped with status {other:?}"
            )))
        }
    };

    if status != LpStatus::Optimal {
        return Ok(LpSolution {
            status,
            x: vec![0.0; n],
            objective: if status == LpStatus::Unbounded {
                f64::NEG_INFINITY
            } else {
                f64::NAN
            },
            iterations,
        });
    }

    let x = solver.solution.x.clone();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective: lp.objective_value(&x),
        x,
        iterations,
    })
}
