//! Deterministic LP reformulation of the robust counterpart, plus the
//! scenario and worst-case baselines.
//!
//! For a polyhedral uncertainty set `{ξ : Gξ <= g}` with `q` rows, every
//! uncertain row `e_k'x + f_k'ξ + x'F_kξ <= h_k` turns, by LP duality on the
//! inner maximization over ξ, into
//!
//! ```text
//! g'y_k + e_k'x <= h_k,      F_k'x - G'y_k + f_k = 0,      y_k >= 0,
//! ```
//!
//! giving one LP in `(x, y_1..y_K)` with `n_x + K q` variables and
//! `K + K n_ξ` rows on top of the deterministic ones.

use crate::compact::{CompactProblem, RowFamily};
use crate::drset::RobustSet;
use crate::lp::{solve_lp, solve_lp_with, Backend, LinearProgram, LpError, LpStatus};
use crate::uncertainty::{PartitionSpec, SampleSet};
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::seq::index::sample as index_sample;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DrPoly,
    DrBox,
    Scenario,
    WorstCase,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::DrPoly => "drpoly",
            Method::DrBox => "drbox",
            Method::Scenario => "scenario",
            Method::WorstCase => "worstcase",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    pub wall_time_s: f64,
    pub n_vars: usize,
    pub n_rows: usize,
}

/// First-stage decisions, recourse policies, and audit data of one solve.
#[derive(Debug, Clone)]
pub struct DispatchSolution {
    pub method: Method,
    pub theta: Option<f64>,
    pub cost: f64,
    pub p: Vec<f64>,
    pub r_up: Vec<f64>,
    pub r_down: Vec<f64>,
    pub r_con: Vec<f64>,
    /// `alpha[c][g]`, `delta[c][g]` in contingency-list order.
    pub alpha: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
    pub status: LpStatus,
    pub stats: SolverStats,
    /// Dual block `y_k` per uncertain row, kept for audits (robust methods).
    pub duals: Option<Vec<Vec<f64>>>,
    /// Raw decision vector, used by the validation harness.
    pub x: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum RobustError {
    #[error("robust problem infeasible: {diagnosis}")]
    InfeasibleRobust { diagnosis: String },
    #[error("scenario problem infeasible")]
    InfeasibleScenario,
    #[error("problem unbounded (check cost coefficients)")]
    Unbounded,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("solution fails the {check} audit: {detail}")]
    AuditFailure { check: &'static str, detail: String },
}

/// Dualize the robust counterpart over `{ξ : Gξ <= g}`.
fn reformulate_with(
    problem: &CompactProblem,
    g_mat: &DMatrix<f64>,
    g_vec: &DVector<f64>,
) -> Result<LinearProgram, RobustError> {
    let n_x = problem.n_x();
    let n_xi = problem.n_xi;
    if g_mat.ncols() != n_xi && !(n_xi == 0 && g_mat.ncols() == 0) {
        return Err(RobustError::DimensionMismatch(format!(
            "uncertainty set has {} columns for n_xi = {}",
            g_mat.ncols(),
            n_xi
        )));
    }
    let q = g_mat.nrows();
    let k_total = problem.uncertain.len();
    let mut lp = LinearProgram::new(n_x + k_total * q);
    lp.objective[..n_x].copy_from_slice(&problem.cost);
    for (row, rhs) in problem.det_rows.iter().zip(&problem.det_rhs) {
        lp.add_ineq(row.clone(), *rhs);
    }
    // Column sparsity of G per ξ coordinate.
    let mut g_cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_xi];
    for r in 0..q {
        for j in 0..n_xi {
            let v = g_mat[(r, j)];
            if v != 0.0 {
                g_cols[j].push((r, v));
            }
        }
    }
    for (k, row) in problem.uncertain.iter().enumerate() {
        let y0 = n_x + k * q;
        for r in 0..q {
            lp.set_bounds(y0 + r, 0.0, f64::INFINITY);
        }
        // g'y_k + e_k'x <= h_k
        let mut coeffs: Vec<(usize, f64)> = row.e.clone();
        for r in 0..q {
            if g_vec[r] != 0.0 {
                coeffs.push((y0 + r, g_vec[r]));
            } else {
                coeffs.push((y0 + r, 0.0));
            }
        }
        lp.add_ineq(coeffs, row.h);
        // F_k'x - G'y_k + f_k = 0, one row per ξ coordinate.
        let mut f_cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_xi];
        for &(xc, wc, a) in &row.f_mat {
            f_cols[wc].push((xc, a));
        }
        for j in 0..n_xi {
            let mut eq: Vec<(usize, f64)> = f_cols[j].clone();
            for &(r, v) in &g_cols[j] {
                eq.push((y0 + r, -v));
            }
            lp.add_eq(eq, -row.f[j]);
        }
    }
    Ok(lp)
}

/// Public reformulation entry point over a built robust set.
pub fn reformulate_robust(
    problem: &CompactProblem,
    set: &RobustSet,
) -> Result<LinearProgram, RobustError> {
    reformulate_with(problem, &set.g_mat, &set.g_vec)
}

fn decode_solution(
    problem: &CompactProblem,
    method: Method,
    theta: Option<f64>,
    x_full: &[f64],
    q: usize,
    stats: SolverStats,
    keep_duals: bool,
) -> Result<DispatchSolution, RobustError> {
    let n_x = problem.n_x();
    let x = &x_full[..n_x];
    let det_violation = problem.det_violation(x);
    if det_violation > 1e-6 {
        return Err(RobustError::AuditFailure {
            check: "deterministic-feasibility",
            detail: format!("max residual {det_violation:.3e} exceeds 1e-6"),
        });
    }
    let cost: f64 = problem.cost.iter().zip(x).map(|(c, v)| c * v).sum();
    let d = problem.decode(x);
    let duals = if keep_duals && q > 0 {
        Some(
            (0..problem.uncertain.len())
                .map(|k| x_full[n_x + k * q..n_x + (k + 1) * q].to_vec())
                .collect(),
        )
    } else {
        None
    };
    Ok(DispatchSolution {
        method,
        theta,
        cost,
        p: d.p,
        r_up: d.r_up,
        r_down: d.r_down,
        r_con: d.r_con,
        alpha: d.alpha,
        delta: d.delta,
        status: LpStatus::Optimal,
        stats,
        duals,
        x: x.to_vec(),
    })
}

/// Chebyshev center of `{ξ : Gξ <= g}` (ℓ2 ball), used as the canonical
/// interior point for infeasibility diagnoses.
fn chebyshev_center(g_mat: &DMatrix<f64>, g_vec: &DVector<f64>) -> Option<Vec<f64>> {
    let n = g_mat.ncols();
    let q = g_mat.nrows();
    if n == 0 || q == 0 {
        return None;
    }
    let mut lp = LinearProgram::new(n + 1);
    lp.objective[n] = -1.0;
    lp.set_bounds(n, 0.0, f64::INFINITY);
    for r in 0..q {
        let norm: f64 = (0..n).map(|j| g_mat[(r, j)].powi(2)).sum::<f64>().sqrt();
        let mut coeffs: Vec<(usize, f64)> = (0..n)
            .filter(|&j| g_mat[(r, j)] != 0.0)
            .map(|j| (j, g_mat[(r, j)]))
            .collect();
        coeffs.push((n, norm));
        lp.add_ineq(coeffs, g_vec[r]);
    }
    match solve_lp_with(&lp, Backend::DenseSimplex) {
        Ok(sol) if sol.status == LpStatus::Optimal => Some(sol.x[..n].to_vec()),
        _ => None,
    }
}

/// Explain an infeasible robust solve: solve the deterministic-only problem
/// and report the row family with the largest violation at the set's
/// Chebyshev center.
fn infeasibility_diagnosis(
    problem: &CompactProblem,
    g_mat: &DMatrix<f64>,
    g_vec: &DVector<f64>,
) -> String {
    let mut lp = LinearProgram::new(problem.n_x());
    lp.objective.copy_from_slice(&problem.cost);
    for (row, rhs) in problem.det_rows.iter().zip(&problem.det_rhs) {
        lp.add_ineq(row.clone(), *rhs);
    }
    let det = match solve_lp(&lp) {
        Ok(sol) if sol.status == LpStatus::Optimal => sol.x,
        Ok(_) => return "even the deterministic rows alone are infeasible".into(),
        Err(e) => return format!("deterministic probe failed: {e}"),
    };
    let Some(center) = chebyshev_center(g_mat, g_vec) else {
        return "uncertainty set is empty or degenerate".into(),
    };
    let mut worst: Option<(usize, f64)> = None;
    for k in 0..problem.uncertain.len() {
        let v = problem
            .evaluate_row(k, &det, &center)
            .unwrap_or(f64::NEG_INFINITY);
        if worst.map_or(true, |(_, w)| v > w) {
            worst = Some((k, v));
        }
    }
    match worst {
        Some((k, v)) => {
            let row = &problem.uncertain[k];
            format!(
                "most stressed row at the set's Chebyshev center: {} under {} (margin {v:+.3} MW at the deterministic optimum)",
                row.family.label(),
                problem.contingencies[row.contingency],
            )
        }
        None => "no uncertain rows to diagnose".into(),
    }
}

/// Inner maximization `max (f_k + F_k'x)'ξ  s.t. Gξ <= g` by LP.
fn inner_max(
    coef: &[f64],
    g_mat: &DMatrix<f64>,
    g_vec: &DVector<f64>,
) -> Result<f64, RobustError> {
    let n = coef.len();
    let mut lp = LinearProgram::new(n);
    for j in 0..n {
        lp.objective[j] = -coef[j];
    }
    for r in 0..g_mat.nrows() {
        let coeffs: Vec<(usize, f64)> = (0..n)
            .filter(|&j| g_mat[(r, j)] != 0.0)
            .map(|j| (j, g_mat[(r, j)]))
            .collect();
        lp.add_ineq(coeffs, g_vec[r]);
    }
    let sol = solve_lp_with(&lp, Backend::DenseSimplex)?;
    match sol.status {
        LpStatus::Optimal => Ok(-sol.objective),
        LpStatus::Unbounded => Ok(f64::INFINITY),
        LpStatus::Infeasible => Err(RobustError::AuditFailure {
            check: "inner-max",
            detail: "uncertainty set empty during audit".into(),
        }),
    }
}

/// Semi-infinite feasibility audit: on up to `max_rows` uncertain rows,
/// maximize the ξ-dependent part over the set by LP and confirm the robust
/// constraint holds with margin `tol`.
pub fn robust_feasibility_audit(
    problem: &CompactProblem,
    g_mat: &DMatrix<f64>,
    g_vec: &DVector<f64>,
    x: &[f64],
    max_rows: usize,
    tol: f64,
) -> Result<(), RobustError> {
    let k_total = problem.uncertain.len();
    let picks: Vec<usize> = if k_total <= max_rows {
        (0..k_total).collect()
    } else {
        let mut rng = StdRng::seed_from_u64(2024);
        index_sample(&mut rng, k_total, max_rows).into_iter().collect()
    };
    for k in picks {
        let (constant, coef) = problem.row_affine(k, x);
        let worst = constant + inner_max(&coef, g_mat, g_vec)?;
        if worst > tol {
            let row = &problem.uncertain[k];
            return Err(RobustError::AuditFailure {
                check: "semi-infinite",
                detail: format!(
                    "row {k} ({} under {}) violated by {worst:.3e}",
                    row.family.label(),
                    problem.contingencies[row.contingency]
                ),
            });
        }
    }
    Ok(())
}

fn solve_robust_lp(
    problem: &CompactProblem,
    g_mat: &DMatrix<f64>,
    g_vec: &DVector<f64>,
    method: Method,
    theta: Option<f64>,
) -> Result<DispatchSolution, RobustError> {
    let start = Instant::now();
    let lp = reformulate_with(problem, g_mat, g_vec)?;
    let (n_vars, n_rows) = (lp.n_vars(), lp.n_rows());
    let sol = solve_lp(&lp)?;
    let stats = SolverStats {
        iterations: sol.iterations,
        wall_time_s: start.elapsed().as_secs_f64(),
        n_vars,
        n_rows,
    };
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Err(RobustError::InfeasibleRobust {
                diagnosis: infeasibility_diagnosis(problem, g_mat, g_vec),
            })
        }
        LpStatus::Unbounded => return Err(RobustError::Unbounded),
    }
    let solution = decode_solution(problem, method, theta, &sol.x, g_mat.nrows(), stats, true)?;
    robust_feasibility_audit(problem, g_mat, g_vec, &solution.x, 200, 1e-6)?;
    Ok(solution)
}

/// Robust dispatch over a data-driven polyhedral set.
pub fn solve_drpoly(
    problem: &CompactProblem,
    set: &RobustSet,
) -> Result<DispatchSolution, RobustError> {
    let method = if set
        .slabs
        .iter()
        .all(|s| matches!(s.kind, crate::drset::SlabKind::Axis(_)))
    {
        Method::DrBox
    } else {
        Method::DrPoly
    };
    solve_robust_lp(problem, &set.g_mat, &set.g_vec, method, Some(set.theta))
}

/// Block-diagonal lift of the per-partition support polyhedra to full
/// ξ-coordinates.
pub fn support_polytope(partition: &PartitionSpec) -> (DMatrix<f64>, DVector<f64>) {
    let n_xi = partition.n_xi();
    let q: usize = partition.supports.iter().map(|s| s.gamma.nrows()).sum();
    let mut g_mat = DMatrix::<f64>::zeros(q, n_xi);
    let mut g_vec = DVector::<f64>::zeros(q);
    let mut offset = 0;
    for (group, support) in partition.groups.iter().zip(&partition.supports) {
        for r in 0..support.gamma.nrows() {
            for (j, &w) in group.iter().enumerate() {
                g_mat[(offset + r, w)] = support.gamma[(r, j)];
            }
            g_vec[offset + r] = support.rho[r];
        }
        offset += support.gamma.nrows();
    }
    (g_mat, g_vec)
}

/// Worst-case dispatch: the uncertain rows must hold on the whole support.
pub fn solve_worstcase(
    problem: &CompactProblem,
    partition: &PartitionSpec,
) -> Result<DispatchSolution, RobustError> {
    let (g_mat, g_vec) = support_polytope(partition);
    solve_robust_lp(problem, &g_mat, &g_vec, Method::WorstCase, None)
}

/// Scenario dispatch: impose every uncertain row at every training sample.
pub fn solve_scenario(
    problem: &CompactProblem,
    samples: &SampleSet,
) -> Result<DispatchSolution, RobustError> {
    if samples.n_xi() != problem.n_xi {
        return Err(RobustError::DimensionMismatch(format!(
            "samples have {} columns for n_xi = {}",
            samples.n_xi(),
            problem.n_xi
        )));
    }
    if samples.is_empty() && problem.n_xi > 0 {
        return Err(RobustError::DimensionMismatch(
            "scenario method needs at least one sample".into(),
        ));
    }
    let start = Instant::now();
    let n_x = problem.n_x();
    let mut lp = LinearProgram::new(n_x);
    lp.objective.copy_from_slice(&problem.cost);
    for (row, rhs) in problem.det_rows.iter().zip(&problem.det_rhs) {
        lp.add_ineq(row.clone(), *rhs);
    }
    let mut dense = vec![0.0_f64; n_x];
    for row in &problem.uncertain {
        for m in 0..samples.len() {
            let xi = samples.row(m);
            for &(j, a) in &row.e {
                dense[j] += a;
            }
            for &(xc, wc, a) in &row.f_mat {
                dense[xc] += a * xi[wc];
            }
            let mut coeffs: Vec<(usize, f64)> = Vec::with_capacity(row.e.len() + 4);
            for (j, v) in dense.iter_mut().enumerate() {
                if *v != 0.0 {
                    coeffs.push((j, *v));
                    *v = 0.0;
                }
            }
            let rhs = row.h - row.f.iter().zip(&xi).map(|(a, b)| a * b).sum::<f64>();
            lp.add_ineq(coeffs, rhs);
        }
    }
    let (n_vars, n_rows) = (lp.n_vars(), lp.n_rows());
    let sol = solve_lp(&lp)?;
    let stats = SolverStats {
        iterations: sol.iterations,
        wall_time_s: start.elapsed().as_secs_f64(),
        n_vars,
        n_rows,
    };
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(RobustError::InfeasibleScenario),
        LpStatus::Unbounded => return Err(RobustError::Unbounded),
    }
    let solution = decode_solution(problem, Method::Scenario, None, &sol.x, 0, stats, false)?;
    // Every training sample must be satisfied at the optimum.
    for m in 0..samples.len() {
        let xi = samples.row(m);
        for k in 0..problem.uncertain.len() {
            let v = problem.evaluate_row(k, &solution.x, &xi).unwrap();
            if v > 1e-6 {
                return Err(RobustError::AuditFailure {
                    check: "scenario-feasibility",
                    detail: format!("training sample {m} violates row {k} by {v:.3e}"),
                });
            }
        }
    }
    Ok(solution)
}

impl DispatchSolution {
    /// JSON with per-generator and per-contingency blocks; dual blocks stay
    /// in memory only.
    pub fn to_json(&self, problem: &CompactProblem) -> serde_json::Value {
        let gens: Vec<serde_json::Value> = (0..self.p.len())
            .map(|g| {
                serde_json::json!({
                    "id": problem.gen_ids.get(g).cloned().unwrap_or_else(|| format!("g{g}")),
                    "p": self.p[g],
                    "r_up": self.r_up[g],
                    "r_down": self.r_down[g],
                    "r_con": self.r_con[g],
                })
            })
            .collect();
        let conts: Vec<serde_json::Value> = problem
            .contingencies
            .iter()
            .enumerate()
            .map(|(c, cont)| {
                serde_json::json!({
                    "contingency": cont.to_string(),
                    "alpha": self.alpha[c],
                    "delta": self.delta[c],
                })
            })
            .collect();
        serde_json::json!({
            "method": self.method,
            "theta": self.theta,
            "cost": self.cost,
            "generators": gens,
            "contingencies": conts,
            "solver": self.stats,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compact::build_compact;
    use crate::drset::{build_xirob, Slab, SlabKind};
    use crate::network::{compute_all_ptdfs, enumerate_contingencies, Contingency, WindUnit};
    use crate::uncertainty::SupportPolyhedron;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::collections::HashSet;

    fn triangle_with_wind() -> crate::network::NetworkCase {
        let mut case = crate::network::tests::triangle_case();
        case.generators[0].p_max = 80.0;
        case.generators[1].p_max = 80.0;
        case.wind_units.push(WindUnit {
            id: "W2".into(),
            bus: 2,
            p_w: 20.0,
            support_lower: 10.0,
            support_upper: 30.0,
        });
        case
    }

    fn build_problem(
        case: &crate::network::NetworkCase,
    ) -> (CompactProblem, Vec<Contingency>) {
        let conts = enumerate_contingencies(case, &HashSet::new());
        let ptdfs = compute_all_ptdfs(case, &conts).unwrap();
        (build_compact(case, &conts, &ptdfs, 0.05).unwrap(), conts)
    }

    /// Interval uncertainty set `[lo, hi]` in one dimension.
    fn interval_set(lo: f64, hi: f64) -> RobustSet {
        RobustSet {
            slabs: vec![Slab {
                group: 0,
                normal: nalgebra::DVector::from_row_slice(&[1.0]),
                lower: lo,
                upper: hi,
                kind: SlabKind::Axis(0),
            }],
            g_mat: DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            g_vec: DVector::from_row_slice(&[hi, -lo]),
            n_dr: 1,
            theta: 0.0,
            epsilon: 0.05,
            budget: 0.05,
            diagnostics: vec![],
        }
    }

    #[test]
    fn scalar_duality_hand_check() {
        // Ξ = [0,1], row 0.5 x + x ξ <= h: robust iff 0.5x + max(x, 0) <= h.
        // Minimal CompactProblem with one variable and one uncertain row is
        // easiest to fake directly.
        let problem = CompactProblem {
            cost: vec![1.0],
            det_rows: vec![vec![(0, -1.0)]],
            det_rhs: vec![1.0], // x >= -1
            uncertain: vec![crate::compact::UncertainRow {
                e: vec![(0, 0.5)],
                f: vec![0.0],
                f_mat: vec![(0, 0, 1.0)],
                h: 0.6,
                contingency: 0,
                family: RowFamily::ReserveUp { gen: 0 },
            }],
            epsilon: 0.05,
            layout: crate::compact::DecisionLayout {
                n_gens: 0,
                n_contingencies: 0,
            },
            n_xi: 1,
            contingencies: vec![Contingency::Intact],
            gen_out: vec![None],
            gen_ids: vec![],
            wind_ids: vec![],
            warnings: vec![],
        };
        // layout.n_x() = 0 would clash with the one real variable; patch a
        // 1-variable layout through a fake generator count is not possible,
        // so treat x as p of a single generator with zero contingencies.
        let mut problem = problem;
        problem.layout = crate::compact::DecisionLayout {
            n_gens: 1,
            n_contingencies: 0,
        };
        problem.cost = vec![1.0, 0.0, 0.0, 0.0];
        problem.det_rows = vec![vec![(0, -1.0)]];
        problem.uncertain[0].e = vec![(0, 0.5)];
        problem.gen_ids = vec!["G".into()];

        let set = interval_set(0.0, 1.0);
        // Minimizing x: at x = -1: 0.5(-1) + max over ξ of (-1)ξ = -0.5 + 0 <= 0.6 ok.
        let sol = solve_drpoly(&problem, &set).unwrap();
        assert_relative_eq!(sol.x[0], -1.0, epsilon = 1e-8);

        // Now force x upward: verify the robust boundary x: 0.5x + x = 0.6
        // at x >= 0 -> x = 0.4 is the largest feasible.
        let mut max_problem = problem.clone();
        max_problem.cost = vec![-1.0, 0.0, 0.0, 0.0];
        max_problem.det_rows = vec![vec![(0, 1.0)]];
        max_problem.det_rhs = vec![10.0]; // x <= 10
        let sol = solve_drpoly(&max_problem, &set).unwrap();
        assert_relative_eq!(sol.x[0], 0.4, epsilon = 1e-8);
    }

    #[test]
    fn reformulation_counts() {
        let case = triangle_with_wind();
        let (problem, _) = build_problem(&case);
        let set = interval_set(10.0, 30.0);
        let lp = reformulate_robust(&problem, &set).unwrap();
        let k = problem.k_exact();
        let q = 2;
        assert_eq!(lp.n_vars(), problem.n_x() + k * q);
        assert_eq!(
            lp.n_rows(),
            problem.det_rows.len() + k + k * problem.n_xi
        );
    }

    #[test]
    fn zero_uncertainty_equals_plain_dispatch() {
        let case = crate::network::tests::triangle_case();
        let (problem, _) = build_problem(&case);
        assert_eq!(problem.n_xi, 0);
        let set = RobustSet {
            slabs: vec![],
            g_mat: DMatrix::zeros(0, 0),
            g_vec: DVector::zeros(0),
            n_dr: 0,
            theta: 0.0,
            epsilon: 0.05,
            budget: 0.05,
            diagnostics: vec![],
        };
        let sol = solve_drpoly(&problem, &set).unwrap();
        // Equivalent direct LP on the deterministic rows.
        let mut lp = LinearProgram::new(problem.n_x());
        lp.objective.copy_from_slice(&problem.cost);
        for (row, rhs) in problem.det_rows.iter().zip(&problem.det_rhs) {
            lp.add_ineq(row.clone(), *rhs);
        }
        let direct = solve_lp(&lp).unwrap();
        assert_relative_eq!(sol.cost, direct.objective, epsilon = 1e-7);
    }

    #[test]
    fn point_set_equals_single_scenario() {
        let case = triangle_with_wind();
        let (problem, _) = build_problem(&case);
        let xi0 = 22.0;
        let set = interval_set(xi0, xi0);
        let robust = solve_drpoly(&problem, &set).unwrap();
        let samples = SampleSet::from_rows(&[vec![xi0]]);
        let scenario = solve_scenario(&problem, &samples).unwrap();
        assert_relative_eq!(robust.cost, scenario.cost, epsilon = 1e-7);
    }

    #[test]
    fn single_point_support_worstcase_equals_scenario() {
        let case = triangle_with_wind();
        let (problem, _) = build_problem(&case);
        let xi0 = 20.0;
        let partition = PartitionSpec {
            groups: vec![vec![0]],
            supports: vec![SupportPolyhedron::from_box(&[xi0], &[xi0])],
        };
        let worst = solve_worstcase(&problem, &partition).unwrap();
        let scenario =
            solve_scenario(&problem, &SampleSet::from_rows(&[vec![xi0]])).unwrap();
        assert_relative_eq!(worst.cost, scenario.cost, epsilon = 1e-7);
    }

    #[test]
    fn scenario_equals_forecast_dispatch_at_forecast_sample() {
        let case = triangle_with_wind();
        let (problem, _) = build_problem(&case);
        let scenario =
            solve_scenario(&problem, &SampleSet::from_rows(&[vec![20.0]])).unwrap();
        // At the forecast sample the mismatch is zero, so reserves are free
        // to be zero and the cost reduces to the deterministic dispatch.
        let mut lp = LinearProgram::new(problem.n_x());
        lp.objective.copy_from_slice(&problem.cost);
        for (row, rhs) in problem.det_rows.iter().zip(&problem.det_rhs) {
            lp.add_ineq(row.clone(), *rhs);
        }
        let det = solve_lp(&lp).unwrap();
        assert_relative_eq!(scenario.cost, det.objective, epsilon = 1e-7);
    }

    #[test]
    fn cost_ordering_scenario_drpoly_worstcase() {
        let case = triangle_with_wind();
        let (problem, _) = build_problem(&case);
        let mut rng = StdRng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| vec![rng.random_range(17.0..23.0)])
            .collect();
        let samples = SampleSet::from_rows(&rows);
        let partition = PartitionSpec::boxed(vec![vec![0]], &[10.0], &[30.0]);
        let scenario = solve_scenario(&problem, &samples).unwrap();
        let worst = solve_worstcase(&problem, &partition).unwrap();
        let mut prev = scenario.cost;
        for theta in [1e-4, 1e-2, 0.2] {
            let set = build_xirob(&samples, &partition, &[0], theta, 0.05).unwrap();
            let sol = solve_drpoly(&problem, &set).unwrap();
            assert!(
                sol.cost >= prev - 1e-6,
                "cost {} dropped below {prev} at theta {theta}",
                sol.cost
            );
            assert!(sol.cost <= worst.cost + 1e-6);
            prev = sol.cost;
        }
    }

    #[test]
    fn vertex_enumeration_equivalence_small_sets() {
        // Random small instances: the dual reformulation must match imposing
        // the rows at every vertex of the polytope.
        let mut rng = StdRng::seed_from_u64(33);
        for trial in 0..25 {
            let n_xi = rng.random_range(1..=3usize);
            // Random box plus one diagonal cut to keep vertices interesting.
            let lo: Vec<f64> = (0..n_xi).map(|_| rng.random_range(-2.0..0.0)).collect();
            let hi: Vec<f64> = (0..n_xi).map(|_| rng.random_range(0.5..2.0)).collect();
            let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
            for j in 0..n_xi {
                let mut r = vec![0.0; n_xi];
                r[j] = 1.0;
                rows.push((r.clone(), hi[j]));
                r[j] = -1.0;
                rows.push((r, -lo[j]));
            }
            if rng.random_bool(0.5) && n_xi > 1 {
                let cut: Vec<f64> = (0..n_xi).map(|_| rng.random_range(-1.0..1.0)).collect();
                let level = rng.random_range(0.5..2.0);
                rows.push((cut, level));
            }
            let q = rows.len();
            let mut g_mat = DMatrix::<f64>::zeros(q, n_xi);
            let mut g_vec = DVector::<f64>::zeros(q);
            for (r, (coefs, rhs)) in rows.iter().enumerate() {
                for (j, v) in coefs.iter().enumerate() {
                    g_mat[(r, j)] = *v;
                }
                g_vec[r] = *rhs;
            }

            // Tiny fake compact problem: 2 decision vars in a box, 3 rows.
            let n_fake_gens = 2;
            let layout = crate::compact::DecisionLayout {
                n_gens: n_fake_gens,
                n_contingencies: 0,
            };
            let n_x = layout.n_x();
            let mut det_rows = Vec::new();
            let mut det_rhs = Vec::new();
            for v in 0..n_x {
                det_rows.push(vec![(v, 1.0)]);
                det_rhs.push(3.0);
                det_rows.push(vec![(v, -1.0)]);
                det_rhs.push(3.0);
            }
            let uncertain: Vec<crate::compact::UncertainRow> = (0..3)
                .map(|_| {
                    let e: Vec<(usize, f64)> = (0..n_x)
                        .map(|v| (v, rng.random_range(-1.0..1.0)))
                        .collect();
                    let f: Vec<f64> =
                        (0..n_xi).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let f_mat: Vec<(usize, usize, f64)> = (0..n_x)
                        .flat_map(|v| {
                            (0..n_xi)
                                .map(|w| (v, w, rng.random_range(-0.5..0.5)))
                                .collect::<Vec<_>>()
                        })
                        .collect();
                    crate::compact::UncertainRow {
                        e,
                        f,
                        f_mat,
                        h: rng.random_range(2.0..6.0),
                        contingency: 0,
                        family: RowFamily::ReserveUp { gen: 0 },
                    }
                })
                .collect();
            let problem = CompactProblem {
                cost: (0..n_x).map(|_| rng.random_range(-1.0..1.0)).collect(),
                det_rows,
                det_rhs,
                uncertain,
                epsilon: 0.05,
                layout,
                n_xi,
                contingencies: vec![Contingency::Intact],
                gen_out: vec![None],
                gen_ids: vec!["A".into(), "B".into()],
                wind_ids: vec![],
                warnings: vec![],
            };

            // Vertex enumeration of the polytope.
            let mut vertices: Vec<Vec<f64>> = Vec::new();
            let idx: Vec<usize> = (0..q).collect();
            let mut combo = vec![0usize; n_xi];
            fn combos(
                q: usize,
                k: usize,
                start: usize,
                combo: &mut Vec<usize>,
                pos: usize,
                out: &mut Vec<Vec<usize>>,
            ) {
                if pos == k {
                    out.push(combo[..k].to_vec());
                    return;
                }
                for c in start..q {
                    combo[pos] = c;
                    combos(q, k, c + 1, combo, pos + 1, out);
                }
            }
            let mut sets = Vec::new();
            combos(idx.len(), n_xi, 0, &mut combo, 0, &mut sets);
            for set_rows in sets {
                let mut a = DMatrix::<f64>::zeros(n_xi, n_xi);
                let mut b = DVector::<f64>::zeros(n_xi);
                for (r, &ri) in set_rows.iter().enumerate() {
                    for j in 0..n_xi {
                        a[(r, j)] = g_mat[(ri, j)];
                    }
                    b[r] = g_vec[ri];
                }
                if let Some(v) = a.lu().solve(&b) {
                    let point: Vec<f64> = v.iter().copied().collect();
                    let feasible = (0..q).all(|r| {
                        (0..n_xi).map(|j| g_mat[(r, j)] * point[j]).sum::<f64>()
                            <= g_vec[r] + 1e-7
                    });
                    if feasible {
                        vertices.push(point);
                    }
                }
            }
            assert!(!vertices.is_empty(), "trial {trial}: no vertices");

            // LP with rows imposed at every vertex.
            let mut vlp = LinearProgram::new(problem.n_x());
            vlp.objective.copy_from_slice(&problem.cost);
            for (row, rhs) in problem.det_rows.iter().zip(&problem.det_rhs) {
                vlp.add_ineq(row.clone(), *rhs);
            }
            for row in &problem.uncertain {
                for v in &vertices {
                    let mut coeffs: Vec<f64> = vec![0.0; problem.n_x()];
                    for &(j, a) in &row.e {
                        coeffs[j] += a;
                    }
                    for &(xc, wc, a) in &row.f_mat {
                        coeffs[xc] += a * v[wc];
                    }
                    let rhs =
                        row.h - row.f.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
                    let sparse: Vec<(usize, f64)> = coeffs
                        .iter()
                        .enumerate()
                        .filter(|(_, c)| **c != 0.0)
                        .map(|(j, c)| (j, *c))
                        .collect();
                    vlp.add_ineq(sparse, rhs);
                }
            }
            let vertex_sol = solve_lp_with(&vlp, Backend::DenseSimplex).unwrap();

            let dual_lp = reformulate_with(&problem, &g_mat, &g_vec).unwrap();
            let dual_sol = solve_lp_with(&dual_lp, Backend::DenseSimplex).unwrap();
            assert_eq!(vertex_sol.status, dual_sol.status, "trial {trial}");
            if vertex_sol.status == LpStatus::Optimal {
                assert!(
                    (vertex_sol.objective - dual_sol.objective).abs() <= 1e-6,
                    "trial {trial}: vertex {} vs dual {}",
                    vertex_sol.objective,
                    dual_sol.objective
                );
            }
        }
    }

    #[test]
    fn infeasible_robust_reports_diagnosis() {
        let mut case = triangle_with_wind();
        // Choke every line so the load cannot be served robustly.
        for l in &mut case.lines {
            l.p_l_max = 3.0;
        }
        let (problem, _) = build_problem(&case);
        let set = interval_set(10.0, 30.0);
        match solve_drpoly(&problem, &set) {
            Err(RobustError::InfeasibleRobust { diagnosis }) => {
                assert!(diagnosis.contains("line") || diagnosis.contains("infeasible"));
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn solution_json_shape() {
        let case = triangle_with_wind();
        let (problem, _) = build_problem(&case);
        let set = interval_set(15.0, 25.0);
        let sol = solve_drpoly(&problem, &set).unwrap();
        let json = sol.to_json(&problem);
        assert_eq!(json["generators"].as_array().unwrap().len(), 2);
        assert!(json["cost"].as_f64().unwrap() > 0.0);
        assert_eq!(json["method"], "dr_box");
    }
}
