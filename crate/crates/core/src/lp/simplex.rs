//! Self-contained dense revised simplex: two-phase, Dantzig pricing with a
//! Bland's-rule fallback once degeneracy stalls progress, periodic basis
//! reinversion. Intended for desk-scale programs; large programs go to the
//! sparse backend.

use super::{LinearProgram, LpError, LpSolution, LpStatus};
use nalgebra::DMatrix;

const TOL_REDUCED: f64 = 1e-9;
const TOL_PIVOT: f64 = 1e-9;
const REINVERT_EVERY: usize = 128;

#[derive(Clone, Copy, PartialEq, Eq)]
enum ColKind {
    /// `x = lo + u`, structural variable index.
    Shifted(usize),
    /// `x = hi - u`, structural variable index.
    Negated(usize),
    /// Positive part of a free variable split `x = u - v`.
    SplitPos(usize),
    /// Negative part of a free variable split.
    SplitNeg(usize),
    Slack,
    Artificial,
}

struct State {
    m: usize,
    cols: Vec<Vec<(usize, f64)>>,
    kind: Vec<ColKind>,
    cost: Vec<f64>,
    b: Vec<f64>,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    /// Artificials that left the basis never re-enter.
    banned: Vec<bool>,
    binv: DMatrix<f64>,
    iterations: usize,
}

impl State {
    fn col_times_binv_row(&self, col: usize, y: &[f64]) -> f64 {
        self.cols[col].iter().map(|&(r, v)| y[r] * v).sum()
    }

    fn reinvert(&mut self) -> Result<(), LpError> {
        let m = self.m;
        let mut bm = DMatrix::<f64>::zeros(m, m);
        for (i, &c) in self.basis.iter().enumerate() {
            for &(r, v) in &self.cols[c] {
                bm[(r, i)] = v;
            }
        }
        match bm.try_inverse() {
            Some(inv) => {
                self.binv = inv;
                Ok(())
            }
            None => Err(LpError::NumericalFailure(
                "singular basis during reinversion".into(),
            )),
        }
    }

    fn basic_values(&self) -> Vec<f64> {
        let m = self.m;
        let mut xb = vec![0.0; m];
        for i in 0..m {
            let mut s = 0.0;
            for r in 0..m {
                s += self.binv[(i, r)] * self.b[r];
            }
            xb[i] = s;
        }
        xb
    }

    /// `d = binv * A_col`.
    fn direction(&self, col: usize) -> Vec<f64> {
        let m = self.m;
        let mut d = vec![0.0; m];
        for &(r, v) in &self.cols[col] {
            for i in 0..m {
                d[i] += self.binv[(i, r)] * v;
            }
        }
        d
    }

    fn pivot(&mut self, entering: usize, leaving_row: usize, d: &[f64]) {
        let m = self.m;
        let piv = d[leaving_row];
        // Eta update of the inverse.
        for c in 0..m {
            self.binv[(leaving_row, c)] /= piv;
        }
        for i in 0..m {
            if i != leaving_row {
                let factor = d[i];
                if factor != 0.0 {
                    for c in 0..m {
                        self.binv[(i, c)] -= factor * self.binv[(leaving_row, c)];
                    }
                }
            }
        }
        let old = self.basis[leaving_row];
        self.in_basis[old] = false;
        if self.kind[old] == ColKind::Artificial {
            self.banned[old] = true;
        }
        self.basis[leaving_row] = entering;
        self.in_basis[entering] = true;
        self.iterations += 1;
    }
}

enum PhaseOutcome {
    Optimal,
    Unbounded,
}

fn run_phase(st: &mut State, phase: u8) -> Result<PhaseOutcome, LpError> {
    let m = st.m;
    let n_cols = st.cols.len();
    let max_iter = 200 + 60 * (m + n_cols);
    let mut bland = false;
    let mut degenerate_streak = 0usize;
    let mut since_reinvert = 0usize;

    loop {
        if st.iterations >= max_iter {
            return Err(LpError::NumericalFailure(format!(
                "simplex iteration limit {max_iter} reached in phase {phase}"
            )));
        }
        if since_reinvert >= REINVERT_EVERY {
            st.reinvert()?;
            since_reinvert = 0;
        }

        // y = c_B' binv
        let mut y = vec![0.0; m];
        for (i, &c) in st.basis.iter().enumerate() {
            let cb = st.cost[c];
            if cb != 0.0 {
                for r in 0..m {
                    y[r] += cb * st.binv[(i, r)];
                }
            }
        }

        // Pricing.
        let mut entering: Option<(usize, f64)> = None;
        for j in 0..n_cols {
            if st.in_basis[j] || st.banned[j] {
                continue;
            }
            if phase == 2 && st.kind[j] == ColKind::Artificial {
                continue;
            }
            let rc = st.cost[j] - st.col_times_binv_row(j, &y);
            if rc < -TOL_REDUCED {
                if bland {
                    entering = Some((j, rc));
                    break;
                }
                match entering {
                    Some((_, best)) if rc >= best => {}
                    _ => entering = Some((j, rc)),
                }
            }
        }
        let Some((e, _)) = entering else {
            return Ok(PhaseOutcome::Optimal);
        };

        let d = st.direction(e);
        let xb = st.basic_values();

        // In phase 2 a basic artificial pinned at zero must leave before any
        // move could push it positive.
        let mut leaving: Option<(usize, f64)> = None;
        if phase == 2 {
            let mut best: Option<(usize, f64)> = None;
            for i in 0..m {
                if st.kind[st.basis[i]] == ColKind::Artificial && d[i].abs() > 1e-7 {
                    match best {
                        Some((_, mag)) if d[i].abs() <= mag => {}
                        _ => best = Some((i, d[i].abs())),
                    }
                }
            }
            if let Some((i, _)) = best {
                leaving = Some((i, 0.0));
            }
        }

        if leaving.is_none() {
            let mut best_ratio = f64::INFINITY;
            let mut best_row: Option<usize> = None;
            for i in 0..m {
                if d[i] > TOL_PIVOT {
                    let ratio = xb[i].max(0.0) / d[i];
                    let better = match best_row {
                        None => true,
                        Some(r) => {
                            if bland {
                                ratio < best_ratio - 1e-12
                                    || (ratio < best_ratio + 1e-12
                                        && st.basis[i] < st.basis[r])
                            } else {
                                ratio < best_ratio - 1e-12
                                    || (ratio < best_ratio + 1e-12 && d[i].abs() > d[r].abs())
                            }
                        }
                    };
                    if better {
                        best_ratio = ratio;
                        best_row = Some(i);
                    }
                }
            }
            match best_row {
                Some(r) => leaving = Some((r, best_ratio)),
                None => return Ok(PhaseOutcome::Unbounded),
            }
        }

        let (row, step) = leaving.unwrap();
        if step.abs() < 1e-12 {
            degenerate_streak += 1;
            if degenerate_streak > m + n_cols {
                bland = true;
            }
        } else {
            degenerate_streak = 0;
        }
        st.pivot(e, row, &d);
        since_reinvert += 1;
    }
}

enum Subst {
    Shift(f64),
    Neg(f64),
    Split,
}

pub(super) fn solve(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    let n = lp.n_vars();

    // Variable substitutions to reach x >= 0 standard form.
    let mut subst = Vec::with_capacity(n);
    // Column ids of (u, optional v) per original variable.
    let mut var_cols: Vec<(usize, Option<usize>)> = Vec::with_capacity(n);
    let mut cols: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut kind: Vec<ColKind> = Vec::new();
    let mut cost: Vec<f64> = Vec::new();

    for j in 0..n {
        let (lo, hi) = (lp.lower[j], lp.upper[j]);
        if lo.is_finite() {
            subst.push(Subst::Shift(lo));
            var_cols.push((cols.len(), None));
            cols.push(Vec::new());
            kind.push(ColKind::Shifted(j));
            cost.push(lp.objective[j]);
        } else if hi.is_finite() {
            subst.push(Subst::Neg(hi));
            var_cols.push((cols.len(), None));
            cols.push(Vec::new());
            kind.push(ColKind::Negated(j));
            cost.push(-lp.objective[j]);
        } else {
            subst.push(Subst::Split);
            let u = cols.len();
            cols.push(Vec::new());
            kind.push(ColKind::SplitPos(j));
            cost.push(lp.objective[j]);
            cols.push(Vec::new());
            kind.push(ColKind::SplitNeg(j));
            cost.push(-lp.objective[j]);
            var_cols.push((u, Some(u + 1)));
        }
    }

    // Substituted rows: (sparse coeffs over structural columns, rhs, is_eq).
    let mut rows: Vec<(Vec<(usize, f64)>, f64, bool)> = Vec::new();
    for (src, is_eq) in [(&lp.ineq, false), (&lp.eq, true)] {
        for row in src {
            let mut coeffs: Vec<(usize, f64)> = Vec::with_capacity(row.coeffs.len() + 2);
            let mut rhs = row.rhs;
            for &(j, a) in &row.coeffs {
                if a == 0.0 {
                    continue;
                }
                match subst[j] {
                    Subst::Shift(lo) => {
                        coeffs.push((var_cols[j].0, a));
                        rhs -= a * lo;
                    }
                    Subst::Neg(hi) => {
                        coeffs.push((var_cols[j].0, -a));
                        rhs -= a * hi;
                    }
                    Subst::Split => {
                        coeffs.push((var_cols[j].0, a));
                        coeffs.push((var_cols[j].1.unwrap(), -a));
                    }
                }
            }
            rows.push((coeffs, rhs, is_eq));
        }
    }
    // Upper bounds of doubly-bounded variables become rows on the shifted var.
    for j in 0..n {
        if let Subst::Shift(lo) = subst[j] {
            let hi = lp.upper[j];
            if hi.is_finite() {
                rows.push((vec![(var_cols[j].0, 1.0)], hi - lo, false));
            }
        }
    }

    let m = rows.len();
    let mut b = vec![0.0; m];
    let mut basis = vec![usize::MAX; m];

    for (r, (coeffs, rhs, is_eq)) in rows.into_iter().enumerate() {
        let sign = if rhs < 0.0 { -1.0 } else { 1.0 };
        for (c, a) in coeffs {
            if a != 0.0 {
                cols[c].push((r, sign * a));
            }
        }
        b[r] = sign * rhs;
        if !is_eq {
            let s = cols.len();
            cols.push(vec![(r, sign)]);
            kind.push(ColKind::Slack);
            cost.push(0.0);
            if sign > 0.0 {
                basis[r] = s;
            }
        }
        if basis[r] == usize::MAX {
            let a = cols.len();
            cols.push(vec![(r, 1.0)]);
            kind.push(ColKind::Artificial);
            cost.push(0.0);
            basis[r] = a;
        }
    }

    let n_cols = cols.len();
    let mut in_basis = vec![false; n_cols];
    for &c in &basis {
        in_basis[c] = true;
    }

    let mut st = State {
        m,
        cols,
        kind,
        cost: vec![0.0; n_cols],
        b,
        basis,
        in_basis,
        banned: vec![false; n_cols],
        binv: DMatrix::identity(m, m),
        iterations: 0,
    };

    // Phase 1: minimize the sum of artificials.
    let has_artificial = st.kind.iter().any(|k| *k == ColKind::Artificial);
    if has_artificial {
        for j in 0..n_cols {
            st.cost[j] = if st.kind[j] == ColKind::Artificial {
                1.0
            } else {
                0.0
            };
        }
        match run_phase(&mut st, 1)? {
            PhaseOutcome::Optimal => {}
            PhaseOutcome::Unbounded => {
                return Err(LpError::NumericalFailure(
                    "phase-1 objective unbounded".into(),
                ))
            }
        }
        let xb = st.basic_values();
        let infeas: f64 = st
            .basis
            .iter()
            .zip(&xb)
            .filter(|(c, _)| st.kind[**c] == ColKind::Artificial)
            .map(|(_, v)| v.max(0.0))
            .sum();
        let b_scale = st.b.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
        if infeas > 1e-7 * b_scale {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: vec![0.0; n],
                objective: f64::NAN,
                iterations: st.iterations,
            });
        }
        st.reinvert()?;
    }

    // Phase 2: original cost.
    st.cost.copy_from_slice(&cost);
    let outcome = run_phase(&mut st, 2)?;
    if matches!(outcome, PhaseOutcome::Unbounded) {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: vec![0.0; n],
            objective: f64::NEG_INFINITY,
            iterations: st.iterations,
        });
    }

    st.reinvert()?;
    let xb = st.basic_values();
    let mut std_x = vec![0.0; n_cols];
    for (i, &c) in st.basis.iter().enumerate() {
        std_x[c] = xb[i].max(0.0);
    }

    let mut x = vec![0.0; n];
    for j in 0..n {
        x[j] = match subst[j] {
            Subst::Shift(lo) => lo + std_x[var_cols[j].0],
            Subst::Neg(hi) => hi - std_x[var_cols[j].0],
            Subst::Split => std_x[var_cols[j].0] - std_x[var_cols[j].1.unwrap()],
        };
    }

    // Guard against silent drift: the reported point must actually satisfy
    // the program.
    let scale = lp
        .ineq
        .iter()
        .chain(lp.eq.iter())
        .map(|r| r.rhs.abs())
        .fold(1.0_f64, f64::max);
    if lp.max_violation(&x) > 1e-6 * scale {
        return Err(LpError::NumericalFailure(format!(
            "solution residual {:.3e} exceeds tolerance",
            lp.max_violation(&x)
        )));
    }

    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective: lp.objective_value(&x),
        x,
        iterations: st.iterations,
    })
}
