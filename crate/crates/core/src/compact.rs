//! Translation of the security-constrained dispatch problem into the compact
//! form
//!
//! ```text
//! min c'x   s.t.   Λx <= β,    P( e_k'x + f_k'ξ + x'F_kξ <= h_k,  k = 1..K ) >= 1-ε
//! ```
//!
//! The decision vector stacks, per generator, the planned output `p`, the
//! up/down reserve capacities `r+`, `r-`, the contingency reserve `r_con`,
//! and, per contingency, the recourse policies `α` (fraction of the total
//! renewable mismatch absorbed) and `δ` (contingency reserve activation).
//! Deterministic equality constraints are emitted as paired inequalities.
//! The total renewable mismatch is `P_mis = Σ_w (P_w - ξ_w)`, positive when
//! actual in-feed falls short of the forecast; all signs in `e_k`, `f_k`,
//! `F_k` follow from that single definition.

use crate::network::{Contingency, NetworkCase, PtdfMatrix};
use thiserror::Error;

/// Index map from named decision variables to coordinates of `x`.
///
/// Layout: `[p | r+ | r- | r_con | (α^c0, δ^c0) | (α^c1, δ^c1) | ...]`,
/// so `n_x = 4|G| + 2|C||G|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecisionLayout {
    pub n_gens: usize,
    pub n_contingencies: usize,
}

impl DecisionLayout {
    pub fn n_x(&self) -> usize {
        4 * self.n_gens + 2 * self.n_contingencies * self.n_gens
    }
    pub fn p(&self, g: usize) -> usize {
        g
    }
    pub fn r_up(&self, g: usize) -> usize {
        self.n_gens + g
    }
    pub fn r_down(&self, g: usize) -> usize {
        2 * self.n_gens + g
    }
    pub fn r_con(&self, g: usize) -> usize {
        3 * self.n_gens + g
    }
    pub fn alpha(&self, c: usize, g: usize) -> usize {
        4 * self.n_gens + 2 * c * self.n_gens + g
    }
    pub fn delta(&self, c: usize, g: usize) -> usize {
        4 * self.n_gens + 2 * c * self.n_gens + self.n_gens + g
    }
}

/// Which of the three chance-constrained families a row belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowFamily {
    ReserveUp { gen: usize },
    ReserveDown { gen: usize },
    /// `flow <= p_l_max` (true) or `-flow <= p_l_max` (false) for a line
    /// index into `NetworkCase::lines`.
    LineFlow { line: usize, upper: bool },
}

impl RowFamily {
    pub fn label(&self) -> &'static str {
        match self {
            RowFamily::ReserveUp { .. } => "reserve-up",
            RowFamily::ReserveDown { .. } => "reserve-down",
            RowFamily::LineFlow { .. } => "line",
        }
    }
}

/// One uncertain row `e'x + f'ξ + x'Fξ <= h`.
#[derive(Debug, Clone)]
pub struct UncertainRow {
    pub e: Vec<(usize, f64)>,
    /// Dense over the uncertainty dimension.
    pub f: Vec<f64>,
    /// Triplets `(x_col, ξ_col, value)`; nonzeros live in α-columns only.
    pub f_mat: Vec<(usize, usize, f64)>,
    pub h: f64,
    /// Index into the contingency list.
    pub contingency: usize,
    pub family: RowFamily,
}

#[derive(Debug, Clone)]
pub struct CompactProblem {
    pub cost: Vec<f64>,
    /// Deterministic rows `Λx <= β`.
    pub det_rows: Vec<Vec<(usize, f64)>>,
    pub det_rhs: Vec<f64>,
    pub uncertain: Vec<UncertainRow>,
    pub epsilon: f64,
    pub layout: DecisionLayout,
    pub n_xi: usize,
    pub contingencies: Vec<Contingency>,
    /// Generator index failing in each contingency (`None` for intact/line).
    pub gen_out: Vec<Option<usize>>,
    pub gen_ids: Vec<String>,
    pub wind_ids: Vec<String>,
    /// Structural diagnostics collected during the build.
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum CompactError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("row index {k} out of range (K = {total})")]
    IndexOutOfRange { k: usize, total: usize },
    #[error("epsilon must lie in (0,1), got {0}")]
    BadEpsilon(f64),
}

/// Decoded first- and second-stage decision variables.
#[derive(Debug, Clone)]
pub struct DecodedDispatch {
    pub p: Vec<f64>,
    pub r_up: Vec<f64>,
    pub r_down: Vec<f64>,
    pub r_con: Vec<f64>,
    /// `alpha[c][g]`, `delta[c][g]`.
    pub alpha: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
}

impl CompactProblem {
    pub fn n_x(&self) -> usize {
        self.layout.n_x()
    }

    /// Number of uncertain rows actually built.
    pub fn k_exact(&self) -> usize {
        self.uncertain.len()
    }

    /// `K = 2|C|(|G|+|L|)`: the count when every contingency keeps the full
    /// line set. Line outages drop two rows each, so `k_exact` can be lower.
    pub fn k_formula(&self, n_lines: usize) -> usize {
        2 * self.contingencies.len() * (self.layout.n_gens + n_lines)
    }

    /// `e_k'x + f_k'ξ + x'F_kξ - h_k`; non-positive means satisfied.
    pub fn evaluate_row(&self, k: usize, x: &[f64], xi: &[f64]) -> Result<f64, CompactError> {
        let row = self.uncertain.get(k).ok_or(CompactError::IndexOutOfRange {
            k,
            total: self.uncertain.len(),
        })?;
        if x.len() != self.n_x() {
            return Err(CompactError::DimensionMismatch(format!(
                "x has length {}, expected {}",
                x.len(),
                self.n_x()
            )));
        }
        if xi.len() != self.n_xi {
            return Err(CompactError::DimensionMismatch(format!(
                "ξ has length {}, expected {}",
                xi.len(),
                self.n_xi
            )));
        }
        let mut v: f64 = row.e.iter().map(|&(j, a)| a * x[j]).sum();
        v += row.f.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
        v += row
            .f_mat
            .iter()
            .map(|&(xc, wc, a)| a * x[xc] * xi[wc])
            .sum::<f64>();
        Ok(v - row.h)
    }

    /// Row `k` at fixed `x` as an affine function of ξ:
    /// returns `(constant, coefficients)` with value `constant + coef'ξ`.
    pub fn row_affine(&self, k: usize, x: &[f64]) -> (f64, Vec<f64>) {
        let row = &self.uncertain[k];
        let constant = row.e.iter().map(|&(j, a)| a * x[j]).sum::<f64>() - row.h;
        let mut coef = row.f.clone();
        for &(xc, wc, a) in &row.f_mat {
            coef[wc] += a * x[xc];
        }
        (constant, coef)
    }

    pub fn decode(&self, x: &[f64]) -> DecodedDispatch {
        let lay = &self.layout;
        let n_g = lay.n_gens;
        let n_c = lay.n_contingencies;
        DecodedDispatch {
            p: (0..n_g).map(|g| x[lay.p(g)]).collect(),
            r_up: (0..n_g).map(|g| x[lay.r_up(g)]).collect(),
            r_down: (0..n_g).map(|g| x[lay.r_down(g)]).collect(),
            r_con: (0..n_g).map(|g| x[lay.r_con(g)]).collect(),
            alpha: (0..n_c)
                .map(|c| (0..n_g).map(|g| x[lay.alpha(c, g)]).collect())
                .collect(),
            delta: (0..n_c)
                .map(|c| (0..n_g).map(|g| x[lay.delta(c, g)]).collect())
                .collect(),
        }
    }

    /// Largest violation of the deterministic rows at a candidate point.
    pub fn det_violation(&self, x: &[f64]) -> f64 {
        self.det_rows
            .iter()
            .zip(&self.det_rhs)
            .map(|(row, rhs)| row.iter().map(|&(j, a)| a * x[j]).sum::<f64>() - rhs)
            .fold(0.0_f64, f64::max)
    }

    /// Plain-text listing for debugging (`--dump-lp`).
    pub fn write_listing(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(
            w,
            "compact problem: n_x={} n_xi={} K={} det_rows={} epsilon={}",
            self.n_x(),
            self.n_xi,
            self.k_exact(),
            self.det_rows.len(),
            self.epsilon
        )?;
        writeln!(w, "cost: {:?}", self.cost)?;
        for (i, (row, rhs)) in self.det_rows.iter().zip(&self.det_rhs).enumerate() {
            writeln!(w, "det[{i}]: {row:?} <= {rhs}")?;
        }
        for (k, row) in self.uncertain.iter().enumerate() {
            writeln!(
                w,
                "unc[{k}] ({} @ {}): e={:?} f={:?} F={:?} h={}",
                row.family.label(),
                self.contingencies[row.contingency],
                row.e,
                row.f,
                row.f_mat,
                row.h
            )?;
        }
        Ok(())
    }
}

/// Build the compact problem from a case, its contingency list and the
/// matching PTDFs.
pub fn build_compact(
    case: &NetworkCase,
    contingencies: &[Contingency],
    ptdfs: &[PtdfMatrix],
    epsilon: f64,
) -> Result<CompactProblem, CompactError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(CompactError::BadEpsilon(epsilon));
    }
    if ptdfs.len() != contingencies.len() {
        return Err(CompactError::DimensionMismatch(format!(
            "{} PTDFs for {} contingencies",
            ptdfs.len(),
            contingencies.len()
        )));
    }
    for (c, p) in contingencies.iter().zip(ptdfs) {
        if p.contingency != *c {
            return Err(CompactError::DimensionMismatch(format!(
                "PTDF for {} paired with contingency {c}",
                p.contingency
            )));
        }
    }

    let n_g = case.generators.len();
    let n_c = contingencies.len();
    let n_xi = case.wind_units.len();
    let layout = DecisionLayout {
        n_gens: n_g,
        n_contingencies: n_c,
    };
    let n_x = layout.n_x();

    let mut cost = vec![0.0; n_x];
    for (g, gen) in case.generators.iter().enumerate() {
        cost[layout.p(g)] = gen.h;
        cost[layout.r_up(g)] = gen.h_plus;
        cost[layout.r_down(g)] = gen.h_minus;
        cost[layout.r_con(g)] = gen.h_con;
    }

    let gen_out: Vec<Option<usize>> = contingencies
        .iter()
        .map(|c| match c {
            Contingency::GenOut(id) => case.generator_index(id),
            _ => None,
        })
        .collect();

    let mut det_rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut det_rhs: Vec<f64> = Vec::new();
    let eq = |row: Vec<(usize, f64)>, rhs: f64, det_rows: &mut Vec<Vec<(usize, f64)>>, det_rhs: &mut Vec<f64>| {
        det_rhs.push(rhs);
        det_rhs.push(-rhs);
        det_rows.push(row.clone());
        det_rows.push(row.into_iter().map(|(j, a)| (j, -a)).collect());
    };

    // Power balance: Σp = demand - forecast.
    let balance_rhs = case.total_demand() - case.total_forecast();
    eq(
        (0..n_g).map(|g| (layout.p(g), 1.0)).collect(),
        balance_rhs,
        &mut det_rows,
        &mut det_rhs,
    );
    // Capacity bounds under maximal regulation.
    for (g, gen) in case.generators.iter().enumerate() {
        det_rows.push(vec![
            (layout.p(g), 1.0),
            (layout.r_up(g), 1.0),
            (layout.r_con(g), 1.0),
        ]);
        det_rhs.push(gen.p_max);
        det_rows.push(vec![(layout.p(g), -1.0), (layout.r_down(g), 1.0)]);
        det_rhs.push(-gen.p_min);
        for var in [layout.r_up(g), layout.r_down(g), layout.r_con(g)] {
            det_rows.push(vec![(var, -1.0)]);
            det_rhs.push(0.0);
            det_rows.push(vec![(var, 1.0)]);
            det_rhs.push(gen.r_max);
        }
    }
    // Recourse policy constraints per contingency.
    for c in 0..n_c {
        let failed = gen_out[c];
        let line_out = matches!(contingencies[c], Contingency::LineOut(_));
        // α on the simplex.
        eq(
            (0..n_g).map(|g| (layout.alpha(c, g), 1.0)).collect(),
            1.0,
            &mut det_rows,
            &mut det_rhs,
        );
        for g in 0..n_g {
            det_rows.push(vec![(layout.alpha(c, g), -1.0)]);
            det_rhs.push(0.0);
        }
        if let Some(gc) = failed {
            eq(vec![(layout.alpha(c, gc), 1.0)], 0.0, &mut det_rows, &mut det_rhs);
            // Failed generator drops its planned output.
            eq(
                vec![(layout.delta(c, gc), 1.0), (layout.p(gc), 1.0)],
                0.0,
                &mut det_rows,
                &mut det_rhs,
            );
            for g in 0..n_g {
                det_rows.push(vec![(layout.delta(c, g), 1.0), (layout.r_con(g), -1.0)]);
                det_rhs.push(0.0);
            }
        }
        // Net change due to contingency sums to zero.
        eq(
            (0..n_g).map(|g| (layout.delta(c, g), 1.0)).collect(),
            0.0,
            &mut det_rows,
            &mut det_rhs,
        );
        for g in 0..n_g {
            if Some(g) != failed {
                det_rows.push(vec![(layout.delta(c, g), -1.0)]);
                det_rhs.push(0.0);
            }
        }
        if line_out {
            for g in 0..n_g {
                eq(vec![(layout.delta(c, g), 1.0)], 0.0, &mut det_rows, &mut det_rhs);
            }
        }
    }

    // Uncertain rows. `P_mis = Σ_w (P_w - ξ_w)` makes the α coefficient of
    // the forecast land in e_k and the bilinear α·ξ part in F_k.
    let forecast_sum = case.total_forecast();
    let mut uncertain: Vec<UncertainRow> = Vec::new();
    for (c, ptdf) in ptdfs.iter().enumerate() {
        for g in 0..n_g {
            uncertain.push(UncertainRow {
                e: vec![(layout.alpha(c, g), forecast_sum), (layout.r_up(g), -1.0)],
                f: vec![0.0; n_xi],
                f_mat: (0..n_xi).map(|w| (layout.alpha(c, g), w, -1.0)).collect(),
                h: 0.0,
                contingency: c,
                family: RowFamily::ReserveUp { gen: g },
            });
        }
        for g in 0..n_g {
            uncertain.push(UncertainRow {
                e: vec![(layout.alpha(c, g), -forecast_sum), (layout.r_down(g), -1.0)],
                f: vec![0.0; n_xi],
                f_mat: (0..n_xi).map(|w| (layout.alpha(c, g), w, 1.0)).collect(),
                h: 0.0,
                contingency: c,
                family: RowFamily::ReserveDown { gen: g },
            });
        }
        for (row_idx, &li) in ptdf.lines.iter().enumerate() {
            let limit = case.lines[li].p_l_max;
            let m_of_bus =
                |bus: usize| ptdf.matrix[(row_idx, case.bus_index(bus).unwrap())];
            // Fixed load part of the flow (loads are withdrawals).
            let load_flow: f64 = case.loads.iter().map(|l| -m_of_bus(l.bus) * l.p_d).sum();
            for upper in [true, false] {
                let sign = if upper { 1.0 } else { -1.0 };
                let mut e: Vec<(usize, f64)> = Vec::with_capacity(3 * n_g);
                let mut f = vec![0.0; n_xi];
                let mut f_mat: Vec<(usize, usize, f64)> = Vec::with_capacity(n_g * n_xi);
                for (g, gen) in case.generators.iter().enumerate() {
                    let m = m_of_bus(gen.bus);
                    if m == 0.0 {
                        continue;
                    }
                    e.push((layout.p(g), sign * m));
                    e.push((layout.delta(c, g), sign * m));
                    e.push((layout.alpha(c, g), sign * m * forecast_sum));
                    for w in 0..n_xi {
                        f_mat.push((layout.alpha(c, g), w, -sign * m));
                    }
                }
                for (w, wind) in case.wind_units.iter().enumerate() {
                    f[w] = sign * m_of_bus(wind.bus);
                }
                uncertain.push(UncertainRow {
                    e,
                    f,
                    f_mat,
                    h: limit - sign * load_flow,
                    contingency: c,
                    family: RowFamily::LineFlow { line: li, upper },
                });
            }
        }
    }

    // With no uncertainty every "uncertain" row is a plain linear row; merge
    // them into Λ.
    if n_xi == 0 {
        for row in uncertain.drain(..) {
            det_rows.push(row.e);
            det_rhs.push(row.h);
        }
    }

    let mut warnings = Vec::new();
    let total_p_max: f64 = case.generators.iter().map(|g| g.p_max).sum();
    if total_p_max < balance_rhs {
        warnings.push(format!(
            "total generation capacity {total_p_max} MW cannot cover demand minus forecast {balance_rhs} MW"
        ));
    }
    let total_r_max: f64 = case.generators.iter().map(|g| g.r_max).sum();
    let short: f64 = case
        .wind_units
        .iter()
        .map(|w| w.p_w - w.support_lower)
        .sum();
    let surplus: f64 = case
        .wind_units
        .iter()
        .map(|w| w.support_upper - w.p_w)
        .sum();
    let worst_mismatch = short.max(surplus).max(0.0);
    if n_xi > 0 && total_r_max < worst_mismatch {
        warnings.push(format!(
            "total reserve capacity {total_r_max} MW below the largest plausible renewable mismatch {worst_mismatch} MW"
        ));
    }

    Ok(CompactProblem {
        cost,
        det_rows,
        det_rhs,
        uncertain,
        epsilon,
        layout,
        n_xi,
        contingencies: contingencies.to_vec(),
        gen_out,
        gen_ids: case.generators.iter().map(|g| g.id.clone()).collect(),
        wind_ids: case.wind_units.iter().map(|w| w.id.clone()).collect(),
        warnings,
    })
}
