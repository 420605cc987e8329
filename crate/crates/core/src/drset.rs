//! Data-driven construction of the robust polyhedron `Ξ_rob = {ξ : Gξ <= g}`.
//!
//! Per partition, the set is an intersection of slabs (regions between two
//! parallel hyperplanes). Slab normals are the coordinate axes plus the
//! eigenvectors of the empirical covariance with the smallest eigenvalues.
//! Each slab's bounds are tightened so that, for every distribution within
//! Wasserstein distance θ of the empirical one, the probability mass outside
//! the slab stays below the per-slab budget ε/n_DR; the union bound then
//! certifies mass at least 1-ε inside the whole intersection.
//!
//! The per-slab worst case is evaluated through its finite reformulation
//! `min_λ λθ + (1/N) Σ_m max(0, 1 - λ d_m)`, where `d_m` is the ℓ1 distance
//! from sample `m` to the nearer bounding hyperplane clipped to the support
//! (computed by an LP), and `d_m = 0` for samples already outside the slab.
//! The ground norm is ℓ1, whose dual ℓ∞ keeps the distance problem a pure
//! LP.

use crate::lp::{solve_lp_with, Backend, LinearProgram, LpStatus};
use crate::uncertainty::{
    empirical_covariance, project_samples, symmetric_eig, EigBasis, PartitionSpec, SampleSet,
    SupportPolyhedron, UncertaintyError,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative width tolerance of the slab bisection.
const SHRINK_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlabKind {
    /// Normal aligned with a group coordinate.
    Axis(usize),
    /// Normal is the eigenvector with the `rank`-th smallest eigenvalue.
    Eigen(usize),
}

/// Region `{ξ^i : lower <= ζ'ξ^i <= upper}` within one partition.
#[derive(Debug, Clone)]
pub struct Slab {
    pub group: usize,
    pub normal: DVector<f64>,
    pub lower: f64,
    pub upper: f64,
    pub kind: SlabKind,
}

/// Per-slab construction evidence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlabDiag {
    /// Independently recomputed worst-case mass outside the slab.
    pub worst_case_prob: f64,
    /// Training samples whose projection escapes the final slab.
    pub samples_outside: Vec<usize>,
    /// Shrink parameter at which the bisection settled (1 = full support).
    pub shrink_t: f64,
}

/// The assembled polyhedron with its slab provenance.
#[derive(Debug, Clone)]
pub struct RobustSet {
    pub slabs: Vec<Slab>,
    /// `q x n_ξ` with `q = 2 n_DR`: per slab the +ζ row then the -ζ row.
    pub g_mat: DMatrix<f64>,
    pub g_vec: DVector<f64>,
    pub n_dr: usize,
    pub theta: f64,
    pub epsilon: f64,
    /// Per-slab mass tolerance ε/n_DR.
    pub budget: f64,
    pub diagnostics: Vec<SlabDiag>,
}

#[derive(Debug, Error)]
pub enum DrSetError {
    #[error("kappa {kappa} out of range for group of size {group_size}")]
    KappaOutOfRange { kappa: usize, group_size: usize },
    #[error(
        "budget infeasible for slab {kind:?} of group {group}: even the full support interval \
         admits worst-case mass {achieved:.4e} > {budget:.4e} (theta too large for N, epsilon)"
    )]
    BudgetInfeasible {
        group: usize,
        kind: SlabKind,
        achieved: f64,
        budget: f64,
    },
    #[error("distance LP failed: {0}")]
    SolverFailure(String),
    #[error("epsilon must lie in (0,1), got {0}")]
    BadEpsilon(f64),
    #[error("theta must be nonnegative, got {0}")]
    BadTheta(f64),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
}

/// Slab normals for one partition: the axis unit vectors followed by the
/// `kappa` eigenvectors of smallest eigenvalue.
pub fn select_normals(
    eig: &EigBasis,
    group_size: usize,
    kappa: usize,
) -> Result<Vec<(DVector<f64>, SlabKind)>, DrSetError> {
    if kappa >= group_size {
        return Err(DrSetError::KappaOutOfRange { kappa, group_size });
    }
    let mut normals = Vec::with_capacity(group_size + kappa);
    for j in 0..group_size {
        let mut e = DVector::<f64>::zeros(group_size);
        e[j] = 1.0;
        normals.push((e, SlabKind::Axis(j)));
    }
    for r in 0..kappa {
        normals.push((
            DVector::from_column_slice(eig.eigenvectors.column(r).as_slice()),
            SlabKind::Eigen(r),
        ));
    }
    Ok(normals)
}

/// ℓ1 distance from a point to `Ξ^i ∩ {ζ'ξ = b}` by the dual LP
///
/// ```text
/// max (b - ζ's) y - (ρ - Γs)'z   s.t.  ||ζy - Γ'z||_∞ <= 1,  z >= 0,
/// ```
///
/// with `y` free: it multiplies the equality `ζ'ξ = b`, so the one LP covers
/// hyperplanes on either side of the sample. Returns `+∞` when the
/// hyperplane misses the support.
pub fn hyperplane_distance(
    sample: &DVector<f64>,
    normal: &DVector<f64>,
    b: f64,
    support: &SupportPolyhedron,
) -> Result<f64, DrSetError> {
    let d = normal.len();
    let u = support.gamma.nrows();
    let mut lp = LinearProgram::new(1 + u);
    lp.objective[0] = -(b - normal.dot(sample));
    let slack = &support.rho - &support.gamma * sample;
    for r in 0..u {
        lp.objective[1 + r] = slack[r];
        lp.set_bounds(1 + r, 0.0, f64::INFINITY);
    }
    for j in 0..d {
        let mut coeffs = vec![(0, normal[j])];
        for r in 0..u {
            let gamma = support.gamma[(r, j)];
            if gamma != 0.0 {
                coeffs.push((1 + r, -gamma));
            }
        }
        lp.add_ineq(coeffs.clone(), 1.0);
        lp.add_ineq(coeffs.into_iter().map(|(c, v)| (c, -v)).collect(), 1.0);
    }
    let sol = solve_lp_with(&lp, Backend::DenseSimplex)
        .map_err(|e| DrSetError::SolverFailure(e.to_string()))?;
    match sol.status {
        LpStatus::Optimal => Ok((-sol.objective).max(0.0)),
        LpStatus::Unbounded => Ok(f64::INFINITY),
        LpStatus::Infeasible => Err(DrSetError::SolverFailure(
            "distance LP reported infeasible".into(),
        )),
    }
}

/// Worst-case probability mass outside a slab over the Wasserstein ball:
/// `min_{λ>=0} λθ + (1/N) Σ_m s_m(λ)` with `s_m = max(0, 1 - λ d_m)`.
///
/// The function is convex piecewise-linear in λ, so the minimum sits at
/// `λ = 0` or a breakpoint `λ = 1/d_m`. Samples already outside carry
/// `d_m = 0`; samples that cannot violate at all (hyperplane misses the
/// support on both sides) carry `d_m = +∞` and contribute nothing.
pub fn worst_case_violation_prob(distances: &[f64], theta: f64) -> f64 {
    let n = distances.len();
    if n == 0 {
        return 0.0;
    }
    let eval = |lambda: f64| -> f64 {
        let mut s = 0.0;
        for &d in distances {
            if d.is_infinite() {
                continue;
            }
            s += (1.0 - lambda * d).max(0.0);
        }
        lambda * theta + s / n as f64
    };
    let mut best = eval(0.0);
    for &d in distances {
        if d > 0.0 && d.is_finite() {
            best = best.min(eval(1.0 / d));
        }
    }
    best.clamp(0.0, 1.0)
}

/// Distances `d_m` of every sample to the nearer bounding hyperplane of the
/// slab `[lower, upper]` along `normal`, with `d_m = 0` for samples outside.
fn slab_distances(
    projections: &[f64],
    samples: &SampleSet,
    group: &[usize],
    normal: &DVector<f64>,
    support: &SupportPolyhedron,
    lower: f64,
    upper: f64,
) -> Result<Vec<f64>, DrSetError> {
    let mut out = Vec::with_capacity(projections.len());
    for (m, &proj) in projections.iter().enumerate() {
        if proj < lower || proj > upper {
            out.push(0.0);
            continue;
        }
        let point = samples.group_point(m, group);
        let d_up = hyperplane_distance(&point, normal, upper, support)?;
        let d_lo = hyperplane_distance(&point, normal, lower, support)?;
        out.push(d_up.min(d_lo));
    }
    Ok(out)
}

/// Result of the per-slab interval search.
struct Tightened {
    lower: f64,
    upper: f64,
    shrink_t: f64,
}

/// Smallest feasible slab along the shrink path anchored at the
/// sample-projection mean: `b(t) = a ± t (support extent - a)`, `t ∈ [0, 1]`.
/// Feasibility (worst-case mass <= budget) is monotone in `t`, so bisection
/// applies. The joint bisection stops when the binding side reaches its
/// threshold; two per-side bisections then pull the slack side in as far as
/// the budget allows (with θ = 0 both sides settle at the empirical
/// projection range). Width tolerance per side: `1e-4 (U - L)`.
fn tighten_interval(
    samples: &SampleSet,
    group: &[usize],
    normal: &DVector<f64>,
    support: &SupportPolyhedron,
    theta: f64,
    budget: f64,
    group_idx: usize,
    kind: SlabKind,
) -> Result<Tightened, DrSetError> {
    let projections = project_samples(samples, group, normal)?;
    let (support_lo, support_hi) = support.extent(normal)?;
    let anchor = projections.iter().sum::<f64>() / projections.len() as f64;

    let bounds_at = |t: f64| -> (f64, f64) {
        (
            anchor - t * (anchor - support_lo),
            anchor + t * (support_hi - anchor),
        )
    };
    let feasible = |lo: f64, hi: f64| -> Result<(bool, f64), DrSetError> {
        let d = slab_distances(&projections, samples, group, normal, support, lo, hi)?;
        let wc = worst_case_violation_prob(&d, theta);
        Ok((wc <= budget + 1e-12, wc))
    };

    let (full_lo, full_hi) = bounds_at(1.0);
    let (ok, achieved) = feasible(full_lo, full_hi)?;
    if !ok {
        return Err(DrSetError::BudgetInfeasible {
            group: group_idx,
            kind,
            achieved,
            budget,
        });
    }

    let shrink_t;
    let (mut lower, mut upper);
    if feasible(anchor, anchor)?.0 {
        shrink_t = 0.0;
        lower = anchor;
        upper = anchor;
    } else {
        let mut lo_t = 0.0;
        let mut hi_t = 1.0;
        while hi_t - lo_t > SHRINK_TOL {
            let mid = 0.5 * (lo_t + hi_t);
            let (l, u) = bounds_at(mid);
            if feasible(l, u)?.0 {
                hi_t = mid;
            } else {
                lo_t = mid;
            }
        }
        shrink_t = hi_t;
        (lower, upper) = bounds_at(hi_t);
    }

    // Per-side refinement: the joint path leaves the non-binding side loose.
    let side_tol = SHRINK_TOL * (support_hi - support_lo).max(f64::MIN_POSITIVE);
    if lower < anchor {
        // Largest feasible lower bound given the current upper bound.
        let mut ok_b = lower;
        let mut bad_b = anchor;
        if feasible(anchor, upper)?.0 {
            ok_b = anchor;
        } else {
            while bad_b - ok_b > side_tol {
                let mid = 0.5 * (ok_b + bad_b);
                if feasible(mid, upper)?.0 {
                    ok_b = mid;
                } else {
                    bad_b = mid;
                }
            }
        }
        lower = ok_b;
    }
    if upper > anchor {
        // Smallest feasible upper bound given the refined lower bound.
        let mut ok_b = upper;
        let mut bad_b = anchor;
        if feasible(lower, anchor)?.0 {
            ok_b = anchor;
        } else {
            while ok_b - bad_b > side_tol {
                let mid = 0.5 * (ok_b + bad_b);
                if feasible(lower, mid)?.0 {
                    ok_b = mid;
                } else {
                    bad_b = mid;
                }
            }
        }
        upper = ok_b;
    }

    Ok(Tightened {
        lower,
        upper,
        shrink_t,
    })
}

/// Tighten one slab. The returned bounds satisfy the worst-case budget and
/// sit within the bisection tolerance of the smallest feasible interval
/// along the shrink path.
pub fn tighten_slab(
    samples: &SampleSet,
    partition: &PartitionSpec,
    group_idx: usize,
    normal: DVector<f64>,
    kind: SlabKind,
    theta: f64,
    budget: f64,
) -> Result<Slab, DrSetError> {
    let group = &partition.groups[group_idx];
    let support = &partition.supports[group_idx];
    let t = tighten_interval(samples, group, &normal, support, theta, budget, group_idx, kind)?;
    Ok(Slab {
        group: group_idx,
        normal,
        lower: t.lower,
        upper: t.upper,
        kind,
    })
}

/// Run the full set construction: per group, tighten `|group| + κ` slabs
/// under the uniform budget ε/n_DR and assemble `(G, g)` in full
/// ξ-coordinates.
pub fn build_xirob(
    samples: &SampleSet,
    partition: &PartitionSpec,
    kappas: &[usize],
    theta: f64,
    epsilon: f64,
) -> Result<RobustSet, DrSetError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(DrSetError::BadEpsilon(epsilon));
    }
    if theta < 0.0 || !theta.is_finite() {
        return Err(DrSetError::BadTheta(theta));
    }
    let n_xi = partition.n_xi();
    partition.validate(n_xi)?;
    if kappas.len() != partition.groups.len() {
        return Err(DrSetError::Uncertainty(UncertaintyError::DimensionMismatch(
            format!(
                "{} kappa values for {} groups",
                kappas.len(),
                partition.groups.len()
            ),
        )));
    }
    for (i, (&kappa, group)) in kappas.iter().zip(&partition.groups).enumerate() {
        if kappa >= group.len() {
            return Err(DrSetError::KappaOutOfRange {
                kappa,
                group_size: partition.groups[i].len(),
            });
        }
    }

    let n_dr: usize = partition
        .groups
        .iter()
        .zip(kappas)
        .map(|(g, &k)| g.len() + k)
        .sum();
    let budget = epsilon / n_dr as f64;

    let mut slabs: Vec<Slab> = Vec::with_capacity(n_dr);
    let mut shrink_ts: Vec<f64> = Vec::with_capacity(n_dr);
    for (i, group) in partition.groups.iter().enumerate() {
        let normals = if kappas[i] > 0 {
            let cov = empirical_covariance(samples, group)?;
            let eig = symmetric_eig(&cov)?;
            select_normals(&eig, group.len(), kappas[i])?
        } else {
            // Axis normals need no covariance.
            let mut v = Vec::with_capacity(group.len());
            for j in 0..group.len() {
                let mut e = DVector::<f64>::zeros(group.len());
                e[j] = 1.0;
                v.push((e, SlabKind::Axis(j)));
            }
            v
        };
        for (normal, kind) in normals {
            let t = tighten_interval(
                samples,
                group,
                &normal,
                &partition.supports[i],
                theta,
                budget,
                i,
                kind,
            )?;
            slabs.push(Slab {
                group: i,
                normal,
                lower: t.lower,
                upper: t.upper,
                kind,
            });
            shrink_ts.push(t.shrink_t);
        }
    }

    // Independent certificate per slab: fresh distances, fresh minimization.
    let mut diagnostics = Vec::with_capacity(slabs.len());
    for (slab, &shrink_t) in slabs.iter().zip(&shrink_ts) {
        let group = &partition.groups[slab.group];
        let support = &partition.supports[slab.group];
        let projections = project_samples(samples, group, &slab.normal)?;
        let d = slab_distances(
            &projections,
            samples,
            group,
            &slab.normal,
            support,
            slab.lower,
            slab.upper,
        )?;
        let worst_case_prob = worst_case_violation_prob(&d, theta);
        let samples_outside: Vec<usize> = projections
            .iter()
            .enumerate()
            .filter(|(_, &p)| p < slab.lower - 1e-9 || p > slab.upper + 1e-9)
            .map(|(m, _)| m)
            .collect();
        diagnostics.push(SlabDiag {
            worst_case_prob,
            samples_outside,
            shrink_t,
        });
    }

    let q = 2 * slabs.len();
    let mut g_mat = DMatrix::<f64>::zeros(q, n_xi);
    let mut g_vec = DVector::<f64>::zeros(q);
    for (s, slab) in slabs.iter().enumerate() {
        let group = &partition.groups[slab.group];
        for (j, &w) in group.iter().enumerate() {
            g_mat[(2 * s, w)] = slab.normal[j];
            g_mat[(2 * s + 1, w)] = -slab.normal[j];
        }
        g_vec[2 * s] = slab.upper;
        g_vec[2 * s + 1] = -slab.lower;
    }

    Ok(RobustSet {
        slabs,
        g_mat,
        g_vec,
        n_dr,
        theta,
        epsilon,
        budget,
        diagnostics,
    })
}

impl RobustSet {
    pub fn n_xi(&self) -> usize {
        self.g_mat.ncols()
    }

    pub fn q(&self) -> usize {
        self.g_mat.nrows()
    }

    /// Point membership `Gξ <= g` within tolerance.
    pub fn contains(&self, xi: &[f64], tol: f64) -> bool {
        let point = DVector::from_column_slice(xi);
        (&self.g_mat * point - &self.g_vec).iter().all(|&v| v <= tol)
    }

    /// Sum of the per-slab certified worst-case masses; the union bound
    /// guarantees mass at least `1 - certified_epsilon()` inside the set.
    pub fn certified_epsilon(&self) -> f64 {
        self.diagnostics.iter().map(|d| d.worst_case_prob).sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "slabs": self.slabs.iter().map(|s| serde_json::json!({
                "group": s.group,
                "normal": s.normal.iter().copied().collect::<Vec<f64>>(),
                "lo": s.lower,
                "hi": s.upper,
                "kind": s.kind,
            })).collect::<Vec<_>>(),
            "G": (0..self.q()).map(|r| {
                (0..self.n_xi()).map(|c| self.g_mat[(r, c)]).collect::<Vec<f64>>()
            }).collect::<Vec<_>>(),
            "g": self.g_vec.iter().copied().collect::<Vec<f64>>(),
            "n_dr": self.n_dr,
            "theta": self.theta,
            "epsilon": self.epsilon,
            "budget": self.budget,
            "diagnostics": self.diagnostics,
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, serde_json::Error> {
        #[derive(Deserialize)]
        struct SlabRepr {
            group: usize,
            normal: Vec<f64>,
            lo: f64,
            hi: f64,
            kind: SlabKind,
        }
        #[derive(Deserialize)]
        struct Repr {
            slabs: Vec<SlabRepr>,
            #[serde(rename = "G")]
            g_mat: Vec<Vec<f64>>,
            g: Vec<f64>,
            n_dr: usize,
            theta: f64,
            epsilon: f64,
            budget: Option<f64>,
            diagnostics: Option<Vec<SlabDiag>>,
        }
        let repr: Repr = serde_json::from_value(value.clone())?;
        let q = repr.g_mat.len();
        let n_xi = repr.g_mat.first().map_or(0, |r| r.len());
        let mut g_mat = DMatrix::<f64>::zeros(q, n_xi);
        for (r, row) in repr.g_mat.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                g_mat[(r, c)] = *v;
            }
        }
        let n_dr = repr.n_dr;
        Ok(RobustSet {
            slabs: repr
                .slabs
                .into_iter()
                .map(|s| Slab {
                    group: s.group,
                    normal: DVector::from_column_slice(&s.normal),
                    lower: s.lo,
                    upper: s.hi,
                    kind: s.kind,
                })
                .collect(),
            g_mat,
            g_vec: DVector::from_column_slice(&repr.g),
            n_dr,
            theta: repr.theta,
            epsilon: repr.epsilon,
            budget: repr.budget.unwrap_or(repr.epsilon / n_dr as f64),
            diagnostics: repr.diagnostics.unwrap_or_default(),
        })
    }
}
