//! Uncertainty data: sample sets, the renewable partition with per-partition
//! support polyhedra, empirical covariance and its eigendecomposition, and
//! the truncated multivariate normal generator used in experiments.

use crate::lp::{solve_lp_with, Backend, LinearProgram, LpStatus};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum UncertaintyError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("Jacobi sweep limit reached without convergence")]
    NoConvergence,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("covariance for group {group} is not positive semidefinite (eigenvalue {eigenvalue:.3e})")]
    NotPsd { group: usize, eigenvalue: f64 },
    #[error("truncation box is empty in coordinate {0}")]
    EmptyBox(usize),
    #[error("rejection sampler stalled (acceptance rate below 1e-4)")]
    RejectionStall,
    #[error("invalid partition: {0}")]
    BadPartition(String),
    #[error("samples outside the declared support at indices {indices:?}")]
    SupportViolation { indices: Vec<usize> },
    #[error("cannot read samples: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed samples file: {0}")]
    ParseError(String),
}

/// N uncertainty samples, one row per sample, columns ordered like the
/// case's wind units. Immutable after load.
#[derive(Debug, Clone)]
pub struct SampleSet {
    data: DMatrix<f64>,
}

/// Polyhedral support `{ξ : Γξ <= ρ}` of one partition.
#[derive(Debug, Clone)]
pub struct SupportPolyhedron {
    pub gamma: DMatrix<f64>,
    pub rho: DVector<f64>,
}

impl SupportPolyhedron {
    /// Axis-aligned box `[lower_j, upper_j]` as `Γξ <= ρ`.
    pub fn from_box(lower: &[f64], upper: &[f64]) -> Self {
        let d = lower.len();
        let mut gamma = DMatrix::<f64>::zeros(2 * d, d);
        let mut rho = DVector::<f64>::zeros(2 * d);
        for j in 0..d {
            gamma[(j, j)] = 1.0;
            rho[j] = upper[j];
            gamma[(d + j, j)] = -1.0;
            rho[d + j] = -lower[j];
        }
        SupportPolyhedron { gamma, rho }
    }

    pub fn dim(&self) -> usize {
        self.gamma.ncols()
    }

    pub fn contains(&self, point: &DVector<f64>, tol: f64) -> bool {
        (&self.gamma * point - &self.rho).iter().all(|&v| v <= tol)
    }

    /// Minimum and maximum of `direction'ξ` over the polyhedron; errors if
    /// the polyhedron is empty or unbounded in that direction.
    pub fn extent(&self, direction: &DVector<f64>) -> Result<(f64, f64), UncertaintyError> {
        let d = self.dim();
        let mut out = [0.0; 2];
        for (slot, sign) in [(0usize, 1.0), (1usize, -1.0)] {
            let mut lp = LinearProgram::new(d);
            for j in 0..d {
                lp.objective[j] = sign * direction[j];
            }
            for r in 0..self.gamma.nrows() {
                let coeffs: Vec<(usize, f64)> = (0..d)
                    .filter(|&j| self.gamma[(r, j)] != 0.0)
                    .map(|j| (j, self.gamma[(r, j)]))
                    .collect();
                lp.add_ineq(coeffs, self.rho[r]);
            }
            let sol = solve_lp_with(&lp, Backend::DenseSimplex)
                .map_err(|e| UncertaintyError::BadPartition(e.to_string()))?;
            match sol.status {
                LpStatus::Optimal => out[slot] = sign * sol.objective,
                LpStatus::Infeasible => {
                    return Err(UncertaintyError::BadPartition(
                        "support polyhedron is empty".into(),
                    ))
                }
                LpStatus::Unbounded => {
                    return Err(UncertaintyError::BadPartition(
                        "support polyhedron is unbounded".into(),
                    ))
                }
            }
        }
        Ok((out[0], out[1]))
    }
}

/// Disjoint partition of the wind units with a support polyhedron per group.
#[derive(Debug, Clone)]
pub struct PartitionSpec {
    pub groups: Vec<Vec<usize>>,
    pub supports: Vec<SupportPolyhedron>,
}

impl PartitionSpec {
    /// Partition with per-group boxes taken from per-coordinate bounds.
    pub fn boxed(groups: Vec<Vec<usize>>, lower: &[f64], upper: &[f64]) -> Self {
        let supports = groups
            .iter()
            .map(|group| {
                let lo: Vec<f64> = group.iter().map(|&w| lower[w]).collect();
                let hi: Vec<f64> = group.iter().map(|&w| upper[w]).collect();
                SupportPolyhedron::from_box(&lo, &hi)
            })
            .collect();
        PartitionSpec { groups, supports }
    }

    pub fn n_xi(&self) -> usize {
        self.groups.iter().map(|g| g.len()).sum()
    }

    /// Disjoint-cover and boundedness checks. Each support polyhedron must be
    /// nonempty and bounded, verified by optimizing every coordinate.
    pub fn validate(&self, n_xi: usize) -> Result<(), UncertaintyError> {
        if self.groups.len() != self.supports.len() {
            return Err(UncertaintyError::BadPartition(format!(
                "{} groups but {} supports",
                self.groups.len(),
                self.supports.len()
            )));
        }
        let mut seen = vec![false; n_xi];
        for (i, group) in self.groups.iter().enumerate() {
            if group.is_empty() {
                return Err(UncertaintyError::BadPartition(format!("group {i} is empty")));
            }
            for &w in group {
                if w >= n_xi {
                    return Err(UncertaintyError::BadPartition(format!(
                        "group {i} references wind index {w} (n_xi = {n_xi})"
                    )));
                }
                if seen[w] {
                    return Err(UncertaintyError::BadPartition(format!(
                        "wind index {w} appears in more than one group"
                    )));
                }
                seen[w] = true;
            }
            if self.supports[i].dim() != group.len() {
                return Err(UncertaintyError::BadPartition(format!(
                    "support of group {i} has dimension {} for {} members",
                    self.supports[i].dim(),
                    group.len()
                )));
            }
            for j in 0..group.len() {
                let mut e = DVector::<f64>::zeros(group.len());
                e[j] = 1.0;
                self.supports[i].extent(&e)?;
            }
        }
        if !seen.into_iter().all(|s| s) {
            return Err(UncertaintyError::BadPartition(
                "groups do not cover all wind units".into(),
            ));
        }
        Ok(())
    }

    /// Indices of samples lying outside the declared support.
    pub fn violators(&self, samples: &SampleSet) -> Vec<usize> {
        let mut bad = Vec::new();
        for m in 0..samples.len() {
            for (group, support) in self.groups.iter().zip(&self.supports) {
                let point = samples.group_point(m, group);
                if !support.contains(&point, 1e-9) {
                    bad.push(m);
                    break;
                }
            }
        }
        bad
    }
}

/// Eigen pairs of a group covariance, eigenvalues ascending, orthonormal
/// eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct EigBasis {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SampleSet {
    pub fn new(data: DMatrix<f64>) -> Self {
        SampleSet { data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        let mut data = DMatrix::<f64>::zeros(n, d);
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                data[(i, j)] = *v;
            }
        }
        SampleSet { data }
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn n_xi(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, m: usize) -> Vec<f64> {
        (0..self.n_xi()).map(|j| self.data[(m, j)]).collect()
    }

    /// Components of sample `m` restricted to a group.
    pub fn group_point(&self, m: usize, group: &[usize]) -> DVector<f64> {
        DVector::from_iterator(group.len(), group.iter().map(|&w| self.data[(m, w)]))
    }

    /// CSV with a `w_<id>` header row, one sample per line.
    pub fn write_csv(&self, path: impl AsRef<Path>, wind_ids: &[String]) -> Result<(), UncertaintyError> {
        let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_err)?;
        let header: Vec<String> = wind_ids.iter().map(|id| format!("w_{id}")).collect();
        w.write_record(&header).map_err(csv_err)?;
        for m in 0..self.len() {
            let rec: Vec<String> = (0..self.n_xi())
                .map(|j| format!("{}", self.data[(m, j)]))
                .collect();
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a samples CSV; returns the column labels (header with the `w_`
    /// prefix stripped) alongside the data.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, SampleSet), UncertaintyError> {
        let mut r = csv::Reader::from_path(path.as_ref()).map_err(csv_err)?;
        let header: Vec<String> = r
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(|h| h.strip_prefix("w_").unwrap_or(h).to_string())
            .collect();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != header.len() {
                return Err(UncertaintyError::ParseError(format!(
                    "row {i} has {} fields, expected {}",
                    rec.len(),
                    header.len()
                )));
            }
            let row: Result<Vec<f64>, _> = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect();
            rows.push(row.map_err(|e| {
                UncertaintyError::ParseError(format!("row {i}: {e}"))
            })?);
        }
        Ok((header, SampleSet::from_rows(&rows)))
    }

    /// Reject (with indices) any sample outside the declared support.
    pub fn check_support(&self, partition: &PartitionSpec) -> Result<(), UncertaintyError> {
        let indices = partition.violators(self);
        if indices.is_empty() {
            Ok(())
        } else {
            Err(UncertaintyError::SupportViolation { indices })
        }
    }
}

fn csv_err(e: csv::Error) -> UncertaintyError {
    UncertaintyError::ParseError(e.to_string())
}

/// Empirical covariance of a group with denominator `N`, matching the
/// empirical distribution `(1/N) Σ δ`.
pub fn empirical_covariance(
    samples: &SampleSet,
    group: &[usize],
) -> Result<DMatrix<f64>, UncertaintyError> {
    let n = samples.len();
    if n < 2 {
        return Err(UncertaintyError::TooFewSamples { needed: 2, got: n });
    }
    let d = group.len();
    let mut mean = DVector::<f64>::zeros(d);
    for m in 0..n {
        mean += samples.group_point(m, group);
    }
    mean /= n as f64;
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for m in 0..n {
        let dev = samples.group_point(m, group) - &mean;
        cov += &dev * dev.transpose();
    }
    cov /= n as f64;
    Ok(cov)
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Eigenvalues come back ascending with matching orthonormal eigenvector
/// columns. Sized for the small per-partition covariances.
pub fn symmetric_eig(m: &DMatrix<f64>) -> Result<EigBasis, UncertaintyError> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(UncertaintyError::DimensionMismatch(format!(
            "{}x{} matrix is not square",
            n,
            m.ncols()
        )));
    }
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if asym > 1e-9 {
        return Err(UncertaintyError::NotSymmetric(asym));
    }

    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
    let tol = 1e-12 * scale;
    let max_sweeps = 100;

    let off = |a: &DMatrix<f64>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[(i, j)] * a[(i, j)];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = n < 2;
    for _ in 0..max_sweeps {
        if off(&a) <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged && off(&a) > tol {
        return Err(UncertaintyError::NoConvergence);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).unwrap());
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| a[(i, i)]));
    let mut eigenvectors = DMatrix::<f64>::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &v.column(src));
    }
    Ok(EigBasis {
        eigenvalues,
        eigenvectors,
    })
}

/// Configuration of the truncated multivariate normal sample generator:
/// per-unit mean, per-group covariance of the parent normal, and the
/// truncation box enforced by rejection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub mean: Vec<f64>,
    pub groups: Vec<Vec<usize>>,
    /// One row-major matrix per group.
    pub covariances: Vec<Vec<Vec<f64>>>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl GeneratorConfig {
    pub fn n_xi(&self) -> usize {
        self.mean.len()
    }
}

/// PSD factor `L` with `L L' = cov`, via the symmetric eigendecomposition so
/// that semidefinite covariances (including zero) are accepted.
fn psd_factor(cov: &DMatrix<f64>, group: usize) -> Result<DMatrix<f64>, UncertaintyError> {
    let eig = symmetric_eig(cov)?;
    let scale = eig.eigenvalues.iter().fold(1.0_f64, |a, &l| a.max(l.abs()));
    let n = cov.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let lam = eig.eigenvalues[j];
        if lam < -1e-9 * scale {
            return Err(UncertaintyError::NotPsd {
                group,
                eigenvalue: lam,
            });
        }
        let sd = lam.max(0.0).sqrt();
        for i in 0..n {
            l[(i, j)] = eig.eigenvectors[(i, j)] * sd;
        }
    }
    Ok(l)
}

/// Draw `n` i.i.d. samples: correlated within each group, independent across
/// groups, rejected against the truncation box. Deterministic for a fixed
/// seed.
pub fn generate_samples(
    config: &GeneratorConfig,
    n: usize,
    seed: u64,
) -> Result<SampleSet, UncertaintyError> {
    let n_xi = config.n_xi();
    if config.lower.len() != n_xi || config.upper.len() != n_xi {
        return Err(UncertaintyError::DimensionMismatch(
            "truncation box length does not match the mean vector".into(),
        ));
    }
    for j in 0..n_xi {
        if config.lower[j] > config.upper[j] {
            return Err(UncertaintyError::EmptyBox(j));
        }
    }
    if config.groups.len() != config.covariances.len() {
        return Err(UncertaintyError::DimensionMismatch(format!(
            "{} groups but {} covariance matrices",
            config.groups.len(),
            config.covariances.len()
        )));
    }
    let mut factors = Vec::with_capacity(config.groups.len());
    for (i, (group, cov_rows)) in config.groups.iter().zip(&config.covariances).enumerate() {
        let d = group.len();
        if cov_rows.len() != d || cov_rows.iter().any(|r| r.len() != d) {
            return Err(UncertaintyError::DimensionMismatch(format!(
                "covariance of group {i} is not {d}x{d}"
            )));
        }
        let cov = DMatrix::from_fn(d, d, |r, c| cov_rows[r][c]);
        factors.push(psd_factor(&cov, i)?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = DMatrix::<f64>::zeros(n, n_xi);
    let mut attempts: u64 = 0;
    let mut accepted: u64 = 0;
    for m in 0..n {
        for (group, l) in config.groups.iter().zip(&factors) {
            let d = group.len();
            loop {
                attempts += 1;
                if attempts % 100_000 == 0 && (accepted as f64) < 1e-4 * attempts as f64 {
                    return Err(UncertaintyError::RejectionStall);
                }
                let z = DVector::from_iterator(
                    d,
                    (0..d).map(|_| StandardNormal.sample(&mut rng)),
                );
                let y = l * z;
                let ok = group.iter().enumerate().all(|(j, &w)| {
                    let v = config.mean[w] + y[j];
                    v >= config.lower[w] && v <= config.upper[w]
                });
                if ok {
                    accepted += 1;
                    for (j, &w) in group.iter().enumerate() {
                        data[(m, w)] = config.mean[w] + y[j];
                    }
                    break;
                }
            }
        }
    }
    Ok(SampleSet { data })
}

/// Projections `ζ'(ξ_m)^i` of every sample's group components on a normal.
pub fn project_samples(
    samples: &SampleSet,
    group: &[usize],
    normal: &DVector<f64>,
) -> Result<Vec<f64>, UncertaintyError> {
    if normal.len() != group.len() {
        return Err(UncertaintyError::DimensionMismatch(format!(
            "normal has length {}, group has {}",
            normal.len(),
            group.len()
        )));
    }
    Ok((0..samples.len())
        .map(|m| normal.dot(&samples.group_point(m, group)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn paper_covariance() -> Vec<Vec<f64>> {
        vec![
            vec![20.0, 16.0, 16.0],
            vec![16.0, 20.0, 16.0],
            vec![16.0, 16.0, 20.0],
        ]
    }

    pub(crate) fn paper_generator_config() -> GeneratorConfig {
        GeneratorConfig {
            mean: vec![100.0; 6],
            groups: vec![vec![0, 1, 2], vec![3, 4, 5]],
            covariances: vec![paper_covariance(), paper_covariance()],
            lower: vec![80.0; 6],
            upper: vec![120.0; 6],
        }
    }

    #[test]
    fn covariance_two_points() {
        let s = SampleSet::from_rows(&[vec![0.0, 0.0], vec![2.0, 2.0]]);
        let cov = empirical_covariance(&s, &[0, 1]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(cov[(i, j)], 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn covariance_identical_samples_is_zero() {
        let s = SampleSet::from_rows(&vec![vec![5.0, 7.0]; 4]);
        let cov = empirical_covariance(&s, &[0, 1]).unwrap();
        assert!(cov.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn covariance_needs_two_samples() {
        let s = SampleSet::from_rows(&[vec![1.0]]);
        assert!(matches!(
            empirical_covariance(&s, &[0]),
            Err(UncertaintyError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn eig_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let eig = symmetric_eig(&m).unwrap();
        assert_relative_eq!(eig.eigenvalues[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(eig.eigenvalues[1], 2.0, epsilon = 1e-12);
        assert_relative_eq!(eig.eigenvectors[(1, 0)].abs(), 1.0, epsilon = 1e-9);
        assert_relative_eq!(eig.eigenvectors[(0, 1)].abs(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn eig_rank_one() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let eig = symmetric_eig(&m).unwrap();
        assert_relative_eq!(eig.eigenvalues[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(eig.eigenvalues[1], 2.0, epsilon = 1e-12);
        let r = 1.0 / 2.0_f64.sqrt();
        let v0 = eig.eigenvectors.column(0);
        assert!((v0[0] - r).abs() < 1e-9 && (v0[1] + r).abs() < 1e-9
            || (v0[0] + r).abs() < 1e-9 && (v0[1] - r).abs() < 1e-9);
    }

    #[test]
    fn eig_reconstruction_random_psd() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        use rand::Rng;
        for _ in 0..10 {
            let b = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
            let m = &b * b.transpose();
            let eig = symmetric_eig(&m).unwrap();
            let lam = DMatrix::from_diagonal(&eig.eigenvalues);
            let rec = &eig.eigenvectors * lam * eig.eigenvectors.transpose();
            assert!((rec - &m).iter().all(|v| v.abs() < 1e-8));
            let vtv = eig.eigenvectors.transpose() * &eig.eigenvectors;
            assert!((vtv - DMatrix::identity(5, 5)).iter().all(|v| v.abs() < 1e-9));
            for w in eig.eigenvalues.iter().zip(eig.eigenvalues.iter().skip(1)) {
                assert!(w.0 <= w.1);
            }
        }
    }

    #[test]
    fn eig_paper_covariance_spectrum() {
        // 4I + 16J has eigenvalues {4, 4, 52}: J contributes {0, 0, 48}.
        let cov = DMatrix::from_fn(3, 3, |i, j| paper_covariance()[i][j]);
        let eig = symmetric_eig(&cov).unwrap();
        assert_relative_eq!(eig.eigenvalues[0], 4.0, epsilon = 1e-9);
        assert_relative_eq!(eig.eigenvalues[1], 4.0, epsilon = 1e-9);
        assert_relative_eq!(eig.eigenvalues[2], 52.0, epsilon = 1e-9);
        // The two smallest eigenvectors span the plane orthogonal to (1,1,1).
        let ones = DVector::from_element(3, 1.0 / 3.0_f64.sqrt());
        assert!(eig.eigenvectors.column(0).dot(&ones).abs() < 1e-9);
        assert!(eig.eigenvectors.column(1).dot(&ones).abs() < 1e-9);
    }

    #[test]
    fn eig_rejects_asymmetry() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            symmetric_eig(&m),
            Err(UncertaintyError::NotSymmetric(_))
        ));
    }

    #[test]
    fn zero_covariance_degenerates_to_mean() {
        let config = GeneratorConfig {
            mean: vec![100.0, 100.0],
            groups: vec![vec![0, 1]],
            covariances: vec![vec![vec![0.0, 0.0], vec![0.0, 0.0]]],
            lower: vec![80.0, 80.0],
            upper: vec![120.0, 120.0],
        };
        let s = generate_samples(&config, 10, 1).unwrap();
        for m in 0..10 {
            assert_eq!(s.row(m), vec![100.0, 100.0]);
        }
    }

    #[test]
    fn samples_respect_truncation_box() {
        let s = generate_samples(&paper_generator_config(), 50, 123).unwrap();
        for m in 0..s.len() {
            for v in s.row(m) {
                assert!((80.0..=120.0).contains(&v));
            }
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_samples(&paper_generator_config(), 25, 777).unwrap();
        let b = generate_samples(&paper_generator_config(), 25, 777).unwrap();
        for m in 0..a.len() {
            assert_eq!(a.row(m), b.row(m));
        }
        let c = generate_samples(&paper_generator_config(), 25, 778).unwrap();
        assert!((0..c.len()).any(|m| c.row(m) != a.row(m)));
    }

    #[test]
    fn cross_group_independence_monte_carlo() {
        let s = generate_samples(&paper_generator_config(), 20_000, 9).unwrap();
        // Correlation of one coordinate from each group.
        let xs: Vec<f64> = (0..s.len()).map(|m| s.row(m)[0]).collect();
        let ys: Vec<f64> = (0..s.len()).map(|m| s.row(m)[3]).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
            syy += (y - my) * (y - my);
        }
        let r = sxy / (sxx.sqrt() * syy.sqrt());
        assert!(r.abs() < 0.03, "cross-group correlation {r}");
    }

    #[test]
    fn monte_carlo_covariance_matches_generator() {
        let s = generate_samples(&paper_generator_config(), 10_000, 21).unwrap();
        let cov = empirical_covariance(&s, &[0, 1, 2]).unwrap();
        // Truncation shrinks the parent covariance slightly; ±1.5 absolute
        // captures both the shrinkage and sampling noise at N = 10^4.
        for i in 0..3 {
            for j in 0..3 {
                let target = paper_covariance()[i][j];
                assert!(
                    (cov[(i, j)] - target).abs() < 1.5,
                    "cov[{i}][{j}] = {} vs {target}",
                    cov[(i, j)]
                );
            }
        }
    }

    #[test]
    fn rejection_stall_detected() {
        // Truncation box far away from the mean with tiny variance.
        let config = GeneratorConfig {
            mean: vec![0.0],
            groups: vec![vec![0]],
            covariances: vec![vec![vec![1e-6]]],
            lower: vec![100.0],
            upper: vec![101.0],
        };
        assert!(matches!(
            generate_samples(&config, 1, 4),
            Err(UncertaintyError::RejectionStall)
        ));
    }

    #[test]
    fn projection_axis_and_diagonal() {
        let s = SampleSet::from_rows(&[vec![0.0, 0.0], vec![2.0, 2.0]]);
        let axis = DVector::from_row_slice(&[1.0, 0.0]);
        assert_eq!(project_samples(&s, &[0, 1], &axis).unwrap(), vec![0.0, 2.0]);
        let diag = DVector::from_row_slice(&[1.0, 1.0]).normalize();
        let proj = project_samples(&s, &[0, 1], &diag).unwrap();
        assert_relative_eq!(proj[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(proj[1], 2.0 * 2.0_f64.sqrt(), epsilon = 1e-12);
        let neg = -diag.clone();
        let proj_neg = project_samples(&s, &[0, 1], &neg).unwrap();
        for (a, b) in proj.iter().zip(&proj_neg) {
            assert_relative_eq!(*a, -b, epsilon = 1e-12);
        }
    }

    #[test]
    fn csv_round_trip_and_support_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.csv");
        let s = generate_samples(&paper_generator_config(), 8, 3).unwrap();
        let ids: Vec<String> = ["W3", "W5", "W7", "W16", "W21", "W23"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        s.write_csv(&path, &ids).unwrap();
        let (header, loaded) = SampleSet::read_csv(&path).unwrap();
        assert_eq!(header, ids);
        for m in 0..s.len() {
            assert_eq!(s.row(m), loaded.row(m));
        }
        let partition =
            PartitionSpec::boxed(vec![vec![0, 1, 2], vec![3, 4, 5]], &[80.0; 6], &[120.0; 6]);
        loaded.check_support(&partition).unwrap();

        // A sample outside the support is rejected with its index.
        let mut rows: Vec<Vec<f64>> = (0..s.len()).map(|m| s.row(m)).collect();
        rows[3][0] = 70.0;
        let bad = SampleSet::from_rows(&rows);
        match bad.check_support(&partition) {
            Err(UncertaintyError::SupportViolation { indices }) => assert_eq!(indices, vec![3]),
            other => panic!("expected support violation, got {other:?}"),
        }
    }

    #[test]
    fn partition_validation() {
        let p = PartitionSpec::boxed(vec![vec![0, 1], vec![2]], &[0.0; 3], &[1.0; 3]);
        p.validate(3).unwrap();
        let overlapping = PartitionSpec::boxed(vec![vec![0, 1], vec![1]], &[0.0; 2], &[1.0; 2]);
        assert!(overlapping.validate(2).is_err());
        let incomplete = PartitionSpec::boxed(vec![vec![0]], &[0.0; 2], &[1.0; 2]);
        assert!(incomplete.validate(2).is_err());
    }

    #[test]
    fn unbounded_support_rejected() {
        let gamma = DMatrix::from_row_slice(1, 1, &[1.0]);
        let rho = DVector::from_row_slice(&[5.0]);
        let p = PartitionSpec {
            groups: vec![vec![0]],
            supports: vec![SupportPolyhedron { gamma, rho }],
        };
        assert!(matches!(
            p.validate(1),
            Err(UncertaintyError::BadPartition(_))
        ));
    }
}
