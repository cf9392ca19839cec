//! Bias-matrix machinery: the R operator, partial-identification intervals,
//! masked orthogonal Procrustes, and identification diagnostics.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::{posterior_moments, FactorModel};
use crate::numerics::{default_ridge, inverse_condition, polar, sym_eig, sym_inv_sqrt};
use crate::panel::NeighborhoodSpec;
use crate::rng::{derive_seed, haar_orthogonal, rng_from};

/// Threshold on smallest/largest singular value for rank decisions.
pub const RANK_TOL: f64 = 1e-6;

/// R = Sigma_{U|D}^{-1/2} B^T Sigma_D^{-1} (M x d).
pub fn build_r_operator(exposure_model: &FactorModel) -> Result<DMatrix<f64>> {
    let pm = posterior_moments(exposure_model);
    let root = sym_inv_sqrt(&pm.cov, default_ridge(&pm.cov))?;
    Ok(root * pm.mean_operator)
}

/// C = gamma * theta * R.
pub fn bias_matrix(gamma: &DMatrix<f64>, theta: &DMatrix<f64>, r_operator: &DMatrix<f64>) -> DMatrix<f64> {
    gamma * theta * r_operator
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Range of the bias of unit `unit` for exposure contrast `contrast` over all rotations:
/// +/- ||gamma_i|| * ||R contrast||.
pub fn partial_id_interval(
    gamma: &DMatrix<f64>,
    r_operator: &DMatrix<f64>,
    unit: usize,
    contrast: &DVector<f64>,
) -> Interval {
    let h = gamma.row(unit).norm() * (r_operator * contrast).norm();
    Interval { lo: -h, hi: h }
}

/// Known entry of the bias matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnownEntry {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Entries of `values` where `mask` is true.
pub fn masked_entries(mask: &[Vec<bool>], values: &DMatrix<f64>) -> Vec<KnownEntry> {
    let mut out = Vec::new();
    for (i, row) in mask.iter().enumerate() {
        for (j, &on) in row.iter().enumerate() {
            if on {
                out.push(KnownEntry { row: i, col: j, value: values[(i, j)] });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcrustesFit {
    #[serde(with = "crate::numerics::rows")]
    pub theta: DMatrix<f64>,
    /// Sum of squared residuals over the known entries.
    pub residual: f64,
    /// False when the masked design is numerically rank deficient.
    pub identified: bool,
    /// Smallest over largest singular value of the masked design.
    pub design_conditioning: f64,
    pub starts: usize,
}

/// Design rows vec(gamma_i r_j^T) for the known entries, flattened row-major over (a, b).
fn design(gamma: &DMatrix<f64>, r_operator: &DMatrix<f64>, entries: &[KnownEntry]) -> DMatrix<f64> {
    let m = gamma.ncols();
    let mut a = DMatrix::zeros(entries.len(), m * m);
    for (k, e) in entries.iter().enumerate() {
        for p in 0..m {
            let g = gamma[(e.row, p)];
            for q in 0..m {
                a[(k, p * m + q)] = g * r_operator[(q, e.col)];
            }
        }
    }
    a
}

fn flatten(theta: &DMatrix<f64>) -> DVector<f64> {
    let m = theta.nrows();
    DVector::from_iterator(m * m, (0..m).flat_map(|p| (0..m).map(move |q| (p, q))).map(|(p, q)| theta[(p, q)]))
}

fn unflatten(v: &DVector<f64>, m: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(m, m, v.as_slice())
}

const MM_MAX_ITER: usize = 50_000;
const MM_TOL: f64 = 1e-13;

/// Majorize-minimize on the orthogonal group: gradient step on the quadratic with step 1/L,
/// then polar projection. Monotone in the objective.
fn mm_solve(gram: &DMatrix<f64>, h: &DVector<f64>, lipschitz: f64, start: DMatrix<f64>) -> DMatrix<f64> {
    let m = start.nrows();
    let mut theta = start;
    for _ in 0..MM_MAX_ITER {
        let v = flatten(&theta);
        let grad = gram * &v - h;
        let next = polar(&unflatten(&(&v - grad / lipschitz), m));
        let step = (&next - &theta).norm();
        theta = next;
        if step <= MM_TOL {
            break;
        }
    }
    theta
}

/// argmin over orthogonal theta of sum over known entries of (gamma_i^T theta r_j - c_ij)^2,
/// multi-started from the identity and `n_init` Haar draws.
pub fn masked_procrustes(
    gamma: &DMatrix<f64>,
    r_operator: &DMatrix<f64>,
    entries: &[KnownEntry],
    n_init: usize,
    seed: u64,
) -> Result<ProcrustesFit> {
    let m = gamma.ncols();
    if r_operator.nrows() != m || r_operator.ncols() != gamma.nrows() {
        return Err(Error::DimensionMismatch(format!("gamma {:?} vs R {:?}", gamma.shape(), r_operator.shape())));
    }
    if entries.len() < m * m {
        return Err(Error::MaskTooSmall { entries: entries.len(), needed: m * m });
    }
    let a = design(gamma, r_operator, entries);
    let c = DVector::from_iterator(entries.len(), entries.iter().map(|e| e.value));
    let gram = a.transpose() * &a;
    let h = a.transpose() * &c;
    let spectrum = sym_eig(&gram).eigenvalues;
    let top = spectrum[0].max(0.0);
    let bottom = spectrum[spectrum.len() - 1].max(0.0);
    let design_conditioning = if top > 0.0 { (bottom / top).sqrt() } else { 0.0 };
    let identified = design_conditioning >= 1e-10;
    let objective = |theta: &DMatrix<f64>| (&a * flatten(theta) - &c).norm_squared();
    let starts: Vec<DMatrix<f64>> = std::iter::once(DMatrix::identity(m, m))
        .chain((0..n_init).map(|k| haar_orthogonal(&mut rng_from(derive_seed(seed, 0x9C, k as u64)), m)))
        .collect();
    let mut solutions: Vec<(f64, DMatrix<f64>)> = if top > 0.0 {
        starts
            .into_par_iter()
            .map(|s| {
                let theta = mm_solve(&gram, &h, top, s);
                (objective(&theta), theta)
            })
            .collect()
    } else {
        starts.into_iter().map(|s| (objective(&s), s)).collect()
    };
    let eye = DMatrix::<f64>::identity(m, m);
    let mut best = 0;
    for k in 1..solutions.len() {
        let (rb, rk) = (solutions[best].0, solutions[k].0);
        let closer = (&solutions[k].1 - &eye).norm() < (&solutions[best].1 - &eye).norm();
        if rk < rb - 1e-12 || ((rk - rb).abs() <= 1e-12 && closer) {
            best = k;
        }
    }
    let (residual, theta) = solutions.swap_remove(best);
    Ok(ProcrustesFit { theta, residual, identified, design_conditioning, starts: n_init + 1 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdCheckReport {
    pub basis_indices: Vec<usize>,
    pub row_rank_ok: Vec<bool>,
    pub spanning_ok: bool,
    /// Condition number of each basis unit's off-neighborhood R block.
    pub condition_numbers: Vec<f64>,
    /// Numerical rank of the masked design (full rank is M^2).
    pub design_rank: usize,
    pub threshold: f64,
}

/// Greedy search for M units whose outcome loadings form a well-conditioned basis and whose
/// off-neighborhood R columns have full row rank, plus a rank check of the full masked design.
pub fn check_identification(
    gamma: &DMatrix<f64>,
    r_operator: &DMatrix<f64>,
    neighborhoods: &NeighborhoodSpec,
) -> IdCheckReport {
    let (d, m) = gamma.shape();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| gamma.row(j).norm().total_cmp(&gamma.row(i).norm()).then(i.cmp(&j)));
    let mut basis = Vec::new();
    let mut row_ok = Vec::new();
    let mut conds = Vec::new();
    for &i in &order {
        if basis.len() == m {
            break;
        }
        let mut rows = basis.clone();
        rows.push(i);
        if inverse_condition(&gamma.select_rows(&rows)) <= RANK_TOL {
            continue;
        }
        let off: Vec<usize> = (0..d).filter(|&j| !neighborhoods.contains(i, j)).collect();
        if off.len() < m {
            continue;
        }
        let inv = inverse_condition(&r_operator.select_columns(&off));
        if inv > RANK_TOL {
            basis.push(i);
            row_ok.push(true);
            conds.push(1.0 / inv);
        }
    }
    let entries: Vec<KnownEntry> = masked_entries(&neighborhoods.off_mask(), &DMatrix::zeros(d, d));
    let design_rank = if entries.is_empty() {
        0
    } else {
        let a = design(gamma, r_operator, &entries);
        let spectrum = sym_eig(&(a.transpose() * &a)).eigenvalues;
        let top = spectrum[0].max(0.0);
        if top > 0.0 {
            spectrum.iter().filter(|&&l| (l.max(0.0) / top).sqrt() > RANK_TOL).count()
        } else {
            0
        }
    };
    let spanning_ok = basis.len() == m && row_ok.iter().all(|&b| b) && design_rank == m * m;
    IdCheckReport {
        basis_indices: basis,
        row_rank_ok: row_ok,
        spanning_ok,
        condition_numbers: conds,
        design_rank,
        threshold: RANK_TOL,
    }
}

/// Fitted bias machinery for one estimation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasModel {
    #[serde(with = "crate::numerics::rows")]
    pub gamma: DMatrix<f64>,
    /// Outcome uniquenesses, so that gamma gamma^T + diag(outcome_noise) models Cov(Y | D).
    #[serde(with = "crate::numerics::vector")]
    pub outcome_noise: DVector<f64>,
    #[serde(with = "crate::numerics::rows")]
    pub r_operator: DMatrix<f64>,
    #[serde(with = "crate::numerics::rows")]
    pub theta: DMatrix<f64>,
    /// gamma * theta * R with off-neighborhood entries replaced by the direct estimates.
    #[serde(with = "crate::numerics::rows")]
    pub bias_matrix: DMatrix<f64>,
    /// True at (i, j) when j lies outside the neighborhood of i.
    pub mask: Vec<Vec<bool>>,
    pub procrustes: ProcrustesFit,
    pub id_check: IdCheckReport,
}

impl BiasModel {
    /// Partial-identification interval for unit `unit` and exposure contrast `contrast`.
    pub fn interval(&self, unit: usize, contrast: &DVector<f64>) -> Interval {
        partial_id_interval(&self.gamma, &self.r_operator, unit, contrast)
    }

    /// Fitted conditional outcome covariance.
    pub fn outcome_covariance(&self) -> DMatrix<f64> {
        &self.gamma * self.gamma.transpose() + DMatrix::from_diagonal(&self.outcome_noise)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::NoiseMode;
    use approx::assert_relative_eq;

    fn worked_model() -> FactorModel {
        FactorModel::from_parts(
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DVector::from_vec(vec![1.0, 1.0]),
            NoiseMode::Diagonal,
        )
        .unwrap()
    }

    #[test]
    fn r_operator_worked_example() {
        let r = build_r_operator(&worked_model()).unwrap();
        let expect = 3f64.sqrt() / 3.0;
        assert_relative_eq!(r[(0, 0)], expect, epsilon = 1e-12);
        assert_relative_eq!(r[(0, 1)], expect, epsilon = 1e-12);
    }

    #[test]
    fn r_operator_homogeneity() {
        let c = 2.5;
        let b = DMatrix::from_row_slice(3, 1, &[1.0, -0.5, 0.8]);
        let psi = DVector::from_vec(vec![1.0, 0.7, 1.3]);
        let base =
            build_r_operator(&FactorModel::from_parts(b.clone(), psi.clone(), NoiseMode::Diagonal).unwrap()).unwrap();
        let scaled =
            build_r_operator(&FactorModel::from_parts(b * c, psi * (c * c), NoiseMode::Diagonal).unwrap()).unwrap();
        assert_relative_eq!(scaled, base / c, epsilon = 1e-12);
    }

    #[test]
    fn r_operator_vanishes_without_information() {
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let r = build_r_operator(
            &FactorModel::from_parts(b, DVector::from_vec(vec![1e6, 1e6]), NoiseMode::Diagonal).unwrap(),
        )
        .unwrap();
        assert!(r.norm() < 1e-5);
    }

    #[test]
    fn interval_worked_example() {
        let r = build_r_operator(&worked_model()).unwrap();
        let gamma = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let delta = DVector::from_vec(vec![1.0, 2.0]);
        let iv = partial_id_interval(&gamma, &r, 0, &delta);
        assert_relative_eq!(iv.hi, 3f64.sqrt(), epsilon = 1e-12);
        let realized = (gamma.row(0) * (&r * &delta))[(0, 0)];
        assert_relative_eq!(realized, iv.hi, epsilon = 1e-12);
        assert_eq!(partial_id_interval(&gamma, &r, 1, &delta), Interval { lo: 0.0, hi: 0.0 });
    }

    #[test]
    fn bias_matrix_outer_product() {
        let c = bias_matrix(
            &DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
            &DMatrix::identity(1, 1),
            &DMatrix::from_row_slice(1, 2, &[0.577, 0.577]),
        );
        assert_relative_eq!(c, DMatrix::from_row_slice(2, 2, &[0.577, 0.577, 1.154, 1.154]), epsilon = 1e-12);
    }

    fn off_diagonal(c: &DMatrix<f64>) -> Vec<KnownEntry> {
        let n = c.nrows();
        let mask: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| i != j).collect()).collect();
        masked_entries(&mask, c)
    }

    #[test]
    fn procrustes_rank_one_signs() {
        let gamma = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, -1.0]);
        let r = DMatrix::from_row_slice(1, 3, &[0.5, -0.3, 0.2]);
        let c = &gamma * &r;
        let fit = masked_procrustes(&gamma, &r, &off_diagonal(&c), 5, 1).unwrap();
        assert_relative_eq!(fit.theta[(0, 0)], 1.0, epsilon = 1e-12);
        assert!(fit.residual < 1e-20);
        let neg = masked_procrustes(&gamma, &r, &off_diagonal(&(-c)), 5, 1).unwrap();
        assert_relative_eq!(neg.theta[(0, 0)], -1.0, epsilon = 1e-12);
        assert!(neg.residual < 1e-20);
    }

    #[test]
    fn mask_too_small() {
        let gamma = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let r = DMatrix::identity(2, 2);
        let entries = off_diagonal(&DMatrix::zeros(2, 2));
        assert!(matches!(
            masked_procrustes(&gamma, &r, &entries, 1, 0),
            Err(Error::MaskTooSmall { entries: 2, needed: 4 })
        ));
    }

    #[test]
    fn identification_everything_interferes() {
        let nb = NeighborhoodSpec::explicit(4, (0..4).map(|_| (0..4).collect()).collect()).unwrap();
        let g = DMatrix::from_fn(4, 1, |i, _| 1.0 + i as f64);
        let r = DMatrix::from_fn(1, 4, |_, j| 0.5 + j as f64);
        let report = check_identification(&g, &r, &nb);
        assert!(!report.spanning_ok);
        assert_eq!(report.design_rank, 0);
    }

    #[test]
    fn identification_rank_one_minimal() {
        let g = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let r = DMatrix::from_row_slice(1, 2, &[0.0, 0.4]);
        let report = check_identification(&g, &r, &NeighborhoodSpec::none(2));
        assert!(report.spanning_ok);
        assert_eq!(report.basis_indices, vec![0]);
    }
}
