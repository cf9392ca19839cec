//! Latent factor models for exposure and outcome residuals, posterior
//! confounder moments, and rank selection.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{center_columns, sample_covariance, sym_eig};
use crate::rng::{derive_seed, permutation, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseMode {
    /// Common uniqueness (probabilistic PCA), closed form.
    Isotropic,
    /// Per-coordinate uniquenesses, fitted by EM.
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Relative log-likelihood change that stops EM.
    pub tol: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iter: 2000, tol: 1e-8, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    /// d x M loadings in the canonical frame.
    #[serde(with = "crate::numerics::rows")]
    pub loadings: DMatrix<f64>,
    #[serde(with = "crate::numerics::vector")]
    pub uniquenesses: DVector<f64>,
    pub noise_mode: NoiseMode,
    pub rank: usize,
    pub loglik: f64,
    /// False when EM hit `max_iter` before meeting `tol`; the best iterate is returned.
    pub converged: bool,
    pub iterations: usize,
}

impl FactorModel {
    /// Builds a model from known parameters (put into the canonical frame).
    pub fn from_parts(loadings: DMatrix<f64>, uniquenesses: DVector<f64>, noise_mode: NoiseMode) -> Result<Self> {
        if loadings.nrows() != uniquenesses.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} loading rows vs {} uniquenesses",
                loadings.nrows(),
                uniquenesses.len()
            )));
        }
        if uniquenesses.iter().any(|&u| !(u > 0.0)) {
            return Err(Error::InvalidArgument("uniquenesses must be positive".into()));
        }
        let rank = loadings.ncols();
        Ok(FactorModel {
            loadings: canonical_frame(&loadings, &uniquenesses),
            uniquenesses,
            noise_mode,
            rank,
            loglik: f64::NAN,
            converged: true,
            iterations: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.loadings.nrows()
    }

    /// loadings * loadings^T + diag(uniquenesses).
    pub fn implied_covariance(&self) -> DMatrix<f64> {
        let mut s = &self.loadings * self.loadings.transpose();
        for j in 0..self.dim() {
            s[(j, j)] += self.uniquenesses[j];
        }
        s
    }

    pub fn is_full_rank(&self) -> bool {
        crate::numerics::numerical_rank(&self.loadings, 1e-8) == self.rank
    }
}

/// Largest rank allowed by the counting condition (d - M)^2 >= d + M.
pub fn max_identifiable_rank(d: usize) -> usize {
    (0..d).take_while(|&m| m == 0 || (d - m) * (d - m) >= d + m).last().unwrap_or(0)
}

fn check_rank(d: usize, m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidArgument("factor rank must be at least 1".into()));
    }
    if m >= d || (d - m) * (d - m) < d + m {
        return Err(Error::RankTooLarge { rank: m, dim: d });
    }
    Ok(())
}

/// Rotates loadings so L^T diag(psi)^-1 L is diagonal with descending entries and the
/// largest-magnitude entry of every column is positive.
pub fn canonical_frame(loadings: &DMatrix<f64>, psi: &DVector<f64>) -> DMatrix<f64> {
    let w = scale_rows(loadings, psi);
    let eig = sym_eig(&(loadings.transpose() * w));
    let mut l = loadings * &eig.eigenvectors;
    for mut col in l.column_iter_mut() {
        let idx = col.iamax();
        if col[idx] < 0.0 {
            col.neg_mut();
        }
    }
    l
}

/// Psi^{-1} L.
fn scale_rows(l: &DMatrix<f64>, psi: &DVector<f64>) -> DMatrix<f64> {
    let mut w = l.clone();
    for (j, mut row) in w.row_iter_mut().enumerate() {
        row /= psi[j];
    }
    w
}

fn gaussian_loglik(s: &DMatrix<f64>, l: &DMatrix<f64>, psi: &DVector<f64>, r: usize) -> f64 {
    let d = s.nrows();
    let m = l.ncols();
    let w = scale_rows(l, psi);
    let k = DMatrix::identity(m, m) + l.transpose() * &w;
    let chol = match k.clone().cholesky() {
        Some(c) => c,
        None => return f64::NEG_INFINITY,
    };
    let logdet =
        psi.iter().map(|v| v.ln()).sum::<f64>() + 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let tr_psi: f64 = (0..d).map(|j| s[(j, j)] / psi[j]).sum();
    let tr_corr = (chol.solve(&(w.transpose() * s * &w))).trace();
    -0.5 * r as f64 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + tr_psi - tr_corr)
}

fn isotropic_fit(s: &DMatrix<f64>, m: usize) -> (DMatrix<f64>, f64) {
    let d = s.nrows();
    let eig = sym_eig(s);
    let discarded = eig.eigenvalues.rows(m, d - m).sum() / (d - m) as f64;
    let floor = 1e-12 * (s.trace() / d as f64).max(f64::MIN_POSITIVE);
    let sigma2 = discarded.max(floor);
    let mut l = eig.eigenvectors.columns(0, m).into_owned();
    for k in 0..m {
        let scale = (eig.eigenvalues[k] - sigma2).max(0.0).sqrt();
        l.column_mut(k).scale_mut(scale);
    }
    (l, sigma2)
}

/// Fits a rank-`rank` factor model to the rows of `residuals` (R replicates x d coordinates).
/// Columns are centered first.
pub fn fit_factor_model(
    residuals: &DMatrix<f64>,
    rank: usize,
    mode: NoiseMode,
    opts: &FitOptions,
) -> Result<FactorModel> {
    let (r, d) = residuals.shape();
    if r < 3 {
        return Err(Error::InsufficientReplicates { got: r, need: 3 });
    }
    check_rank(d, rank)?;
    let s = sample_covariance(residuals, true)?;
    let mean_var = s.trace() / d as f64;
    for j in 0..d {
        if !(s[(j, j)] > 1e-13 * mean_var) {
            return Err(Error::DegenerateColumn { index: j });
        }
    }
    let (l0, sigma2) = isotropic_fit(&s, rank);
    let psi0 = DVector::from_element(d, sigma2);
    if mode == NoiseMode::Isotropic {
        let loglik = gaussian_loglik(&s, &l0, &psi0, r);
        return Ok(FactorModel {
            loadings: canonical_frame(&l0, &psi0),
            uniquenesses: psi0,
            noise_mode: mode,
            rank,
            loglik,
            converged: true,
            iterations: 0,
        });
    }
    let floors = DVector::from_iterator(d, (0..d).map(|j| 1e-9 * s[(j, j)]));
    let mut l = l0;
    let mut psi = psi0.zip_map(&floors, f64::max);
    let mut ll = gaussian_loglik(&s, &l, &psi, r);
    let mut converged = false;
    let mut iterations = 0;
    let eye = DMatrix::<f64>::identity(rank, rank);
    while iterations < opts.max_iter {
        iterations += 1;
        let w = scale_rows(&l, &psi);
        let g = match (&eye + l.transpose() * &w).try_inverse() {
            Some(g) => g,
            None => return Err(Error::Singular("factor EM posterior precision".into())),
        };
        let beta = &g * w.transpose();
        let sb = &s * beta.transpose();
        let ezz = &g + &beta * &sb;
        let ezz_inv = ezz.try_inverse().ok_or_else(|| Error::Singular("factor EM second moment".into()))?;
        let l_new = &sb * ezz_inv;
        let psi_new =
            DVector::from_iterator(d, (0..d).map(|j| (s[(j, j)] - l_new.row(j).dot(&sb.row(j))).max(floors[j])));
        let ll_new = gaussian_loglik(&s, &l_new, &psi_new, r);
        debug_assert!(ll_new >= ll - 1e-7 * ll.abs().max(1.0), "EM log-likelihood decreased: {ll} -> {ll_new}");
        let change = (ll_new - ll).abs() / ll.abs().max(1e-300);
        let improved = ll_new >= ll;
        if improved {
            l = l_new;
            psi = psi_new;
        }
        ll = ll.max(ll_new);
        if change <= opts.tol || !improved {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("factor EM stopped after {iterations} iterations without meeting tol {}", opts.tol);
    }
    Ok(FactorModel {
        loadings: canonical_frame(&l, &psi),
        uniquenesses: psi,
        noise_mode: mode,
        rank,
        loglik: ll,
        converged,
        iterations,
    })
}

/// Gaussian conditional moments of the confounder given an exposure vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMoments {
    /// M x d operator B^T Sigma_D^{-1}.
    #[serde(with = "crate::numerics::rows")]
    pub mean_operator: DMatrix<f64>,
    /// Sigma_{U|D} = I - B^T Sigma_D^{-1} B.
    #[serde(with = "crate::numerics::rows")]
    pub cov: DMatrix<f64>,
    /// Sigma_D = B B^T + Lambda_D.
    #[serde(with = "crate::numerics::rows")]
    pub sigma_d: DMatrix<f64>,
}

impl PosteriorMoments {
    pub fn mean(&self, exposure: &DVector<f64>) -> DVector<f64> {
        &self.mean_operator * exposure
    }
}

/// Exact conditional operators, computed through the Woodbury identity.
pub fn posterior_moments(model: &FactorModel) -> PosteriorMoments {
    let m = model.rank;
    let w = scale_rows(&model.loadings, &model.uniquenesses);
    let k = DMatrix::identity(m, m) + model.loadings.transpose() * &w;
    let cov = crate::numerics::symmetrize(&k.try_inverse().expect("I + L'Psi^-1 L is positive definite"));
    let mean_operator = &cov * w.transpose();
    PosteriorMoments { mean_operator, cov, sigma_d: model.implied_covariance() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RankMethod {
    EigenRatio,
    InfoCriterion,
    ParallelAnalysis,
}

impl std::str::FromStr for RankMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "eigenratio" => Ok(RankMethod::EigenRatio),
            "infocriterion" | "ic" => Ok(RankMethod::InfoCriterion),
            "parallelanalysis" | "parallel" => Ok(RankMethod::ParallelAnalysis),
            other => Err(Error::InvalidArgument(format!("unknown rank method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankOptions {
    pub permutations: usize,
    pub seed: u64,
}

impl Default for RankOptions {
    fn default() -> Self {
        RankOptions { permutations: 100, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSelection {
    pub rank: usize,
    pub method: RankMethod,
    pub max_rank: usize,
    /// Score of candidate k at index k - 1 (ratio, criterion value, or eigenvalue excess).
    pub scores: Vec<f64>,
    pub eigenvalues: Vec<f64>,
}

/// argmax over k in 1..=max_rank of lambda_k / lambda_{k+1}; ties go to the smaller k.
pub fn eigen_ratio_rank(eigenvalues: &[f64], max_rank: usize) -> (usize, Vec<f64>) {
    let scale = eigenvalues.first().copied().unwrap_or(0.0).abs().max(f64::MIN_POSITIVE);
    let scores: Vec<f64> = (1..=max_rank)
        .map(|k| {
            let (a, b) = (eigenvalues[k - 1], eigenvalues[k]);
            if b > 1e-14 * scale {
                a / b
            } else if a > 1e-14 * scale {
                f64::INFINITY
            } else {
                1.0
            }
        })
        .collect();
    let mut best = 0;
    for k in 1..scores.len() {
        if scores[k] > scores[best] {
            best = k;
        }
    }
    (best + 1, scores)
}

/// Penalized residual variance criterion: ln V(k) + k (d+R)/(dR) ln(dR/(d+R)).
pub fn info_criterion_rank(eigenvalues: &[f64], d: usize, r: usize, max_rank: usize) -> (usize, Vec<f64>) {
    let (df, rf) = (d as f64, r as f64);
    let penalty = (df + rf) / (df * rf) * (df * rf / (df + rf)).ln();
    let scores: Vec<f64> = (1..=max_rank)
        .map(|k| {
            let v = eigenvalues[k..].iter().map(|l| l.max(0.0)).sum::<f64>() / df;
            v.max(f64::MIN_POSITIVE).ln() + k as f64 * penalty
        })
        .collect();
    let mut best = 0;
    for k in 1..scores.len() {
        if scores[k] < scores[best] {
            best = k;
        }
    }
    (best + 1, scores)
}

/// Selects the number of factors from residuals (R replicates x d coordinates).
/// `max_rank` is clamped to min(R, d) - 1 and the counting condition.
pub fn select_rank(
    residuals: &DMatrix<f64>,
    method: RankMethod,
    max_rank: usize,
    opts: &RankOptions,
) -> Result<RankSelection> {
    let (r, d) = residuals.shape();
    let limit = max_identifiable_rank(d).min(r.saturating_sub(1)).max(1);
    let max_rank = max_rank.clamp(1, limit);
    let s = sample_covariance(residuals, true)?;
    let eigenvalues: Vec<f64> = sym_eig(&s).eigenvalues.iter().copied().collect();
    let (rank, scores) = match method {
        RankMethod::EigenRatio => eigen_ratio_rank(&eigenvalues, max_rank),
        RankMethod::InfoCriterion => info_criterion_rank(&eigenvalues, d, r, max_rank),
        RankMethod::ParallelAnalysis => parallel_analysis(residuals, &eigenvalues, max_rank, opts),
    };
    Ok(RankSelection { rank, method, max_rank, scores, eigenvalues })
}

fn parallel_analysis(
    residuals: &DMatrix<f64>,
    eigenvalues: &[f64],
    max_rank: usize,
    opts: &RankOptions,
) -> (usize, Vec<f64>) {
    let z = center_columns(residuals);
    let (r, d) = z.shape();
    let perms = opts.permutations.max(1);
    let null: Vec<Vec<f64>> = (0..perms)
        .into_par_iter()
        .map(|p| {
            let mut rng = rng_from(derive_seed(opts.seed, 0x5041, p as u64));
            let mut shuffled = DMatrix::zeros(r, d);
            for j in 0..d {
                let order = permutation(&mut rng, r);
                for (i, &src) in order.iter().enumerate() {
                    shuffled[(i, j)] = z[(src, j)];
                }
            }
            let s = sample_covariance(&shuffled, true).expect("r >= 2 checked by caller");
            sym_eig(&s).eigenvalues.iter().take(max_rank).copied().collect()
        })
        .collect();
    let scores: Vec<f64> = (0..max_rank)
        .map(|k| {
            let column: Vec<f64> = null.iter().map(|e| e[k]).collect();
            eigenvalues[k] - crate::numerics::quantile(&column, 0.95)
        })
        .collect();
    let rank = scores.iter().take_while(|&&s| s > 0.0).count();
    (rank, scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal_matrix;
    use approx::assert_relative_eq;

    #[test]
    fn counting_condition_bounds() {
        assert_eq!(max_identifiable_rank(3), 1);
        assert_eq!(max_identifiable_rank(5), 2);
        assert_eq!(max_identifiable_rank(12), 7);
        assert!(matches!(check_rank(4, 4), Err(Error::RankTooLarge { .. })));
    }

    #[test]
    fn rank_one_noiseless_isotropic() {
        let mut rng = rng_from(1);
        let u = normal_matrix(&mut rng, 50, 1);
        let b = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let x = &u * &b;
        let fit = fit_factor_model(&x, 1, NoiseMode::Isotropic, &FitOptions::default()).unwrap();
        let l = fit.loadings.column(0);
        assert_relative_eq!(l[0], l[1], epsilon = 1e-10);
        assert_relative_eq!(l[1], l[2], epsilon = 1e-10);
        assert!(l[0] > 0.0);
        assert!(fit.uniquenesses.max() < 1e-8);
    }

    #[test]
    fn m_equal_d_rejected() {
        let x = DMatrix::from_fn(10, 3, |i, j| (i * j) as f64 + (i as f64).sin());
        assert!(matches!(
            fit_factor_model(&x, 3, NoiseMode::Diagonal, &FitOptions::default()),
            Err(Error::RankTooLarge { rank: 3, dim: 3 })
        ));
    }

    #[test]
    fn degenerate_column_reported() {
        let mut rng = rng_from(2);
        let mut x = normal_matrix(&mut rng, 20, 5);
        x.column_mut(2).fill(3.0);
        assert!(matches!(
            fit_factor_model(&x, 1, NoiseMode::Diagonal, &FitOptions::default()),
            Err(Error::DegenerateColumn { index: 2 })
        ));
    }

    #[test]
    fn posterior_worked_example() {
        let model = FactorModel::from_parts(
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DVector::from_vec(vec![1.0, 1.0]),
            NoiseMode::Diagonal,
        )
        .unwrap();
        let pm = posterior_moments(&model);
        assert_relative_eq!(pm.sigma_d, DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]), epsilon = 1e-14);
        assert_relative_eq!(pm.mean_operator[(0, 0)], 1.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(pm.mean_operator[(0, 1)], 1.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(pm.cov[(0, 0)], 1.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(pm.mean(&DVector::from_vec(vec![1.0, 2.0]))[0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn eigen_ratio_examples() {
        let spectrum = [10.0, 8.0, 6.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        assert_eq!(eigen_ratio_rank(&spectrum, 5).0, 3);
        let flat = [2.0; 8];
        assert_eq!(eigen_ratio_rank(&flat, 5).0, 1);
    }

    #[test]
    fn em_recovers_covariance() {
        let mut rng = rng_from(5);
        let (r, d, m) = (4000, 10, 2);
        let b = normal_matrix(&mut rng, d, m);
        let psi: Vec<f64> = (0..d).map(|j| 0.5 + 0.1 * j as f64).collect();
        let u = normal_matrix(&mut rng, r, m);
        let mut x = &u * b.transpose();
        let e = normal_matrix(&mut rng, r, d);
        for (j, &p) in psi.iter().enumerate() {
            x.column_mut(j).axpy(p.sqrt(), &e.column(j), 1.0);
        }
        let fit = fit_factor_model(&x, m, NoiseMode::Diagonal, &FitOptions::default()).unwrap();
        let truth = &b * b.transpose() + DMatrix::from_diagonal(&DVector::from_vec(psi));
        let err = (fit.implied_covariance() - &truth).norm() / truth.norm();
        assert!(err < 0.05, "relative error {err}");
        assert!(fit.converged);
    }
}
