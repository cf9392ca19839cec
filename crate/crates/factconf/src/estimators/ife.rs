//! Interactive fixed effects: slopes alternating with principal components of the residual panel.

use nalgebra::{DMatrix, DVector};

use super::{CurveFit, DoseCurve, EffectEstimate, EstimatorConfig, Method};
use crate::error::{Error, Result};
use crate::numerics::{lstsq, sym_eig};
use crate::panel::PanelData;

fn stack(mats: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = mats[0].len();
    let mut out = DMatrix::zeros(n, mats.len());
    for (k, m) in mats.iter().enumerate() {
        out.column_mut(k).copy_from_slice(m.as_slice());
    }
    out
}

fn demean(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.add_scalar(-m.mean())
}

/// Orthonormal basis (R x M) of the leading right singular subspace of `w` (d x R).
fn replicate_factors(w: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    let (d, r) = w.shape();
    if r <= d {
        let eig = sym_eig(&(w.transpose() * w));
        return eig.eigenvectors.columns(0, m).into_owned();
    }
    let eig = sym_eig(&(w * w.transpose()));
    let mut f = w.transpose() * eig.eigenvectors.columns(0, m);
    for (k, mut col) in f.column_iter_mut().enumerate() {
        let norm = eig.eigenvalues[k].max(0.0).sqrt();
        if norm > 0.0 {
            col /= norm;
        }
    }
    f
}

/// Bai-type alternating estimator. Regressors: own exposure, neighbor-mean exposure under
/// interference, and every covariate with common slopes; all grand-mean centered.
pub fn ife_fit(panel: &PanelData, config: &EstimatorConfig) -> Result<EffectEstimate> {
    let (d, r) = panel.exposures.shape();
    let m = config.rank;
    if m >= d.min(r) {
        return Err(Error::InvalidArgument(format!("IFE rank {m} must be below min(N, T) = {}", d.min(r))));
    }
    let nb = config.neighborhoods_for(panel);
    let mut regs = vec![demean(&panel.exposures)];
    if !nb.is_trivial() {
        regs.push(demean(&nb.neighbor_mean(&panel.exposures)));
    }
    let n_own = regs.len();
    regs.extend(panel.covariates.iter().map(demean));
    let y = demean(&panel.outcomes);
    let y_vec = DVector::from_column_slice(y.as_slice());
    let mut beta = lstsq(&stack(&regs), &y_vec)?;
    let mut iterations = 0;
    let mut converged = true;
    if m > 0 {
        converged = false;
        while iterations < config.ife_max_iter {
            iterations += 1;
            let mut w = y.clone();
            for (k, z) in regs.iter().enumerate() {
                w -= z * beta[k];
            }
            let f = replicate_factors(&w, m);
            let ft = f.transpose();
            let defactor = |z: &DMatrix<f64>| z - z * &f * &ft;
            let z_tilde: Vec<DMatrix<f64>> = regs.iter().map(defactor).collect();
            let y_tilde = defactor(&y);
            let next = lstsq(&stack(&z_tilde), &DVector::from_column_slice(y_tilde.as_slice()))?;
            let change = (&next - &beta).amax();
            beta = next;
            if change < config.ife_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            log::warn!("IFE stopped after {iterations} iterations without converging");
        }
    }
    let own: Vec<f64> = beta.iter().take(n_own).copied().collect();
    let curve = CurveFit {
        curve: DoseCurve::Linear { slope: own[0] },
        spillover: own.get(1).copied().unwrap_or(0.0),
        sample: panel.exposures.iter().copied().collect(),
    };
    let mut est = EffectEstimate::assemble(Method::IFE, own, Vec::new(), vec![curve], &config.shifts)?;
    est.diagnostics.iterations = Some(iterations);
    est.diagnostics.converged = Some(converged);
    if !converged {
        est.diagnostics.notes.push("IFE did not converge; last iterate returned".into());
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_matrix, rng_from};
    use approx::assert_relative_eq;

    #[test]
    fn rank_zero_is_pooled_ols() {
        let mut rng = rng_from(11);
        let d = normal_matrix(&mut rng, 6, 20);
        let x = normal_matrix(&mut rng, 6, 20);
        let e = normal_matrix(&mut rng, 6, 20);
        let y = &d * 0.7 + &x * 0.3 + e;
        let panel = PanelData::new(d.clone(), y.clone(), vec![x.clone()], DMatrix::zeros(6, 0)).unwrap();
        let est = ife_fit(&panel, &EstimatorConfig::new(Method::IFE, 0)).unwrap();
        let design = stack(&[demean(&d), demean(&x)]);
        let ols = lstsq(&design, &DVector::from_column_slice(demean(&y).as_slice())).unwrap();
        assert_relative_eq!(est.beta[0], ols[0], epsilon = 1e-12);
    }

    #[test]
    fn removes_interactive_effects() {
        let mut rng = rng_from(12);
        let (n, t) = (30, 60);
        let lam = normal_matrix(&mut rng, n, 1);
        let f = normal_matrix(&mut rng, 1, t);
        let common = &lam * &f;
        let d = &common + normal_matrix(&mut rng, n, t);
        let y = &d * 1.0 + &common * 2.0 + normal_matrix(&mut rng, n, t) * 0.5;
        let panel = PanelData::new(d, y, vec![], DMatrix::zeros(n, 0)).unwrap();
        let est = ife_fit(&panel, &EstimatorConfig::new(Method::IFE, 1)).unwrap();
        assert!((est.beta[0] - 1.0).abs() < 0.05, "{}", est.beta[0]);
        let naive = ife_fit(&panel, &EstimatorConfig::new(Method::IFE, 0)).unwrap();
        assert!((naive.beta[0] - 1.0).abs() > 0.3);
    }
}
