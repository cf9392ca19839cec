//! Cross-fitted partialling-out of observed covariates, and the DML baselines that
//! ignore unmeasured confounding.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::learner::{fit_predict, FeatureMap, Learner};
use super::{own_regressors, row_features, CurveFit, EffectEstimate, EstimatorConfig, Method};
use crate::error::{Error, Result};
use crate::numerics::{center_columns, lstsq};
use crate::panel::PanelData;
use crate::rng::{derive_seed, permutation, rng_from};

/// Balanced random assignment of `n` items to `k` folds.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    let perm = permutation(&mut rng_from(derive_seed(seed, 0xF0, n as u64)), n);
    let mut fold_of = vec![0; n];
    for (pos, &item) in perm.iter().enumerate() {
        fold_of[item] = pos * k / n;
    }
    for f in 0..k {
        let size = fold_of.iter().filter(|&&g| g == f).count();
        if size < 2 {
            return Err(Error::FoldTooSmall { fold: f, size });
        }
    }
    Ok(fold_of)
}

/// Out-of-fold residuals of every target column.
pub fn crossfit(
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    fold_of: &[usize],
    learner: Learner,
) -> Result<DMatrix<f64>> {
    if FeatureMap::fit(features, learner).width() == 1 {
        return Ok(center_columns(targets));
    }
    let k = fold_of.iter().copied().max().map_or(0, |m| m + 1);
    let mut resid = DMatrix::zeros(targets.nrows(), targets.ncols());
    for f in 0..k {
        let train: Vec<usize> = (0..fold_of.len()).filter(|&i| fold_of[i] != f).collect();
        let test: Vec<usize> = (0..fold_of.len()).filter(|&i| fold_of[i] == f).collect();
        let pred = fit_predict(
            &features.select_rows(&train),
            &targets.select_rows(&train),
            &features.select_rows(&test),
            learner,
        )?;
        for (q, &i) in test.iter().enumerate() {
            for c in 0..targets.ncols() {
                resid[(i, c)] = targets[(i, c)] - pred[(q, c)];
            }
        }
    }
    Ok(center_columns(&resid))
}

#[derive(Debug, Clone)]
pub struct DmlResiduals {
    pub d_resid: DMatrix<f64>,
    pub y_resid: DMatrix<f64>,
    pub d_fitted: DMatrix<f64>,
    pub y_fitted: DMatrix<f64>,
    /// Fold of each replicate.
    pub fold_of: Vec<usize>,
}

/// Per-coordinate nuisance fits of D and Y on (X, S), cross-fitted over replicate folds.
pub fn dml_residualize(panel: &PanelData, learner: Learner, folds: usize, seed: u64) -> Result<DmlResiduals> {
    let (d, r) = panel.exposures.shape();
    let fold_of = fold_assignment(r, folds, seed)?;
    let rows: Vec<DMatrix<f64>> = (0..d)
        .into_par_iter()
        .map(|i| {
            let mut targets = DMatrix::zeros(r, 2);
            targets.set_column(0, &panel.exposures.row(i).transpose());
            targets.set_column(1, &panel.outcomes.row(i).transpose());
            crossfit(&row_features(panel, i), &targets, &fold_of, learner)
        })
        .collect::<Result<_>>()?;
    let mut d_resid = DMatrix::zeros(d, r);
    let mut y_resid = DMatrix::zeros(d, r);
    for (i, res) in rows.iter().enumerate() {
        d_resid.set_row(i, &res.column(0).transpose());
        y_resid.set_row(i, &res.column(1).transpose());
    }
    let d_fitted = &panel.exposures - &d_resid;
    let y_fitted = &panel.outcomes - &y_resid;
    Ok(DmlResiduals { d_resid, y_resid, d_fitted, y_fitted, fold_of })
}

/// Partial-linear slope(s) from stacked residual rows: first column outcome, rest treatments.
fn partial_linear(resid: &DMatrix<f64>) -> Result<Vec<f64>> {
    let q = resid.ncols() - 1;
    let design = resid.columns(1, q).into_owned();
    let y: DVector<f64> = resid.column(0).into_owned();
    Ok(lstsq(&design, &y)?.iter().copied().collect())
}

/// Targets per coordinate: outcome, exposure, and the neighbor-mean exposure under interference.
fn row_targets(panel: &PanelData, bar: Option<&DMatrix<f64>>, i: usize) -> DMatrix<f64> {
    let t = own_regressors(&panel.exposures, bar, i);
    let mut out = DMatrix::zeros(t.nrows(), t.ncols() + 1);
    out.set_column(0, &panel.outcomes.row(i).transpose());
    out.columns_mut(1, t.ncols()).copy_from(&t);
    out
}

/// Baselines assuming no unmeasured confounding.
pub fn dml_baseline(panel: &PanelData, config: &EstimatorConfig) -> Result<EffectEstimate> {
    let (d, r) = panel.exposures.shape();
    let nb = config.neighborhoods_for(panel);
    let bar = (!nb.is_trivial()).then(|| nb.neighbor_mean(&panel.exposures));
    let bar = bar.as_ref();
    let learner = config.learner;
    let beta = match config.method {
        Method::StackedDML => {
            let fold_rep = fold_assignment(r, config.folds, config.seed)?;
            let width = panel.n_covariates() + panel.coords.ncols();
            let q = 2 + usize::from(bar.is_some());
            let mut features = DMatrix::zeros(d * r, width);
            let mut targets = DMatrix::zeros(d * r, q);
            let mut fold_of = vec![0; d * r];
            for i in 0..d {
                let f = row_features(panel, i);
                let t = row_targets(panel, bar, i);
                features.rows_mut(i * r, r).copy_from(&f);
                targets.rows_mut(i * r, r).copy_from(&t);
                fold_of[i * r..(i + 1) * r].copy_from_slice(&fold_rep);
            }
            partial_linear(&crossfit(&features, &targets, &fold_of, learner)?)?
        }
        Method::MultiDML => {
            let fold_rep = fold_assignment(r, config.folds, config.seed)?;
            let parts: Vec<DMatrix<f64>> = (0..d)
                .into_par_iter()
                .map(|i| crossfit(&row_features(panel, i), &row_targets(panel, bar, i), &fold_rep, learner))
                .collect::<Result<_>>()?;
            let q = parts[0].ncols();
            let mut stacked = DMatrix::zeros(d * r, q);
            for (i, p) in parts.iter().enumerate() {
                stacked.rows_mut(i * r, r).copy_from(p);
            }
            partial_linear(&stacked)?
        }
        Method::SingleDML => {
            let fold_coord = fold_assignment(d, config.folds, config.seed)?;
            let slopes: Vec<Vec<f64>> = (0..r)
                .into_par_iter()
                .map(|c| {
                    let width = panel.n_covariates() + panel.coords.ncols();
                    let mut features = DMatrix::zeros(d, width);
                    let q = 2 + usize::from(bar.is_some());
                    let mut targets = DMatrix::zeros(d, q);
                    for i in 0..d {
                        for (k, cov) in panel.covariates.iter().enumerate() {
                            features[(i, k)] = cov[(i, c)];
                        }
                        for (k, v) in panel.cell_coords(i, c).into_iter().enumerate() {
                            features[(i, panel.n_covariates() + k)] = v;
                        }
                        targets[(i, 0)] = panel.outcomes[(i, c)];
                        targets[(i, 1)] = panel.exposures[(i, c)];
                        if let Some(b) = bar {
                            targets[(i, 2)] = b[(i, c)];
                        }
                    }
                    partial_linear(&crossfit(&features, &targets, &fold_coord, learner)?)
                })
                .collect::<Result<_>>()?;
            let q = slopes[0].len();
            (0..q).map(|k| slopes.iter().map(|s| s[k]).sum::<f64>() / r as f64).collect()
        }
        other => return Err(Error::InvalidArgument(format!("{other} is not a DML baseline"))),
    };
    let curve = CurveFit {
        curve: super::DoseCurve::Linear { slope: beta[0] },
        spillover: beta.get(1).copied().unwrap_or(0.0),
        sample: panel.exposures.iter().copied().collect(),
    };
    EffectEstimate::assemble(config.method, beta, Vec::new(), vec![curve], &config.shifts)
}
