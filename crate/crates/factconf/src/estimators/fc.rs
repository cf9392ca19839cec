//! Three-step estimator under factor confounding.
//!
//! Step I regresses each outcome on its own-neighborhood exposures, observed covariates and
//! every off-neighborhood exposure; the off-neighborhood coefficients are pure confounding.
//! Step II fits factor models to exposure and outcome residuals, aligns them with a masked
//! Procrustes rotation and completes the bias matrix. Step III subtracts the bias and refits.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::learner::{FeatureMap, Learner};
use super::{own_regressors, row_features, CurveFit, DoseCurve, EffectEstimate, EffectMode, EstimatorConfig, Method};
use crate::bias::{bias_matrix, build_r_operator, check_identification, masked_entries, masked_procrustes, BiasModel};
use crate::error::{Error, Result};
use crate::factor::{fit_factor_model, posterior_moments, FactorModel, NoiseMode};
use crate::numerics::{lstsq, penalized_lstsq};
use crate::panel::PanelData;
use crate::spline::BSplineBasis;

/// Relative ridge on off-neighborhood coefficients when the Step-I design is wide.
pub const OFF_RIDGE_SCALE: f64 = 1e-3;

struct StepOne {
    /// Covariate design (intercept first) for the coordinate.
    xb: DMatrix<f64>,
    x_penalty: Vec<f64>,
    /// Own-neighborhood block: own basis then each other neighbor's exposure.
    own: DMatrix<f64>,
    own_penalty: Vec<f64>,
    off: Vec<(usize, f64)>,
    ridge: Option<f64>,
}

/// Basis of a coordinate's own exposure: the raw column, or spline columns without the first.
pub(crate) fn own_basis(x: &DVector<f64>, learner: Learner) -> (DMatrix<f64>, Option<BSplineBasis>) {
    match learner {
        Learner::SplineAdditive(df) => {
            let basis = BSplineBasis::from_sample(x.as_slice(), df);
            let k = basis.size() - 1;
            let mut m = DMatrix::zeros(x.len(), k);
            for (t, &v) in x.iter().enumerate() {
                for (q, b) in basis.eval(v).iter().skip(1).enumerate() {
                    m[(t, q)] = *b;
                }
            }
            (m, Some(basis))
        }
        _ => (DMatrix::from_column_slice(x.len(), 1, x.as_slice()), None),
    }
}

pub(crate) fn hcat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks[0].nrows();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.columns_mut(at, b.ncols()).copy_from(b);
        at += b.ncols();
    }
    out
}

/// Covariate design of coordinate `i`.
struct CovariateFit {
    xb: DMatrix<f64>,
    x_penalty: Vec<f64>,
}

fn covariate_fit(panel: &PanelData, learner: Learner, i: usize) -> CovariateFit {
    let feats = row_features(panel, i);
    let map = FeatureMap::fit(&feats, learner);
    CovariateFit { xb: map.transform(&feats), x_penalty: map.penalty(panel.n_replicates()) }
}

/// Most passes of factor-aware residualization.
pub const FACTOR_AWARE_PASSES: usize = 50;

/// Residualizes each row of `targets` (coordinates x replicates) on its own design while
/// carrying `rank` common factors as extra regressors. Row-specific projections would
/// otherwise strip a different slice of the shared factor variation from every row, which
/// shows up as inflated uniquenesses. Returns the residuals (factor part kept) and the
/// degrees of freedom of each nuisance fit.
fn factor_aware_residuals(
    targets: &DMatrix<f64>,
    designs: &[DMatrix<f64>],
    penalties: &[Vec<f64>],
    rank: usize,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (d, r) = targets.shape();
    let fit_rows = |factors: Option<&DMatrix<f64>>| -> Result<Vec<(DVector<f64>, f64)>> {
        (0..d)
            .into_par_iter()
            .map(|i| {
                let y = DMatrix::from_column_slice(r, 1, targets.row(i).transpose().as_slice());
                let z = &designs[i];
                let k = z.ncols();
                let mut pen = penalties[i].clone();
                let fit = match factors {
                    Some(f) => {
                        pen.resize(k + f.ncols(), 0.0);
                        penalized_lstsq(&hcat(&[z, f]), &y, &pen)?
                    }
                    None => penalized_lstsq(z, &y, &pen)?,
                };
                let nuisance = z * fit.coef.rows(0, k);
                Ok(((&y - nuisance).column(0).into_owned(), fit.dof))
            })
            .collect()
    };
    let first = fit_rows(None)?;
    let dof: Vec<f64> = first.iter().map(|(_, v)| *v).collect();
    let mut resid = DMatrix::zeros(d, r);
    for (i, (e, _)) in first.iter().enumerate() {
        resid.set_row(i, &e.transpose());
    }
    let room = dof.iter().map(|&v| r as f64 - v).fold(f64::INFINITY, f64::min);
    if rank == 0 || room <= rank as f64 + 1.0 {
        return Ok((resid, dof));
    }
    let scale = resid.norm().max(f64::MIN_POSITIVE);
    for _ in 0..FACTOR_AWARE_PASSES {
        let svd = resid.clone().svd(false, true);
        let vt = svd.v_t.expect("right singular vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let factors = DMatrix::from_fn(r, rank, |t, k| vt[(order[k], t)]);
        let next = fit_rows(Some(&factors))?;
        let mut change: f64 = 0.0;
        for (i, (e, _)) in next.iter().enumerate() {
            change = change.max((e - resid.row(i).transpose()).amax());
            resid.set_row(i, &e.transpose());
        }
        if change <= 1e-10 * scale {
            break;
        }
    }
    Ok((resid, dof))
}

/// Inflates uniquenesses by R / (R - dof - M), counting the nuisance fit and the loadings.
fn correct_uniquenesses(model: FactorModel, dof: &[f64], r: usize) -> Result<FactorModel> {
    let m = model.loadings.ncols() as f64;
    let factors: Vec<f64> = dof
        .iter()
        .map(|&v| {
            let room = r as f64 - v - m;
            if room > 1.0 {
                r as f64 / room
            } else {
                1.0
            }
        })
        .collect();
    let psi = match model.noise_mode {
        NoiseMode::Isotropic => {
            let f = factors.iter().sum::<f64>() / factors.len() as f64;
            model.uniquenesses.map(|u| u * f)
        }
        NoiseMode::Diagonal => DVector::from_fn(model.uniquenesses.len(), |i, _| model.uniquenesses[i] * factors[i]),
    };
    let mut out = FactorModel::from_parts(model.loadings.clone(), psi, model.noise_mode)?;
    out.converged = model.converged;
    out.iterations = model.iterations;
    out.loglik = model.loglik;
    Ok(out)
}

/// Off-neighborhood exposures enter covariate-residualized, matching the scale on which the
/// bias acts; own-neighborhood exposures enter raw since they act causally.
fn step_one(
    panel: &PanelData,
    config: &EstimatorConfig,
    nb: &crate::panel::NeighborhoodSpec,
    cov: CovariateFit,
    d_tilde: &DMatrix<f64>,
    i: usize,
) -> Result<StepOne> {
    let (d, r) = panel.exposures.shape();
    let CovariateFit { xb, x_penalty } = cov;
    let own_d = panel.exposures.row(i).transpose();
    let (own, _) = own_basis(&own_d, config.own_learner());
    let own_pen = match config.learner {
        Learner::Ridge(l) => vec![l * r as f64; own.ncols()],
        _ => vec![0.0; own.ncols()],
    };
    let others = nb.others(i);
    let off: Vec<usize> = (0..d).filter(|&j| !nb.contains(i, j)).collect();
    let nbr = DMatrix::from_fn(r, others.len(), |t, k| panel.exposures[(others[k], t)]);
    let offm = DMatrix::from_fn(r, off.len(), |t, k| d_tilde[(off[k], t)]);
    let z = hcat(&[&xb, &own, &nbr, &offm]);
    let ridge = match config.off_ridge {
        Some(l) if l > 0.0 => Some(l),
        Some(_) => None,
        None if z.ncols() * 2 > r && !off.is_empty() => {
            let centered = crate::numerics::center_columns(&offm);
            let mean_ss = centered.column_iter().map(|c| c.norm_squared()).sum::<f64>() / off.len() as f64;
            Some(OFF_RIDGE_SCALE * mean_ss)
        }
        None => None,
    };
    let mut own_penalty = own_pen;
    own_penalty.extend(std::iter::repeat_n(0.0, others.len()));
    let mut penalty = x_penalty.clone();
    penalty.extend(own_penalty.iter().copied());
    penalty.extend(std::iter::repeat_n(ridge.unwrap_or(0.0), off.len()));
    let y = panel.outcomes.row(i).transpose();
    let fit = penalized_lstsq(&z, &DMatrix::from_column_slice(r, 1, y.as_slice()), &penalty)?;
    let coef = fit.coef.column(0);
    let base = xb.ncols() + own.ncols() + others.len();
    let off_coef = off.iter().enumerate().map(|(k, &j)| (j, coef[base + k])).collect();
    let own = hcat(&[&own, &nbr]);
    Ok(StepOne { xb, x_penalty, own, own_penalty, off: off_coef, ridge })
}

pub fn fc_three_step(panel: &PanelData, config: &EstimatorConfig) -> Result<EffectEstimate> {
    let (d, r) = panel.exposures.shape();
    let m = config.rank;
    if m == 0 {
        return Err(Error::InvalidArgument("factor-confounding estimators need rank >= 1".into()));
    }
    let nb = config.neighborhoods_for(panel);
    if nb.len() != d {
        return Err(Error::InvalidNeighborhood(format!("{} neighborhoods for {d} coordinates", nb.len())));
    }
    let bar = (!nb.is_trivial()).then(|| nb.neighbor_mean(&panel.exposures));

    // Step I
    let covs: Vec<CovariateFit> = (0..d).into_par_iter().map(|i| covariate_fit(panel, config.learner, i)).collect();
    let x_designs: Vec<DMatrix<f64>> = covs.iter().map(|c| c.xb.clone()).collect();
    let x_penalties: Vec<Vec<f64>> = covs.iter().map(|c| c.x_penalty.clone()).collect();
    let (d_tilde, x_dof) = factor_aware_residuals(&panel.exposures, &x_designs, &x_penalties, m)?;
    let rows: Vec<StepOne> = covs
        .into_par_iter()
        .enumerate()
        .map(|(i, c)| step_one(panel, config, &nb, c, &d_tilde, i))
        .collect::<Result<_>>()?;

    // Step II
    let mut notes = Vec::new();
    let mut exposure_model = fit_factor_model(&d_tilde.transpose(), m, config.noise_mode, &config.factor_opts)?;
    if config.df_correction {
        exposure_model = correct_uniquenesses(exposure_model, &x_dof, r)?;
    }
    // E[U | D] carries everything the exposures say about the confounders, so residuals
    // from it estimate Cov(Y | D) with M columns instead of every off-neighborhood exposure.
    let scores = d_tilde.transpose() * posterior_moments(&exposure_model).mean_operator.transpose();
    let y_designs: Vec<DMatrix<f64>> = rows.iter().map(|row| hcat(&[&row.xb, &row.own, &scores])).collect();
    let y_penalties: Vec<Vec<f64>> = rows
        .iter()
        .zip(&y_designs)
        .map(|(row, z)| {
            let mut p = row.x_penalty.clone();
            p.extend(row.own_penalty.iter().copied());
            p.resize(z.ncols(), 0.0);
            p
        })
        .collect();
    let (resid, y_dof) = factor_aware_residuals(&panel.outcomes, &y_designs, &y_penalties, m)?;
    if x_dof.iter().chain(&y_dof).any(|&v| r as f64 - v <= 1.0) {
        notes.push("nuisance design saturated for some coordinates".to_string());
    }
    let mut outcome_model = fit_factor_model(&resid.transpose(), m, config.noise_mode, &config.factor_opts)?;
    if config.df_correction {
        outcome_model = correct_uniquenesses(outcome_model, &y_dof, r)?;
    }
    let r_op = build_r_operator(&exposure_model)?;
    let gamma = outcome_model.loadings.clone();
    let mask = nb.off_mask();
    let mut c_off = DMatrix::zeros(d, d);
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in &row.off {
            c_off[(i, j)] = v;
        }
    }
    let entries = masked_entries(&mask, &c_off);
    let procrustes = masked_procrustes(&gamma, &r_op, &entries, config.n_init, config.seed)?;
    let mut c = bias_matrix(&gamma, &procrustes.theta, &r_op);
    for e in &entries {
        c[(e.row, e.col)] = e.value;
    }
    let id_check = check_identification(&gamma, &r_op, &nb);

    // Step III
    let y_dag = &panel.outcomes - &c * &d_tilde;
    let (beta, unit_slopes, curves) = match config.effect_mode {
        EffectMode::Pooled => pooled_fit(panel, &rows, &y_dag, bar.as_ref())?,
        EffectMode::PerUnit => per_unit_fit(panel, config, &rows, &y_dag, bar.as_ref())?,
    };
    let mut est = EffectEstimate::assemble(Method::FC, beta, unit_slopes, curves, &config.shifts)?;
    est.partial_id = (0..d)
        .map(|i| {
            let mut e = DVector::zeros(d);
            e[i] = 1.0;
            crate::bias::partial_id_interval(&gamma, &r_op, i, &e)
        })
        .collect();
    let identified = procrustes.identified && id_check.spanning_ok;
    if !identified {
        notes.push("identification check failed; use the partial-identification intervals".to_string());
    }
    let ridge =
        rows.iter().filter_map(|row| row.ridge).fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
    est.diagnostics.procrustes_residual = Some(procrustes.residual);
    est.diagnostics.id_check = Some(id_check.clone());
    est.diagnostics.identified = Some(identified);
    est.diagnostics.off_ridge = ridge;
    est.diagnostics.exposure_model_converged = Some(exposure_model.converged);
    est.diagnostics.outcome_model_converged = Some(outcome_model.converged);
    est.diagnostics.notes = notes;
    est.bias_model = Some(BiasModel {
        gamma,
        outcome_noise: outcome_model.uniquenesses.clone(),
        r_operator: r_op,
        theta: procrustes.theta.clone(),
        bias_matrix: c,
        mask,
        procrustes,
        id_check,
    });
    Ok(est)
}

type StepThree = (Vec<f64>, Vec<Vec<f64>>, Vec<CurveFit>);

fn pooled_fit(
    panel: &PanelData,
    rows: &[StepOne],
    y_dag: &DMatrix<f64>,
    bar: Option<&DMatrix<f64>>,
) -> Result<StepThree> {
    let (d, r) = panel.exposures.shape();
    let q = 1 + usize::from(bar.is_some());
    let mut stacked_t = DMatrix::zeros(d * r, q);
    let mut stacked_y = DVector::zeros(d * r);
    let mut unit_slopes = Vec::with_capacity(d);
    for (i, row) in rows.iter().enumerate() {
        let mut block = DMatrix::zeros(r, q + 1);
        block.set_column(0, &y_dag.row(i).transpose());
        block.columns_mut(1, q).copy_from(&own_regressors(&panel.exposures, bar, i));
        let fit = penalized_lstsq(&row.xb, &block, &row.x_penalty)?;
        let part = &block - &row.xb * fit.coef;
        let t = part.columns(1, q).into_owned();
        let y: DVector<f64> = part.column(0).into_owned();
        unit_slopes.push(lstsq(&t, &y)?.iter().copied().collect());
        stacked_t.rows_mut(i * r, r).copy_from(&t);
        stacked_y.rows_mut(i * r, r).copy_from(&y);
    }
    let beta: Vec<f64> = lstsq(&stacked_t, &stacked_y)?.iter().copied().collect();
    let curve = CurveFit {
        curve: DoseCurve::Linear { slope: beta[0] },
        spillover: beta.get(1).copied().unwrap_or(0.0),
        sample: panel.exposures.iter().copied().collect(),
    };
    Ok((beta, unit_slopes, vec![curve]))
}

fn per_unit_fit(
    panel: &PanelData,
    config: &EstimatorConfig,
    rows: &[StepOne],
    y_dag: &DMatrix<f64>,
    bar: Option<&DMatrix<f64>>,
) -> Result<StepThree> {
    let fits: Vec<(Vec<f64>, CurveFit)> = rows
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            let r = panel.n_replicates();
            let own_d = panel.exposures.row(i).transpose();
            let (own, basis) = own_basis(&own_d, config.own_learner());
            let spill = bar.map(|b| DMatrix::from_column_slice(r, 1, b.row(i).transpose().as_slice()));
            let mut blocks = vec![&row.xb, &own];
            if let Some(s) = &spill {
                blocks.push(s);
            }
            let z = hcat(&blocks);
            let mut penalty = row.x_penalty.clone();
            penalty.extend(std::iter::repeat_n(0.0, z.ncols() - penalty.len()));
            let y = y_dag.row(i).transpose();
            let fit = penalized_lstsq(&z, &DMatrix::from_column_slice(r, 1, y.as_slice()), &penalty)?;
            let coef = fit.coef.column(0);
            let at = row.xb.ncols();
            let spillover = if spill.is_some() { coef[at + own.ncols()] } else { 0.0 };
            let sample: Vec<f64> = own_d.iter().copied().collect();
            let curve = match basis {
                Some(b) => {
                    let mut c = vec![0.0];
                    c.extend(coef.rows(at, own.ncols()).iter());
                    DoseCurve::spline(b, c)?
                }
                None => DoseCurve::Linear { slope: coef[at] },
            };
            let slope = match &curve {
                DoseCurve::Linear { slope } => *slope,
                c => sample.iter().map(|&x| c.derivative(x)).sum::<f64>() / sample.len() as f64,
            };
            let mut slopes = vec![slope];
            if spill.is_some() {
                slopes.push(spillover);
            }
            Ok((slopes, CurveFit { curve, spillover, sample }))
        })
        .collect::<Result<_>>()?;
    let q = fits[0].0.len();
    let n = fits.len() as f64;
    let beta = (0..q).map(|k| fits.iter().map(|f| f.0[k]).sum::<f64>() / n).collect();
    let (unit_slopes, curves) = fits.into_iter().unzip();
    Ok((beta, unit_slopes, curves))
}
