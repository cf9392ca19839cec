use nalgebra::DMatrix;

use super::{SimDraw, Truth};
use crate::error::Result;
use crate::estimators::fc::{hcat, own_basis};
use crate::estimators::learner::{FeatureMap, Learner};
use crate::estimators::{own_regressors, row_features, CurveFit, DoseCurve, EffectEstimate, Method, CURVE_DF};
use crate::numerics::{lstsq, penalized_lstsq};

/// Regression that adjusts for the true latent draws: pooled slopes for linear truths,
/// per-unit spline curves for curve truths.
pub fn oracle_fit(draw: &SimDraw, learner: Learner, shifts: &[f64]) -> Result<EffectEstimate> {
    let panel = &draw.panel;
    let (d, r) = panel.exposures.shape();
    let latent = draw.latent.transpose();
    let bar = draw.neighborhoods.as_ref().filter(|nb| !nb.is_trivial()).map(|nb| nb.neighbor_mean(&panel.exposures));
    let controls = |i: usize| -> (DMatrix<f64>, Vec<f64>) {
        let feats = row_features(panel, i);
        let map = FeatureMap::fit(&feats, learner);
        let z = hcat(&[&map.transform(&feats), &latent]);
        let mut pen = map.penalty(r);
        pen.resize(z.ncols(), 0.0);
        (z, pen)
    };
    let mut est = match &draw.truth {
        Truth::Curves(_) => {
            let mut curves = Vec::with_capacity(d);
            let mut slopes = Vec::with_capacity(d);
            for i in 0..d {
                let (z0, mut pen) = controls(i);
                let own_d = panel.exposures.row(i).transpose();
                let (own, basis) = own_basis(&own_d, Learner::SplineAdditive(CURVE_DF));
                let z = hcat(&[&z0, &own]);
                pen.resize(z.ncols(), 0.0);
                let y = DMatrix::from_column_slice(r, 1, panel.outcomes.row(i).transpose().as_slice());
                let fit = penalized_lstsq(&z, &y, &pen)?;
                let mut coef = vec![0.0];
                coef.extend(fit.coef.column(0).rows(z0.ncols(), own.ncols()).iter());
                let curve = DoseCurve::spline(basis.expect("spline learner yields a basis"), coef)?;
                let sample: Vec<f64> = own_d.iter().copied().collect();
                slopes.push(vec![sample.iter().map(|&x| curve.derivative(x)).sum::<f64>() / r as f64]);
                curves.push(CurveFit { curve, spillover: 0.0, sample });
            }
            let beta = vec![slopes.iter().map(|s| s[0]).sum::<f64>() / d as f64];
            EffectEstimate::assemble(Method::Oracle, beta, slopes, curves, shifts)?
        }
        _ => {
            let q = 1 + usize::from(bar.is_some());
            let mut t_all = DMatrix::zeros(d * r, q);
            let mut y_all = nalgebra::DVector::zeros(d * r);
            for i in 0..d {
                let (z, pen) = controls(i);
                let mut block = DMatrix::zeros(r, q + 1);
                block.set_column(0, &panel.outcomes.row(i).transpose());
                block.columns_mut(1, q).copy_from(&own_regressors(&panel.exposures, bar.as_ref(), i));
                let fit = penalized_lstsq(&z, &block, &pen)?;
                let part = &block - &z * fit.coef;
                t_all.rows_mut(i * r, r).copy_from(&part.columns(1, q));
                y_all.rows_mut(i * r, r).copy_from(&part.column(0));
            }
            let beta: Vec<f64> = lstsq(&t_all, &y_all)?.iter().copied().collect();
            let curve = CurveFit {
                curve: DoseCurve::Linear { slope: beta[0] },
                spillover: beta.get(1).copied().unwrap_or(0.0),
                sample: panel.exposures.iter().copied().collect(),
            };
            EffectEstimate::assemble(Method::Oracle, beta, Vec::new(), vec![curve], shifts)?
        }
    };
    est.diagnostics.notes.push("latent-adjusted oracle".into());
    Ok(est)
}
