//! Nuisance learners: basis expansions fitted by (penalized) least squares.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::penalized_lstsq;
use crate::spline::BSplineBasis;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Learner {
    Linear,
    /// Ridge penalty per observation on the non-intercept coefficients.
    Ridge(f64),
    /// Additive cubic B-splines with `df` columns per feature.
    SplineAdditive(usize),
}

impl Default for Learner {
    fn default() -> Self {
        Learner::SplineAdditive(5)
    }
}

impl std::fmt::Display for Learner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Learner::Linear => write!(f, "linear"),
            Learner::Ridge(l) => write!(f, "ridge:{l}"),
            Learner::SplineAdditive(df) => write!(f, "spline:{df}"),
        }
    }
}

impl std::str::FromStr for Learner {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad =
            || Error::InvalidArgument(format!("unknown learner {s:?} (expected linear, ridge:LAMBDA or spline:DF)"));
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        match (name, arg) {
            ("linear", None) => Ok(Learner::Linear),
            ("ridge", Some(a)) => {
                let l: f64 = a.parse().map_err(|_| bad())?;
                if l < 0.0 {
                    return Err(bad());
                }
                Ok(Learner::Ridge(l))
            }
            ("spline", Some(a)) => {
                let df: usize = a.parse().map_err(|_| bad())?;
                if df < 3 {
                    return Err(Error::InvalidArgument("spline df must be at least 3".into()));
                }
                Ok(Learner::SplineAdditive(df))
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone)]
enum ColumnMap {
    Skip,
    Linear,
    Spline(BSplineBasis),
}

/// Feature expansion fitted on training rows. Output always starts with an intercept column.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    columns: Vec<ColumnMap>,
    learner: Learner,
}

impl FeatureMap {
    pub fn fit(x: &DMatrix<f64>, learner: Learner) -> Self {
        let columns = x
            .column_iter()
            .map(|col| {
                let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                if !(hi - lo > 1e-12 * (lo.abs() + hi.abs()).max(1e-300)) {
                    return ColumnMap::Skip;
                }
                match learner {
                    Learner::SplineAdditive(df) => {
                        let v: Vec<f64> = col.iter().copied().collect();
                        ColumnMap::Spline(BSplineBasis::from_sample(&v, df))
                    }
                    _ => ColumnMap::Linear,
                }
            })
            .collect();
        FeatureMap { columns, learner }
    }

    pub fn width(&self) -> usize {
        1 + self
            .columns
            .iter()
            .map(|c| match c {
                ColumnMap::Skip => 0,
                ColumnMap::Linear => 1,
                ColumnMap::Spline(b) => b.size() - 1,
            })
            .sum::<usize>()
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = x.nrows();
        let mut out = DMatrix::zeros(n, self.width());
        out.column_mut(0).fill(1.0);
        let mut at = 1;
        for (k, map) in self.columns.iter().enumerate() {
            match map {
                ColumnMap::Skip => {}
                ColumnMap::Linear => {
                    out.column_mut(at).copy_from(&x.column(k));
                    at += 1;
                }
                ColumnMap::Spline(basis) => {
                    for i in 0..n {
                        let vals = basis.eval(x[(i, k)]);
                        for (q, v) in vals.iter().skip(1).enumerate() {
                            out[(i, at + q)] = *v;
                        }
                    }
                    at += basis.size() - 1;
                }
            }
        }
        out
    }

    /// Penalty per column for `n` training rows.
    pub fn penalty(&self, n: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.width()];
        if let Learner::Ridge(l) = self.learner {
            for v in p.iter_mut().skip(1) {
                *v = l * n as f64;
            }
        }
        p
    }
}

/// Fits every column of `targets` on features of `x_train` and predicts at `x_test`.
pub fn fit_predict(
    x_train: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    x_test: &DMatrix<f64>,
    learner: Learner,
) -> Result<DMatrix<f64>> {
    let map = FeatureMap::fit(x_train, learner);
    let z = map.transform(x_train);
    let fit = penalized_lstsq(&z, targets, &map.penalty(x_train.nrows()))?;
    Ok(map.transform(x_test) * fit.coef)
}

/// In-sample residuals of `targets` after the learner fit on `x`.
pub fn residualize_on(x: &DMatrix<f64>, targets: &DMatrix<f64>, learner: Learner) -> Result<DMatrix<f64>> {
    Ok(targets - fit_predict(x, targets, x, learner)?)
}
