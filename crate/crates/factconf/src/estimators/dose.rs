//! Dose-response curves and their summaries (centered curve, marginal effect, ACD, ATE of a shift).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spline::BSplineBasis;

pub const GRID_POINTS: usize = 200;
/// Fraction of clamped shifted points above which a shift is flagged.
pub const SHIFT_CLAMP_LIMIT: f64 = 0.10;

/// Fitted exposure-response function g, defined up to an additive constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DoseCurve {
    Linear { slope: f64 },
    Spline { basis: BSplineBasis, coef: Vec<f64> },
}

impl DoseCurve {
    pub fn spline(basis: BSplineBasis, coef: Vec<f64>) -> Result<Self> {
        if coef.len() != basis.size() {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients for {} basis functions",
                coef.len(),
                basis.size()
            )));
        }
        Ok(DoseCurve::Spline { basis, coef })
    }

    /// g(d); spline curves clamp d to their support.
    pub fn value(&self, d: f64) -> f64 {
        match self {
            DoseCurve::Linear { slope } => slope * d,
            DoseCurve::Spline { basis, coef } => basis.eval(d).iter().zip(coef).map(|(b, c)| b * c).sum(),
        }
    }

    /// g'(d); zero outside a spline's support.
    pub fn derivative(&self, d: f64) -> f64 {
        match self {
            DoseCurve::Linear { slope } => *slope,
            DoseCurve::Spline { basis, coef } => basis.eval_deriv(d).iter().zip(coef).map(|(b, c)| b * c).sum(),
        }
    }

    pub fn support(&self) -> Option<(f64, f64)> {
        match self {
            DoseCurve::Linear { .. } => None,
            DoseCurve::Spline { basis, .. } => Some(basis.support()),
        }
    }

    pub fn scaled(&self, c: f64) -> DoseCurve {
        match self {
            DoseCurve::Linear { slope } => DoseCurve::Linear { slope: slope * c },
            DoseCurve::Spline { basis, coef } => {
                DoseCurve::Spline { basis: basis.clone(), coef: coef.iter().map(|v| v * c).collect() }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftEffect {
    pub shift: f64,
    pub value: f64,
    /// Share of shifted exposures that fell outside the curve's support.
    pub clamped_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseSummary {
    pub grid: Vec<f64>,
    /// g(x) - g(mean exposure) on the grid.
    pub centered_curve: Vec<f64>,
    /// g'(x) on the grid.
    pub marginal: Vec<f64>,
    pub acd: f64,
    pub ate: Vec<ShiftEffect>,
    pub shift_out_of_support: bool,
    pub exposure_mean: f64,
}

/// Evenly spaced grid over the range of the sample.
pub fn exposure_grid(sample: &[f64]) -> Vec<f64> {
    let lo = sample.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sample.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..GRID_POINTS).map(|k| lo + (hi - lo) * k as f64 / (GRID_POINTS - 1) as f64).collect()
}

pub fn dose_response_summaries(curve: &DoseCurve, exposure_sample: &[f64], shifts: &[f64]) -> Result<DoseSummary> {
    if exposure_sample.is_empty() {
        return Err(Error::InvalidArgument("empty exposure sample".into()));
    }
    let n = exposure_sample.len() as f64;
    let exposure_mean = exposure_sample.iter().sum::<f64>() / n;
    let grid = exposure_grid(exposure_sample);
    let anchor = curve.value(exposure_mean);
    let centered_curve = grid.iter().map(|&x| curve.value(x) - anchor).collect();
    let marginal = grid.iter().map(|&x| curve.derivative(x)).collect();
    let acd = exposure_sample.iter().map(|&x| curve.derivative(x)).sum::<f64>() / n;
    let mut flagged = false;
    let ate = shifts
        .iter()
        .map(|&shift| {
            let mut clamped = 0usize;
            let total: f64 = exposure_sample
                .iter()
                .map(|&x| {
                    if let Some((lo, hi)) = curve.support() {
                        if x + shift < lo || x + shift > hi {
                            clamped += 1;
                        }
                    }
                    curve.value(x + shift) - curve.value(x)
                })
                .sum();
            let clamped_fraction = clamped as f64 / n;
            flagged |= clamped_fraction > SHIFT_CLAMP_LIMIT;
            ShiftEffect { shift, value: total / n, clamped_fraction }
        })
        .collect();
    Ok(DoseSummary { grid, centered_curve, marginal, acd, ate, shift_out_of_support: flagged, exposure_mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn linear_closed_form() {
        let s = dose_response_summaries(&DoseCurve::Linear { slope: 1.7 }, &[0.0, 1.0, 5.0], &[1.0, -2.0]).unwrap();
        assert_relative_eq!(s.acd, 1.7);
        assert_relative_eq!(s.ate[0].value, 1.7, epsilon = 1e-12);
        assert_relative_eq!(s.ate[1].value, -3.4, epsilon = 1e-12);
        assert!(!s.shift_out_of_support);
    }

    #[test]
    fn clamping_is_flagged() {
        let basis = BSplineBasis::uniform(0.0, 1.0, 2);
        let curve = DoseCurve::spline(basis, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let s = dose_response_summaries(&curve, &[0.2, 0.5, 0.9], &[0.6]).unwrap();
        assert!(s.shift_out_of_support);
        assert_relative_eq!(s.ate[0].clamped_fraction, 2.0 / 3.0);
    }
}
