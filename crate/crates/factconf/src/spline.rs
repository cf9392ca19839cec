//! Cubic B-spline bases with analytic first derivatives.

use serde::{Deserialize, Serialize};

const DEGREE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    /// Full knot vector with boundary knots repeated DEGREE + 1 times.
    knots: Vec<f64>,
}

impl BSplineBasis {
    /// Basis on [lo, hi] with the given interior knots (sorted internally).
    pub fn new(lo: f64, hi: f64, interior: &[f64]) -> Self {
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo, lo + 1.0) };
        let mut inner: Vec<f64> = interior.iter().copied().filter(|&k| k > lo && k < hi).collect();
        inner.sort_by(|a, b| a.total_cmp(b));
        let mut knots = vec![lo; DEGREE + 1];
        knots.extend(inner);
        knots.extend(std::iter::repeat_n(hi, DEGREE + 1));
        BSplineBasis { knots }
    }

    /// Basis with `df + 1` functions whose interior knots sit at sample quantiles of `x`.
    /// Dropping the first function leaves `df` columns that complement an intercept.
    pub fn from_sample(x: &[f64], df: usize) -> Self {
        let df = df.max(DEGREE);
        let n_interior = df + 1 - (DEGREE + 1);
        let mut sorted: Vec<f64> = x.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let lo = sorted.first().copied().unwrap_or(0.0);
        let hi = sorted.last().copied().unwrap_or(1.0);
        let interior: Vec<f64> = (1..=n_interior)
            .map(|j| crate::numerics::quantile_sorted(&sorted, j as f64 / (n_interior + 1) as f64))
            .collect();
        Self::new(lo, hi, &interior)
    }

    /// Uniformly spaced interior knots.
    pub fn uniform(lo: f64, hi: f64, n_interior: usize) -> Self {
        let interior: Vec<f64> =
            (1..=n_interior).map(|j| lo + (hi - lo) * j as f64 / (n_interior + 1) as f64).collect();
        Self::new(lo, hi, &interior)
    }

    pub fn size(&self) -> usize {
        self.knots.len() - DEGREE - 1
    }

    pub fn support(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    pub fn clamp(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        x.clamp(lo, hi)
    }

    /// Basis functions of every degree up to `degree` at x (already clamped).
    fn table(&self, x: f64, degree: usize) -> Vec<f64> {
        let t = &self.knots;
        let m = t.len() - 1;
        let (_, hi) = self.support();
        let mut n: Vec<f64> = (0..m)
            .map(|i| {
                let inside = t[i] <= x && x < t[i + 1];
                // Right boundary belongs to the last non-empty interval.
                let at_end = x == hi && t[i] < t[i + 1] && t[i + 1] == hi;
                if inside || at_end {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        for p in 1..=degree {
            let next: Vec<f64> = (0..m - p)
                .map(|i| {
                    let mut v = 0.0;
                    let d1 = t[i + p] - t[i];
                    if d1 > 0.0 {
                        v += (x - t[i]) / d1 * n[i];
                    }
                    let d2 = t[i + p + 1] - t[i + 1];
                    if d2 > 0.0 {
                        v += (t[i + p + 1] - x) / d2 * n[i + 1];
                    }
                    v
                })
                .collect();
            n = next;
        }
        n
    }

    /// Values of all basis functions at `x` (clamped to the support).
    pub fn eval(&self, x: f64) -> Vec<f64> {
        self.table(self.clamp(x), DEGREE)
    }

    /// First derivatives of all basis functions at `x`; zero outside the support.
    pub fn eval_deriv(&self, x: f64) -> Vec<f64> {
        let (lo, hi) = self.support();
        if x < lo || x > hi {
            return vec![0.0; self.size()];
        }
        let t = &self.knots;
        let lower = self.table(x, DEGREE - 1);
        let p = DEGREE as f64;
        (0..self.size())
            .map(|i| {
                let mut v = 0.0;
                let d1 = t[i + DEGREE] - t[i];
                if d1 > 0.0 {
                    v += p / d1 * lower[i];
                }
                let d2 = t[i + DEGREE + 1] - t[i + 1];
                if d2 > 0.0 {
                    v -= p / d2 * lower[i + 1];
                }
                v
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn partition_of_unity() {
        let b = BSplineBasis::uniform(-1.0, 2.0, 4);
        for k in 0..=30 {
            let x = -1.0 + 3.0 * k as f64 / 30.0;
            assert_relative_eq!(b.eval(x).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert_relative_eq!(b.eval_deriv(x).iter().sum::<f64>(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let b = BSplineBasis::uniform(0.0, 1.0, 3);
        let h = 1e-6;
        for &x in &[0.1, 0.33, 0.5, 0.77, 0.9] {
            let (p, m) = (b.eval(x + h), b.eval(x - h));
            for (k, d) in b.eval_deriv(x).iter().enumerate() {
                assert_relative_eq!(*d, (p[k] - m[k]) / (2.0 * h), epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn sample_basis_size() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert_eq!(BSplineBasis::from_sample(&x, 5).size(), 6);
        assert_eq!(BSplineBasis::from_sample(&x, 3).size(), 4);
    }
}
