//! Dense linear-algebra helpers shared across the crate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns, aligned with `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
}

impl SymEig {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let v = &self.eigenvectors;
        v * DMatrix::from_diagonal(&self.eigenvalues) * v.transpose()
    }
}

pub fn sym_eig(a: &DMatrix<f64>) -> SymEig {
    let sym = symmetrize(a);
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        eigenvectors.set_column(k, &eig.eigenvectors.column(i));
    }
    SymEig { eigenvalues, eigenvectors }
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Ridge used when none is given: 1e-10 times the mean eigenvalue.
pub fn default_ridge(a: &DMatrix<f64>) -> f64 {
    let d = a.nrows().max(1) as f64;
    1e-10 * a.trace().abs() / d
}

fn spectral_map(a: &DMatrix<f64>, ridge: f64, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    let eig = sym_eig(a);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min + ridge > 0.0) {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min, ridge });
    }
    let mapped = eig.eigenvalues.map(|l| f(l.max(ridge)));
    let v = &eig.eigenvectors;
    Ok(symmetrize(&(v * DMatrix::from_diagonal(&mapped) * v.transpose())))
}

/// Principal inverse square root. Eigenvalues below `ridge` are floored at `ridge`.
pub fn sym_inv_sqrt(a: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    spectral_map(a, ridge, |l| 1.0 / l.sqrt())
}

/// Principal square root of a symmetric positive semidefinite matrix.
pub fn sym_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = sym_eig(a);
    let mapped = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&mapped) * v.transpose()))
}

/// Covariance of the rows of `replicates` (R x d) with divisor 1/R.
pub fn sample_covariance(replicates: &DMatrix<f64>, demean: bool) -> Result<DMatrix<f64>> {
    let r = replicates.nrows();
    if r < 2 {
        return Err(Error::InsufficientReplicates { got: r, need: 2 });
    }
    let z = if demean { center_columns(replicates) } else { replicates.clone() };
    Ok(symmetrize(&(z.transpose() * &z / r as f64)))
}

pub fn column_means(a: &DMatrix<f64>) -> DVector<f64> {
    let r = a.nrows().max(1) as f64;
    DVector::from_iterator(a.ncols(), a.column_iter().map(|c| c.sum() / r))
}

pub fn center_columns(a: &DMatrix<f64>) -> DMatrix<f64> {
    let means = column_means(a);
    let mut z = a.clone();
    for (j, mut col) in z.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    z
}

pub fn center_rows(a: &DMatrix<f64>) -> DMatrix<f64> {
    center_columns(&a.transpose()).transpose()
}

/// Singular values in descending order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Number of singular values above `rel_tol` times the largest.
pub fn numerical_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(a);
    match s.first() {
        Some(&top) if top > 0.0 => s.iter().filter(|&&v| v > rel_tol * top).count(),
        _ => 0,
    }
}

/// Ratio of smallest to largest singular value of a matrix that should have full row rank
/// (or full column rank, whichever is smaller). Zero for empty or zero matrices.
pub fn inverse_condition(a: &DMatrix<f64>) -> f64 {
    let s = singular_values(a);
    let k = a.nrows().min(a.ncols());
    if k == 0 || s.is_empty() || s[0] <= 0.0 {
        return 0.0;
    }
    s[k - 1] / s[0]
}

/// Nearest orthogonal matrix (polar factor U V^T).
pub fn polar(a: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("svd requested u");
    let vt = svd.v_t.expect("svd requested v_t");
    u * vt
}

/// Penalized least squares solution of `design * coef ~ targets`.
#[derive(Debug, Clone)]
pub struct LsFit {
    /// k x q coefficients, one column per target.
    pub coef: DMatrix<f64>,
    /// Trace of the hat matrix (effective degrees of freedom).
    pub dof: f64,
}

/// Solves min ||Y - X b||^2 + sum_k penalty_k b_k^2 for every column of `targets`.
/// Falls back to a pseudo-inverse when the Gram matrix is singular.
pub fn penalized_lstsq(design: &DMatrix<f64>, targets: &DMatrix<f64>, penalty: &[f64]) -> Result<LsFit> {
    let k = design.ncols();
    if design.nrows() != targets.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows, targets {}",
            design.nrows(),
            targets.nrows()
        )));
    }
    if penalty.len() != k {
        return Err(Error::DimensionMismatch(format!("{} penalties for {} columns", penalty.len(), k)));
    }
    let gram = design.transpose() * design;
    let mut lhs = gram.clone();
    for (j, &p) in penalty.iter().enumerate() {
        lhs[(j, j)] += p;
    }
    let rhs = design.transpose() * targets;
    let scale = lhs.diagonal().amax().max(f64::MIN_POSITIVE);
    let solved = lhs.clone().cholesky().filter(|c| {
        let d = c.l_dirty().diagonal();
        d.min() > 1e-7 * scale.sqrt()
    });
    let (coef, inv_gram) = match solved {
        Some(chol) => (chol.solve(&rhs), None),
        None => {
            let pinv = pseudo_inverse_sym(&lhs, 1e-12);
            (&pinv * &rhs, Some(pinv))
        }
    };
    let dof = match inv_gram {
        Some(pinv) => (pinv * &gram).trace(),
        None => lhs.cholesky().map(|c| c.solve(&gram).trace()).unwrap_or(k as f64),
    };
    Ok(LsFit { coef, dof })
}

/// Plain least squares for a single response.
pub fn lstsq(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let targets = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    let fit = penalized_lstsq(design, &targets, &vec![0.0; design.ncols()])?;
    Ok(fit.coef.column(0).into_owned())
}

/// Moore-Penrose inverse of a symmetric matrix, discarding eigenvalues below `rel_tol` of the largest.
pub fn pseudo_inverse_sym(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let eig = sym_eig(a);
    let top = eig.eigenvalues.iter().copied().fold(0.0_f64, |m, v| m.max(v.abs()));
    let inv = eig.eigenvalues.map(|l| if l.abs() > rel_tol * top && top > 0.0 { 1.0 / l } else { 0.0 });
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&inv) * v.transpose()
}

/// Residuals of every column of `targets` after projecting on `design` (least squares).
pub fn residualize(design: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let fit = penalized_lstsq(design, targets, &vec![0.0; design.ncols()])?;
    Ok(targets - design * fit.coef)
}

/// Linear-interpolation quantile (type 7) of an unsorted sample.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, q)
}

pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

/// Sample standard deviation with divisor n-1.
pub fn std_dev(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

pub fn ensure_finite(a: &DMatrix<f64>, what: &str) -> Result<()> {
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if !a[(i, j)].is_finite() {
                return Err(Error::NonFinite { what: what.to_string(), row: i, col: j });
            }
        }
    }
    Ok(())
}


/// Serde adapter writing a matrix as an array of rows.
pub mod rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        (m.nrows(), m.ncols(), rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let (nrows, ncols, rows): (usize, usize, Vec<Vec<f64>>) = Deserialize::deserialize(d)?;
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        if flat.len() != nrows * ncols {
            return Err(serde::de::Error::custom("matrix row data does not match its shape"));
        }
        Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
    }
}

/// Serde adapter writing a vector as a plain array.
pub mod vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        let v: Vec<f64> = Deserialize::deserialize(d)?;
        Ok(DVector::from_vec(v))
    }
}
