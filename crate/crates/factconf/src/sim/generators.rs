use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Exp1, StandardNormal, StudentT};

use super::{NoiseDist, ScenarioKind, SimDraw, SimScenario, Truth};
use crate::error::{Error, Result};
use crate::numerics::sym_inv_sqrt;
use crate::panel::{NeighborhoodSpec, PanelData};
use crate::rng::{normal_matrix, rng_from, StreamRng};

/// One draw with mean 0 and variance 1 from `dist` (Gaussian for `Heteroskedastic`).
pub fn standardized_draw<R: Rng>(rng: &mut R, dist: NoiseDist) -> f64 {
    match dist {
        NoiseDist::Gaussian | NoiseDist::Heteroskedastic => rng.sample(StandardNormal),
        NoiseDist::Laplace => {
            let a: f64 = rng.sample(Exp1);
            let b: f64 = rng.sample(Exp1);
            (a - b) / 2f64.sqrt()
        }
        NoiseDist::StudentT { df } => {
            let t: f64 = rng.sample(StudentT::new(df).expect("df > 0"));
            t * ((df - 2.0) / df).sqrt()
        }
        NoiseDist::NormalMixture => {
            let z: f64 = rng.sample(StandardNormal);
            let x = if rng.gen::<f64>() < 0.7 { -0.6 + 0.8 * z } else { 1.4 + 0.8 * z };
            x / 1.48f64.sqrt()
        }
        NoiseDist::SkewNormal { shape } => {
            let delta = shape / (1.0 + shape * shape).sqrt();
            let u0: f64 = rng.sample(StandardNormal);
            let u1: f64 = rng.sample(StandardNormal);
            let x = delta * u0.abs() + (1.0 - delta * delta).sqrt() * u1;
            let mean = delta * (2.0 / PI).sqrt();
            (x - mean) / (1.0 - 2.0 * delta * delta / PI).sqrt()
        }
    }
}

fn dist_matrix(rng: &mut StreamRng, rows: usize, cols: usize, dist: NoiseDist) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = standardized_draw(rng, dist);
        }
    }
    m
}

fn uniform_matrix(rng: &mut StreamRng, rows: usize, cols: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.gen_range(lo..hi);
        }
    }
    m
}

fn uniform_vec(rng: &mut StreamRng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.gen_range(lo..hi)))
}

/// Outcome loadings on the latent factors, `gamma * Sigma_{U|D}^{-1/2}` at population values.
fn outcome_loadings(b: &DMatrix<f64>, gamma: &DMatrix<f64>, noise_var: &DVector<f64>) -> Result<DMatrix<f64>> {
    let m = b.ncols();
    let sigma_d = b * b.transpose() + DMatrix::from_diagonal(noise_var);
    let chol = sigma_d.cholesky().ok_or_else(|| Error::Singular("population exposure covariance".into()))?;
    let cond = DMatrix::identity(m, m) - b.transpose() * chol.solve(b);
    Ok(gamma * sym_inv_sqrt(&cond, 0.0)?)
}

/// Location-specific covariate slopes for exposures and outcomes (N x p each).
fn covariate_slopes(
    rng: &mut StreamRng,
    n: usize,
    p: usize,
    heterogeneity: f64,
    link: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let base_d = [0.5, -0.3];
    let base_y = [0.4, 0.6];
    let zd = normal_matrix(rng, n, p);
    let zy = normal_matrix(rng, n, p);
    let ad = DMatrix::from_fn(n, p, |i, k| base_d[k % 2] + heterogeneity * zd[(i, k)]);
    let ay = DMatrix::from_fn(n, p, |i, k| {
        base_y[k % 2] + link * (ad[(i, k)] - base_d[k % 2]) + heterogeneity * (1.0 - link * link).sqrt() * zy[(i, k)]
    });
    (ad, ay)
}

/// Per-cell covariates: `p` matrices of shape (units, times).
fn cell_covariates(rng: &mut StreamRng, n: usize, t: usize, p: usize) -> Vec<DMatrix<f64>> {
    let mut xs = vec![DMatrix::zeros(n, t); p];
    for c in 0..t {
        for i in 0..n {
            for x in xs.iter_mut() {
                x[(i, c)] = rng.sample(StandardNormal);
            }
        }
    }
    xs
}

fn covariate_term(xs: &[DMatrix<f64>], slopes: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, t) = xs.first().map(|x| x.shape()).unwrap_or((slopes.nrows(), 0));
    DMatrix::from_fn(n, t, |i, c| xs.iter().enumerate().map(|(k, x)| slopes[(i, k)] * x[(i, c)]).sum())
}

#[allow(clippy::too_many_arguments)]
fn finish(
    exposures: DMatrix<f64>,
    outcomes: DMatrix<f64>,
    covariates: Vec<DMatrix<f64>>,
    coords: DMatrix<f64>,
    truth: Truth,
    latent: DMatrix<f64>,
    neighborhoods: Option<NeighborhoodSpec>,
    exposure_loadings: DMatrix<f64>,
    outcome_loadings: DMatrix<f64>,
    noise: (DVector<f64>, DVector<f64>),
) -> Result<SimDraw> {
    let panel = PanelData::new(exposures, outcomes, covariates, coords)?;
    let mut targets = BTreeMap::new();
    match &truth {
        Truth::Slope(b) => {
            targets.insert("beta.direct".to_string(), *b);
        }
        Truth::Interference { direct, spillover } => {
            targets.insert("beta.direct".to_string(), *direct);
            targets.insert("beta.spillover".to_string(), *spillover);
        }
        Truth::Curves(curves) => {
            let r = panel.n_replicates() as f64;
            let mut acd = 0.0;
            for (i, c) in curves.iter().enumerate() {
                let slope = panel.exposures.row(i).iter().map(|&d| c.derivative(d)).sum::<f64>() / r;
                targets.insert(format!("slope.{i}"), slope);
                acd += slope;
            }
            targets.insert("acd".to_string(), acd / curves.len() as f64);
        }
    }
    let (exposure_noise_var, outcome_noise_var) = noise;
    Ok(SimDraw {
        panel,
        truth,
        targets,
        latent,
        neighborhoods,
        exposure_loadings,
        outcome_loadings,
        exposure_noise_var,
        outcome_noise_var,
    })
}

/// Shared body of the linear and misspecified scenarios; Gaussian innovations reproduce
/// `gen_linear` exactly.
fn linear_with(scenario: &SimScenario, seed: u64, dist: NoiseDist) -> Result<SimDraw> {
    let (n, t, m, p) = (scenario.n_units, scenario.n_times, scenario.rank, scenario.n_covariates);
    let par = &scenario.params;
    let mut rng = rng_from(seed);
    let coords = uniform_matrix(&mut rng, n, 2, 0.0, 1.0);
    let b = normal_matrix(&mut rng, n, m);
    let gamma = normal_matrix(&mut rng, n, m) * par.gamma_scale;
    let lam_d = uniform_vec(&mut rng, n, 0.5, 1.5) * scenario.sigma_xi.powi(2);
    let lam_y = uniform_vec(&mut rng, n, 0.5, 1.5) * scenario.sigma_eps.powi(2);
    let gamma_t = outcome_loadings(&b, &gamma, &lam_d)?;
    let u = dist_matrix(&mut rng, m, t, dist);
    let xi = dist_matrix(&mut rng, n, t, dist);
    let eps = dist_matrix(&mut rng, n, t, dist);
    let loc: Vec<f64> = (0..n).map(|_| par.location_sd * rng.sample::<f64, _>(StandardNormal)).collect();
    let xs = cell_covariates(&mut rng, n, t, p);
    let (ad, ay) = covariate_slopes(&mut rng, n, p, par.slope_heterogeneity, par.slope_link);
    let beta = match scenario.truth {
        Truth::Slope(b) => b,
        _ => return Err(Error::Config("linear scenarios need a slope truth".into())),
    };

    let seasonal = scenario.kind == ScenarioKind::LinearSpatiotemporal;
    let omega = 2.0 * PI / par.seasonal_period;
    let bu = &b * &u;
    let gu = &gamma_t * &u;
    let xd = covariate_term(&xs, &ad);
    let xy = covariate_term(&xs, &ay);
    let mut d = DMatrix::zeros(n, t);
    let mut y = DMatrix::zeros(n, t);
    for i in 0..n {
        let (s1, s2) = (coords[(i, 0)], coords[(i, 1)]);
        let f = 1.0 + 2.0 * s1 - s2 + 1.5 * s1 * s2 + loc[i];
        let h = 0.5 + 1.5 * s1 - 2.0 * s2 + s2 * s2 + par.outcome_location_scale * loc[i];
        let phase = PI * (s1 + s2);
        for c in 0..t {
            let (sd_d, sd_y) = if dist == NoiseDist::Heteroskedastic {
                let s = (0.3 * xs[0][(i, c)] - 0.09).exp();
                (s, s)
            } else {
                (1.0, 1.0)
            };
            let mut dv = f + xd[(i, c)] + bu[(i, c)] + lam_d[i].sqrt() * sd_d * xi[(i, c)];
            let mut yv = h + xy[(i, c)] + gu[(i, c)] + lam_y[i].sqrt() * sd_y * eps[(i, c)];
            if seasonal {
                dv += par.seasonal_amplitude * (omega * c as f64 + phase).sin();
                yv += par.outcome_location_scale * par.seasonal_amplitude * (omega * c as f64 + phase).cos();
            }
            d[(i, c)] = dv;
            y[(i, c)] = beta * dv + yv;
        }
    }
    finish(d, y, xs, coords, scenario.truth.clone(), u, None, b, gamma_t, (lam_d, lam_y))
}

/// Homogeneous linear effect with fixed spatial (or spatiotemporal) effects.
pub fn gen_linear(scenario: &SimScenario, seed: u64) -> Result<SimDraw> {
    linear_with(scenario, seed, NoiseDist::Gaussian)
}

/// Linear scenario with non-Gaussian latent factors and residuals.
pub fn gen_misspec(dist: NoiseDist, scenario: &SimScenario, seed: u64) -> Result<SimDraw> {
    if dist == NoiseDist::Heteroskedastic && scenario.n_covariates == 0 {
        return Err(Error::Config("heteroskedastic noise needs a covariate".into()));
    }
    linear_with(scenario, seed, dist)
}

/// Pure factor panel `Y = D + loadings U + eps` with exposure and outcome loadings
/// correlated at `rho` entrywise.
pub fn gen_ife_grid(rho: f64, n_times: usize, scenario: &SimScenario, seed: u64) -> Result<SimDraw> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("loading correlation must lie in [0, 1), got {rho}")));
    }
    let (n, m) = (scenario.n_units, scenario.rank);
    let mut rng = rng_from(seed);
    let coords = uniform_matrix(&mut rng, n, 2, 0.0, 1.0);
    let z1 = normal_matrix(&mut rng, n, m);
    let z2 = normal_matrix(&mut rng, n, m);
    let b = z1.clone();
    let gamma = (z1 * rho + z2 * (1.0 - rho * rho).sqrt()) * scenario.params.gamma_scale;
    let u = normal_matrix(&mut rng, m, n_times);
    let xi = normal_matrix(&mut rng, n, n_times) * scenario.sigma_xi;
    let eps = normal_matrix(&mut rng, n, n_times) * scenario.sigma_eps;
    let beta = match scenario.truth {
        Truth::Slope(b) => b,
        _ => return Err(Error::Config("the ife-grid scenario needs a slope truth".into())),
    };
    let d = &b * &u + xi;
    let y = &d * beta + &gamma * &u + eps;
    let noise =
        (DVector::from_element(n, scenario.sigma_xi.powi(2)), DVector::from_element(n, scenario.sigma_eps.powi(2)));
    finish(d, y, Vec::new(), coords, scenario.truth.clone(), u, None, b, gamma, noise)
}

/// Spillover from the mean exposure of the k nearest neighbors.
pub fn gen_interference(scenario: &SimScenario, seed: u64) -> Result<SimDraw> {
    let (n, t, m, p) = (scenario.n_units, scenario.n_times, scenario.rank, scenario.n_covariates);
    let par = &scenario.params;
    let (direct, spillover) = match scenario.truth {
        Truth::Interference { direct, spillover } => (direct, spillover),
        _ => return Err(Error::Config("the interference scenario needs (direct, spillover) truth".into())),
    };
    let mut rng = rng_from(seed);
    let coords = uniform_matrix(&mut rng, n, 2, 0.0, 1.0);
    let nb = NeighborhoodSpec::k_nearest(&coords, par.neighbors)?;
    let z1 = normal_matrix(&mut rng, n, m);
    let z2 = normal_matrix(&mut rng, n, m);
    let rho = par.loading_corr;
    let b = z1.clone();
    let gamma = (z1 * rho + z2 * (1.0 - rho * rho).sqrt()) * par.gamma_scale;
    let lam_d = uniform_vec(&mut rng, n, 0.5, 1.5) * scenario.sigma_xi.powi(2);
    let lam_y = uniform_vec(&mut rng, n, 0.5, 1.5) * scenario.sigma_eps.powi(2);
    let gamma_t = outcome_loadings(&b, &gamma, &lam_d)?;
    let u = normal_matrix(&mut rng, m, t);
    let xs = cell_covariates(&mut rng, n, t, p);
    let (ad, ay) = covariate_slopes(&mut rng, n, p, par.slope_heterogeneity, par.slope_link);
    let xi = normal_matrix(&mut rng, n, t);
    let eps = normal_matrix(&mut rng, n, t);
    let noise_d = DMatrix::from_fn(n, t, |i, c| lam_d[i].sqrt() * xi[(i, c)]);
    let noise_y = DMatrix::from_fn(n, t, |i, c| lam_y[i].sqrt() * eps[(i, c)]);
    let d = &b * &u + covariate_term(&xs, &ad) + noise_d;
    let bar = nb.neighbor_mean(&d);
    let y = &d * direct + &bar * spillover + covariate_term(&xs, &ay) + &gamma_t * &u + noise_y;
    finish(d, y, xs, coords, scenario.truth.clone(), u, Some(nb), b, gamma_t, (lam_d, lam_y))
}

pub const NONLINEAR_ALPHA: [[f64; 2]; 5] = [[1.0, -1.2], [0.8, 0.5], [-0.4, 1.0], [0.6, -0.7], [1.5, 0.9]];
pub const NONLINEAR_B: [[f64; 2]; 5] = [[1.0, 0.3], [0.4, -0.8], [-0.6, 1.0], [-0.7, -0.3], [1.0, -0.5]];
pub const NONLINEAR_GAMMA: [[f64; 2]; 5] = [[0.4, -0.7], [-0.3, 0.2], [0.8, 0.2], [0.2, 0.7], [0.5, 0.4]];
/// Covariate slopes in every outcome equation.
pub const NONLINEAR_COVARIATE_SLOPES: [f64; 2] = [0.5, -0.3];

/// Heterogeneous nonlinear effects with fixed loadings and covariates shared by all units.
pub fn gen_nonlinear_hetero(scenario: &SimScenario, seed: u64) -> Result<SimDraw> {
    let (n, t, m) = (5, scenario.n_times, 2);
    let curves = match &scenario.truth {
        Truth::Curves(c) if c.len() == n => c.clone(),
        _ => return Err(Error::Config("the nonlinear scenario needs one true curve per unit".into())),
    };
    let alpha = DMatrix::from_fn(n, 2, |i, k| NONLINEAR_ALPHA[i][k]);
    let b = DMatrix::from_fn(n, m, |i, k| NONLINEAR_B[i][k]);
    let gamma_t = DMatrix::from_fn(n, m, |i, k| NONLINEAR_GAMMA[i][k] * scenario.params.gamma_scale);
    let mut rng = rng_from(seed);
    let x = normal_matrix(&mut rng, 2, t);
    let u = normal_matrix(&mut rng, m, t);
    let xi = normal_matrix(&mut rng, n, t) * scenario.sigma_xi;
    let eps = normal_matrix(&mut rng, n, t) * scenario.sigma_eps;
    let bu = &b * &u;
    let gu = &gamma_t * &u;
    let mut d = DMatrix::zeros(n, t);
    let mut y = DMatrix::zeros(n, t);
    for i in 0..n {
        for c in 0..t {
            let (x1, x2) = (x[(0, c)], x[(1, c)]);
            let dv = alpha[(i, 0)] * x1.sin() + alpha[(i, 1)] * (x2 * x2 - 1.0) + bu[(i, c)] + xi[(i, c)];
            d[(i, c)] = dv;
            y[(i, c)] = curves[i].value(dv)
                + NONLINEAR_COVARIATE_SLOPES[0] * x1
                + NONLINEAR_COVARIATE_SLOPES[1] * x2
                + gu[(i, c)]
                + eps[(i, c)];
        }
    }
    let covariates = (0..2).map(|k| DMatrix::from_fn(n, t, |_, c| x[(k, c)])).collect();
    let noise =
        (DVector::from_element(n, scenario.sigma_xi.powi(2)), DVector::from_element(n, scenario.sigma_eps.powi(2)));
    finish(d, y, covariates, DMatrix::zeros(n, 0), scenario.truth.clone(), u, None, b, gamma_t, noise)
}
