//! Effect estimators: DML baselines, interactive fixed effects, and the
//! three-step factor-confounding estimator, plus bootstrap inference.

pub mod bootstrap;
pub mod dml;
pub mod dose;
pub mod fc;
pub mod ife;
pub mod learner;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bias::{BiasModel, IdCheckReport, Interval};
use crate::error::{Error, Result};
use crate::factor::{FitOptions, NoiseMode};
use crate::panel::{NeighborhoodSpec, PanelData};

pub use bootstrap::{bootstrap_infer, BootstrapResult};
pub use dml::{dml_baseline, dml_residualize, DmlResiduals};
pub use dose::{dose_response_summaries, DoseCurve, DoseSummary, ShiftEffect};
pub use fc::fc_three_step;
pub use ife::ife_fit;
pub use learner::Learner;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    SingleDML,
    MultiDML,
    StackedDML,
    FC,
    FCplusDML,
    IFE,
    IFEplusDML,
    /// Regression on the true latent factors; only available on simulated data.
    Oracle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::SingleDML => "single-dml",
            Method::MultiDML => "multi-dml",
            Method::StackedDML => "stacked-dml",
            Method::FC => "fc",
            Method::FCplusDML => "fc+dml",
            Method::IFE => "ife",
            Method::IFEplusDML => "ife+dml",
            Method::Oracle => "oracle",
        }
    }

    pub fn uses_rank(self) -> bool {
        matches!(self, Method::FC | Method::FCplusDML | Method::IFE | Method::IFEplusDML)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let all = [
            Method::SingleDML,
            Method::MultiDML,
            Method::StackedDML,
            Method::FC,
            Method::FCplusDML,
            Method::IFE,
            Method::IFEplusDML,
            Method::Oracle,
        ];
        let key = s.to_ascii_lowercase();
        all.into_iter().find(|m| m.name() == key).ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EffectMode {
    /// One slope (or slope pair under interference) shared by all units.
    Pooled,
    /// Separate dose-response curve per unit.
    PerUnit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub method: Method,
    pub rank: usize,
    /// None means no interference.
    pub neighborhoods: Option<NeighborhoodSpec>,
    pub learner: Learner,
    /// Spline columns of each per-unit dose-response curve under a spline learner.
    pub curve_df: usize,
    pub folds: usize,
    pub n_init: usize,
    pub bootstrap_reps: usize,
    pub seed: u64,
    pub effect_mode: EffectMode,
    pub noise_mode: NoiseMode,
    pub factor_opts: FitOptions,
    /// Rescale Step-I residuals by sqrt(R / (R - dof)) before the outcome factor fit.
    pub df_correction: bool,
    /// Ridge on off-neighborhood Step-I coefficients; None applies the default rule.
    pub off_ridge: Option<f64>,
    pub shifts: Vec<f64>,
    pub ife_max_iter: usize,
    pub ife_tol: f64,
    /// Exposure configurations (d1, d2) for a population-average contrast.
    pub pate_contrast: Option<(Vec<f64>, Vec<f64>)>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            method: Method::FC,
            rank: 1,
            neighborhoods: None,
            learner: Learner::default(),
            curve_df: CURVE_DF,
            folds: 5,
            n_init: 20,
            bootstrap_reps: 0,
            seed: 0,
            effect_mode: EffectMode::Pooled,
            noise_mode: NoiseMode::Diagonal,
            factor_opts: FitOptions::default(),
            df_correction: true,
            off_ridge: None,
            shifts: vec![1.0],
            ife_max_iter: 1000,
            ife_tol: 1e-8,
            pate_contrast: None,
        }
    }
}

impl EstimatorConfig {
    pub fn new(method: Method, rank: usize) -> Self {
        EstimatorConfig { method, rank, ..Default::default() }
    }

    pub fn validate(&self, panel: &PanelData) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidArgument(format!("folds must be >= 2, got {}", self.folds)));
        }
        if matches!(self.method, Method::FC | Method::FCplusDML) && self.rank == 0 {
            return Err(Error::InvalidArgument("factor-confounding estimators need rank >= 1".into()));
        }
        if self.curve_df < 3 {
            return Err(Error::InvalidArgument(format!("curve df must be at least 3, got {}", self.curve_df)));
        }
        if let Some(nb) = &self.neighborhoods {
            if nb.len() != panel.n_coords() {
                return Err(Error::InvalidNeighborhood(format!(
                    "{} neighborhoods for {} coordinates",
                    nb.len(),
                    panel.n_coords()
                )));
            }
        }
        Ok(())
    }

    /// Learner for a unit's own exposure: richer splines when whole curves are the target.
    pub fn own_learner(&self) -> Learner {
        match (self.effect_mode, self.learner) {
            (EffectMode::PerUnit, Learner::SplineAdditive(_)) => Learner::SplineAdditive(self.curve_df),
            (_, l) => l,
        }
    }

    pub fn neighborhoods_for(&self, panel: &PanelData) -> NeighborhoodSpec {
        self.neighborhoods.clone().unwrap_or_else(|| NeighborhoodSpec::none(panel.n_coords()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PateRecord {
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub procrustes_residual: Option<f64>,
    pub id_check: Option<IdCheckReport>,
    pub identified: Option<bool>,
    /// Ridge applied to off-neighborhood Step-I coefficients, when active.
    pub off_ridge: Option<f64>,
    pub exposure_model_converged: Option<bool>,
    pub outcome_model_converged: Option<bool>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub method: Method,
    /// Pooled slopes: [direct] or [direct, spillover].
    pub beta: Vec<f64>,
    pub beta_names: Vec<String>,
    /// Per-coordinate slopes in the layout of `beta` (empty when not estimated).
    pub unit_slopes: Vec<Vec<f64>>,
    /// One curve (pooled) or one per coordinate.
    pub dose_response: Vec<DoseCurve>,
    /// Spillover slope attached to each curve (zero without interference).
    pub spillover: Vec<f64>,
    pub dose_summaries: Vec<DoseSummary>,
    pub acd: f64,
    pub ate_shift: Vec<ShiftEffect>,
    pub shift_out_of_support: bool,
    pub pate: Option<PateRecord>,
    pub intervals: BTreeMap<String, Interval>,
    pub bias_model: Option<BiasModel>,
    /// Partial-identification interval of each unit's bias for a unit shift of its own exposure.
    pub partial_id: Vec<Interval>,
    pub diagnostics: Diagnostics,
}

/// Default spline columns of per-unit curves.
pub const CURVE_DF: usize = 8;

pub(crate) const BETA_NAMES: [&str; 2] = ["direct", "spillover"];

/// A fitted curve with the exposures it summarizes over.
pub(crate) struct CurveFit {
    pub curve: DoseCurve,
    pub spillover: f64,
    pub sample: Vec<f64>,
}

impl EffectEstimate {
    pub(crate) fn assemble(
        method: Method,
        beta: Vec<f64>,
        unit_slopes: Vec<Vec<f64>>,
        curves: Vec<CurveFit>,
        shifts: &[f64],
    ) -> Result<Self> {
        let beta_names = BETA_NAMES[..beta.len()].iter().map(|s| s.to_string()).collect();
        let mut summaries = Vec::with_capacity(curves.len());
        for c in &curves {
            summaries.push(dose_response_summaries(&c.curve, &c.sample, shifts)?);
        }
        let k = summaries.len().max(1) as f64;
        let acd = summaries.iter().map(|s| s.acd).sum::<f64>() / k;
        let ate_shift = shifts
            .iter()
            .enumerate()
            .map(|(q, &shift)| ShiftEffect {
                shift,
                value: summaries.iter().map(|s| s.ate[q].value).sum::<f64>() / k,
                clamped_fraction: summaries.iter().map(|s| s.ate[q].clamped_fraction).sum::<f64>() / k,
            })
            .collect();
        let shift_out_of_support = summaries.iter().any(|s| s.shift_out_of_support);
        Ok(EffectEstimate {
            method,
            beta,
            beta_names,
            unit_slopes,
            spillover: curves.iter().map(|c| c.spillover).collect(),
            dose_response: curves.into_iter().map(|c| c.curve).collect(),
            dose_summaries: summaries,
            acd,
            ate_shift,
            shift_out_of_support,
            pate: None,
            intervals: BTreeMap::new(),
            bias_model: None,
            partial_id: Vec::new(),
            diagnostics: Diagnostics::default(),
        })
    }

    /// Mean over units of g_i(d1) - g_i(d2), where g_i adds the spillover slope times the
    /// mean exposure of the unit's other neighbors.
    pub fn pate(&self, neighborhoods: &NeighborhoodSpec, d1: &[f64], d2: &[f64]) -> Result<f64> {
        let n = neighborhoods.len();
        if d1.len() != n || d2.len() != n {
            return Err(Error::DimensionMismatch(format!("contrast vectors must have length {n}")));
        }
        let eval = |i: usize, d: &[f64]| {
            let (curve, spill) = if self.dose_response.len() == n {
                (&self.dose_response[i], self.spillover[i])
            } else {
                (&self.dose_response[0], self.spillover[0])
            };
            let others = neighborhoods.others(i);
            let bar =
                if others.is_empty() { 0.0 } else { others.iter().map(|&j| d[j]).sum::<f64>() / others.len() as f64 };
            curve.value(d[i]) + spill * bar
        };
        Ok((0..n).map(|i| eval(i, d1) - eval(i, d2)).sum::<f64>() / n as f64)
    }

    /// Named scalar summaries; with a reference estimate, curve values are taken on its grids
    /// and centered at its exposure means so that resamples are comparable.
    pub fn summaries(&self, reference: Option<&EffectEstimate>) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for (name, b) in self.beta_names.iter().zip(&self.beta) {
            out.insert(format!("beta.{name}"), *b);
        }
        out.insert("acd".into(), self.acd);
        for s in &self.ate_shift {
            out.insert(format!("ate({})", s.shift), s.value);
        }
        if let Some(p) = &self.pate {
            out.insert("pate".into(), p.value);
        }
        if self.dose_response.len() > 1 {
            for (i, slopes) in self.unit_slopes.iter().enumerate() {
                if let Some(v) = slopes.first() {
                    out.insert(format!("slope.{i}"), *v);
                }
            }
        }
        let reference = reference.unwrap_or(self);
        for (c, (curve, summary)) in self.dose_response.iter().zip(&reference.dose_summaries).enumerate() {
            let anchor = curve.value(summary.exposure_mean);
            for (k, &x) in summary.grid.iter().enumerate() {
                out.insert(format!("curve.{c}.{k}"), curve.value(x) - anchor);
            }
        }
        out
    }

    /// Pointwise band (lo, hi) for curve `c`, falling back to the estimate itself.
    pub fn curve_band(&self, c: usize) -> Vec<(f64, f64, f64, f64)> {
        let s = &self.dose_summaries[c];
        s.grid
            .iter()
            .zip(&s.centered_curve)
            .enumerate()
            .map(|(k, (&x, &v))| match self.intervals.get(&format!("curve.{c}.{k}")) {
                Some(iv) => (x, v, iv.lo, iv.hi),
                None => (x, v, v, v),
            })
            .collect()
    }
}

/// Point estimate for `config.method`, without bootstrap.
pub fn estimate_point(panel: &PanelData, config: &EstimatorConfig) -> Result<EffectEstimate> {
    config.validate(panel)?;
    let mut est = match config.method {
        Method::SingleDML | Method::MultiDML | Method::StackedDML => dml_baseline(panel, config)?,
        Method::FC => fc_three_step(panel, config)?,
        Method::FCplusDML => {
            let res = dml_residualize(panel, config.learner, config.folds, config.seed)?;
            let resid_panel = panel.with_residuals(res.d_resid, res.y_resid);
            let mut e = fc_three_step(&resid_panel, config)?;
            e.method = Method::FCplusDML;
            e
        }
        Method::IFE => ife_fit(panel, config)?,
        Method::IFEplusDML => {
            let res = dml_residualize(panel, config.learner, config.folds, config.seed)?;
            let resid_panel = panel.with_residuals(res.d_resid, res.y_resid);
            let mut e = ife_fit(&resid_panel, config)?;
            e.method = Method::IFEplusDML;
            e
        }
        Method::Oracle => {
            return Err(Error::InvalidArgument("the oracle needs simulated latent factors; use the benchmark".into()));
        }
    };
    if let Some((d1, d2)) = &config.pate_contrast {
        let nb = config.neighborhoods_for(panel);
        let value = est.pate(&nb, d1, d2)?;
        est.pate = Some(PateRecord { d1: d1.clone(), d2: d2.clone(), value });
    }
    Ok(est)
}

/// Point estimate plus percentile bootstrap intervals when `config.bootstrap_reps > 0`.
/// Every interval is widened, if needed, to contain its point estimate.
pub fn estimate(panel: &PanelData, config: &EstimatorConfig) -> Result<EffectEstimate> {
    let mut est = estimate_point(panel, config)?;
    if config.bootstrap_reps > 0 {
        let boot = bootstrap_infer(panel, config, &est, &estimate_point, config.bootstrap_reps, config.seed)?;
        let point = est.summaries(None);
        for (key, iv) in boot.intervals {
            if let Some(&x) = point.get(&key) {
                est.intervals.insert(key, Interval { lo: iv.lo.min(x), hi: iv.hi.max(x) });
            }
        }
        if boot.failed > 0 {
            est.diagnostics.notes.push(format!("{} of {} bootstrap resamples failed", boot.failed, boot.reps));
        }
    }
    Ok(est)
}

/// Own-effect regressors of coordinate `i`: its exposure, plus the neighbor mean under interference.
pub(crate) fn own_regressors(exposures: &DMatrix<f64>, neighbor_mean: Option<&DMatrix<f64>>, i: usize) -> DMatrix<f64> {
    let r = exposures.ncols();
    let q = 1 + usize::from(neighbor_mean.is_some());
    let mut t = DMatrix::zeros(r, q);
    t.set_column(0, &exposures.row(i).transpose());
    if let Some(bar) = neighbor_mean {
        t.set_column(1, &bar.row(i).transpose());
    }
    t
}

/// Covariates and coordinates of coordinate `i` across replicates (R x (p + p_s)).
pub(crate) fn row_features(panel: &PanelData, i: usize) -> DMatrix<f64> {
    let r = panel.n_replicates();
    let p = panel.n_covariates();
    let ps = panel.coords.ncols();
    let mut x = DMatrix::zeros(r, p + ps);
    for c in 0..r {
        for (k, cov) in panel.covariates.iter().enumerate() {
            x[(c, k)] = cov[(i, c)];
        }
        for (k, v) in panel.cell_coords(i, c).into_iter().enumerate() {
            x[(c, p + k)] = v;
        }
    }
    x
}

/// Exposures residualized per coordinate on its covariate features, as a replicates x coordinates matrix.
pub fn exposure_residuals(panel: &PanelData, learner: Learner) -> Result<DMatrix<f64>> {
    let (d, r) = panel.exposures.shape();
    let mut out = DMatrix::zeros(r, d);
    for i in 0..d {
        let feats = row_features(panel, i);
        let map = learner::FeatureMap::fit(&feats, learner);
        let xb = map.transform(&feats);
        let target = DMatrix::from_column_slice(r, 1, panel.exposures.row(i).transpose().as_slice());
        let fit = crate::numerics::penalized_lstsq(&xb, &target, &map.penalty(r))?;
        out.set_column(i, &(&target - &xb * fit.coef).column(0));
    }
    Ok(out)
}
