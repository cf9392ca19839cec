//! Simulation scenarios with known ground truth, a latent-adjusted oracle, and the
//! benchmark runner that aggregates bias, SD and MSE over seeded replications.

mod benchmark;
mod generators;
mod oracle;

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{NeighborhoodSpec, PanelData};

pub use benchmark::{run_benchmark, BenchEstimator, BenchmarkResult, BenchmarkRow, RawEstimate};
pub use generators::{
    gen_ife_grid, gen_interference, gen_linear, gen_misspec, gen_nonlinear_hetero, standardized_draw,
};
pub use oracle::oracle_fit;

/// Standardized (mean 0, variance 1) innovation families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseDist {
    Gaussian,
    Laplace,
    StudentT {
        df: f64,
    },
    NormalMixture,
    SkewNormal {
        shape: f64,
    },
    /// Gaussian draws with residual SD scaled by a positive function of the first covariate.
    Heteroskedastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ScenarioKind {
    LinearFixedSpatial,
    LinearSpatiotemporal,
    IfeGrid,
    Interference,
    NonlinearHetero,
    Misspec(NoiseDist),
}

impl ScenarioKind {
    pub fn name(&self) -> String {
        match self {
            ScenarioKind::LinearFixedSpatial => "linear-fixed".into(),
            ScenarioKind::LinearSpatiotemporal => "linear-spatiotemporal".into(),
            ScenarioKind::IfeGrid => "ife-grid".into(),
            ScenarioKind::Interference => "interference".into(),
            ScenarioKind::NonlinearHetero => "nonlinear".into(),
            ScenarioKind::Misspec(d) => match d {
                NoiseDist::Gaussian => "misspec-gaussian".into(),
                NoiseDist::Laplace => "misspec-laplace".into(),
                NoiseDist::StudentT { df } => format!("misspec-t{df}"),
                NoiseDist::NormalMixture => "misspec-mixture".into(),
                NoiseDist::SkewNormal { .. } => "misspec-skew".into(),
                NoiseDist::Heteroskedastic => "misspec-hetero".into(),
            },
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let kind = match s.to_ascii_lowercase().as_str() {
            "linear-fixed" | "linear" => ScenarioKind::LinearFixedSpatial,
            "linear-spatiotemporal" | "spatiotemporal" => ScenarioKind::LinearSpatiotemporal,
            "ife-grid" => ScenarioKind::IfeGrid,
            "interference" => ScenarioKind::Interference,
            "nonlinear" => ScenarioKind::NonlinearHetero,
            "misspec-gaussian" => ScenarioKind::Misspec(NoiseDist::Gaussian),
            "misspec-laplace" => ScenarioKind::Misspec(NoiseDist::Laplace),
            "misspec-mixture" => ScenarioKind::Misspec(NoiseDist::NormalMixture),
            "misspec-skew" => ScenarioKind::Misspec(NoiseDist::SkewNormal { shape: 4.0 }),
            "misspec-hetero" => ScenarioKind::Misspec(NoiseDist::Heteroskedastic),
            other => match other.strip_prefix("misspec-t").and_then(|v| v.parse::<f64>().ok()) {
                Some(df) if df > 2.0 => ScenarioKind::Misspec(NoiseDist::StudentT { df }),
                _ => return Err(Error::InvalidArgument(format!("unknown scenario {s:?}"))),
            },
        };
        Ok(kind)
    }
}

impl TryFrom<String> for ScenarioKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ScenarioKind> for String {
    fn from(k: ScenarioKind) -> String {
        k.name()
    }
}

/// True per-unit dose-response shapes used by the nonlinear scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrueCurve {
    Sine,
    Quadratic,
    Tanh,
    Cubic,
    Exponential,
}

impl TrueCurve {
    pub const ALL: [TrueCurve; 5] =
        [TrueCurve::Sine, TrueCurve::Quadratic, TrueCurve::Tanh, TrueCurve::Cubic, TrueCurve::Exponential];

    pub fn value(self, d: f64) -> f64 {
        match self {
            TrueCurve::Sine => 1.5 * d.sin(),
            TrueCurve::Quadratic => 0.3 * d * d - 0.5 * d,
            TrueCurve::Tanh => (2.0 * d).tanh(),
            TrueCurve::Cubic => 0.8 * d - 0.15 * d.powi(3),
            TrueCurve::Exponential => (0.4 * d).exp() - 1.0,
        }
    }

    pub fn derivative(self, d: f64) -> f64 {
        match self {
            TrueCurve::Sine => 1.5 * d.cos(),
            TrueCurve::Quadratic => 0.6 * d - 0.5,
            TrueCurve::Tanh => 2.0 / (2.0 * d).cosh().powi(2),
            TrueCurve::Cubic => 0.8 - 0.45 * d * d,
            TrueCurve::Exponential => 0.4 * (0.4 * d).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Truth {
    Slope(f64),
    Interference { direct: f64, spillover: f64 },
    Curves(Vec<TrueCurve>),
}

/// Knobs of the data-generating processes that the paper leaves unstated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioParams {
    /// SD of the rough per-location effect in exposures.
    pub location_sd: f64,
    /// Share of the location effect passed to outcomes.
    pub outcome_location_scale: f64,
    /// SD of location-specific covariate slopes.
    pub slope_heterogeneity: f64,
    /// Correlation between exposure and outcome covariate slopes.
    pub slope_link: f64,
    /// Multiplier on outcome loadings; 0 removes confounding.
    pub gamma_scale: f64,
    /// Correlation of exposure and outcome loadings.
    pub loading_corr: f64,
    pub neighbors: usize,
    pub seasonal_amplitude: f64,
    pub seasonal_period: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            location_sd: 5.0,
            outcome_location_scale: 0.45,
            slope_heterogeneity: 0.6,
            slope_link: 0.5,
            gamma_scale: 1.0,
            loading_corr: 0.0,
            neighbors: 3,
            seasonal_amplitude: 1.0,
            seasonal_period: 12.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub kind: ScenarioKind,
    pub n_units: usize,
    pub n_times: usize,
    pub rank: usize,
    pub n_covariates: usize,
    pub sigma_xi: f64,
    pub sigma_eps: f64,
    pub truth: Truth,
    pub seed: u64,
    pub params: ScenarioParams,
}

impl SimScenario {
    /// Default configuration of a scenario kind.
    pub fn new(kind: ScenarioKind, seed: u64) -> Self {
        let base = SimScenario {
            kind,
            n_units: 50,
            n_times: 100,
            rank: 3,
            n_covariates: 2,
            sigma_xi: 1.0,
            sigma_eps: 1.0,
            truth: Truth::Slope(1.0),
            seed,
            params: ScenarioParams::default(),
        };
        match kind {
            ScenarioKind::IfeGrid => SimScenario { n_covariates: 0, n_times: 200, ..base },
            ScenarioKind::Interference => SimScenario {
                n_times: 200,
                rank: 4,
                truth: Truth::Interference { direct: 1.0, spillover: 0.5 },
                params: ScenarioParams { loading_corr: 0.5, ..ScenarioParams::default() },
                ..base
            },
            ScenarioKind::NonlinearHetero => SimScenario {
                n_units: 5,
                n_times: 1000,
                rank: 2,
                sigma_xi: 0.5,
                sigma_eps: 0.5,
                truth: Truth::Curves(TrueCurve::ALL.to_vec()),
                ..base
            },
            _ => base,
        }
    }

    pub fn from_name(name: &str, seed: u64) -> Result<Self> {
        Ok(Self::new(name.parse()?, seed))
    }

    /// Reads a TOML scenario file: `kind` plus optional overrides of any other field.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let kind: ScenarioKind = value
            .get("kind")
            .and_then(|k| k.as_str())
            .ok_or_else(|| Error::Config("scenario file needs a string `kind`".into()))?
            .parse()?;
        let seed = value.get("seed").and_then(|s| s.as_integer()).unwrap_or(0) as u64;
        let base = toml::Table::try_from(Self::new(kind, seed)).map_err(|e| Error::Config(e.to_string()))?;
        let merged = merge_tables(base, value);
        let scenario: SimScenario = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_units == 0 || self.n_times == 0 || self.rank == 0 {
            return Err(Error::Config("scenario dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.params.loading_corr) {
            return Err(Error::Config("loading_corr must lie in [0, 1)".into()));
        }
        if self.kind == ScenarioKind::NonlinearHetero && (self.n_units != 5 || self.rank != 2 || self.n_covariates != 2)
        {
            return Err(Error::Config(
                "the nonlinear scenario has fixed parameter matrices (5 units, rank 2, 2 covariates)".into(),
            ));
        }
        Ok(())
    }

    /// Names of the scalar targets the benchmark scores for this scenario.
    pub fn targets(&self) -> Vec<&'static str> {
        match self.truth {
            Truth::Slope(_) => vec!["beta.direct"],
            Truth::Interference { .. } => vec!["beta.direct", "beta.spillover"],
            Truth::Curves(_) => vec!["acd"],
        }
    }

    /// Neighborhood size used by estimators for this scenario, when it has interference.
    pub fn has_interference(&self) -> bool {
        matches!(self.truth, Truth::Interference { .. })
    }
}

fn merge_tables(mut base: toml::Table, over: toml::Table) -> toml::Table {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                let merged = merge_tables(std::mem::take(b), o);
                *b = merged;
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}

/// One generated data set together with everything needed to score estimators on it.
#[derive(Debug, Clone)]
pub struct SimDraw {
    pub panel: PanelData,
    pub truth: Truth,
    /// Realized values of the scored targets (they can depend on the drawn exposures).
    pub targets: BTreeMap<String, f64>,
    /// Latent confounders, one row per factor and one column per replicate.
    pub latent: DMatrix<f64>,
    pub neighborhoods: Option<NeighborhoodSpec>,
    /// Loadings of exposures and outcomes on `latent`.
    pub exposure_loadings: DMatrix<f64>,
    pub outcome_loadings: DMatrix<f64>,
    /// Population idiosyncratic variances of exposures and outcomes.
    pub exposure_noise_var: DVector<f64>,
    pub outcome_noise_var: DVector<f64>,
}

impl SimDraw {
    /// Population bias operator: regression of the confounding term on covariate-adjusted exposures.
    pub fn true_bias_matrix(&self) -> DMatrix<f64> {
        let b = &self.exposure_loadings;
        let sigma_d = b * b.transpose() + DMatrix::from_diagonal(&self.exposure_noise_var);
        let solved = sigma_d.cholesky().expect("population exposure covariance is positive definite").solve(b);
        &self.outcome_loadings * solved.transpose()
    }
}

/// Draws a data set for any scenario kind.
pub fn generate(scenario: &SimScenario, seed: u64) -> Result<SimDraw> {
    scenario.validate()?;
    match scenario.kind {
        ScenarioKind::LinearFixedSpatial | ScenarioKind::LinearSpatiotemporal => gen_linear(scenario, seed),
        ScenarioKind::IfeGrid => gen_ife_grid(scenario.params.loading_corr, scenario.n_times, scenario, seed),
        ScenarioKind::Interference => gen_interference(scenario, seed),
        ScenarioKind::NonlinearHetero => gen_nonlinear_hetero(scenario, seed),
        ScenarioKind::Misspec(dist) => gen_misspec(dist, scenario, seed),
    }
}
