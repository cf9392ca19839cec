use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate, oracle_fit, SimScenario, Truth};
use crate::error::{Error, Result};
use crate::estimators::{estimate_point, EffectMode, EstimatorConfig, Learner, Method};
use crate::rng::derive_seed;

/// Share of failed replications above which a row is flagged.
pub const FAILURE_FLAG_RATE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum BenchKind {
    Oracle,
    Fit(Box<EstimatorConfig>),
}

/// An estimator column of the benchmark, e.g. `fc3`, `fc3+dml`, `ife6`, `stacked-dml`, `oracle`.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchEstimator {
    pub label: String,
    pub kind: BenchKind,
}

impl BenchEstimator {
    pub fn parse(label: &str) -> Result<Self> {
        Self::parse_with(label, &EstimatorConfig::default())
    }

    /// Parses `label`, taking every setting other than method and rank from `base`.
    pub fn parse_with(label: &str, base: &EstimatorConfig) -> Result<Self> {
        let key = label.trim().to_ascii_lowercase();
        let bad = || Error::InvalidArgument(format!("unknown estimator {label:?}"));
        let kind = match key.as_str() {
            "oracle" => BenchKind::Oracle,
            "single-dml" | "multi-dml" | "stacked-dml" => {
                let method: Method = key.parse()?;
                BenchKind::Fit(Box::new(EstimatorConfig { method, rank: 0, ..base.clone() }))
            }
            other => {
                let (stem, dml) = match other.strip_suffix("+dml") {
                    Some(s) => (s, true),
                    None => (other, false),
                };
                let (method, digits) = if let Some(d) = stem.strip_prefix("fc") {
                    (if dml { Method::FCplusDML } else { Method::FC }, d)
                } else if let Some(d) = stem.strip_prefix("ife") {
                    (if dml { Method::IFEplusDML } else { Method::IFE }, d)
                } else {
                    return Err(bad());
                };
                let rank: usize = digits.parse().map_err(|_| bad())?;
                BenchKind::Fit(Box::new(EstimatorConfig { method, rank, ..base.clone() }))
            }
        };
        Ok(BenchEstimator { label: key, kind })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub scenario: String,
    pub estimator: String,
    pub target: String,
    /// Mean realized truth over successful replications.
    pub truth: f64,
    pub bias: f64,
    pub sd: f64,
    pub mse: f64,
    pub n_reps: usize,
    pub failures: usize,
    pub flagged: bool,
    pub runtime_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEstimate {
    pub scenario: String,
    pub estimator: String,
    pub rep: usize,
    pub target: String,
    pub estimate: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub rows: Vec<BenchmarkRow>,
    pub raw_estimates: Vec<RawEstimate>,
    pub reps: usize,
    pub seed: u64,
}

type RepOutcome = (Option<BTreeMap<String, f64>>, f64);

fn fit_one(
    est: &BenchEstimator,
    scenario: &SimScenario,
    draw: &super::SimDraw,
    seed: u64,
) -> Result<BTreeMap<String, f64>> {
    let fitted = match &est.kind {
        BenchKind::Oracle => oracle_fit(draw, Learner::default(), &[1.0])?,
        BenchKind::Fit(cfg) => {
            let mut cfg = cfg.clone();
            cfg.seed = seed;
            if cfg.neighborhoods.is_none() {
                cfg.neighborhoods = draw.neighborhoods.clone();
            }
            if matches!(scenario.truth, Truth::Curves(_)) && matches!(cfg.method, Method::FC | Method::FCplusDML) {
                cfg.effect_mode = EffectMode::PerUnit;
            }
            estimate_point(&draw.panel, &cfg)?
        }
    };
    Ok(fitted.summaries(None))
}

/// Monte-Carlo comparison: every (scenario, rep) draw is shared by all estimators.
pub fn run_benchmark(
    scenarios: &[SimScenario],
    estimators: &[BenchEstimator],
    reps: usize,
    seed: u64,
) -> Result<BenchmarkResult> {
    if reps < 2 {
        return Err(Error::InvalidArgument(format!("benchmark needs reps >= 2, got {reps}")));
    }
    if estimators.is_empty() {
        return Err(Error::InvalidArgument("no estimators given".into()));
    }
    let mut rows = Vec::new();
    let mut raw_estimates = Vec::new();
    for (s, scenario) in scenarios.iter().enumerate() {
        let scen_name = scenario.kind.name();
        let per_rep: Vec<(BTreeMap<String, f64>, Vec<RepOutcome>)> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let rep_seed = derive_seed(seed ^ scenario.seed, 0x5CE7 + s as u64, r as u64);
                match generate(scenario, rep_seed) {
                    Ok(draw) => {
                        let outcomes = estimators
                            .iter()
                            .enumerate()
                            .map(|(e, est)| {
                                let start = Instant::now();
                                let res = fit_one(est, scenario, &draw, derive_seed(rep_seed, 0xE5, e as u64));
                                let secs = start.elapsed().as_secs_f64();
                                match res {
                                    Ok(v) => (Some(v), secs),
                                    Err(err) => {
                                        log::warn!("{scen_name} rep {r}: {} failed: {err}", est.label);
                                        (None, secs)
                                    }
                                }
                            })
                            .collect();
                        (draw.targets, outcomes)
                    }
                    Err(err) => {
                        log::warn!("{scen_name} rep {r}: generation failed: {err}");
                        (BTreeMap::new(), vec![(None, 0.0); estimators.len()])
                    }
                }
            })
            .collect();

        for (e, est) in estimators.iter().enumerate() {
            let runtime: f64 = per_rep.iter().map(|(_, o)| o[e].1).sum();
            for target in scenario.targets() {
                let mut errors = Vec::new();
                let mut truths = Vec::new();
                for (r, (truth_map, outcomes)) in per_rep.iter().enumerate() {
                    let (Some(values), Some(&truth)) = (&outcomes[e].0, truth_map.get(target)) else { continue };
                    let Some(&value) = values.get(target) else { continue };
                    if !value.is_finite() {
                        continue;
                    }
                    errors.push(value - truth);
                    truths.push(truth);
                    raw_estimates.push(RawEstimate {
                        scenario: scen_name.clone(),
                        estimator: est.label.clone(),
                        rep: r,
                        target: target.to_string(),
                        estimate: value,
                        truth,
                    });
                }
                let n = errors.len();
                let failures = reps - n;
                rows.push(BenchmarkRow {
                    scenario: scen_name.clone(),
                    estimator: est.label.clone(),
                    target: target.to_string(),
                    truth: crate::numerics::mean(&truths),
                    bias: crate::numerics::mean(&errors),
                    sd: crate::numerics::std_dev(&errors),
                    mse: errors.iter().map(|e| e * e).sum::<f64>() / n as f64,
                    n_reps: n,
                    failures,
                    flagged: failures as f64 > FAILURE_FLAG_RATE * reps as f64,
                    runtime_secs: runtime,
                });
            }
        }
    }
    Ok(BenchmarkResult { rows, raw_estimates, reps, seed })
}

impl BenchmarkResult {
    pub fn row(&self, scenario: &str, estimator: &str, target: &str) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.scenario == scenario && r.estimator == estimator && r.target == target)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Csv { path: "<benchmark>".into(), message: e.to_string() })?;
        }
        w.flush().map_err(|e| Error::io(Path::new("<benchmark>"), e))
    }

    pub fn write_raw_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.raw_estimates {
            w.serialize(row).map_err(|e| Error::Csv { path: "<benchmark>".into(), message: e.to_string() })?;
        }
        w.flush().map_err(|e| Error::io(Path::new("<benchmark>"), e))
    }

    /// Fixed-width table: setting, method, target, bias, SD, MSE.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<24}{:<14}{:<16}{:>9}{:>9}{:>10}{:>8}\n",
            "Setting", "Method", "Target", "Bias", "SD", "MSE", "Fail"
        );
        let mut last = "";
        for r in &self.rows {
            let setting = if r.scenario == last { "" } else { r.scenario.as_str() };
            last = &r.scenario;
            s.push_str(&format!(
                "{:<24}{:<14}{:<16}{:>9.3}{:>9.3}{:>10.4}{:>7}{}\n",
                setting,
                r.estimator,
                r.target,
                r.bias,
                r.sd,
                r.mse,
                r.failures,
                if r.flagged { "!" } else { " " }
            ));
        }
        s
    }
}
