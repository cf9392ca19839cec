//! Nonparametric bootstrap over the replicate axis.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;

use super::{EffectEstimate, EstimatorConfig};
use crate::bias::Interval;
use crate::error::{Error, Result};
use crate::numerics::quantile;
use crate::panel::PanelData;
use crate::rng::{derive_seed, rng_from};

/// Largest tolerated share of failed resamples.
pub const MAX_FAILURE_RATE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    /// Percentile 95% intervals per named summary.
    pub intervals: BTreeMap<String, Interval>,
    pub reps: usize,
    pub failed: usize,
}

/// Resamples replicates with replacement, reruns `estimator`, and returns percentile intervals.
/// Summaries are taken on the grids of `reference` so curve bands line up.
pub fn bootstrap_infer<F>(
    panel: &PanelData,
    config: &EstimatorConfig,
    reference: &EffectEstimate,
    estimator: &F,
    reps: usize,
    seed: u64,
) -> Result<BootstrapResult>
where
    F: Fn(&PanelData, &EstimatorConfig) -> Result<EffectEstimate> + Sync,
{
    if reps == 0 {
        return Err(Error::InvalidArgument("bootstrap needs at least one resample".into()));
    }
    let r = panel.n_replicates();
    let draws: Vec<Option<BTreeMap<String, f64>>> = (0..reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_from(derive_seed(seed, 0xB007, b as u64));
            let cols: Vec<usize> = (0..r).map(|_| rng.gen_range(0..r)).collect();
            let resampled = panel.select_replicates(&cols);
            let mut cfg = config.clone();
            cfg.bootstrap_reps = 0;
            cfg.seed = derive_seed(seed, 0xB008, b as u64);
            match estimator(&resampled, &cfg) {
                Ok(est) => Some(est.summaries(Some(reference))),
                Err(e) => {
                    log::debug!("bootstrap resample {b} failed: {e}");
                    None
                }
            }
        })
        .collect();
    let failed = draws.iter().filter(|d| d.is_none()).count();
    if failed as f64 > MAX_FAILURE_RATE * reps as f64 {
        return Err(Error::BootstrapFailure { failed, total: reps });
    }
    let ok: Vec<&BTreeMap<String, f64>> = draws.iter().flatten().collect();
    let mut intervals = BTreeMap::new();
    if let Some(first) = ok.first() {
        for key in first.keys() {
            let values: Vec<f64> = ok.iter().filter_map(|m| m.get(key).copied()).collect();
            intervals.insert(key.clone(), Interval { lo: quantile(&values, 0.025), hi: quantile(&values, 0.975) });
        }
    }
    Ok(BootstrapResult { intervals, reps, failed })
}
