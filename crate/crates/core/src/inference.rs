//! Unit-level bootstrap: units are resampled with replacement and carry all
//! of their periods, so every replicate panel is balanced.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{BootstrapInfo, Estimate};
use crate::panel::Panel;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapSpec {
    pub replications: usize,
    pub seed: u64,
    pub ci_level: f64,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        Self {
            replications: 200,
            seed: 0,
            ci_level: 0.95,
        }
    }
}

impl BootstrapSpec {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::InvalidArgument(format!(
                "bootstrap needs at least 2 replications, got {}",
                self.replications
            )));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "ci level must lie in (0, 1), got {}",
                self.ci_level
            )));
        }
        Ok(())
    }
}

/// Summary of the replicate distribution of one statistic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_failed: usize,
    pub replications: usize,
    /// Successful replicate values, sorted.
    #[serde(skip)]
    pub replicates: Vec<f64>,
}

impl BootstrapResult {
    /// Copies the interval into `est` and records how it was produced.
    pub fn attach(
        &self,
        est: &mut Estimate,
        spec: &BootstrapSpec,
        reselected: bool,
        heuristic: bool,
    ) {
        est.se = Some(self.se);
        est.ci_low = Some(self.ci_low);
        est.ci_high = Some(self.ci_high);
        est.bootstrap = Some(BootstrapInfo {
            replications: self.replications,
            n_failed: self.n_failed,
            seed: spec.seed,
            ci_level: spec.ci_level,
            reselected,
            excludes_estimate: est.value < self.ci_low || est.value > self.ci_high,
            heuristic,
        });
    }
}

/// Unit indices drawn for replicate `r`; depends only on `(seed, r)`.
pub fn replicate_indices(n: usize, seed: u64, r: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(stats::derive_seed(seed, r as u64));
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Bootstraps a scalar statistic.
pub fn bootstrap<F>(statistic: F, panel: &Panel, spec: &BootstrapSpec) -> Result<BootstrapResult>
where
    F: Fn(&Panel) -> Result<f64> + Sync,
{
    let mut out = bootstrap_many(|p| statistic(p).map(|v| vec![Some(v)]), panel, spec, 1)?;
    out.pop().expect("one statistic")
}

/// Bootstraps `k` statistics computed together on each replicate. A
/// replicate may fail as a whole (`Err`) or for single statistics (`None`).
/// Each statistic is summarized separately and fails with
/// `TooManyFailures` when more than half of its replicates failed.
pub fn bootstrap_many<F>(
    statistic: F,
    panel: &Panel,
    spec: &BootstrapSpec,
    k: usize,
) -> Result<Vec<Result<BootstrapResult>>>
where
    F: Fn(&Panel) -> Result<Vec<Option<f64>>> + Sync,
{
    spec.validate()?;
    let n = panel.n_units();
    let draws: Vec<Option<Vec<Option<f64>>>> = (0..spec.replications)
        .into_par_iter()
        .map(|r| {
            let sample = panel.resample(&replicate_indices(n, spec.seed, r));
            statistic(&sample).ok()
        })
        .collect();
    Ok((0..k)
        .map(|j| {
            let values: Vec<f64> = draws
                .iter()
                .filter_map(|d| d.as_ref().and_then(|v| v.get(j).copied().flatten()))
                .filter(|v| v.is_finite())
                .collect();
            summarize(values, spec)
        })
        .collect())
}

fn summarize(mut values: Vec<f64>, spec: &BootstrapSpec) -> Result<BootstrapResult> {
    let b = spec.replications;
    let n_failed = b - values.len();
    if 2 * n_failed > b || values.len() < 2 {
        return Err(Error::TooManyFailures {
            failed: n_failed,
            reps: b,
        });
    }
    values.sort_by(f64::total_cmp);
    let alpha = 1.0 - spec.ci_level;
    let se = stats::sample_sd(&values).expect("two or more values");
    Ok(BootstrapResult {
        se,
        ci_low: stats::quantile_sorted(&values, alpha / 2.0).expect("nonempty"),
        ci_high: stats::quantile_sorted(&values, 1.0 - alpha / 2.0).expect("nonempty"),
        n_failed,
        replications: b,
        replicates: values,
    })
}
