//! Repeated simulation and estimation against oracle truths.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::estimators::{Method, Target};
use crate::report::{run_estimate, ConfigEcho, EstimateConfig, Software};
use crate::simulate::{generate, oracle, DgpSpec};
use crate::stats;

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub dgp: DgpSpec,
    pub replications: usize,
    /// Master seed; the data and bootstrap seeds of replication `r` derive
    /// from it. The seed inside `dgp` is ignored.
    pub seed: u64,
    pub estimate: EstimateConfig,
}

/// One estimate from one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Draw {
    pub target: Target,
    pub method: Method,
    pub ell: Option<usize>,
    pub estimate: f64,
    pub truth: Option<f64>,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

/// Outcome of one replication: its draws, or the error code of the run.
#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub index: usize,
    pub draws: std::result::Result<Vec<Draw>, &'static str>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McRow {
    pub target: Target,
    pub method: Method,
    pub ell: Option<usize>,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean_estimate: f64,
    pub sd_estimate: Option<f64>,
    pub mean_truth: Option<f64>,
    /// Mean of estimate minus truth.
    pub bias: Option<f64>,
    pub rmse: Option<f64>,
    /// Monte Carlo standard error of the bias; empty with fewer than two
    /// replications.
    pub mcse: Option<f64>,
    /// Share of bootstrap intervals that contain the truth.
    pub coverage: Option<f64>,
    pub mean_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummary {
    pub software: Software,
    pub dgp: DgpSpec,
    pub replications: usize,
    pub seed: u64,
    pub config: ConfigEcho,
    pub rows: Vec<McRow>,
    /// Replications whose estimation run failed, by error code.
    pub failures: BTreeMap<String, usize>,
}

impl McSummary {
    pub fn row(&self, target: Target, method: Method, ell: Option<usize>) -> Option<&McRow> {
        self.rows
            .iter()
            .find(|r| r.target == target && r.method == method && r.ell == ell)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from(
            "target\tell\tmethod\tn_ok\tn_failed\tmean_estimate\tmean_truth\tbias\trmse\tmcse\tcoverage\tmean_se\n",
        );
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.target,
                r.ell.map_or(String::new(), |l| l.to_string()),
                r.method.name(),
                r.n_ok,
                r.n_failed,
                r.mean_estimate,
                opt(r.mean_truth),
                opt(r.bias),
                opt(r.rmse),
                opt(r.mcse),
                opt(r.coverage),
                opt(r.mean_se)
            );
        }
        s
    }
}

/// Data seed and bootstrap seed of replication `r`.
pub fn replication_seeds(master: u64, r: usize) -> (u64, u64) {
    let s = stats::derive_seed(master, r as u64);
    (s, stats::derive_seed(s, 1))
}

/// Simulates and estimates replication `r`.
pub fn run_replication(cfg: &McConfig, r: usize) -> Result<Replication> {
    let (data_seed, boot_seed) = replication_seeds(cfg.seed, r);
    let dgp = DgpSpec {
        seed: data_seed,
        ..cfg.dgp.clone()
    };
    let (panel, truth) = generate(&dgp)?;
    let mut est_cfg = cfg.estimate.clone();
    if let Some(b) = &mut est_cfg.bootstrap {
        b.seed = boot_seed;
    }
    let report = match run_estimate(&panel, &est_cfg) {
        Ok(rep) => rep,
        Err(e) => {
            return Ok(Replication {
                index: r,
                draws: Err(e.code()),
            })
        }
    };
    let draws = report
        .estimates
        .iter()
        .map(|e| {
            let horizon = if e.target == Target::DeltaPlus {
                cfg.estimate.lmax
            } else {
                e.ell
            };
            Draw {
                target: e.target,
                method: e.method,
                ell: e.ell,
                estimate: e.value,
                truth: oracle(&truth, e.target, horizon).ok(),
                se: e.se,
                ci: e.ci_low.zip(e.ci_high),
            }
        })
        .collect();
    Ok(Replication {
        index: r,
        draws: Ok(draws),
    })
}

/// Summarizes draws per (target, method, horizon).
pub fn summarize(reps: &[Replication], cfg: &McConfig) -> McSummary {
    let mut groups: BTreeMap<(Target, Method, Option<usize>), Vec<&Draw>> = BTreeMap::new();
    let mut failures = BTreeMap::new();
    for rep in reps {
        match &rep.draws {
            Ok(d) => {
                for draw in d {
                    groups
                        .entry((draw.target, draw.method, draw.ell))
                        .or_default()
                        .push(draw);
                }
            }
            Err(code) => *failures.entry(code.to_string()).or_insert(0) += 1,
        }
    }
    let rows = groups
        .into_iter()
        .map(|((target, method, ell), draws)| {
            let n = draws.len();
            let est: Vec<f64> = draws.iter().map(|d| d.estimate).collect();
            let with_truth: Vec<&&Draw> = draws.iter().filter(|d| d.truth.is_some()).collect();
            let errors: Vec<f64> = with_truth
                .iter()
                .map(|d| d.estimate - d.truth.unwrap())
                .collect();
            let truths: Vec<f64> = with_truth.iter().map(|d| d.truth.unwrap()).collect();
            let covered: Vec<bool> = with_truth
                .iter()
                .filter_map(|d| d.ci.map(|(lo, hi)| (lo..=hi).contains(&d.truth.unwrap())))
                .collect();
            let ses: Vec<f64> = draws.iter().filter_map(|d| d.se).collect();
            McRow {
                target,
                method,
                ell,
                n_ok: n,
                n_failed: reps.len() - n,
                mean_estimate: stats::mean(&est).unwrap_or(f64::NAN),
                sd_estimate: stats::sample_sd(&est),
                mean_truth: stats::mean(&truths),
                bias: stats::mean(&errors),
                rmse: stats::mean(&errors.iter().map(|e| e * e).collect::<Vec<_>>()).map(f64::sqrt),
                mcse: stats::sample_sd(&errors).map(|sd| sd / (errors.len() as f64).sqrt()),
                coverage: (!covered.is_empty())
                    .then(|| covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64),
                mean_se: stats::mean(&ses),
            }
        })
        .collect();
    McSummary {
        software: Software::default(),
        dgp: DgpSpec {
            seed: cfg.seed,
            ..cfg.dgp.clone()
        },
        replications: reps.len(),
        seed: cfg.seed,
        config: cfg.estimate.echo(),
        rows,
        failures,
    }
}

/// Runs all replications in parallel. Results depend only on the
/// configuration.
pub fn run_montecarlo(cfg: &McConfig) -> Result<McSummary> {
    cfg.dgp.validate()?;
    cfg.estimate.validate()?;
    if cfg.replications == 0 {
        return Err(crate::Error::InvalidArgument(
            "at least one replication is needed".into(),
        ));
    }
    let reps = (0..cfg.replications)
        .into_par_iter()
        .map(|r| run_replication(cfg, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(&reps, cfg))
}
