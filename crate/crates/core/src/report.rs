//! Full estimation run on one panel: classification, diagnostics, the
//! requested estimators, bootstrap inference and a serializable report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{
    ampos_nostayers, ampos_reg, auto_delta_grid, dynamic_effects, long_run_reg, twfe_reference,
    wampos_ps, wampos_ps_nostayers, wampos_reg, BandwidthRule, BaselineMode, CefConfig,
    DynamicConfig, Estimate, LongRunControls, Method, Target, TrimRule,
};
use crate::inference::{bootstrap_many, BootstrapSpec};
use crate::panel::{
    check_monotone_baseline, classify, overlap_report, BaselineClass, MoverStatus, OverlapReport,
    Panel, TransitionCounts,
};
use crate::propensity::{fit_pscore, PscoreModel, DEFAULT_CLIP};

pub const SOFTWARE: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Group of targets that one estimator call produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Request {
    /// Average slope of movers (per-transition values are its components).
    Delta1,
    /// Weighted average slopes of increasers, decreasers and all movers.
    Delta2,
    /// Long-run slopes at horizon `ell`.
    LongRun,
    /// Reduced-form effects by horizon and their cost-benefit ratio.
    Dynamic,
    Twfe,
}

impl Request {
    /// Parses a comma-separated list of target names; `all` expands to every
    /// request except the long-run one, which needs a horizon.
    pub fn parse_list(s: &str) -> Result<Vec<Request>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part == "all" {
                out.extend([
                    Request::Delta1,
                    Request::Delta2,
                    Request::Dynamic,
                    Request::Twfe,
                ]);
            } else {
                out.push(part.parse()?);
            }
        }
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(Error::InvalidArgument("no target requested".into()));
        }
        Ok(out)
    }

    fn primary(self) -> Target {
        match self {
            Request::Delta1 => Target::Delta1,
            Request::Delta2 => Target::Delta2,
            Request::LongRun => Target::Delta1LongRun,
            Request::Dynamic => Target::DeltaPlusL,
            Request::Twfe => Target::Twfe,
        }
    }
}

impl FromStr for Request {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "delta1" | "delta1_t" => Request::Delta1,
            "delta2" | "delta2i" | "delta2d" => Request::Delta2,
            "delta1_t_to_t+l" | "long_run" => Request::LongRun,
            "delta_plus" | "delta_plus_l" | "delta_plus_d_l" | "dynamic" => Request::Dynamic,
            "twfe" => Request::Twfe,
            other => return Err(Error::InvalidArgument(format!("unknown target {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    #[default]
    Regression,
    Pscore,
    Both,
}

impl MethodChoice {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodChoice::Regression => vec![Method::Regression],
            MethodChoice::Pscore => vec![Method::Pscore],
            MethodChoice::Both => vec![Method::Regression, Method::Pscore],
        }
    }
}

impl FromStr for MethodChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reg" | "regression" => Ok(MethodChoice::Regression),
            "ps" | "pscore" => Ok(MethodChoice::Pscore),
            "both" => Ok(MethodChoice::Both),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

/// Quasi-stayer thresholds.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum DeltaGrid {
    /// Exact stayers are the controls.
    #[default]
    Off,
    /// Quantiles of the nonzero `|dD|` (see [`auto_delta_grid`]).
    Auto,
    Values(Vec<f64>),
}

impl FromStr for DeltaGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "off" | "none" => Ok(DeltaGrid::Off),
            "auto" => Ok(DeltaGrid::Auto),
            list => list
                .split(',')
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|_| {
                        Error::InvalidArgument(format!("delta grid value {v:?} is not a number"))
                    })
                })
                .collect::<Result<Vec<f64>>>()
                .map(DeltaGrid::Values),
        }
    }
}

/// Everything that determines an estimation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateConfig {
    pub requests: Vec<Request>,
    pub method: MethodChoice,
    pub tol: f64,
    pub cef: CefConfig,
    pub trim: TrimRule,
    pub pscore_degree: usize,
    pub clip: Option<f64>,
    pub delta_grid: DeltaGrid,
    pub ell: Option<usize>,
    pub lmax: Option<usize>,
    pub long_run_controls: LongRunControls,
    pub baseline: BaselineMode,
    pub bootstrap: Option<BootstrapSpec>,
    /// Re-select bandwidths, trims and thresholds inside every replicate.
    pub reselect: bool,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            requests: vec![Request::Delta1],
            method: MethodChoice::Regression,
            tol: 0.0,
            cef: CefConfig::default(),
            trim: TrimRule::default(),
            pscore_degree: 2,
            clip: Some(DEFAULT_CLIP),
            delta_grid: DeltaGrid::Off,
            ell: None,
            lmax: None,
            long_run_controls: LongRunControls::default(),
            baseline: BaselineMode::default(),
            bootstrap: None,
            reselect: false,
        }
    }
}

impl EstimateConfig {
    /// Rejects inconsistent combinations before anything is computed.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        let has = |r: Request| self.requests.contains(&r);
        if self.requests.is_empty() {
            return bad("no target requested");
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return bad("tolerance must be finite and >= 0");
        }
        if has(Request::LongRun) != self.ell.is_some() {
            return bad("--ell is required by, and only used by, the long-run target");
        }
        if self.lmax.is_some() && !has(Request::Dynamic) {
            return bad("--lmax is only used by the dynamic targets");
        }
        if self.delta_grid != DeltaGrid::Off {
            if !(has(Request::Delta1) || has(Request::Delta2)) {
                return bad("a delta grid is only used by delta1 and delta2");
            }
            if has(Request::Delta2) && self.method == MethodChoice::Regression {
                return bad("the quasi-stayer delta2 estimator needs --method ps or both");
            }
            if let DeltaGrid::Values(v) = &self.delta_grid {
                if v.is_empty()
                    || v.iter().any(|d| !(*d > 0.0 && d.is_finite()))
                    || v.windows(2).any(|p| p[1] >= p[0])
                {
                    return bad("delta grid must be positive and strictly decreasing");
                }
            }
        }
        let has_ps_target = has(Request::Delta2) || has(Request::Dynamic);
        if self.method != MethodChoice::Regression && !has_ps_target {
            return bad("the pscore method applies to delta2 and the dynamic targets only");
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return bad("clip must be positive");
            }
        }
        if let BandwidthRule::Fixed(h) = self.cef.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return bad("bandwidth must be positive");
            }
        }
        if !(self.cef.min_ess >= 0.0) || self.cef.degree > 1 {
            return bad("min-ess must be >= 0 and the local degree 0 or 1");
        }
        if let Some(b) = &self.bootstrap {
            b.validate()?;
        }
        Ok(())
    }

    fn jobs(&self) -> Vec<Job> {
        let mut jobs = Vec::new();
        for &r in &self.requests {
            match r {
                Request::Delta1 => jobs.push(Job::Ampos),
                Request::Delta2 => {
                    for m in self.method.methods() {
                        if m == Method::Regression && self.delta_grid != DeltaGrid::Off {
                            continue;
                        }
                        jobs.push(Job::Wampos(m));
                    }
                }
                Request::LongRun => jobs.push(Job::LongRun),
                Request::Dynamic => {
                    jobs.extend(self.method.methods().into_iter().map(Job::Dynamic))
                }
                Request::Twfe => jobs.push(Job::Twfe),
            }
        }
        jobs
    }

    pub fn echo(&self) -> ConfigEcho {
        ConfigEcho {
            targets: self.requests.clone(),
            method: self.method,
            tol: self.tol,
            bandwidth: self.cef.bandwidth.describe(),
            kernel: self.cef.kernel.name().to_string(),
            degree: self.cef.degree,
            min_ess: self.cef.min_ess,
            trim: self.trim.describe(),
            pscore_degree: self.pscore_degree,
            clip: self.clip,
            delta_grid: match &self.delta_grid {
                DeltaGrid::Off => "off".into(),
                DeltaGrid::Auto => "auto".into(),
                DeltaGrid::Values(v) => v
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            },
            ell: self.ell,
            lmax: self.lmax,
            long_run_controls: match self.long_run_controls {
                LongRunControls::WindowStayers => "window_stayers".into(),
                LongRunControls::NotYetMoved => "not_yet_moved".into(),
            },
            baseline: self.baseline,
            bootstrap: self.bootstrap,
            reselect: self.reselect,
        }
    }
}

/// Serialized copy of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub targets: Vec<Request>,
    pub method: MethodChoice,
    pub tol: f64,
    pub bandwidth: String,
    pub kernel: String,
    pub degree: u8,
    pub min_ess: f64,
    pub trim: String,
    pub pscore_degree: usize,
    pub clip: Option<f64>,
    pub delta_grid: String,
    pub ell: Option<usize>,
    pub lmax: Option<usize>,
    pub long_run_controls: String,
    pub baseline: BaselineMode,
    pub bootstrap: Option<BootstrapSpec>,
    pub reselect: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Job {
    Ampos,
    Wampos(Method),
    LongRun,
    Dynamic(Method),
    Twfe,
}

/// Identity of one reported number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    target: Target,
    method: Method,
    ell: Option<usize>,
}

impl Key {
    fn of(e: &Estimate) -> Self {
        Key {
            target: e.target,
            method: e.method,
            ell: e.ell,
        }
    }
}

struct Item {
    key: Key,
    result: Result<Estimate>,
}

/// Tuning used by one job on one panel.
#[derive(Debug, Clone)]
struct Settings {
    cef: CefConfig,
    trim: TrimRule,
    grid: Option<Vec<f64>>,
}

#[derive(Default)]
struct JobOutput {
    items: Vec<Item>,
    dynamic: Option<DynamicSummary>,
}

fn fail(job_key: Key, e: Error) -> Vec<Item> {
    vec![Item {
        key: job_key,
        result: Err(e),
    }]
}

fn run_job(
    job: Job,
    panel: &Panel,
    status: &MoverStatus,
    cfg: &EstimateConfig,
    s: &Settings,
) -> JobOutput {
    let key = |target, method| Key {
        target,
        method,
        ell: None,
    };
    let grid = || -> Result<Option<Vec<f64>>> {
        match (&s.grid, &cfg.delta_grid) {
            (Some(g), _) => Ok(Some(g.clone())),
            (None, DeltaGrid::Off) => Ok(None),
            (None, DeltaGrid::Auto) => auto_delta_grid(status).map(Some),
            (None, DeltaGrid::Values(v)) => Ok(Some(v.clone())),
        }
    };
    let mut out = JobOutput::default();
    match job {
        Job::Ampos => {
            let k = key(Target::Delta1, Method::Regression);
            let result = grid().and_then(|g| match g {
                Some(g) => ampos_nostayers(panel, status, &s.cef, &s.trim, &g),
                None => ampos_reg(panel, status, &s.cef, &s.trim),
            });
            out.items.push(Item { key: k, result });
        }
        Job::Wampos(m) => {
            let run = grid().and_then(|g| match (m, g) {
                (Method::Regression, _) => wampos_reg(panel, status, &s.cef),
                (Method::Pscore, Some(g)) => {
                    wampos_ps_nostayers(panel, status, cfg.pscore_degree, cfg.clip, &g)
                }
                (Method::Pscore, None) => wampos_ps(panel, status, cfg.pscore_degree, cfg.clip),
            });
            match run {
                Ok(w) => {
                    for (target, r) in w.results() {
                        out.items.push(Item {
                            key: key(target, m),
                            result: r.clone(),
                        });
                    }
                }
                Err(e) => out.items = fail(key(Target::Delta2, m), e),
            }
        }
        Job::LongRun => {
            let ell = cfg.ell.expect("validated");
            out.items.push(Item {
                key: Key {
                    target: Target::Delta1LongRun,
                    method: Method::Regression,
                    ell: Some(ell),
                },
                result: long_run_reg(panel, status, ell, &s.cef, &s.trim, cfg.long_run_controls),
            });
        }
        Job::Dynamic(m) => {
            let dcfg = DynamicConfig {
                lmax: cfg.lmax,
                method: m,
                cef: s.cef.clone(),
                pscore_degree: cfg.pscore_degree,
                clip: cfg.clip,
                baseline: cfg.baseline,
            };
            match dynamic_effects(panel, status, &dcfg) {
                Ok(d) => {
                    for e in d.effects.iter().chain(&d.doses) {
                        out.items.push(Item {
                            key: Key::of(e),
                            result: Ok(e.clone()),
                        });
                    }
                    out.items.push(Item {
                        key: key(Target::DeltaPlus, m),
                        result: d.delta_plus.clone(),
                    });
                    out.dynamic = Some(DynamicSummary {
                        method: m,
                        weights: d
                            .effects
                            .iter()
                            .zip(&d.weights)
                            .map(|(e, &w)| HorizonWeight {
                                ell: e.ell.unwrap_or(0),
                                weight: w,
                            })
                            .collect(),
                        n_excluded_mixed: d.n_excluded_mixed,
                        n_excluded_below: d.n_excluded_below,
                        notes: d.notes.clone(),
                        below_baseline: d.below.as_ref().map(|b| {
                            let mut v: Vec<Estimate> =
                                b.effects.iter().chain(&b.doses).cloned().collect();
                            v.extend(b.delta_plus.clone().ok());
                            v
                        }),
                    });
                }
                Err(e) => out.items = fail(key(Target::DeltaPlus, m), e),
            }
        }
        Job::Twfe => out.items.push(Item {
            key: key(Target::Twfe, Method::Regression),
            result: twfe_reference(panel),
        }),
    }
    out
}

/// Tuning of the original run reused in every bootstrap replicate.
fn freeze(base: &Settings, items: &[Item]) -> Settings {
    let ok: Vec<&Estimate> = items
        .iter()
        .filter_map(|i| i.result.as_ref().ok())
        .collect();
    let cef = match &base.cef.bandwidth {
        BandwidthRule::Fixed(_) => base.cef.clone(),
        _ => CefConfig {
            bandwidth: BandwidthRule::Table(
                ok.iter()
                    .flat_map(|e| e.tuning.bandwidths.clone())
                    .collect(),
            ),
            ..base.cef.clone()
        },
    };
    let trim = match &base.trim {
        TrimRule::SdFraction(_) | TrimRule::Table(_) => {
            TrimRule::Table(ok.iter().flat_map(|e| e.tuning.trims.clone()).collect())
        }
        other => other.clone(),
    };
    let grid = ok
        .iter()
        .find_map(|e| e.tuning.delta)
        .map(|d| vec![d])
        .or_else(|| base.grid.clone());
    Settings { cef, trim, grid }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HorizonWeight {
    pub ell: usize,
    pub weight: f64,
}

/// Extra output of the dynamic estimator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicSummary {
    pub method: Method,
    /// Normalized horizon weights.
    pub weights: Vec<HorizonWeight>,
    pub n_excluded_mixed: usize,
    pub n_excluded_below: usize,
    pub notes: Vec<String>,
    /// Below-baseline subsample in sign-split mode, signs flipped. No
    /// bootstrap is run for these.
    pub below_baseline: Option<Vec<Estimate>>,
}

/// Regression minus propensity-score value of one target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Difference {
    pub target: Target,
    pub ell: Option<usize>,
    pub regression: f64,
    pub pscore: f64,
    pub difference: f64,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub target: Target,
    pub method: Method,
    pub ell: Option<usize>,
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanelSummary {
    pub n_units: usize,
    pub n_periods: usize,
    pub periods: Vec<f64>,
    pub weighted: bool,
    pub total_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineSummary {
    pub always_above: usize,
    pub always_below: usize,
    pub mixed: usize,
}

/// Panel-level diagnostics that do not depend on the estimators.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub panel: PanelSummary,
    pub transitions: Vec<TransitionCounts>,
    pub baseline: BaselineSummary,
    pub overlap: Option<OverlapReport>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Software {
    pub name: &'static str,
    pub version: &'static str,
}

impl Default for Software {
    fn default() -> Self {
        Software {
            name: SOFTWARE,
            version: VERSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub software: Software,
    pub config: ConfigEcho,
    pub diagnostics: Diagnostics,
    pub estimates: Vec<Estimate>,
    pub differences: Vec<Difference>,
    pub dynamic: Vec<DynamicSummary>,
    /// Targets that could not be estimated.
    pub failures: Vec<Failure>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn get(&self, target: Target, method: Method, ell: Option<usize>) -> Option<&Estimate> {
        self.estimates
            .iter()
            .find(|e| e.target == target && e.method == method && e.ell == ell)
    }

    /// One line per estimate: label, method, value, interval and counts.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from(
            "target\tell\tmethod\tvalue\tse\tci_low\tci_high\tn_movers_used\tn_movers_dropped\n",
        );
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for e in &self.estimates {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                e.target,
                e.ell.map_or(String::new(), |l| l.to_string()),
                e.method.name(),
                e.value,
                opt(e.se),
                opt(e.ci_low),
                opt(e.ci_high),
                e.n_movers_used,
                e.n_movers_dropped
            );
        }
        s
    }
}

/// Stayer-versus-mover logits per transition for the overlap report.
fn stayer_pscores(
    panel: &Panel,
    status: &MoverStatus,
    degree: usize,
    warnings: &mut Vec<String>,
) -> BTreeMap<usize, PscoreModel> {
    let mut out = BTreeMap::new();
    let d: Vec<Vec<f64>> = (1..panel.n_periods())
        .map(|t| (0..panel.n_units()).map(|i| panel.d(i, t - 1)).collect())
        .collect();
    for t in 1..panel.n_periods() {
        let labels: Vec<usize> = (0..panel.n_units())
            .map(|i| usize::from(status.is_mover(i, t)))
            .collect();
        if labels.iter().all(|&l| l == labels[0]) {
            continue;
        }
        match fit_pscore(
            &d[t - 1],
            &labels,
            panel.weights(),
            &["stayer", "mover"],
            degree,
        ) {
            Ok(m) => {
                out.insert(t, m);
            }
            Err(e) => warnings.push(format!("t={}: stayer propensity: {e}", t + 1)),
        }
    }
    out
}

/// Counts, baseline classes and overlap diagnostics.
pub fn diagnose(panel: &Panel, tol: f64, pscore_degree: Option<usize>) -> Result<Diagnostics> {
    let status = classify(panel, tol)?;
    let classes = check_monotone_baseline(panel, tol);
    let count = |c: BaselineClass| classes.iter().filter(|&&x| x == c).count();
    let mut warnings = Vec::new();
    let pscores = pscore_degree.map(|deg| stayer_pscores(panel, &status, deg, &mut warnings));
    let overlap = match overlap_report(panel, &status, pscores.as_ref()) {
        Ok(r) => {
            warnings.extend(r.warnings.iter().cloned());
            Some(r)
        }
        Err(e) => {
            warnings.push(format!("overlap report unavailable: {e}"));
            None
        }
    };
    Ok(Diagnostics {
        panel: PanelSummary {
            n_units: panel.n_units(),
            n_periods: panel.n_periods(),
            periods: panel.periods().to_vec(),
            weighted: panel.has_weights(),
            total_weight: panel.total_weight(),
        },
        transitions: status.all_counts(),
        baseline: BaselineSummary {
            always_above: count(BaselineClass::AlwaysAbove),
            always_below: count(BaselineClass::AlwaysBelow),
            mixed: count(BaselineClass::Mixed),
        },
        overlap,
        warnings,
    })
}

const DIFFERENCE_TARGETS: [Target; 6] = [
    Target::Delta2i,
    Target::Delta2d,
    Target::Delta2,
    Target::DeltaPlusL,
    Target::DeltaPlusDoseL,
    Target::DeltaPlus,
];

fn differences(values: &BTreeMap<Key, f64>) -> Vec<(Target, Option<usize>, f64, f64)> {
    let mut out = Vec::new();
    for (k, &reg) in values {
        if k.method != Method::Regression || !DIFFERENCE_TARGETS.contains(&k.target) {
            continue;
        }
        let ps_key = Key {
            method: Method::Pscore,
            ..*k
        };
        if let Some(&ps) = values.get(&ps_key) {
            out.push((k.target, k.ell, reg, ps));
        }
    }
    out
}

/// Runs every requested estimator on `panel`.
///
/// Fails with the first error of a request none of whose methods produced
/// its main target. Failures of secondary targets (for instance the
/// decreasers' slope when nobody decreases) are listed in the report.
pub fn run_estimate(panel: &Panel, cfg: &EstimateConfig) -> Result<Report> {
    cfg.validate()?;
    let status = classify(panel, cfg.tol)?;
    let wants_ps = cfg.method != MethodChoice::Regression;
    let diagnostics = diagnose(panel, cfg.tol, wants_ps.then_some(cfg.pscore_degree))?;
    let base = Settings {
        cef: cfg.cef.clone(),
        trim: cfg.trim.clone(),
        grid: None,
    };
    let jobs = cfg.jobs();
    let outputs: Vec<JobOutput> = jobs
        .iter()
        .map(|&job| run_job(job, panel, &status, cfg, &base))
        .collect();

    for &r in &cfg.requests {
        let primary = r.primary();
        let relevant: Vec<&Item> = outputs
            .iter()
            .flat_map(|o| &o.items)
            .filter(|i| match r {
                Request::Dynamic => matches!(i.key.target, Target::DeltaPlusL | Target::DeltaPlus),
                Request::Delta2 => {
                    matches!(
                        i.key.target,
                        Target::Delta2 | Target::Delta2i | Target::Delta2d
                    )
                }
                _ => i.key.target == primary,
            })
            .collect();
        let succeeded = relevant
            .iter()
            .any(|i| i.result.is_ok() && (r != Request::Delta2 || i.key.target == Target::Delta2));
        if !succeeded {
            let first_err = relevant
                .iter()
                .find(|i| r != Request::Delta2 || i.key.target == Target::Delta2)
                .or(relevant.first())
                .and_then(|i| i.result.as_ref().err().cloned())
                .unwrap_or(Error::NoMovers);
            return Err(first_err);
        }
    }

    let mut estimates = Vec::new();
    let mut failures = Vec::new();
    let mut warnings = Vec::new();
    let mut dynamic = Vec::new();
    for o in &outputs {
        for item in &o.items {
            match &item.result {
                Ok(e) => estimates.push(e.clone()),
                Err(e) => failures.push(Failure {
                    target: item.key.target,
                    method: item.key.method,
                    ell: item.key.ell,
                    code: e.code(),
                    message: e.to_string(),
                }),
            }
        }
        dynamic.extend(o.dynamic.clone());
    }
    let values: BTreeMap<Key, f64> = estimates.iter().map(|e| (Key::of(e), e.value)).collect();
    let mut diffs: Vec<Difference> = differences(&values)
        .into_iter()
        .map(|(target, ell, regression, pscore)| Difference {
            target,
            ell,
            regression,
            pscore,
            difference: regression - pscore,
            se: None,
            ci_low: None,
            ci_high: None,
        })
        .collect();

    if let Some(spec) = &cfg.bootstrap {
        let frozen: Vec<Settings> = outputs
            .iter()
            .map(|o| {
                if cfg.reselect {
                    base.clone()
                } else {
                    freeze(&base, &o.items)
                }
            })
            .collect();
        let est_keys: Vec<Key> = estimates.iter().map(Key::of).collect();
        let diff_keys: Vec<(Target, Option<usize>)> =
            diffs.iter().map(|d| (d.target, d.ell)).collect();
        let statistic = |p: &Panel| -> Result<Vec<Option<f64>>> {
            let st = classify(p, cfg.tol)?;
            let mut vals = BTreeMap::new();
            for (job, s) in jobs.iter().zip(&frozen) {
                for item in run_job(*job, p, &st, cfg, s).items {
                    if let Ok(e) = item.result {
                        vals.insert(item.key, e.value);
                    }
                }
            }
            let mut out: Vec<Option<f64>> = est_keys.iter().map(|k| vals.get(k).copied()).collect();
            for &(target, ell) in &diff_keys {
                let get = |method| {
                    vals.get(&Key {
                        target,
                        method,
                        ell,
                    })
                    .copied()
                };
                out.push(
                    get(Method::Regression)
                        .zip(get(Method::Pscore))
                        .map(|(a, b)| a - b),
                );
            }
            Ok(out)
        };
        let k = est_keys.len() + diff_keys.len();
        let results = bootstrap_many(statistic, panel, spec, k)?;
        for (j, res) in results.into_iter().enumerate() {
            match res {
                Ok(b) if j < est_keys.len() => {
                    let e = &mut estimates[j];
                    let heuristic = e.tuning.delta.is_some();
                    b.attach(e, spec, cfg.reselect, heuristic);
                    if e.bootstrap.as_ref().is_some_and(|i| i.excludes_estimate) {
                        warnings.push(format!(
                            "{} ({}): percentile interval excludes the point estimate",
                            e.label(),
                            e.method.name()
                        ));
                    }
                }
                Ok(b) => {
                    let d = &mut diffs[j - est_keys.len()];
                    d.se = Some(b.se);
                    d.ci_low = Some(b.ci_low);
                    d.ci_high = Some(b.ci_high);
                }
                Err(e) => {
                    let label = if j < est_keys.len() {
                        format!("{} ({})", estimates[j].label(), estimates[j].method.name())
                    } else {
                        format!("difference {}", diffs[j - est_keys.len()].target)
                    };
                    warnings.push(format!("bootstrap for {label}: {e}"));
                }
            }
        }
    }

    Ok(Report {
        software: Software::default(),
        config: cfg.echo(),
        diagnostics,
        estimates,
        differences: diffs,
        dynamic,
        failures,
        warnings,
    })
}
