//! Target parameters computed from a panel: average and weighted average
//! slopes of movers, their quasi-stayer, long-run and dynamic variants, and
//! the two-way fixed effects coefficient used as a reference.
//!
//! Transition indices are 0-based inside the library (`t` compares periods
//! `t - 1` and `t`). Everything that is serialized uses the 1-based period
//! number of the later period.

mod ampos;
mod dynamic;
mod long_run;
mod twfe;
mod wampos;

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::{MoverStatus, Panel};
use crate::smoothing::{self, BandwidthMethod, CefModel, Kernel, SmootherSpec, DEFAULT_MIN_ESS};
use crate::stats;

pub use ampos::{ampos_nostayers, ampos_reg};
pub use dynamic::{dynamic_effects, BaselineMode, DynamicConfig, DynamicEffects};
pub use long_run::{long_run_reg, LongRunControls};
pub use twfe::twfe_reference;
pub use wampos::{wampos_ps, wampos_ps_nostayers, wampos_reg, Wampos};

/// Minimum number of quasi-stayers per transition for a grid point to be
/// usable.
pub const MIN_QUASI_STAYERS: usize = 10;

/// Default trimming: movers with `|dD|` at most this fraction of the
/// standard deviation of `dD` among movers are dropped from ratio estimators.
pub const DEFAULT_TRIM_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Target {
    #[serde(rename = "delta1")]
    Delta1,
    #[serde(rename = "delta2i")]
    Delta2i,
    #[serde(rename = "delta2d")]
    Delta2d,
    #[serde(rename = "delta2")]
    Delta2,
    #[serde(rename = "delta1_t_to_t+l")]
    Delta1LongRun,
    #[serde(rename = "delta_plus_l")]
    DeltaPlusL,
    #[serde(rename = "delta_plus_d_l")]
    DeltaPlusDoseL,
    #[serde(rename = "delta_plus")]
    DeltaPlus,
    #[serde(rename = "twfe")]
    Twfe,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Delta1 => "delta1",
            Target::Delta2i => "delta2i",
            Target::Delta2d => "delta2d",
            Target::Delta2 => "delta2",
            Target::Delta1LongRun => "delta1_t_to_t+l",
            Target::DeltaPlusL => "delta_plus_l",
            Target::DeltaPlusDoseL => "delta_plus_d_l",
            Target::DeltaPlus => "delta_plus",
            Target::Twfe => "twfe",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Regression,
    Pscore,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Regression => "regression",
            Method::Pscore => "pscore",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increase,
    Decrease,
}

/// Bootstrap output attached to an estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapInfo {
    pub replications: usize,
    pub n_failed: usize,
    pub seed: u64,
    pub ci_level: f64,
    /// Tuning parameters were re-selected in every replicate.
    pub reselected: bool,
    /// Percentile interval that does not contain the point estimate.
    pub excludes_estimate: bool,
    /// The interval comes from a nonparametric-rate estimator whose
    /// bootstrap validity is not established.
    pub heuristic: bool,
}

/// Tuning values actually used, echoed for reproducibility.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Tuning {
    pub tol: f64,
    pub controls: Option<String>,
    pub kernel: Option<Kernel>,
    pub cef_degree: Option<u8>,
    pub bandwidth_rule: Option<String>,
    pub min_ess: Option<f64>,
    /// Bandwidth per control fit, keyed like `t=2`, `t=2;delta=0.05`,
    /// `t=2;l=1` or `f=2;l=0`.
    pub bandwidths: BTreeMap<String, f64>,
    pub trim_rule: Option<String>,
    /// Trimming threshold on `|dD|` per transition, keyed `t=2`.
    pub trims: BTreeMap<String, f64>,
    pub pscore_degree: Option<usize>,
    pub clip: Option<f64>,
    pub delta: Option<f64>,
    pub delta_grid: Option<Vec<f64>>,
}

/// One per-transition or per-cohort piece of an aggregated estimate.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Component {
    /// 1-based outcome period.
    pub t: usize,
    /// First-move date of the cohort (dynamic estimators only).
    pub cohort: Option<usize>,
    pub direction: Option<Direction>,
    pub value: f64,
    /// Normalized aggregation weight.
    pub weight: f64,
    /// Weighted population share behind the aggregation weight.
    pub share: f64,
    pub n_movers: usize,
    pub n_used: usize,
    pub n_trimmed: usize,
    pub n_unsupported: usize,
    pub n_controls: usize,
    pub numerator: Option<f64>,
    pub denominator: Option<f64>,
    pub bandwidth: Option<f64>,
    pub trim: Option<f64>,
    pub n_fallback: usize,
    pub n_clipped: usize,
    pub mean_weight_before_clip: Option<f64>,
}

/// Value of a quasi-stayer estimator at one threshold of the grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub delta: f64,
    pub value: Option<f64>,
    pub n_movers_used: usize,
    /// Smallest number of quasi-stayers over transitions with movers.
    pub min_controls: usize,
    pub error: Option<String>,
}

/// Point estimate of one target with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub target: Target,
    pub ell: Option<usize>,
    pub method: Method,
    pub value: f64,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub bootstrap: Option<BootstrapInfo>,
    /// Movers (unit-transition pairs, or cohort members) eligible for the
    /// target.
    pub n_movers: usize,
    pub n_movers_used: usize,
    pub n_movers_dropped: usize,
    /// Control observations, summed over components.
    pub n_controls: usize,
    pub tuning: Tuning,
    pub components: Vec<Component>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curve: Option<Vec<CurvePoint>>,
    pub details: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl Estimate {
    pub fn new(target: Target, method: Method, value: f64) -> Self {
        Self {
            target,
            ell: None,
            method,
            value,
            se: None,
            ci_low: None,
            ci_high: None,
            bootstrap: None,
            n_movers: 0,
            n_movers_used: 0,
            n_movers_dropped: 0,
            n_controls: 0,
            tuning: Tuning::default(),
            components: Vec::new(),
            curve: None,
            details: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    /// Block label such as `delta2` or `delta_plus_l[1]`.
    pub fn label(&self) -> String {
        match self.ell {
            Some(l) => format!("{}[{l}]", self.target),
            None => self.target.name().to_string(),
        }
    }
}

/// How the bandwidth of each control regression is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthRule {
    Fixed(f64),
    RuleOfThumb,
    Cv,
    /// Bandwidth per fit key; keys not in the table use the rule of thumb.
    Table(BTreeMap<String, f64>),
}

impl BandwidthRule {
    pub fn describe(&self) -> String {
        match self {
            BandwidthRule::Fixed(h) => format!("fixed:{h}"),
            BandwidthRule::RuleOfThumb => "rule_of_thumb".into(),
            BandwidthRule::Cv => "cv".into(),
            BandwidthRule::Table(_) => "table".into(),
        }
    }
}

/// Control regression settings shared by the regression-based estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct CefConfig {
    pub bandwidth: BandwidthRule,
    pub kernel: Kernel,
    pub degree: u8,
    pub min_ess: f64,
}

impl Default for CefConfig {
    fn default() -> Self {
        Self {
            bandwidth: BandwidthRule::RuleOfThumb,
            kernel: Kernel::Epanechnikov,
            degree: 1,
            min_ess: DEFAULT_MIN_ESS,
        }
    }
}

impl CefConfig {
    pub fn with_bandwidth(bandwidth: BandwidthRule) -> Self {
        Self {
            bandwidth,
            ..Self::default()
        }
    }

    fn bandwidth_for(&self, key: &str, x: &[f64], dy: &[f64], w: &[f64]) -> Result<f64> {
        let method = match &self.bandwidth {
            BandwidthRule::Fixed(h) => return Ok(*h),
            BandwidthRule::Table(map) => match map.get(key) {
                Some(&h) => return Ok(h),
                None => BandwidthMethod::RuleOfThumb,
            },
            BandwidthRule::RuleOfThumb => BandwidthMethod::RuleOfThumb,
            BandwidthRule::Cv => BandwidthMethod::LeaveOneOutCv,
        };
        smoothing::select_bandwidth(x, dy, w, method, self.kernel, self.degree)
    }

    /// Fits the control regression for one fit key.
    pub fn fit(&self, key: &str, x: &[f64], dy: &[f64], w: &[f64]) -> Result<CefModel> {
        let h = self.bandwidth_for(key, x, dy, w)?;
        let spec = SmootherSpec {
            bandwidth: h,
            kernel: self.kernel,
            degree: self.degree,
        };
        Ok(smoothing::fit_cef(x, dy, w, &spec)?.with_min_ess(self.min_ess))
    }

    fn echo(&self, tuning: &mut Tuning) {
        tuning.kernel = Some(self.kernel);
        tuning.cef_degree = Some(self.degree);
        tuning.bandwidth_rule = Some(self.bandwidth.describe());
        tuning.min_ess = Some(self.min_ess);
    }
}

/// Threshold on `|dD|` below which movers are dropped from per-unit ratios.
#[derive(Debug, Clone, PartialEq)]
pub enum TrimRule {
    None,
    Absolute(f64),
    /// Fraction of the standard deviation of `dD` among the movers of the
    /// transition.
    SdFraction(f64),
    /// Threshold per transition key; missing keys use the default fraction.
    Table(BTreeMap<String, f64>),
}

impl Default for TrimRule {
    fn default() -> Self {
        TrimRule::SdFraction(DEFAULT_TRIM_FRACTION)
    }
}

impl TrimRule {
    pub fn describe(&self) -> String {
        match self {
            TrimRule::None => "none".into(),
            TrimRule::Absolute(v) => format!("absolute:{v}"),
            TrimRule::SdFraction(c) => format!("sd_fraction:{c}"),
            TrimRule::Table(_) => "table".into(),
        }
    }

    /// Threshold for transition `t` (0-based). `mover_dd` are the treatment
    /// changes of every mover at that transition.
    pub fn threshold(&self, t: usize, mover_dd: &[f64]) -> f64 {
        let sd_fraction = |c: f64| c * stats::sample_sd(mover_dd).unwrap_or(0.0);
        match self {
            TrimRule::None => 0.0,
            TrimRule::Absolute(v) => *v,
            TrimRule::SdFraction(c) => sd_fraction(*c),
            TrimRule::Table(map) => map
                .get(&transition_key(t))
                .copied()
                .unwrap_or_else(|| sd_fraction(DEFAULT_TRIM_FRACTION)),
        }
    }
}

/// Fit key of the control regression at transition `t` (0-based).
pub fn transition_key(t: usize) -> String {
    format!("t={}", t + 1)
}

pub(crate) fn quasi_key(t: usize, delta: f64) -> String {
    format!("t={};delta={delta}", t + 1)
}

pub(crate) fn validate_delta_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("delta grid is empty".into()));
    }
    if grid.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
        return Err(Error::InvalidArgument(
            "delta grid values must be positive and finite".into(),
        ));
    }
    if grid.windows(2).any(|p| p[1] >= p[0]) {
        return Err(Error::InvalidArgument(
            "delta grid must be strictly decreasing".into(),
        ));
    }
    Ok(())
}

/// Default quasi-stayer grid: quantiles 0.4, 0.3, 0.2 and 0.1 of the nonzero
/// `|dD|` pooled over transitions. Duplicates are removed.
pub fn auto_delta_grid(status: &MoverStatus) -> Result<Vec<f64>> {
    let mut abs: Vec<f64> = (0..status.n_units())
        .flat_map(|i| (1..status.n_periods()).map(move |t| (i, t)))
        .map(|(i, t)| status.dd(i, t).abs())
        .filter(|&v| v > 0.0)
        .collect();
    if abs.is_empty() {
        return Err(Error::NoMovers);
    }
    abs.sort_by(f64::total_cmp);
    let mut grid: Vec<f64> = Vec::new();
    for q in [0.4, 0.3, 0.2, 0.1] {
        let v = stats::quantile_sorted(&abs, q).unwrap_or(0.0);
        if v > 0.0 && grid.last().is_none_or(|&last| v < last) {
            grid.push(v);
        }
    }
    if grid.is_empty() {
        return Err(Error::NoQuasiStayers { delta: 0.0 });
    }
    Ok(grid)
}

/// Control sample of one regression: baseline treatments, outcome changes
/// and weights.
#[derive(Debug, Default)]
pub(crate) struct Sample {
    pub units: Vec<usize>,
    pub x: Vec<f64>,
    pub dy: Vec<f64>,
    pub w: Vec<f64>,
}

impl Sample {
    pub fn push(&mut self, unit: usize, x: f64, dy: f64, w: f64) {
        self.units.push(unit);
        self.x.push(x);
        self.dy.push(dy);
        self.w.push(w);
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.w.iter().sum()
    }
}

/// Outcome changes net of the fitted control regression for a set of movers.
#[derive(Debug, Default)]
pub(crate) struct Residuals {
    /// Mover index into the input sample and residual.
    pub kept: Vec<(usize, f64)>,
    pub n_unsupported: usize,
    pub n_fallback: usize,
}

pub(crate) fn residuals(model: &CefModel, movers: &Sample) -> Result<Residuals> {
    let mut out = Residuals::default();
    for j in 0..movers.len() {
        match model.eval(movers.x[j]) {
            Ok(p) => {
                out.n_fallback += p.fallback as usize;
                out.kept.push((j, movers.dy[j] - p.value));
            }
            Err(Error::InsufficientSupport { .. }) => out.n_unsupported += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Share-weighted average over estimable components. Sets each component's
/// normalized weight and returns the aggregate.
pub(crate) fn aggregate(components: &mut [Component]) -> Option<f64> {
    let total: f64 = components.iter().map(|c| c.share).sum();
    if !(total > 0.0) {
        return None;
    }
    let mut value = 0.0;
    for c in components.iter_mut() {
        c.weight = c.share / total;
        value += c.weight * c.value;
    }
    Some(value)
}

pub(crate) fn weighted_share(panel: &Panel, units: impl Iterator<Item = usize>) -> f64 {
    units.map(|i| panel.weight(i)).sum::<f64>() / panel.total_weight()
}

pub(crate) fn check_status(panel: &Panel, status: &MoverStatus) -> Result<()> {
    if panel.n_units() != status.n_units() || panel.n_periods() != status.n_periods() {
        return Err(Error::InvalidArgument(
            "mover status does not match the panel".into(),
        ));
    }
    Ok(())
}
