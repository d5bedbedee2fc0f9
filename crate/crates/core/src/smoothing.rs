//! Kernel-weighted local polynomial regression of outcome changes on the
//! baseline treatment, fit among stayers or quasi-stayers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Minimum Kish effective sample size required to evaluate a fit.
pub const DEFAULT_MIN_ESS: f64 = 5.0;

/// Relative determinant below which the local linear design counts as
/// singular.
const SINGULAR_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    #[default]
    Epanechnikov,
    Gaussian,
    Rectangular,
}

impl Kernel {
    #[inline]
    pub fn weight(self, u: f64) -> f64 {
        match self {
            Kernel::Epanechnikov => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
            Kernel::Rectangular => {
                if u.abs() <= 1.0 {
                    0.5
                } else {
                    0.0
                }
            }
            Kernel::Gaussian => (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt(),
        }
    }

    fn is_compact(self) -> bool {
        !matches!(self, Kernel::Gaussian)
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Epanechnikov => "epanechnikov",
            Kernel::Gaussian => "gaussian",
            Kernel::Rectangular => "rectangular",
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "epanechnikov" | "epa" => Ok(Kernel::Epanechnikov),
            "gaussian" | "normal" => Ok(Kernel::Gaussian),
            "rectangular" | "uniform" | "box" => Ok(Kernel::Rectangular),
            other => Err(Error::InvalidArgument(format!("unknown kernel {other:?}"))),
        }
    }
}

/// Which units supplied the control observations of a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlGroup {
    Stayers,
    QuasiStayers { delta: f64 },
}

/// Bandwidth, kernel and polynomial degree of a local fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmootherSpec {
    pub bandwidth: f64,
    pub kernel: Kernel,
    /// 0 = locally constant, 1 = locally linear.
    pub degree: u8,
}

impl SmootherSpec {
    pub fn new(bandwidth: f64) -> Self {
        Self {
            bandwidth,
            kernel: Kernel::default(),
            degree: 1,
        }
    }
}

/// Value of a fitted conditional expectation at one query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CefPoint {
    pub value: f64,
    /// Kish effective sample size of the kernel weights at the query point.
    pub ess: f64,
    /// The local linear design was singular and the locally constant value
    /// was returned instead.
    pub fallback: bool,
}

/// Fitted conditional expectation of the outcome change given the baseline
/// treatment among control units.
#[derive(Debug, Clone, PartialEq)]
pub struct CefModel {
    x: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    spec: SmootherSpec,
    min_ess: f64,
    control: ControlGroup,
}

#[derive(Default)]
struct Moments {
    s0: f64,
    s1: f64,
    s2: f64,
    t0: f64,
    t1: f64,
    sk2: f64,
}

impl Moments {
    #[inline]
    fn add(&mut self, k: f64, dx: f64, y: f64) {
        self.s0 += k;
        self.s1 += k * dx;
        self.s2 += k * dx * dx;
        self.t0 += k * y;
        self.t1 += k * dx * y;
        self.sk2 += k * k;
    }

    #[inline]
    fn remove(&mut self, k: f64, dx: f64, y: f64) {
        self.s0 -= k;
        self.s1 -= k * dx;
        self.s2 -= k * dx * dx;
        self.t0 -= k * y;
        self.t1 -= k * dx * y;
        self.sk2 -= k * k;
    }

    fn ess(&self) -> f64 {
        if self.sk2 > 0.0 {
            self.s0 * self.s0 / self.sk2
        } else {
            0.0
        }
    }

    /// Local intercept, or `None` when there is no kernel mass.
    fn intercept(&self, degree: u8) -> Option<(f64, bool)> {
        if self.s0 <= 0.0 {
            return None;
        }
        let constant = self.t0 / self.s0;
        if degree == 0 {
            return Some((constant, false));
        }
        let det = self.s0 * self.s2 - self.s1 * self.s1;
        if self.s2 <= 0.0 || det <= SINGULAR_RTOL * self.s0 * self.s2 {
            return Some((constant, true));
        }
        Some(((self.s2 * self.t0 - self.s1 * self.t1) / det, false))
    }
}

impl CefModel {
    pub fn spec(&self) -> SmootherSpec {
        self.spec
    }

    pub fn bandwidth(&self) -> f64 {
        self.spec.bandwidth
    }

    pub fn kernel(&self) -> Kernel {
        self.spec.kernel
    }

    pub fn degree(&self) -> u8 {
        self.spec.degree
    }

    pub fn control(&self) -> ControlGroup {
        self.control
    }

    pub fn n_obs(&self) -> usize {
        self.x.len()
    }

    pub fn min_ess(&self) -> f64 {
        self.min_ess
    }

    pub fn with_min_ess(mut self, min_ess: f64) -> Self {
        self.min_ess = min_ess;
        self
    }

    fn window(&self, x0: f64) -> std::ops::Range<usize> {
        if self.spec.kernel.is_compact() {
            let h = self.spec.bandwidth;
            let lo = self.x.partition_point(|&x| x < x0 - h);
            let hi = self.x.partition_point(|&x| x <= x0 + h);
            lo..hi
        } else {
            0..self.x.len()
        }
    }

    fn moments(&self, x0: f64) -> Moments {
        let h = self.spec.bandwidth;
        let mut m = Moments::default();
        for j in self.window(x0) {
            let dx = self.x[j] - x0;
            let k = self.w[j] * self.spec.kernel.weight(dx / h);
            if k > 0.0 {
                m.add(k, dx, self.y[j]);
            }
        }
        m
    }

    pub fn effective_sample_size(&self, x0: f64) -> f64 {
        self.moments(x0).ess()
    }

    /// Evaluates the fit at `x0`. Fails with `InsufficientSupport` when the
    /// effective sample size is below the configured minimum.
    pub fn eval(&self, x0: f64) -> Result<CefPoint> {
        let m = self.moments(x0);
        let ess = m.ess();
        if ess < self.min_ess || m.s0 <= 0.0 {
            return Err(Error::InsufficientSupport {
                x: x0,
                ess,
                min: self.min_ess,
            });
        }
        let (value, fallback) =
            m.intercept(self.spec.degree)
                .ok_or(Error::InsufficientSupport {
                    x: x0,
                    ess,
                    min: self.min_ess,
                })?;
        Ok(CefPoint {
            value,
            ess,
            fallback,
        })
    }
}

fn validate_inputs(x: &[f64], dy: &[f64], w: &[f64], spec: &SmootherSpec) -> Result<()> {
    if x.len() != dy.len() || x.len() != w.len() {
        return Err(Error::InvalidArgument(
            "x, dy and weights must have equal length".into(),
        ));
    }
    if !(spec.bandwidth > 0.0 && spec.bandwidth.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "bandwidth must be positive, got {}",
            spec.bandwidth
        )));
    }
    if spec.degree > 1 {
        return Err(Error::InvalidArgument(format!(
            "local polynomial degree must be 0 or 1, got {}",
            spec.degree
        )));
    }
    Ok(())
}

fn build(
    x: &[f64],
    dy: &[f64],
    w: &[f64],
    spec: &SmootherSpec,
    control: ControlGroup,
) -> Result<CefModel> {
    if x.len() < 2 {
        return Err(Error::TooFewObservations {
            needed: 2,
            have: x.len(),
        });
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    Ok(CefModel {
        x: order.iter().map(|&j| x[j]).collect(),
        y: order.iter().map(|&j| dy[j]).collect(),
        w: order.iter().map(|&j| w[j]).collect(),
        spec: *spec,
        min_ess: DEFAULT_MIN_ESS,
        control,
    })
}

/// Fits the outcome-change regression on control observations.
pub fn fit_cef(x: &[f64], dy: &[f64], w: &[f64], spec: &SmootherSpec) -> Result<CefModel> {
    validate_inputs(x, dy, w, spec)?;
    build(x, dy, w, spec, ControlGroup::Stayers)
}

/// Same as [`fit_cef`] restricted to units with `abs_dd <= delta`.
pub fn fit_cef_quasi_stayers(
    x: &[f64],
    dy: &[f64],
    abs_dd: &[f64],
    w: &[f64],
    delta: f64,
    spec: &SmootherSpec,
) -> Result<CefModel> {
    validate_inputs(x, dy, w, spec)?;
    if abs_dd.len() != x.len() {
        return Err(Error::InvalidArgument(
            "abs_dd must have the same length as x".into(),
        ));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "quasi-stayer threshold must be positive, got {delta}"
        )));
    }
    let keep: Vec<usize> = (0..x.len()).filter(|&j| abs_dd[j] <= delta).collect();
    if keep.is_empty() {
        return Err(Error::NoQuasiStayers { delta });
    }
    let pick = |v: &[f64]| keep.iter().map(|&j| v[j]).collect::<Vec<_>>();
    build(
        &pick(x),
        &pick(dy),
        &pick(w),
        spec,
        ControlGroup::QuasiStayers { delta },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMethod {
    #[default]
    RuleOfThumb,
    LeaveOneOutCv,
}

/// `1.06 * sd(x) * n^(-1/5)`.
pub fn rule_of_thumb(x: &[f64]) -> Result<f64> {
    if x.len() < 2 {
        return Err(Error::TooFewObservations {
            needed: 2,
            have: x.len(),
        });
    }
    let sd = stats::sample_sd(x).unwrap_or(0.0);
    let h = 1.06 * sd * (x.len() as f64).powf(-0.2);
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::DegenerateBandwidth);
    }
    Ok(h)
}

/// Number of candidate bandwidths scanned by cross-validation.
pub const CV_GRID_SIZE: usize = 20;
/// Cap on the number of held-out points scored per candidate.
pub const CV_MAX_EVAL_POINTS: usize = 2000;

/// Chooses a bandwidth for the given control sample.
///
/// Cross-validation scans [`CV_GRID_SIZE`] log-spaced multiples of the
/// rule of thumb between 0.1x and 10x and minimizes the weighted
/// leave-one-out squared prediction error. Candidates that cannot predict at
/// least 90% of the held-out points are skipped.
pub fn select_bandwidth(
    x: &[f64],
    dy: &[f64],
    w: &[f64],
    method: BandwidthMethod,
    kernel: Kernel,
    degree: u8,
) -> Result<f64> {
    let rot = rule_of_thumb(x)?;
    match method {
        BandwidthMethod::RuleOfThumb => Ok(rot),
        BandwidthMethod::LeaveOneOutCv => {
            if x.len() < 10 {
                return Err(Error::TooFewObservations {
                    needed: 10,
                    have: x.len(),
                });
            }
            let spec = SmootherSpec {
                bandwidth: rot,
                kernel,
                degree,
            };
            let model = fit_cef(x, dy, w, &spec)?;
            let n = model.n_obs();
            let stride = n.div_ceil(CV_MAX_EVAL_POINTS);
            let held_out: Vec<usize> = (0..n).step_by(stride).collect();
            let mut best: Option<(f64, f64)> = None;
            for k in 0..CV_GRID_SIZE {
                let factor = 0.1 * 100f64.powf(k as f64 / (CV_GRID_SIZE - 1) as f64);
                let h = rot * factor;
                let mut m = model.clone();
                m.spec.bandwidth = h;
                if let Some(score) = loo_score(&m, &held_out) {
                    if best.is_none_or(|(s, _)| score < s) {
                        best = Some((score, h));
                    }
                }
            }
            best.map(|(_, h)| h).ok_or(Error::DegenerateBandwidth)
        }
    }
}

fn loo_score(model: &CefModel, held_out: &[usize]) -> Option<f64> {
    let self_k = model.spec.kernel.weight(0.0);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut defined = 0usize;
    for &i in held_out {
        let x0 = model.x[i];
        let mut m = model.moments(x0);
        m.remove(model.w[i] * self_k, 0.0, model.y[i]);
        if m.s0 <= 1e-12 * (m.s0 + model.w[i] * self_k) {
            continue;
        }
        if let Some((pred, _)) = m.intercept(model.spec.degree) {
            let e = model.y[i] - pred;
            num += model.w[i] * e * e;
            den += model.w[i];
            defined += 1;
        }
    }
    if (defined as f64) < 0.9 * held_out.len() as f64 || den <= 0.0 {
        return None;
    }
    Some(num / den)
}
