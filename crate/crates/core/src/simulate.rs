//! Panels drawn from known potential-outcome processes, and the realized
//! sample values of every target parameter computed from those processes.
//!
//! Outcome changes at a fixed treatment path depend on the period only, so
//! parallel trends hold by construction. Noise enters the observed outcome
//! and never the potential outcomes used by the oracle.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::estimators::Target;
use crate::panel::Panel;

/// Scalar distribution used by the treatment and slope processes.
#[derive(Debug, Clone, PartialEq)]
pub enum Dist {
    Point(f64),
    Uniform(f64, f64),
    Normal(f64, f64),
    /// Uniform over a finite set of values.
    Discrete(Vec<f64>),
    /// Weighted mixture; weights need not sum to one.
    Mixture(Vec<(f64, Dist)>),
}

impl Dist {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Dist::Point(x) => *x,
            Dist::Uniform(a, b) => a + (b - a) * rng.random::<f64>(),
            Dist::Normal(m, s) => {
                let z: f64 = StandardNormal.sample(rng);
                m + s * z
            }
            Dist::Discrete(v) => v[rng.random_range(0..v.len())],
            Dist::Mixture(parts) => {
                let total: f64 = parts.iter().map(|(w, _)| w).sum();
                let mut u = rng.random::<f64>() * total;
                for (w, d) in parts {
                    if u < *w {
                        return d.sample(rng);
                    }
                    u -= w;
                }
                parts.last().expect("validated nonempty").1.sample(rng)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        match self {
            Dist::Point(x) if !x.is_finite() => bad(format!("point({x}) is not finite")),
            Dist::Uniform(a, b) if !(a.is_finite() && b.is_finite() && a <= b) => {
                bad(format!("uniform({a}, {b}) needs finite a <= b"))
            }
            Dist::Normal(m, s) if !(m.is_finite() && s.is_finite() && *s >= 0.0) => {
                bad(format!("normal({m}, {s}) needs a finite mean and sd >= 0"))
            }
            Dist::Discrete(v) if v.is_empty() || v.iter().any(|x| !x.is_finite()) => {
                bad("discrete() needs finite values".into())
            }
            Dist::Mixture(parts) => {
                if parts.is_empty() || parts.iter().any(|(w, _)| !(*w >= 0.0 && w.is_finite())) {
                    return bad("mixture() needs nonnegative finite weights".into());
                }
                if !(parts.iter().map(|(w, _)| w).sum::<f64>() > 0.0) {
                    return bad("mixture() weights sum to zero".into());
                }
                parts.iter().try_for_each(|(_, d)| d.validate())
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Dist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dist::Point(x) => write!(f, "point({x})"),
            Dist::Uniform(a, b) => write!(f, "uniform({a}, {b})"),
            Dist::Normal(m, s) => write!(f, "normal({m}, {s})"),
            Dist::Discrete(v) => {
                let items: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "discrete({})", items.join(", "))
            }
            Dist::Mixture(parts) => {
                let items: Vec<String> = parts.iter().map(|(w, d)| format!("{w}: {d}")).collect();
                write!(f, "mixture({})", items.join(" | "))
            }
        }
    }
}

impl Serialize for Dist {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Splits on `sep` outside parentheses.
fn split_top(s: &str, sep: char) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (k, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            c if c == sep && depth == 0 => {
                out.push(&s[start..k]);
                start = k + c.len_utf8();
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}

fn parse_num(s: &str) -> Result<f64> {
    let s = s.trim();
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::InvalidSpec(format!("not a finite number: {s:?}")))
}

impl FromStr for Dist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(x) = s.parse::<f64>() {
            let d = Dist::Point(x);
            d.validate()?;
            return Ok(d);
        }
        let (name, rest) = s
            .split_once('(')
            .ok_or_else(|| Error::InvalidSpec(format!("cannot parse distribution {s:?}")))?;
        let inner = rest
            .strip_suffix(')')
            .ok_or_else(|| Error::InvalidSpec(format!("unbalanced parentheses in {s:?}")))?;
        let nums = |want: usize| -> Result<Vec<f64>> {
            let v = split_top(inner, ',')
                .into_iter()
                .map(parse_num)
                .collect::<Result<Vec<f64>>>()?;
            if want > 0 && v.len() != want {
                return Err(Error::InvalidSpec(format!(
                    "{name} takes {want} arguments, got {}",
                    v.len()
                )));
            }
            Ok(v)
        };
        let d = match name.trim().to_ascii_lowercase().as_str() {
            "point" => Dist::Point(nums(1)?[0]),
            "uniform" => {
                let v = nums(2)?;
                Dist::Uniform(v[0], v[1])
            }
            "normal" => {
                let v = nums(2)?;
                Dist::Normal(v[0], v[1])
            }
            "discrete" => Dist::Discrete(nums(0)?),
            "mixture" => Dist::Mixture(
                split_top(inner, '|')
                    .into_iter()
                    .map(|part| {
                        let (w, d) = part.split_once(':').ok_or_else(|| {
                            Error::InvalidSpec(format!("mixture part {part:?} needs weight: dist"))
                        })?;
                        Ok((parse_num(w)?, d.parse::<Dist>()?))
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            other => {
                return Err(Error::InvalidSpec(format!(
                    "unknown distribution {other:?}"
                )))
            }
        };
        d.validate()?;
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Independent treatment changes at every transition.
    Static,
    /// One increase at a random date, or none.
    Staggered,
}

/// Data-generating process.
///
/// Static outcome function (no `lags`):
/// `Y_t(d) = alpha_i + gamma_t + trend_curve * t * d^2 + quad * d^2 + S_i * d`.
///
/// Dynamic outcome function (with `lags = theta_0, .., theta_{L-1}`):
/// `Y_t(d_1..d_t) = alpha_i + gamma_t + (trend_curve * t + quad) * d_1^2
///   + S_i * (d_1 + sum_{s=2..t} theta_{min(t-s, L-1)} * (d_s - d_{s-1}))`.
///
/// The unit slope is `S_i = slope + slope_dd_coef * |D_2 - D_1|^slope_dd_power`
/// when the first change is nonzero and `slope` otherwise. The unit effect
/// is `alpha_d1_coef * D_1 + alpha_sd * N(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DgpSpec {
    pub n: usize,
    pub periods: usize,
    pub seed: u64,
    pub regime: Regime,
    pub d1: Dist,
    pub p_stay: f64,
    pub dd: Dist,
    pub p_never: f64,
    pub jump: Dist,
    pub slope: Dist,
    pub slope_dd_coef: f64,
    pub slope_dd_power: f64,
    pub quad: f64,
    pub trend_curve: f64,
    pub alpha_sd: f64,
    pub alpha_d1_coef: f64,
    pub gamma_sd: f64,
    pub noise_sd: f64,
    pub lags: Vec<f64>,
}

impl Default for DgpSpec {
    fn default() -> Self {
        Self {
            n: 1000,
            periods: 2,
            seed: 0,
            regime: Regime::Static,
            d1: Dist::Uniform(0.0, 2.0),
            p_stay: 0.5,
            dd: Dist::Uniform(-1.0, 1.0),
            p_never: 0.3,
            jump: Dist::Point(1.0),
            slope: Dist::Point(1.5),
            slope_dd_coef: 0.0,
            slope_dd_power: 1.0,
            quad: 0.0,
            trend_curve: 0.0,
            alpha_sd: 1.0,
            alpha_d1_coef: 0.0,
            gamma_sd: 1.0,
            noise_sd: 1.0,
            lags: Vec::new(),
        }
    }
}

const KEYS: [&str; 19] = [
    "n",
    "periods",
    "seed",
    "regime",
    "d1",
    "p_stay",
    "dd",
    "p_never",
    "jump",
    "slope",
    "slope_dd_coef",
    "slope_dd_power",
    "quad",
    "trend_curve",
    "alpha_sd",
    "alpha_d1_coef",
    "gamma_sd",
    "noise_sd",
    "lags",
];

impl DgpSpec {
    /// Parses `key = value` lines on top of the defaults. Blank lines and
    /// text after `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = DgpSpec::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidSpec(format!("line {}: expected key = value", lineno + 1))
            })?;
            spec.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::InvalidSpec(m) => Error::InvalidSpec(format!("line {}: {m}", lineno + 1)),
                other => other,
            })?;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let int = |v: &str| {
            v.parse::<u64>()
                .map_err(|_| Error::InvalidSpec(format!("{key}: not a nonnegative integer: {v:?}")))
        };
        match key {
            "n" => self.n = int(value)? as usize,
            "periods" => self.periods = int(value)? as usize,
            "seed" => self.seed = int(value)?,
            "regime" => {
                self.regime = match value {
                    "static" => Regime::Static,
                    "staggered" => Regime::Staggered,
                    other => return Err(Error::InvalidSpec(format!("unknown regime {other:?}"))),
                }
            }
            "d1" => self.d1 = value.parse()?,
            "p_stay" => self.p_stay = parse_num(value)?,
            "dd" => self.dd = value.parse()?,
            "p_never" => self.p_never = parse_num(value)?,
            "jump" => self.jump = value.parse()?,
            "slope" => self.slope = value.parse()?,
            "slope_dd_coef" => self.slope_dd_coef = parse_num(value)?,
            "slope_dd_power" => self.slope_dd_power = parse_num(value)?,
            "quad" => self.quad = parse_num(value)?,
            "trend_curve" => self.trend_curve = parse_num(value)?,
            "alpha_sd" => self.alpha_sd = parse_num(value)?,
            "alpha_d1_coef" => self.alpha_d1_coef = parse_num(value)?,
            "gamma_sd" => self.gamma_sd = parse_num(value)?,
            "noise_sd" => self.noise_sd = parse_num(value)?,
            "lags" => {
                self.lags = if value.is_empty() {
                    Vec::new()
                } else {
                    value.split(',').map(parse_num).collect::<Result<_>>()?
                }
            }
            other => {
                return Err(Error::InvalidSpec(format!(
                    "unknown key {other:?}; expected one of {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.n < 1 {
            return bad("n must be at least 1");
        }
        if self.periods < 2 {
            return bad("periods must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.p_stay) {
            return bad("p_stay must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.p_never) {
            return bad("p_never must lie in [0, 1]");
        }
        for v in [
            self.slope_dd_coef,
            self.slope_dd_power,
            self.quad,
            self.trend_curve,
            self.alpha_d1_coef,
        ] {
            if !v.is_finite() {
                return bad("coefficients must be finite");
            }
        }
        for v in [self.alpha_sd, self.gamma_sd, self.noise_sd] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad("standard deviations must be finite and >= 0");
            }
        }
        if self.lags.iter().any(|v| !v.is_finite()) {
            return bad("lags must be finite");
        }
        for d in [&self.d1, &self.dd, &self.jump, &self.slope] {
            d.validate()?;
        }
        Ok(())
    }

    /// Text form accepted by [`DgpSpec::parse`].
    pub fn to_config(&self) -> String {
        let lags: Vec<String> = self.lags.iter().map(|v| v.to_string()).collect();
        let regime = match self.regime {
            Regime::Static => "static",
            Regime::Staggered => "staggered",
        };
        let pairs: [(&str, String); 19] = [
            ("n", self.n.to_string()),
            ("periods", self.periods.to_string()),
            ("seed", self.seed.to_string()),
            ("regime", regime.to_string()),
            ("d1", self.d1.to_string()),
            ("p_stay", self.p_stay.to_string()),
            ("dd", self.dd.to_string()),
            ("p_never", self.p_never.to_string()),
            ("jump", self.jump.to_string()),
            ("slope", self.slope.to_string()),
            ("slope_dd_coef", self.slope_dd_coef.to_string()),
            ("slope_dd_power", self.slope_dd_power.to_string()),
            ("quad", self.quad.to_string()),
            ("trend_curve", self.trend_curve.to_string()),
            ("alpha_sd", self.alpha_sd.to_string()),
            ("alpha_d1_coef", self.alpha_d1_coef.to_string()),
            ("gamma_sd", self.gamma_sd.to_string()),
            ("noise_sd", self.noise_sd.to_string()),
            ("lags", lags.join(", ")),
        ];
        pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Potential-outcome parameters of one unit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitTruth {
    pub alpha: f64,
    pub slope: f64,
    /// Realized treatment path.
    pub d: Vec<f64>,
}

/// Everything needed to evaluate any unit's potential outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub spec: DgpSpec,
    pub gamma: Vec<f64>,
    pub units: Vec<UnitTruth>,
}

impl Truth {
    /// Noise-free outcome of unit `i` in 0-based period `t` under treatment
    /// path `path` (only entries up to `t` are read).
    pub fn potential(&self, i: usize, t: usize, path: &[f64]) -> f64 {
        let s = &self.spec;
        let u = &self.units[i];
        let period = (t + 1) as f64;
        let base = u.alpha + self.gamma[t];
        if s.lags.is_empty() {
            let d = path[t];
            return base + (s.trend_curve * period + s.quad) * d * d + u.slope * d;
        }
        let l = s.lags.len();
        let d1 = path[0];
        let mut cum = d1;
        for k in 1..=t {
            cum += s.lags[(t - k).min(l - 1)] * (path[k] - path[k - 1]);
        }
        base + (s.trend_curve * period + s.quad) * d1 * d1 + u.slope * cum
    }
}

/// Draws a panel and its hidden truth. Identical specs give bit-identical
/// output.
pub fn generate(spec: &DgpSpec) -> Result<(Panel, Truth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tn = spec.periods;
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let gamma: Vec<f64> = (0..tn).map(|_| spec.gamma_sd * normal(&mut rng)).collect();
    let mut units = Vec::with_capacity(spec.n);
    let mut y = Vec::with_capacity(spec.n * tn);
    let mut truth = Truth {
        spec: spec.clone(),
        gamma,
        units: Vec::new(),
    };
    let mut noise = Vec::with_capacity(spec.n * tn);
    for _ in 0..spec.n {
        let d1 = spec.d1.sample(&mut rng);
        let mut path = vec![d1; tn];
        match spec.regime {
            Regime::Static => {
                for t in 1..tn {
                    let change = if rng.random::<f64>() < spec.p_stay {
                        0.0
                    } else {
                        spec.dd.sample(&mut rng)
                    };
                    path[t] = path[t - 1] + change;
                }
            }
            Regime::Staggered => {
                if rng.random::<f64>() >= spec.p_never {
                    let first = rng.random_range(1..tn);
                    let jump = spec.jump.sample(&mut rng);
                    for v in &mut path[first..] {
                        *v = d1 + jump;
                    }
                }
            }
        }
        let first_change = (path[1] - path[0]).abs();
        let mut slope = spec.slope.sample(&mut rng);
        if first_change > 0.0 {
            slope += spec.slope_dd_coef * first_change.powf(spec.slope_dd_power);
        }
        let alpha = spec.alpha_d1_coef * d1 + spec.alpha_sd * normal(&mut rng);
        for _ in 0..tn {
            noise.push(spec.noise_sd * normal(&mut rng));
        }
        units.push(UnitTruth {
            alpha,
            slope,
            d: path,
        });
    }
    truth.units = units;
    for (i, u) in truth.units.iter().enumerate() {
        for t in 0..tn {
            y.push(truth.potential(i, t, &u.d) + noise[i * tn + t]);
        }
    }
    let d: Vec<f64> = truth
        .units
        .iter()
        .flat_map(|u| u.d.iter().copied())
        .collect();
    let panel = Panel::new(
        (1..=spec.n).map(|i| i.to_string()).collect(),
        (1..=tn).map(|t| t as f64).collect(),
        d,
        y,
        None,
    )?;
    Ok((panel, truth))
}

/// Path that follows `d` before period `t` and stays at `d[t - 1]` after.
fn frozen_from(d: &[f64], t: usize) -> Vec<f64> {
    let mut p = d.to_vec();
    for v in &mut p[t..] {
        *v = d[t - 1];
    }
    p
}

fn first_move(d: &[f64]) -> usize {
    (1..d.len()).find(|&t| d[t] != d[t - 1]).unwrap_or(d.len())
}

/// Realized-sample value of a target parameter, from the stored potential
/// outcomes. Movers are units whose treatment changes at all (no tolerance).
///
/// `ell` is the horizon of the long-run and dynamic targets. The dynamic
/// targets use units that never go below their first-period treatment and
/// cohorts that still have not-yet-moved units at the outcome period.
pub fn oracle(truth: &Truth, target: Target, ell: Option<usize>) -> Result<f64> {
    let tn = truth.spec.periods;
    let units = &truth.units;
    let effect = |i: usize, t_out: usize, t_move: usize| {
        let d = &units[i].d;
        truth.potential(i, t_out, d) - truth.potential(i, t_out, &frozen_from(d, t_move))
    };
    let need_ell =
        || ell.ok_or_else(|| Error::InvalidArgument(format!("target {target} needs a horizon")));
    match target {
        Target::Delta1 => {
            let mut acc = 0.0;
            let mut total = 0usize;
            for t in 1..tn {
                let movers: Vec<usize> = (0..units.len())
                    .filter(|&i| units[i].d[t] != units[i].d[t - 1])
                    .collect();
                if movers.is_empty() {
                    continue;
                }
                let mean = movers
                    .iter()
                    .map(|&i| effect(i, t, t) / (units[i].d[t] - units[i].d[t - 1]))
                    .sum::<f64>()
                    / movers.len() as f64;
                acc += movers.len() as f64 * mean;
                total += movers.len();
            }
            if total == 0 {
                return Err(Error::NoMovers);
            }
            Ok(acc / total as f64)
        }
        Target::Delta2i | Target::Delta2d | Target::Delta2 => {
            // Per direction: sum over transitions of count * (sum effect / sum dD).
            let mut parts = [(0.0, 0usize), (0.0, 0usize)];
            for t in 1..tn {
                for (k, part) in parts.iter_mut().enumerate() {
                    let members: Vec<usize> = (0..units.len())
                        .filter(|&i| {
                            let dd = units[i].d[t] - units[i].d[t - 1];
                            if k == 0 {
                                dd > 0.0
                            } else {
                                dd < 0.0
                            }
                        })
                        .collect();
                    if members.is_empty() {
                        continue;
                    }
                    let num: f64 = members.iter().map(|&i| effect(i, t, t)).sum();
                    let den: f64 = members
                        .iter()
                        .map(|&i| units[i].d[t] - units[i].d[t - 1])
                        .sum();
                    part.0 += members.len() as f64 * num / den;
                    part.1 += members.len();
                }
            }
            let value = |k: usize| parts[k].0 / parts[k].1 as f64;
            let (ni, nd) = (parts[0].1, parts[1].1);
            match target {
                Target::Delta2i if ni == 0 => Err(Error::NoIncreasers),
                Target::Delta2i => Ok(value(0)),
                Target::Delta2d if nd == 0 => Err(Error::NoDecreasers),
                Target::Delta2d => Ok(value(1)),
                _ if ni + nd == 0 => Err(Error::NoMovers),
                _ if nd == 0 => Ok(value(0)),
                _ if ni == 0 => Ok(value(1)),
                _ => {
                    let s = ni as f64 / (ni + nd) as f64;
                    Ok(s * value(0) + (1.0 - s) * value(1))
                }
            }
        }
        Target::Delta1LongRun => {
            let ell = need_ell()?;
            if ell + 2 > tn {
                return Err(Error::InvalidArgument(format!("horizon l={ell} too long")));
            }
            let mut acc = 0.0;
            let mut total = 0usize;
            for t in 1..tn - ell {
                let eligible: Vec<usize> = (0..units.len())
                    .filter(|&i| {
                        let d = &units[i].d;
                        d[t] != d[t - 1] && (t + 1..=t + ell).all(|k| d[k] == d[k - 1])
                    })
                    .collect();
                for &i in &eligible {
                    let d = &units[i].d;
                    acc += effect(i, t + ell, t) / (d[t] - d[t - 1]);
                }
                total += eligible.len();
            }
            if total == 0 {
                return Err(Error::NoEligibleMovers { ell });
            }
            Ok(acc / total as f64)
        }
        Target::DeltaPlusL | Target::DeltaPlusDoseL | Target::DeltaPlus => {
            let included: Vec<usize> = (0..units.len())
                .filter(|&i| units[i].d.iter().all(|&v| v >= units[i].d[0]))
                .collect();
            let first: Vec<usize> = units.iter().map(|u| first_move(&u.d)).collect();
            // (effect mean, dose mean, cohort-count total) per horizon.
            let horizon = |l: usize| -> Option<(f64, f64, usize)> {
                let (mut eff, mut dose, mut count) = (0.0, 0.0, 0usize);
                for fm in 1..tn - l {
                    let t0 = fm + l;
                    if !included.iter().any(|&i| first[i] > t0) {
                        continue;
                    }
                    for &i in included.iter().filter(|&&i| first[i] == fm) {
                        let d = &units[i].d;
                        let base = vec![d[0]; tn];
                        eff += truth.potential(i, t0, d) - truth.potential(i, t0, &base);
                        dose += d[t0] - d[0];
                        count += 1;
                    }
                }
                (count > 0).then(|| (eff / count as f64, dose / count as f64, count))
            };
            match target {
                Target::DeltaPlusL | Target::DeltaPlusDoseL => {
                    let l = need_ell()?;
                    if l + 2 > tn {
                        return Err(Error::InvalidArgument(format!("horizon l={l} too long")));
                    }
                    let (e, d, _) = horizon(l).ok_or(Error::NoMovers)?;
                    Ok(if target == Target::DeltaPlusL { e } else { d })
                }
                _ => {
                    let lmax = ell.unwrap_or(tn - 2).min(tn - 2);
                    let (mut num, mut den) = (0.0, 0.0);
                    let mut any = false;
                    for l in 0..=lmax {
                        if let Some((e, d, c)) = horizon(l) {
                            num += c as f64 * e;
                            den += c as f64 * d;
                            any = true;
                        }
                    }
                    if !any {
                        return Err(Error::NoMovers);
                    }
                    if den.abs() < 1e-12 {
                        return Err(Error::ZeroDenominator);
                    }
                    Ok(num / den)
                }
            }
        }
        Target::Twfe => Err(Error::UnsupportedTarget(target.name().to_string())),
    }
}
