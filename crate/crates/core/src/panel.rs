//! Balanced panel ingestion, mover/stayer classification and support
//! diagnostics.
//!
//! Internally periods are addressed by a 0-based index `0..T`. A transition
//! `t` (with `1 <= t < T`) compares period `t - 1` with period `t`. Anything
//! that leaves the library through serialization or an error message uses
//! the 1-based period number instead, so the first transition is reported as
//! `t = 2`.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::propensity::PscoreModel;

/// Balanced long-format panel of treatments and outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    units: Vec<String>,
    periods: Vec<f64>,
    d: Vec<f64>,
    y: Vec<f64>,
    weights: Vec<f64>,
    weighted: bool,
}

impl Panel {
    /// Builds a panel from unit-major matrices: `d[i * T + t]`.
    pub fn new(
        units: Vec<String>,
        periods: Vec<f64>,
        d: Vec<f64>,
        y: Vec<f64>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = units.len();
        let t = periods.len();
        if n == 0 {
            return Err(Error::InvalidPanel("panel has no units".into()));
        }
        if t < 2 {
            return Err(Error::InvalidPanel(format!(
                "panel needs at least 2 periods, has {t}"
            )));
        }
        if periods.iter().any(|p| !p.is_finite()) || periods.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidPanel(
                "period labels must be finite and strictly increasing".into(),
            ));
        }
        if d.len() != n * t || y.len() != n * t {
            return Err(Error::InvalidPanel(format!(
                "expected {} treatment and outcome values, got {} and {}",
                n * t,
                d.len(),
                y.len()
            )));
        }
        if d.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidPanel(
                "treatments and outcomes must be finite".into(),
            ));
        }
        let mut seen = std::collections::HashSet::with_capacity(n);
        for u in &units {
            if !seen.insert(u.as_str()) {
                return Err(Error::InvalidPanel(format!("unit id {u:?} appears twice")));
            }
        }
        let weighted = weights.is_some();
        let weights = weights.unwrap_or_else(|| vec![1.0; n]);
        if weights.len() != n {
            return Err(Error::InvalidPanel(format!(
                "expected {n} unit weights, got {}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidPanel(
                "weights must be finite and nonnegative".into(),
            ));
        }
        if weights.iter().all(|w| *w == 0.0) {
            return Err(Error::InvalidPanel("all weights are zero".into()));
        }
        Ok(Self {
            units,
            periods,
            d,
            y,
            weights,
            weighted,
        })
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn periods(&self) -> &[f64] {
        &self.periods
    }

    #[inline]
    pub fn d(&self, i: usize, t: usize) -> f64 {
        self.d[i * self.periods.len() + t]
    }

    #[inline]
    pub fn y(&self, i: usize, t: usize) -> f64 {
        self.y[i * self.periods.len() + t]
    }

    /// Treatment path of unit `i`.
    pub fn d_row(&self, i: usize) -> &[f64] {
        let t = self.periods.len();
        &self.d[i * t..(i + 1) * t]
    }

    pub fn y_row(&self, i: usize) -> &[f64] {
        let t = self.periods.len();
        &self.y[i * t..(i + 1) * t]
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Whether weights were supplied explicitly rather than defaulted to 1.
    pub fn has_weights(&self) -> bool {
        self.weighted
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Panel made of the listed units, in that order. Repeated indices are
    /// allowed; the copies receive fresh ids so the result stays valid.
    pub fn resample(&self, indices: &[usize]) -> Panel {
        let t = self.n_periods();
        let mut d = Vec::with_capacity(indices.len() * t);
        let mut y = Vec::with_capacity(indices.len() * t);
        let mut weights = Vec::with_capacity(indices.len());
        let mut units = Vec::with_capacity(indices.len());
        for (k, &i) in indices.iter().enumerate() {
            d.extend_from_slice(self.d_row(i));
            y.extend_from_slice(self.y_row(i));
            weights.push(self.weights[i]);
            units.push(format!("{}#{k}", self.units[i]));
        }
        Panel {
            units,
            periods: self.periods.clone(),
            d,
            y,
            weights,
            weighted: self.weighted,
        }
    }

    /// Subset of units keeping their original ids.
    pub fn subset(&self, indices: &[usize]) -> Result<Panel> {
        let t = self.n_periods();
        let mut d = Vec::with_capacity(indices.len() * t);
        let mut y = Vec::with_capacity(indices.len() * t);
        for &i in indices {
            d.extend_from_slice(self.d_row(i));
            y.extend_from_slice(self.y_row(i));
        }
        let weights = indices.iter().map(|&i| self.weights[i]).collect();
        let units = indices.iter().map(|&i| self.units[i].clone()).collect();
        let mut out = Panel::new(units, self.periods.clone(), d, y, Some(weights))?;
        out.weighted = self.weighted;
        Ok(out)
    }

    /// Returns a copy whose outcomes are `f(i, t, y_it)`.
    pub fn map_outcomes(&self, f: impl Fn(usize, usize, f64) -> f64) -> Panel {
        let t = self.n_periods();
        let mut out = self.clone();
        for (k, v) in out.y.iter_mut().enumerate() {
            *v = f(k / t, k % t, *v);
        }
        out
    }

    /// Returns a copy whose treatments are `f(i, t, d_it)`.
    pub fn map_treatments(&self, f: impl Fn(usize, usize, f64) -> f64) -> Panel {
        let t = self.n_periods();
        let mut out = self.clone();
        for (k, v) in out.d.iter_mut().enumerate() {
            *v = f(k / t, k % t, *v);
        }
        out
    }

    /// Writes the long format `unit,time,d,y[,weight]`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        if self.weighted {
            w.write_record(["unit", "time", "d", "y", "weight"])
                .map_err(io)?;
        } else {
            w.write_record(["unit", "time", "d", "y"]).map_err(io)?;
        }
        for i in 0..self.n_units() {
            for t in 0..self.n_periods() {
                let mut rec = vec![
                    self.units[i].clone(),
                    self.periods[t].to_string(),
                    self.d(i, t).to_string(),
                    self.y(i, t).to_string(),
                ];
                if self.weighted {
                    rec.push(self.weights[i].to_string());
                }
                w.write_record(&rec).map_err(io)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Column mapping for [`ingest`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub unit: String,
    pub time: String,
    pub d: String,
    pub y: String,
    pub weight: Option<String>,
    pub delimiter: u8,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            unit: "unit".into(),
            time: "time".into(),
            d: "d".into(),
            y: "y".into(),
            weight: None,
            delimiter: b',',
        }
    }
}

fn parse_finite(raw: &str, row: usize, column: &str) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::ParseError {
            row,
            column: column.to_string(),
            value: raw.to_string(),
        })
}

fn period_key(p: f64) -> u64 {
    // -0.0 and 0.0 are the same period
    (p + 0.0).to_bits()
}

/// Reads a delimited text table with a header row into a balanced [`Panel`].
///
/// Units are ordered numerically when every id parses as an integer and
/// lexicographically otherwise, so row order never affects the result.
/// Row numbers in errors count the header as row 1.
pub fn ingest<R: Read>(source: R, schema: &Schema) -> Result<Panel> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| Error::Io(e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let ci = col(&schema.unit)?;
    let ct = col(&schema.time)?;
    let cd = col(&schema.d)?;
    let cy = col(&schema.y)?;
    let cw = schema.weight.as_deref().map(col).transpose()?;

    struct Row {
        unit: String,
        period: f64,
        d: f64,
        y: f64,
        w: Option<f64>,
        row: usize,
    }
    let mut rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| Error::Io(e.to_string()))?;
        let field = |c: usize, name: &str| {
            rec.get(c).ok_or_else(|| Error::ParseError {
                row,
                column: name.to_string(),
                value: String::new(),
            })
        };
        let unit = field(ci, &schema.unit)?.to_string();
        let period = parse_finite(field(ct, &schema.time)?, row, &schema.time)?;
        let d = parse_finite(field(cd, &schema.d)?, row, &schema.d)?;
        let y = parse_finite(field(cy, &schema.y)?, row, &schema.y)?;
        let w = match (cw, &schema.weight) {
            (Some(c), Some(name)) => Some(parse_finite(field(c, name)?, row, name)?),
            _ => None,
        };
        rows.push(Row {
            unit,
            period,
            d,
            y,
            w,
            row,
        });
    }
    if rows.is_empty() {
        return Err(Error::InvalidPanel("no data rows".into()));
    }

    let mut periods: Vec<f64> = rows.iter().map(|r| r.period + 0.0).collect();
    periods.sort_by(f64::total_cmp);
    periods.dedup();
    let period_index: HashMap<u64, usize> = periods
        .iter()
        .enumerate()
        .map(|(k, p)| (period_key(*p), k))
        .collect();

    let mut units: Vec<String> = rows.iter().map(|r| r.unit.clone()).collect();
    units.sort();
    units.dedup();
    if units.iter().all(|u| u.parse::<i64>().is_ok()) {
        units.sort_by_key(|u| u.parse::<i64>().unwrap_or_default());
    }
    let unit_index: HashMap<&str, usize> = units
        .iter()
        .enumerate()
        .map(|(k, u)| (u.as_str(), k))
        .collect();

    let n = units.len();
    let tn = periods.len();
    let mut d = vec![f64::NAN; n * tn];
    let mut y = vec![f64::NAN; n * tn];
    let mut filled = vec![false; n * tn];
    let mut weights: Vec<Option<f64>> = vec![None; n];
    for r in &rows {
        let i = unit_index[r.unit.as_str()];
        let t = period_index[&period_key(r.period)];
        let cell = i * tn + t;
        if filled[cell] {
            return Err(Error::DuplicateObservation {
                unit: r.unit.clone(),
                period: r.period.to_string(),
            });
        }
        filled[cell] = true;
        d[cell] = r.d;
        y[cell] = r.y;
        if let Some(w) = r.w {
            match weights[i] {
                Some(prev) if prev != w => {
                    return Err(Error::InvalidPanel(format!(
                        "row {}: weight for unit {} changes over time",
                        r.row, r.unit
                    )))
                }
                _ => weights[i] = Some(w),
            }
        }
    }
    for (i, u) in units.iter().enumerate() {
        for (t, p) in periods.iter().enumerate() {
            if !filled[i * tn + t] {
                return Err(Error::UnbalancedPanel {
                    unit: u.clone(),
                    period: p.to_string(),
                });
            }
        }
    }
    let weights = if cw.is_some() {
        Some(weights.into_iter().map(|w| w.unwrap_or(1.0)).collect())
    } else {
        None
    };
    Panel::new(units, periods, d, y, weights)
}

pub fn ingest_path(path: impl AsRef<Path>, schema: &Schema) -> Result<Panel> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    ingest(std::io::BufReader::new(file), schema)
}

/// Per-unit, per-transition mover indicators.
///
/// A unit is a stayer at transition `t` when `|D_t - D_{t-1}| <= tol`.
#[derive(Debug, Clone, PartialEq)]
pub struct MoverStatus {
    n: usize,
    n_periods: usize,
    tol: f64,
    dd: Vec<f64>,
    first_move: Vec<usize>,
}

/// Mover and stayer counts at one transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TransitionCounts {
    /// 1-based number of the later period.
    pub t: usize,
    pub movers: usize,
    pub increasers: usize,
    pub decreasers: usize,
    pub stayers: usize,
}

impl MoverStatus {
    pub fn n_units(&self) -> usize {
        self.n
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// `D_t - D_{t-1}` for transition `t` (0-based later period, `t >= 1`).
    #[inline]
    pub fn dd(&self, i: usize, t: usize) -> f64 {
        self.dd[i * (self.n_periods - 1) + (t - 1)]
    }

    #[inline]
    pub fn is_mover(&self, i: usize, t: usize) -> bool {
        self.dd(i, t).abs() > self.tol
    }

    #[inline]
    pub fn is_increaser(&self, i: usize, t: usize) -> bool {
        self.dd(i, t) > self.tol
    }

    #[inline]
    pub fn is_decreaser(&self, i: usize, t: usize) -> bool {
        self.dd(i, t) < -self.tol
    }

    /// `|dD| > delta`. The stayer tolerance acts as a floor so that
    /// `moved_beyond(.., 0)` coincides with [`MoverStatus::is_mover`].
    #[inline]
    pub fn moved_beyond(&self, i: usize, t: usize, delta: f64) -> bool {
        self.dd(i, t).abs() > delta.max(self.tol)
    }

    #[inline]
    pub fn increased_beyond(&self, i: usize, t: usize, delta: f64) -> bool {
        self.dd(i, t) > delta.max(self.tol)
    }

    #[inline]
    pub fn decreased_beyond(&self, i: usize, t: usize, delta: f64) -> bool {
        self.dd(i, t) < -delta.max(self.tol)
    }

    /// 0-based index of the first period whose treatment differs from the
    /// previous one; `T` when the unit never moves.
    #[inline]
    pub fn first_move(&self, i: usize) -> usize {
        self.first_move[i]
    }

    /// First-move date on the 1-based scale: `F` in `2..=T`, `T + 1` for
    /// never-movers.
    pub fn first_move_date(&self, i: usize) -> usize {
        self.first_move[i] + 1
    }

    pub fn counts(&self, t: usize) -> TransitionCounts {
        let mut c = TransitionCounts {
            t: t + 1,
            movers: 0,
            increasers: 0,
            decreasers: 0,
            stayers: 0,
        };
        for i in 0..self.n {
            if self.is_increaser(i, t) {
                c.increasers += 1;
            } else if self.is_decreaser(i, t) {
                c.decreasers += 1;
            } else {
                c.stayers += 1;
            }
        }
        c.movers = c.increasers + c.decreasers;
        c
    }

    pub fn all_counts(&self) -> Vec<TransitionCounts> {
        (1..self.n_periods).map(|t| self.counts(t)).collect()
    }
}

/// Classifies every unit at every transition. `tol` must be nonnegative.
pub fn classify(panel: &Panel, tol: f64) -> Result<MoverStatus> {
    if !(tol >= 0.0 && tol.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "stayer tolerance must be finite and >= 0, got {tol}"
        )));
    }
    let n = panel.n_units();
    let tn = panel.n_periods();
    let mut dd = Vec::with_capacity(n * (tn - 1));
    let mut first_move = Vec::with_capacity(n);
    for i in 0..n {
        let row = panel.d_row(i);
        let mut first = tn;
        for t in 1..tn {
            let change = row[t] - row[t - 1];
            if first == tn && change.abs() > tol {
                first = t;
            }
            dd.push(change);
        }
        first_move.push(first);
    }
    Ok(MoverStatus {
        n,
        n_periods: tn,
        tol,
        dd,
        first_move,
    })
}

/// Mover subpopulation used in overlap diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MoverClass {
    Movers,
    Increasers,
    Decreasers,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassOverlap {
    pub class: MoverClass,
    pub n_movers: usize,
    pub mover_range: [f64; 2],
    pub stayer_range: [f64; 2],
    /// Share of movers whose baseline treatment lies in the stayer range.
    pub inside_fraction: f64,
    /// Smallest predicted stayer probability at a mover's baseline value.
    pub min_stayer_probability: Option<f64>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionOverlap {
    pub t: usize,
    pub period: f64,
    pub n_stayers: usize,
    pub classes: Vec<ClassOverlap>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapReport {
    pub transitions: Vec<TransitionOverlap>,
    pub warnings: Vec<String>,
}

/// Probability threshold under which a stayer probability is flagged.
pub const MIN_STAYER_PROBABILITY: f64 = 0.01;

fn range(values: impl Iterator<Item = f64>) -> Option<[f64; 2]> {
    values.fold(None, |acc, v| match acc {
        None => Some([v, v]),
        Some([lo, hi]) => Some([lo.min(v), hi.max(v)]),
    })
}

/// Empirical support diagnostics per transition and mover class.
///
/// `pscores`, when given, maps a 0-based transition to a model whose class
/// 0 is the stayer class.
pub fn overlap_report(
    panel: &Panel,
    status: &MoverStatus,
    pscores: Option<&BTreeMap<usize, PscoreModel>>,
) -> Result<OverlapReport> {
    let mut transitions = Vec::new();
    let mut warnings = Vec::new();
    for t in 1..panel.n_periods() {
        let stayers: Vec<f64> = (0..panel.n_units())
            .filter(|&i| !status.is_mover(i, t))
            .map(|i| panel.d(i, t - 1))
            .collect();
        let stayer_range = range(stayers.iter().copied()).ok_or(Error::NoStayers { t: t + 1 })?;
        let mut classes = Vec::new();
        for class in [
            MoverClass::Movers,
            MoverClass::Increasers,
            MoverClass::Decreasers,
        ] {
            let member = |i: usize| match class {
                MoverClass::Movers => status.is_mover(i, t),
                MoverClass::Increasers => status.is_increaser(i, t),
                MoverClass::Decreasers => status.is_decreaser(i, t),
            };
            let base: Vec<f64> = (0..panel.n_units())
                .filter(|&i| member(i))
                .map(|i| panel.d(i, t - 1))
                .collect();
            let Some(mover_range) = range(base.iter().copied()) else {
                continue;
            };
            let inside = base
                .iter()
                .filter(|&&x| x >= stayer_range[0] && x <= stayer_range[1])
                .count();
            let inside_fraction = inside as f64 / base.len() as f64;
            let min_stayer_probability = pscores.and_then(|m| m.get(&t)).map(|model| {
                base.iter()
                    .map(|&x| model.predict(x)[0])
                    .fold(f64::INFINITY, f64::min)
            });
            let mut flags = Vec::new();
            if inside < base.len() {
                flags.push("mover_outside_stayer_range".to_string());
            }
            if min_stayer_probability.is_some_and(|p| p < MIN_STAYER_PROBABILITY) {
                flags.push("low_stayer_probability".to_string());
            }
            for f in &flags {
                warnings.push(format!("t={}: {:?}: {f}", t + 1, class).to_lowercase());
            }
            classes.push(ClassOverlap {
                class,
                n_movers: base.len(),
                mover_range,
                stayer_range,
                inside_fraction,
                min_stayer_probability,
                flags,
            });
        }
        transitions.push(TransitionOverlap {
            t: t + 1,
            period: panel.periods()[t],
            n_stayers: stayers.len(),
            classes,
        });
    }
    Ok(OverlapReport {
        transitions,
        warnings,
    })
}

/// Position of a unit's treatment path relative to its first-period value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineClass {
    /// `D_t >= D_1` in every period (includes units that never move).
    AlwaysAbove,
    /// `D_t <= D_1` in every period with at least one strict decrease.
    AlwaysBelow,
    /// Above the baseline in some period and below it in another.
    Mixed,
}

/// Compares every `D_t` with `D_1`; differences within `tol` count as equal.
pub fn check_monotone_baseline(panel: &Panel, tol: f64) -> Vec<BaselineClass> {
    (0..panel.n_units())
        .map(|i| {
            let row = panel.d_row(i);
            let above = row.iter().any(|&d| d - row[0] > tol);
            let below = row.iter().any(|&d| row[0] - d > tol);
            match (above, below) {
                (true, true) => BaselineClass::Mixed,
                (false, true) => BaselineClass::AlwaysBelow,
                _ => BaselineClass::AlwaysAbove,
            }
        })
        .collect()
}
