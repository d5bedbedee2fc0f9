use super::{
    aggregate, check_status, quasi_key, residuals, transition_key, validate_delta_grid,
    weighted_share, CefConfig, Component, CurvePoint, Estimate, Method, Sample, Target, TrimRule,
    Tuning, MIN_QUASI_STAYERS,
};
use crate::error::{Error, Result};
use crate::panel::{MoverStatus, Panel};

/// Average of movers' slopes: per transition, the weighted mean over movers
/// of `(dY - cef_t(D_{t-1})) / dD`, aggregated with weights proportional to
/// the weighted mover share of each transition.
///
/// The control regression of each transition is fit on its stayers. Movers
/// with `|dD|` at or below the trimming threshold, and movers whose baseline
/// treatment lacks control support, are dropped and counted.
pub fn ampos_reg(
    panel: &Panel,
    status: &MoverStatus,
    cef: &CefConfig,
    trim: &TrimRule,
) -> Result<Estimate> {
    check_status(panel, status)?;
    ampos_core(panel, status, cef, trim, None)
}

/// Quasi-stayer version of [`ampos_reg`] evaluated on a strictly decreasing
/// grid of thresholds.
///
/// At threshold `delta` the controls are units with `|dD| <= delta` and the
/// movers are units with `|dD| > delta`. A grid point is feasible when every
/// transition with movers has at least [`MIN_QUASI_STAYERS`] controls and the
/// estimator succeeds. The headline value comes from the smallest feasible
/// threshold and the whole curve is attached.
pub fn ampos_nostayers(
    panel: &Panel,
    status: &MoverStatus,
    cef: &CefConfig,
    trim: &TrimRule,
    delta_grid: &[f64],
) -> Result<Estimate> {
    check_status(panel, status)?;
    validate_delta_grid(delta_grid)?;
    let mut curve = Vec::with_capacity(delta_grid.len());
    let mut headline: Option<Estimate> = None;
    let mut all_bandwidths = std::collections::BTreeMap::new();
    let mut last_err = None;
    for &delta in delta_grid {
        match ampos_core(panel, status, cef, trim, Some(delta)) {
            Ok(est) => {
                all_bandwidths.extend(est.tuning.bandwidths.clone());
                curve.push(CurvePoint {
                    delta,
                    value: Some(est.value),
                    n_movers_used: est.n_movers_used,
                    min_controls: min_controls(panel, status, delta),
                    error: None,
                });
                headline = Some(est);
            }
            Err(e) => {
                curve.push(CurvePoint {
                    delta,
                    value: None,
                    n_movers_used: 0,
                    min_controls: min_controls(panel, status, delta),
                    error: Some(e.code().to_string()),
                });
                last_err = Some(e);
            }
        }
    }
    let mut est = match headline {
        Some(e) => e,
        None => return Err(last_err.unwrap_or(Error::NoMovers)),
    };
    est.tuning.bandwidths = all_bandwidths;
    est.tuning.delta_grid = Some(delta_grid.to_vec());
    est.curve = Some(curve);
    Ok(est)
}

/// Fewest quasi-stayers over transitions that have movers beyond `delta`.
pub(crate) fn min_controls(panel: &Panel, status: &MoverStatus, delta: f64) -> usize {
    (1..panel.n_periods())
        .filter(|&t| (0..panel.n_units()).any(|i| status.moved_beyond(i, t, delta)))
        .map(|t| {
            (0..panel.n_units())
                .filter(|&i| !status.moved_beyond(i, t, delta))
                .count()
        })
        .min()
        .unwrap_or(0)
}

fn ampos_core(
    panel: &Panel,
    status: &MoverStatus,
    cef: &CefConfig,
    trim: &TrimRule,
    delta: Option<f64>,
) -> Result<Estimate> {
    let n = panel.n_units();
    let thr = delta.unwrap_or(0.0);
    let mut tuning = Tuning {
        tol: status.tol(),
        controls: Some(
            if delta.is_some() {
                "quasi_stayers"
            } else {
                "stayers"
            }
            .into(),
        ),
        trim_rule: Some(trim.describe()),
        delta,
        ..Tuning::default()
    };
    cef.echo(&mut tuning);

    let mut components = Vec::new();
    let mut notes = Vec::new();
    let (mut n_movers, mut n_trimmed, mut n_unsupported, mut n_controls) = (0, 0, 0, 0);
    for t in 1..panel.n_periods() {
        let movers_idx: Vec<usize> = (0..n).filter(|&i| status.moved_beyond(i, t, thr)).collect();
        if movers_idx.is_empty() {
            continue;
        }
        n_movers += movers_idx.len();
        let dy = |i: usize| panel.y(i, t) - panel.y(i, t - 1);
        let mut controls = Sample::default();
        for i in (0..n).filter(|&i| !status.moved_beyond(i, t, thr)) {
            controls.push(i, panel.d(i, t - 1), dy(i), panel.weight(i));
        }
        match delta {
            None if controls.is_empty() => return Err(Error::NoStayers { t: t + 1 }),
            Some(delta) if controls.len() < MIN_QUASI_STAYERS => {
                return Err(Error::NoQuasiStayers { delta })
            }
            _ => {}
        }
        n_controls += controls.len();

        let all_mover_dd: Vec<f64> = (0..n)
            .filter(|&i| status.is_mover(i, t))
            .map(|i| status.dd(i, t))
            .collect();
        let trim_value = trim.threshold(t, &all_mover_dd);
        tuning.trims.insert(transition_key(t), trim_value);

        let key = delta.map_or_else(|| transition_key(t), |d| quasi_key(t, d));
        let model = cef.fit(&key, &controls.x, &controls.dy, &controls.w)?;
        tuning.bandwidths.insert(key, model.bandwidth());

        let mut movers = Sample::default();
        let mut trimmed = 0;
        for &i in &movers_idx {
            if status.dd(i, t).abs() <= trim_value {
                trimmed += 1;
            } else {
                movers.push(i, panel.d(i, t - 1), dy(i), panel.weight(i));
            }
        }
        n_trimmed += trimmed;
        let res = residuals(&model, &movers)?;
        n_unsupported += res.n_unsupported;

        let mut num = 0.0;
        let mut den = 0.0;
        for &(j, r) in &res.kept {
            let i = movers.units[j];
            num += movers.w[j] * r / status.dd(i, t);
            den += movers.w[j];
        }
        if res.kept.is_empty() || !(den > 0.0) {
            notes.push(format!("t={}: no usable movers", t + 1));
            continue;
        }
        components.push(Component {
            t: t + 1,
            value: num / den,
            share: weighted_share(panel, movers_idx.iter().copied()),
            n_movers: movers_idx.len(),
            n_used: res.kept.len(),
            n_trimmed: trimmed,
            n_unsupported: res.n_unsupported,
            n_controls: controls.len(),
            bandwidth: Some(model.bandwidth()),
            trim: Some(trim_value),
            n_fallback: res.n_fallback,
            ..Component::default()
        });
    }
    if n_movers == 0 {
        return Err(Error::NoMovers);
    }
    if n_trimmed == n_movers {
        return Err(Error::AllMoversTrimmed);
    }
    let value = aggregate(&mut components).ok_or(Error::NoSupportedMovers)?;
    let n_used: usize = components.iter().map(|c| c.n_used).sum();
    let mut est = Estimate::new(Target::Delta1, Method::Regression, value);
    est.n_movers = n_movers;
    est.n_movers_used = n_used;
    est.n_movers_dropped = n_movers - n_used;
    est.n_controls = n_controls;
    est.details.insert("n_trimmed".into(), n_trimmed as f64);
    est.details
        .insert("n_unsupported".into(), n_unsupported as f64);
    est.tuning = tuning;
    est.components = components;
    est.notes = notes;
    Ok(est)
}
