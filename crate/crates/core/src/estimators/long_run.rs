use super::{
    aggregate, check_status, residuals, transition_key, weighted_share, CefConfig, Component,
    Estimate, Method, Sample, Target, TrimRule, Tuning,
};
use crate::error::{Error, Result};
use crate::panel::{MoverStatus, Panel};

/// Which units serve as controls for the long-run comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LongRunControls {
    /// Units that stay at `t` and through `t + l`.
    #[default]
    WindowStayers,
    /// Units whose first move comes after `t + l`. Excludes units that moved
    /// before `t`, whose lagged effects would otherwise leak into the control
    /// outcome changes.
    NotYetMoved,
}

impl LongRunControls {
    fn name(self) -> &'static str {
        match self {
            LongRunControls::WindowStayers => "window_stayers",
            LongRunControls::NotYetMoved => "not_yet_moved",
        }
    }
}

/// Long-run slopes of the period-`t` movers that keep their new treatment
/// for `ell` more periods, aggregated over `t` with weights proportional to
/// the weighted share of such movers.
///
/// Per `t`, a mover contributes `(Y_{t+l} - Y_{t-1} - cef(D_{t-1})) / dD_t`
/// where the control regression of `Y_{t+l} - Y_{t-1}` on `D_{t-1}` is fit on
/// the chosen control set. Transitions without eligible movers or controls
/// are dropped and listed in the notes.
pub fn long_run_reg(
    panel: &Panel,
    status: &MoverStatus,
    ell: usize,
    cef: &CefConfig,
    trim: &TrimRule,
    controls_kind: LongRunControls,
) -> Result<Estimate> {
    check_status(panel, status)?;
    let n = panel.n_units();
    let tn = panel.n_periods();
    if ell + 2 > tn {
        return Err(Error::InvalidArgument(format!(
            "horizon l={ell} needs at least {} periods",
            ell + 2
        )));
    }
    let mut tuning = Tuning {
        tol: status.tol(),
        controls: Some(controls_kind.name().into()),
        trim_rule: Some(trim.describe()),
        ..Tuning::default()
    };
    cef.echo(&mut tuning);
    let stays_through = |i: usize, t: usize| (t + 1..=t + ell).all(|k| !status.is_mover(i, k));

    let mut components = Vec::new();
    let mut notes = Vec::new();
    let (mut n_movers, mut n_trimmed, mut n_controls) = (0, 0, 0);
    let mut missing_controls = None;
    for t in 1..tn - ell {
        let eligible: Vec<usize> = (0..n)
            .filter(|&i| status.is_mover(i, t) && stays_through(i, t))
            .collect();
        if eligible.is_empty() {
            notes.push(format!("t={}: no eligible movers", t + 1));
            continue;
        }
        let is_control = |i: usize| match controls_kind {
            LongRunControls::WindowStayers => !status.is_mover(i, t) && stays_through(i, t),
            LongRunControls::NotYetMoved => status.first_move(i) > t + ell,
        };
        let dy = |i: usize| panel.y(i, t + ell) - panel.y(i, t - 1);
        let mut controls = Sample::default();
        for i in (0..n).filter(|&i| is_control(i)) {
            controls.push(i, panel.d(i, t - 1), dy(i), panel.weight(i));
        }
        if controls.len() < 2 {
            notes.push(format!("t={}: no eligible controls", t + 1));
            missing_controls.get_or_insert(t + 1);
            continue;
        }
        n_movers += eligible.len();
        n_controls += controls.len();
        let all_mover_dd: Vec<f64> = (0..n)
            .filter(|&i| status.is_mover(i, t))
            .map(|i| status.dd(i, t))
            .collect();
        let trim_value = trim.threshold(t, &all_mover_dd);
        tuning.trims.insert(transition_key(t), trim_value);
        let key = format!("t={};l={ell}", t + 1);
        let model = cef.fit(&key, &controls.x, &controls.dy, &controls.w)?;
        tuning.bandwidths.insert(key, model.bandwidth());

        let mut movers = Sample::default();
        let mut trimmed = 0;
        for &i in &eligible {
            if status.dd(i, t).abs() <= trim_value {
                trimmed += 1;
            } else {
                movers.push(i, panel.d(i, t - 1), dy(i), panel.weight(i));
            }
        }
        n_trimmed += trimmed;
        let res = residuals(&model, &movers)?;
        let (mut num, mut den) = (0.0, 0.0);
        for &(j, r) in &res.kept {
            num += movers.w[j] * r / status.dd(movers.units[j], t);
            den += movers.w[j];
        }
        if res.kept.is_empty() || !(den > 0.0) {
            notes.push(format!("t={}: no usable movers", t + 1));
            continue;
        }
        components.push(Component {
            t: t + 1 + ell,
            cohort: Some(t + 1),
            value: num / den,
            share: weighted_share(panel, eligible.iter().copied()),
            n_movers: eligible.len(),
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
        return Err(match missing_controls {
            Some(t) => Error::NoEligibleControls { t, ell },
            None => Error::NoEligibleMovers { ell },
        });
    }
    if n_trimmed == n_movers {
        return Err(Error::AllMoversTrimmed);
    }
    let value = aggregate(&mut components).ok_or(Error::NoSupportedMovers)?;
    let used: usize = components.iter().map(|c| c.n_used).sum();
    let mut est = Estimate::new(Target::Delta1LongRun, Method::Regression, value);
    est.ell = Some(ell);
    est.n_movers = n_movers;
    est.n_movers_used = used;
    est.n_movers_dropped = n_movers - used;
    est.n_controls = n_controls;
    est.details.insert("n_trimmed".into(), n_trimmed as f64);
    est.tuning = tuning;
    est.components = components;
    est.notes = notes;
    Ok(est)
}
