use super::ampos::min_controls;
use super::{
    aggregate, check_status, residuals, transition_key, validate_delta_grid, weighted_share,
    CefConfig, Component, CurvePoint, Direction, Estimate, Method, Sample, Target, Tuning,
    MIN_QUASI_STAYERS,
};
use crate::error::{Error, Result};
use crate::panel::{MoverStatus, Panel};
use crate::propensity::{fit_pscore, reweight};

/// Weighted average slopes of increasers, decreasers, and both combined by
/// their mover shares.
#[derive(Debug, Clone, PartialEq)]
pub struct Wampos {
    pub increasers: Result<Estimate>,
    pub decreasers: Result<Estimate>,
    pub combined: Result<Estimate>,
    /// Share of increasers among the movers entering the combination.
    pub share_increasers: Option<f64>,
}

impl Wampos {
    pub fn get(&self, target: Target) -> Option<&Result<Estimate>> {
        match target {
            Target::Delta2i => Some(&self.increasers),
            Target::Delta2d => Some(&self.decreasers),
            Target::Delta2 => Some(&self.combined),
            _ => None,
        }
    }

    /// The three results in the order increasers, decreasers, combined.
    pub fn results(&self) -> [(Target, &Result<Estimate>); 3] {
        [
            (Target::Delta2i, &self.increasers),
            (Target::Delta2d, &self.decreasers),
            (Target::Delta2, &self.combined),
        ]
    }
}

const DIRECTIONS: [Direction; 2] = [Direction::Increase, Direction::Decrease];

fn in_direction(status: &MoverStatus, i: usize, t: usize, dir: Direction, thr: f64) -> bool {
    match dir {
        Direction::Increase => status.increased_beyond(i, t, thr),
        Direction::Decrease => status.decreased_beyond(i, t, thr),
    }
}

/// Per-direction bookkeeping collected over transitions.
#[derive(Default)]
struct DirectionParts {
    components: Vec<Component>,
    n_movers: usize,
}

/// Regression form: per transition and direction, the weighted mean of
/// `dY - cef_t(D_{t-1})` over movers divided by their weighted mean `dD`.
/// Transitions are aggregated with weights proportional to the weighted
/// share of each direction's movers.
pub fn wampos_reg(panel: &Panel, status: &MoverStatus, cef: &CefConfig) -> Result<Wampos> {
    check_status(panel, status)?;
    let n = panel.n_units();
    let mut tuning = Tuning {
        tol: status.tol(),
        controls: Some("stayers".into()),
        ..Tuning::default()
    };
    cef.echo(&mut tuning);
    let mut parts = [DirectionParts::default(), DirectionParts::default()];
    let mut n_controls = 0;
    let mut notes = Vec::new();
    for t in 1..panel.n_periods() {
        if !(0..n).any(|i| status.is_mover(i, t)) {
            continue;
        }
        let dy = |i: usize| panel.y(i, t) - panel.y(i, t - 1);
        let mut controls = Sample::default();
        for i in (0..n).filter(|&i| !status.is_mover(i, t)) {
            controls.push(i, panel.d(i, t - 1), dy(i), panel.weight(i));
        }
        if controls.is_empty() {
            return Err(Error::NoStayers { t: t + 1 });
        }
        n_controls += controls.len();
        let key = transition_key(t);
        let model = cef.fit(&key, &controls.x, &controls.dy, &controls.w)?;
        tuning.bandwidths.insert(key, model.bandwidth());

        for (k, dir) in DIRECTIONS.into_iter().enumerate() {
            let idx: Vec<usize> = (0..n)
                .filter(|&i| in_direction(status, i, t, dir, 0.0))
                .collect();
            if idx.is_empty() {
                continue;
            }
            parts[k].n_movers += idx.len();
            let mut movers = Sample::default();
            for &i in &idx {
                movers.push(i, panel.d(i, t - 1), dy(i), panel.weight(i));
            }
            let res = residuals(&model, &movers)?;
            let (mut num, mut den, mut wsum) = (0.0, 0.0, 0.0);
            for &(j, r) in &res.kept {
                let w = movers.w[j];
                num += w * r;
                den += w * status.dd(movers.units[j], t);
                wsum += w;
            }
            if res.kept.is_empty() || !(wsum > 0.0) {
                notes.push(format!("t={}: no usable {dir:?} movers", t + 1).to_lowercase());
                continue;
            }
            let (num, den) = (num / wsum, den / wsum);
            parts[k].components.push(Component {
                t: t + 1,
                direction: Some(dir),
                value: num / den,
                share: weighted_share(panel, idx.iter().copied()),
                n_movers: idx.len(),
                n_used: res.kept.len(),
                n_unsupported: res.n_unsupported,
                n_controls: controls.len(),
                numerator: Some(num),
                denominator: Some(den),
                bandwidth: Some(model.bandwidth()),
                n_fallback: res.n_fallback,
                ..Component::default()
            });
        }
    }
    assemble(Method::Regression, tuning, parts, n_controls, notes)
}

/// Propensity-score form: per transition and direction, the weighted mean
/// `dY` of movers minus the reweighted mean `dY` of stayers, divided by the
/// movers' weighted mean `dD`.
///
/// One multinomial logit of {stayer, increaser, decreaser} on `D_{t-1}` is
/// fit per transition. Control weights are Hajek-normalized.
pub fn wampos_ps(
    panel: &Panel,
    status: &MoverStatus,
    degree: usize,
    clip: Option<f64>,
) -> Result<Wampos> {
    check_status(panel, status)?;
    wampos_ps_core(panel, status, degree, clip, None)
}

/// Quasi-stayer version of [`wampos_ps`] over a strictly decreasing grid of
/// thresholds. At threshold `delta`, units with `|dD| <= delta` are the
/// controls and the movers are units whose treatment changes by more than
/// `delta`; the propensity model is refit at every grid point. Each headline
/// estimate comes from the smallest feasible threshold and carries its curve.
pub fn wampos_ps_nostayers(
    panel: &Panel,
    status: &MoverStatus,
    degree: usize,
    clip: Option<f64>,
    delta_grid: &[f64],
) -> Result<Wampos> {
    check_status(panel, status)?;
    validate_delta_grid(delta_grid)?;
    let runs: Vec<(f64, Result<Wampos>)> = delta_grid
        .iter()
        .map(|&delta| {
            (
                delta,
                wampos_ps_core(panel, status, degree, clip, Some(delta)),
            )
        })
        .collect();
    let Some((delta, headline)) = runs
        .iter()
        .rev()
        .find_map(|(d, r)| r.as_ref().ok().map(|w| (*d, w)))
    else {
        let (_, last) = runs.into_iter().next_back().expect("grid is not empty");
        return Err(last.expect_err("no feasible grid point"));
    };
    let curve_for = |target: Target| -> Vec<CurvePoint> {
        runs.iter()
            .map(|(d, r)| {
                let res = match r {
                    Ok(w) => w.get(target).expect("wampos target").clone(),
                    Err(e) => Err(e.clone()),
                };
                CurvePoint {
                    delta: *d,
                    value: res.as_ref().ok().map(|e| e.value),
                    n_movers_used: res.as_ref().map_or(0, |e| e.n_movers_used),
                    min_controls: min_controls(panel, status, *d),
                    error: res.err().map(|e| e.code().to_string()),
                }
            })
            .collect()
    };
    let attach = |r: &Result<Estimate>, target: Target| {
        r.clone().map(|mut e| {
            e.tuning.delta = Some(delta);
            e.tuning.delta_grid = Some(delta_grid.to_vec());
            e.curve = Some(curve_for(target));
            e
        })
    };
    Ok(Wampos {
        increasers: attach(&headline.increasers, Target::Delta2i),
        decreasers: attach(&headline.decreasers, Target::Delta2d),
        combined: attach(&headline.combined, Target::Delta2),
        share_increasers: headline.share_increasers,
    })
}

fn wampos_ps_core(
    panel: &Panel,
    status: &MoverStatus,
    degree: usize,
    clip: Option<f64>,
    delta: Option<f64>,
) -> Result<Wampos> {
    let n = panel.n_units();
    let thr = delta.unwrap_or(0.0);
    let tuning = Tuning {
        tol: status.tol(),
        controls: Some(
            if delta.is_some() {
                "quasi_stayers"
            } else {
                "stayers"
            }
            .into(),
        ),
        pscore_degree: Some(degree),
        clip,
        delta,
        ..Tuning::default()
    };
    let mut parts = [DirectionParts::default(), DirectionParts::default()];
    let mut n_controls = 0;
    let mut notes = Vec::new();
    for t in 1..panel.n_periods() {
        let label_of = |i: usize| {
            if status.increased_beyond(i, t, thr) {
                1
            } else if status.decreased_beyond(i, t, thr) {
                2
            } else {
                0
            }
        };
        let raw: Vec<usize> = (0..n).map(label_of).collect();
        let mut present = [false; 3];
        for &l in &raw {
            present[l] = true;
        }
        if !present[1] && !present[2] {
            continue;
        }
        let n_ctrl = raw.iter().filter(|&&l| l == 0).count();
        match delta {
            None if n_ctrl == 0 => return Err(Error::NoStayers { t: t + 1 }),
            Some(delta) if n_ctrl < MIN_QUASI_STAYERS => {
                return Err(Error::NoQuasiStayers { delta })
            }
            _ => {}
        }
        n_controls += n_ctrl;

        // Compact class indices: control is always 0.
        let names = ["control", "increase", "decrease"];
        let mut index = [usize::MAX; 3];
        let mut classes = Vec::new();
        for k in 0..3 {
            if present[k] {
                index[k] = classes.len();
                classes.push(names[k]);
            }
        }
        let labels: Vec<usize> = raw.iter().map(|&l| index[l]).collect();
        let x: Vec<f64> = (0..n).map(|i| panel.d(i, t - 1)).collect();
        let model = fit_pscore(&x, &labels, panel.weights(), &classes, degree)?;
        if !model.converged() {
            notes.push(format!("t={}: propensity fit hit the iteration cap", t + 1));
        }

        let dy = |i: usize| panel.y(i, t) - panel.y(i, t - 1);
        let mut controls = Sample::default();
        for i in (0..n).filter(|&i| raw[i] == 0) {
            controls.push(i, x[i], dy(i), panel.weight(i));
        }
        for (k, dir) in DIRECTIONS.into_iter().enumerate() {
            if !present[k + 1] {
                continue;
            }
            let idx: Vec<usize> = (0..n).filter(|&i| raw[i] == k + 1).collect();
            parts[k].n_movers += idx.len();
            let wv = reweight(&model, &controls.x, &controls.w, index[k + 1], 0, clip)?;
            let (mut cnum, mut cden) = (0.0, 0.0);
            for j in 0..controls.len() {
                let ww = controls.w[j] * wv.weights[j];
                cnum += ww * controls.dy[j];
                cden += ww;
            }
            let (mut mdy, mut mdd, mut mw) = (0.0, 0.0, 0.0);
            for &i in &idx {
                let w = panel.weight(i);
                mdy += w * dy(i);
                mdd += w * status.dd(i, t);
                mw += w;
            }
            if !(cden > 0.0 && mw > 0.0) {
                notes.push(
                    format!("t={}: zero total weight for {dir:?} movers", t + 1).to_lowercase(),
                );
                continue;
            }
            let num = mdy / mw - cnum / cden;
            let den = mdd / mw;
            parts[k].components.push(Component {
                t: t + 1,
                direction: Some(dir),
                value: num / den,
                share: weighted_share(panel, idx.iter().copied()),
                n_movers: idx.len(),
                n_used: idx.len(),
                n_controls: controls.len(),
                numerator: Some(num),
                denominator: Some(den),
                n_clipped: wv.n_clipped,
                mean_weight_before_clip: Some(wv.mean_before_clip),
                ..Component::default()
            });
        }
    }
    assemble(Method::Pscore, tuning, parts, n_controls, notes)
}

fn direction_estimate(
    target: Target,
    method: Method,
    tuning: &Tuning,
    mut part: DirectionParts,
    n_controls: usize,
    empty: Error,
) -> Result<Estimate> {
    if part.n_movers == 0 {
        return Err(empty);
    }
    let value = aggregate(&mut part.components).ok_or(Error::NoSupportedMovers)?;
    let mut est = Estimate::new(target, method, value);
    fill_counts(&mut est, part.n_movers, &part.components, n_controls);
    est.tuning = tuning.clone();
    est.components = part.components;
    Ok(est)
}

fn fill_counts(est: &mut Estimate, n_movers: usize, components: &[Component], n_controls: usize) {
    let used: usize = components.iter().map(|c| c.n_used).sum();
    est.n_movers = n_movers;
    est.n_movers_used = used;
    est.n_movers_dropped = n_movers - used;
    est.n_controls = n_controls;
    let unsupported: usize = components.iter().map(|c| c.n_unsupported).sum();
    est.details
        .insert("n_unsupported".into(), unsupported as f64);
}

fn assemble(
    method: Method,
    tuning: Tuning,
    parts: [DirectionParts; 2],
    n_controls: usize,
    notes: Vec<String>,
) -> Result<Wampos> {
    let [inc, dec] = parts;
    if inc.n_movers == 0 && dec.n_movers == 0 {
        return Err(Error::NoMovers);
    }
    let (n_inc, n_dec) = (inc.n_movers, dec.n_movers);
    let share_inc_est: f64 = inc.components.iter().map(|c| c.share).sum();
    let share_dec_est: f64 = dec.components.iter().map(|c| c.share).sum();
    let mut all_components: Vec<Component> = inc
        .components
        .iter()
        .chain(&dec.components)
        .cloned()
        .collect();
    all_components.sort_by_key(|c| (c.t, c.direction != Some(Direction::Increase)));

    let mut increasers = direction_estimate(
        Target::Delta2i,
        method,
        &tuning,
        inc,
        n_controls,
        Error::NoIncreasers,
    );
    let mut decreasers = direction_estimate(
        Target::Delta2d,
        method,
        &tuning,
        dec,
        n_controls,
        Error::NoDecreasers,
    );
    for e in [&mut increasers, &mut decreasers].into_iter().flatten() {
        e.notes = notes.clone();
    }

    let share = match (&increasers, &decreasers) {
        (Ok(_), Ok(_)) => Ok(share_inc_est / (share_inc_est + share_dec_est)),
        (Ok(_), Err(_)) if n_dec == 0 => Ok(1.0),
        (Err(_), Ok(_)) if n_inc == 0 => Ok(0.0),
        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
    };
    let combined = share.map(|s| {
        let vi = increasers.as_ref().map_or(0.0, |e| e.value);
        let vd = decreasers.as_ref().map_or(0.0, |e| e.value);
        // Written so that the identity with the reported share is exact
        // whenever only one direction is present.
        let value = if s == 1.0 {
            vi
        } else if s == 0.0 {
            vd
        } else {
            s * vi + (1.0 - s) * vd
        };
        let mut est = Estimate::new(Target::Delta2, method, value);
        let total = share_inc_est + share_dec_est;
        for c in &mut all_components {
            c.weight = c.share / total;
        }
        fill_counts(&mut est, n_inc + n_dec, &all_components, n_controls);
        est.details.insert("share_increasers".into(), s);
        est.tuning = tuning.clone();
        est.components = all_components;
        est.notes = notes;
        est
    });
    let share_increasers = combined
        .as_ref()
        .ok()
        .map(|e| e.details["share_increasers"]);
    Ok(Wampos {
        increasers,
        decreasers,
        combined,
        share_increasers,
    })
}
