use serde::Serialize;

use super::{
    aggregate, check_status, residuals, CefConfig, Component, Estimate, Method, Sample, Target,
    Tuning,
};
use crate::error::{Error, Result};
use crate::panel::{check_monotone_baseline, BaselineClass, MoverStatus, Panel};
use crate::propensity::{fit_pscore, reweight};

/// Treatment of units that move below their first-period treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// Keep units that never go below their baseline; drop the others.
    #[default]
    AboveOnly,
    /// Also run the estimator on units that never go above their baseline
    /// (plus never-movers) and report that subsample with flipped signs.
    SignSplit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicConfig {
    /// Largest horizon; defaults to `T - 2`.
    pub lmax: Option<usize>,
    pub method: Method,
    pub cef: CefConfig,
    pub pscore_degree: usize,
    pub clip: Option<f64>,
    pub baseline: BaselineMode,
}

impl Default for DynamicConfig {
    fn default() -> Self {
        Self {
            lmax: None,
            method: Method::Regression,
            cef: CefConfig::default(),
            pscore_degree: 2,
            clip: Some(crate::propensity::DEFAULT_CLIP),
            baseline: BaselineMode::AboveOnly,
        }
    }
}

/// Reduced-form effects by horizon, the matching treatment increments, and
/// their cost-benefit ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicEffects {
    /// One estimate of the reduced-form effect per computed horizon.
    pub effects: Vec<Estimate>,
    /// Average cumulated treatment change per computed horizon.
    pub doses: Vec<Estimate>,
    /// Normalized horizon weights, aligned with `effects`.
    pub weights: Vec<f64>,
    pub delta_plus: Result<Estimate>,
    pub n_excluded_mixed: usize,
    pub n_excluded_below: usize,
    pub notes: Vec<String>,
    /// Below-baseline subsample in sign-split mode, already sign-flipped.
    pub below: Option<Box<DynamicEffects>>,
}

/// Effects of the realized treatment path relative to keeping the
/// first-period treatment, `l` periods after the first move.
///
/// For each first-move cohort `F = f` and horizon `l`, cohort members are
/// compared in period `t = f + l` with units that have not moved by `t`,
/// using the outcome change since period `f - 1` and conditioning on the
/// first-period treatment. Cohorts are averaged with weights proportional to
/// their weighted size. Horizons stop where no not-yet-moved units remain.
pub fn dynamic_effects(
    panel: &Panel,
    status: &MoverStatus,
    cfg: &DynamicConfig,
) -> Result<DynamicEffects> {
    check_status(panel, status)?;
    let classes = check_monotone_baseline(panel, status.tol());
    let n_mixed = classes
        .iter()
        .filter(|&&c| c == BaselineClass::Mixed)
        .count();
    let n_below = classes
        .iter()
        .filter(|&&c| c == BaselineClass::AlwaysBelow)
        .count();
    let above: Vec<bool> = classes
        .iter()
        .map(|&c| c == BaselineClass::AlwaysAbove)
        .collect();
    let mut main = dynamic_core(panel, status, cfg, &above)?;
    main.n_excluded_mixed = n_mixed;
    main.n_excluded_below = if cfg.baseline == BaselineMode::SignSplit {
        0
    } else {
        n_below
    };
    if n_mixed > 0 {
        main.notes.push(format!(
            "{n_mixed} units cross their baseline in both directions and were excluded"
        ));
    }
    if cfg.baseline == BaselineMode::SignSplit && n_below > 0 {
        let below: Vec<bool> = (0..panel.n_units())
            .map(|i| {
                classes[i] == BaselineClass::AlwaysBelow
                    || status.first_move(i) == panel.n_periods()
            })
            .collect();
        let mut sub = dynamic_core(panel, status, cfg, &below)?;
        flip(&mut sub);
        sub.n_excluded_mixed = n_mixed;
        main.below = Some(Box::new(sub));
    } else if n_below > 0 {
        main.notes.push(format!(
            "{n_below} units move below their baseline and were excluded"
        ));
    }
    Ok(main)
}

fn flip(d: &mut DynamicEffects) {
    let negate = |e: &mut Estimate| {
        e.value = -e.value;
        for c in &mut e.components {
            c.value = -c.value;
            c.numerator = c.numerator.map(|v| -v);
        }
        e.notes
            .push("below-baseline subsample, sign flipped".into());
    };
    d.effects.iter_mut().for_each(negate);
    d.doses.iter_mut().for_each(negate);
    // The ratio is unchanged when numerator and denominator both flip.
    if let Ok(e) = &mut d.delta_plus {
        e.notes.push("below-baseline subsample".into());
    }
}

struct CohortFit {
    effect: Component,
    dose: Component,
}

fn dynamic_core(
    panel: &Panel,
    status: &MoverStatus,
    cfg: &DynamicConfig,
    include: &[bool],
) -> Result<DynamicEffects> {
    let n = panel.n_units();
    let tn = panel.n_periods();
    let lmax = cfg.lmax.unwrap_or(tn - 2).min(tn - 2);
    let total_w: f64 = (0..n)
        .filter(|&i| include[i])
        .map(|i| panel.weight(i))
        .sum();
    let mut tuning = Tuning {
        tol: status.tol(),
        controls: Some("not_yet_moved".into()),
        ..Tuning::default()
    };
    match cfg.method {
        Method::Regression => cfg.cef.echo(&mut tuning),
        Method::Pscore => {
            tuning.pscore_degree = Some(cfg.pscore_degree);
            tuning.clip = cfg.clip;
        }
    }

    let mut notes = Vec::new();
    let mut any_cohort = false;
    let mut missing_controls: Option<usize> = None;
    let mut effects = Vec::new();
    let mut doses = Vec::new();
    let mut raw_weights = Vec::new();
    for ell in 0..=lmax {
        let mut eff_components = Vec::new();
        let mut dose_components = Vec::new();
        let (mut n_movers, mut n_controls) = (0, 0);
        // `fm` is the 0-based first-move period, so the cohort date is fm + 1.
        for fm in 1..tn - ell {
            let t0 = fm + ell;
            let cohort: Vec<usize> = (0..n)
                .filter(|&i| include[i] && status.first_move(i) == fm)
                .collect();
            if cohort.is_empty() {
                continue;
            }
            any_cohort = true;
            let controls: Vec<usize> = (0..n)
                .filter(|&i| include[i] && status.first_move(i) > t0)
                .collect();
            if controls.len() < 2 {
                notes.push(format!(
                    "l={ell}, F={}: no units left unmoved at t={}",
                    fm + 1,
                    t0 + 1
                ));
                missing_controls = Some(missing_controls.map_or(t0 + 1, |m| m.min(t0 + 1)));
                continue;
            }
            n_movers += cohort.len();
            n_controls += controls.len();
            let key = format!("f={};l={ell}", fm + 1);
            let fit = cohort_fit(
                panel,
                cfg,
                &cohort,
                &controls,
                fm,
                t0,
                &key,
                &mut tuning,
                &mut notes,
            )?;
            let Some(mut fit) = fit else {
                continue;
            };
            let share = cohort.iter().map(|&i| panel.weight(i)).sum::<f64>() / total_w;
            fit.effect.share = share;
            fit.dose.share = share;
            eff_components.push(fit.effect);
            dose_components.push(fit.dose);
        }
        let Some(value) = aggregate(&mut eff_components) else {
            continue;
        };
        let dose_value = aggregate(&mut dose_components).expect("same shares as effects");
        let raw: f64 = eff_components.iter().map(|c| c.share).sum();
        let used: usize = eff_components.iter().map(|c| c.n_used).sum();
        let mut eff = Estimate::new(Target::DeltaPlusL, cfg.method, value);
        let mut dose = Estimate::new(Target::DeltaPlusDoseL, cfg.method, dose_value);
        for (e, comps) in [(&mut eff, eff_components), (&mut dose, dose_components)] {
            e.ell = Some(ell);
            e.n_movers = n_movers;
            e.n_movers_used = used;
            e.n_movers_dropped = n_movers - used;
            e.n_controls = n_controls;
            e.tuning = tuning.clone();
            e.components = comps;
        }
        effects.push(eff);
        doses.push(dose);
        raw_weights.push(raw);
    }
    if effects.is_empty() {
        return Err(if !any_cohort {
            Error::NoMovers
        } else if let Some(t) = missing_controls {
            Error::NoNeverMovers { t }
        } else {
            Error::NoSupportedMovers
        });
    }
    let total: f64 = raw_weights.iter().sum();
    let weights: Vec<f64> = raw_weights.iter().map(|w| w / total).collect();
    let mut num = 0.0;
    let mut den = 0.0;
    for ((e, d), w) in effects.iter_mut().zip(&doses).zip(&weights) {
        e.details.insert("w_l".into(), *w);
        num += w * e.value;
        den += w * d.value;
    }
    for (d, w) in doses.iter_mut().zip(&weights) {
        d.details.insert("w_l".into(), *w);
    }
    let delta_plus = if den.abs() < 1e-12 {
        Err(Error::ZeroDenominator)
    } else {
        let mut e = Estimate::new(Target::DeltaPlus, cfg.method, num / den);
        e.n_movers = effects.iter().map(|e| e.n_movers).max().unwrap_or(0);
        e.n_movers_used = effects.iter().map(|e| e.n_movers_used).max().unwrap_or(0);
        e.n_movers_dropped = e.n_movers - e.n_movers_used;
        e.n_controls = effects.iter().map(|e| e.n_controls).sum();
        e.details.insert("numerator".into(), num);
        e.details.insert("denominator".into(), den);
        e.details.insert("lmax".into(), (effects.len() - 1) as f64);
        e.tuning = tuning.clone();
        Ok(e)
    };
    Ok(DynamicEffects {
        effects,
        doses,
        weights,
        delta_plus,
        n_excluded_mixed: 0,
        n_excluded_below: 0,
        notes,
        below: None,
    })
}

#[allow(clippy::too_many_arguments)]
fn cohort_fit(
    panel: &Panel,
    cfg: &DynamicConfig,
    cohort: &[usize],
    controls: &[usize],
    fm: usize,
    t0: usize,
    key: &str,
    tuning: &mut Tuning,
    notes: &mut Vec<String>,
) -> Result<Option<CohortFit>> {
    let dy = |i: usize| panel.y(i, t0) - panel.y(i, fm - 1);
    let sample = |units: &[usize]| {
        let mut s = Sample::default();
        for &i in units {
            s.push(i, panel.d(i, 0), dy(i), panel.weight(i));
        }
        s
    };
    let (ctrl, movers) = (sample(controls), sample(cohort));
    let base = Component {
        t: t0 + 1,
        cohort: Some(fm + 1),
        n_movers: cohort.len(),
        n_controls: controls.len(),
        ..Component::default()
    };
    let dose_of = |kept: &mut dyn Iterator<Item = usize>| {
        let (mut s, mut w) = (0.0, 0.0);
        for j in kept {
            let i = movers.units[j];
            s += movers.w[j] * (panel.d(i, t0) - panel.d(i, 0));
            w += movers.w[j];
        }
        s / w
    };
    match cfg.method {
        Method::Regression => {
            let model = cfg.cef.fit(key, &ctrl.x, &ctrl.dy, &ctrl.w)?;
            tuning.bandwidths.insert(key.to_string(), model.bandwidth());
            let res = residuals(&model, &movers)?;
            let wsum: f64 = res.kept.iter().map(|&(j, _)| movers.w[j]).sum();
            if res.kept.is_empty() || !(wsum > 0.0) {
                notes.push(format!("{key}: no cohort member has control support"));
                return Ok(None);
            }
            let value = res.kept.iter().map(|&(j, r)| movers.w[j] * r).sum::<f64>() / wsum;
            let dose = dose_of(&mut res.kept.iter().map(|&(j, _)| j));
            let effect = Component {
                value,
                numerator: Some(value),
                n_used: res.kept.len(),
                n_unsupported: res.n_unsupported,
                bandwidth: Some(model.bandwidth()),
                n_fallback: res.n_fallback,
                ..base.clone()
            };
            let dose = Component {
                value: dose,
                n_used: res.kept.len(),
                n_unsupported: res.n_unsupported,
                ..base
            };
            Ok(Some(CohortFit { effect, dose }))
        }
        Method::Pscore => {
            let x: Vec<f64> = ctrl.x.iter().chain(&movers.x).copied().collect();
            let w: Vec<f64> = ctrl.w.iter().chain(&movers.w).copied().collect();
            let labels: Vec<usize> = (0..x.len()).map(|j| (j >= ctrl.len()) as usize).collect();
            let model = fit_pscore(
                &x,
                &labels,
                &w,
                &["not_yet_moved", "cohort"],
                cfg.pscore_degree,
            )?;
            let wv = reweight(&model, &ctrl.x, &ctrl.w, 1, 0, cfg.clip)?;
            let (mut cn, mut cd) = (0.0, 0.0);
            for j in 0..ctrl.len() {
                cn += ctrl.w[j] * wv.weights[j] * ctrl.dy[j];
                cd += ctrl.w[j] * wv.weights[j];
            }
            let mw = movers.total_weight();
            if !(cd > 0.0 && mw > 0.0) {
                notes.push(format!("{key}: zero total weight"));
                return Ok(None);
            }
            let mdy = (0..movers.len())
                .map(|j| movers.w[j] * movers.dy[j])
                .sum::<f64>()
                / mw;
            let value = mdy - cn / cd;
            let dose = dose_of(&mut (0..movers.len()));
            let effect = Component {
                value,
                numerator: Some(value),
                n_used: cohort.len(),
                n_clipped: wv.n_clipped,
                mean_weight_before_clip: Some(wv.mean_before_clip),
                ..base.clone()
            };
            let dose = Component {
                value: dose,
                n_used: cohort.len(),
                ..base
            };
            Ok(Some(CohortFit { effect, dose }))
        }
    }
}
