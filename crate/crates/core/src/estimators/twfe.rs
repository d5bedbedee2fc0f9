use super::{Estimate, Method, Target, Tuning};
use crate::error::{Error, Result};
use crate::panel::Panel;

/// Coefficient on the treatment in a weighted regression of the outcome on
/// the treatment, unit indicators and period indicators, computed through the
/// two-way within transformation (exact for balanced panels with weights
/// that are constant within units).
pub fn twfe_reference(panel: &Panel) -> Result<Estimate> {
    let n = panel.n_units();
    let tn = panel.n_periods();
    let total_w = panel.total_weight();
    let period_means = |f: &dyn Fn(usize, usize) -> f64| -> Vec<f64> {
        (0..tn)
            .map(|t| (0..n).map(|i| panel.weight(i) * f(i, t)).sum::<f64>() / total_w)
            .collect()
    };
    let d_t = period_means(&|i, t| panel.d(i, t));
    let y_t = period_means(&|i, t| panel.y(i, t));
    let d_all = d_t.iter().sum::<f64>() / tn as f64;
    let y_all = y_t.iter().sum::<f64>() / tn as f64;

    let (mut sxy, mut sxx, mut stot) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let w = panel.weight(i);
        let d_i = panel.d_row(i).iter().sum::<f64>() / tn as f64;
        let y_i = panel.y_row(i).iter().sum::<f64>() / tn as f64;
        for t in 0..tn {
            let dx = panel.d(i, t) - d_i - d_t[t] + d_all;
            let dy = panel.y(i, t) - y_i - y_t[t] + y_all;
            sxy += w * dx * dy;
            sxx += w * dx * dx;
            stot += w * (panel.d(i, t) - d_all).powi(2);
        }
    }
    if !(sxx > 1e-12 * stot) || sxx == 0.0 {
        return Err(Error::CollinearTreatment);
    }
    let mut est = Estimate::new(Target::Twfe, Method::Regression, sxy / sxx);
    est.tuning = Tuning::default();
    est.details.insert(
        "within_treatment_variance".into(),
        sxx / (total_w * tn as f64),
    );
    Ok(est)
}
