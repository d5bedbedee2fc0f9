//! Multinomial logit propensity scores in a polynomial basis of the
//! baseline treatment, and the reweighting of control units that makes
//! their baseline distribution match a mover class.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

pub const MAX_DEGREE: usize = 5;
pub const MAX_ITERATIONS: usize = 200;
pub const GRADIENT_TOL: f64 = 1e-8;
/// Coefficient magnitude on the standardized basis treated as divergence.
pub const SEPARATION_BOUND: f64 = 30.0;
/// Control probability below which reweighting refuses to divide.
pub const MIN_CONTROL_PROBABILITY: f64 = 1e-6;
pub const DEFAULT_CLIP: f64 = 20.0;

/// Fitted multinomial logit `P(class = k | d)` with class 0 as reference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PscoreModel {
    classes: Vec<String>,
    degree: usize,
    center: f64,
    scale: f64,
    /// One row per non-reference class, on the standardized basis.
    coef: Vec<Vec<f64>>,
    /// Weighted sample class frequencies.
    shares: Vec<f64>,
    log_likelihood: f64,
    iterations: usize,
    converged: bool,
}

/// Fit summary exported into reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PscoreDiagnostics {
    pub classes: Vec<String>,
    pub degree: usize,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl PscoreModel {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn shares(&self) -> &[f64] {
        &self.shares
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// `false` when the iteration cap was reached before the gradient
    /// tolerance.
    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn diagnostics(&self) -> PscoreDiagnostics {
        PscoreDiagnostics {
            classes: self.classes.clone(),
            degree: self.degree,
            log_likelihood: self.log_likelihood,
            iterations: self.iterations,
            converged: self.converged,
        }
    }

    /// Coefficients on the standardized basis `((d - center) / scale)^j`.
    pub fn standardized_coefficients(&self) -> &[Vec<f64>] {
        &self.coef
    }

    /// Coefficients of the same polynomials expressed in powers of `d`.
    pub fn coefficients(&self) -> Vec<Vec<f64>> {
        let p = self.degree;
        let mut binom = vec![vec![0.0; p + 1]; p + 1];
        for j in 0..=p {
            binom[j][0] = 1.0;
            for m in 1..=j {
                binom[j][m] = binom[j - 1][m - 1] + if m < j { binom[j - 1][m] } else { 0.0 };
            }
        }
        self.coef
            .iter()
            .map(|a| {
                let mut out = vec![0.0; p + 1];
                for (j, aj) in a.iter().enumerate() {
                    let s = aj / self.scale.powi(j as i32);
                    for (m, om) in out.iter_mut().enumerate().take(j + 1) {
                        *om += s * binom[j][m] * (-self.center).powi((j - m) as i32);
                    }
                }
                out
            })
            .collect()
    }

    fn basis(&self, d: f64, out: &mut [f64]) {
        let z = (d - self.center) / self.scale;
        let mut v = 1.0;
        for o in out.iter_mut() {
            *o = v;
            v *= z;
        }
    }

    /// Probability vector over classes at baseline treatment `d`.
    pub fn predict(&self, d: f64) -> Vec<f64> {
        let mut z = vec![0.0; self.degree + 1];
        self.basis(d, &mut z);
        let mut probs = vec![0.0; self.classes.len()];
        softmax(&self.coef, &z, &mut probs);
        probs
    }
}

fn softmax(coef: &[Vec<f64>], z: &[f64], out: &mut [f64]) {
    out[0] = 0.0;
    for (k, a) in coef.iter().enumerate() {
        out[k + 1] = a.iter().zip(z).map(|(a, z)| a * z).sum();
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Fits `P(label | d_base)` by damped Newton iterations on the weighted
/// mean log-likelihood.
///
/// `labels[i]` indexes `classes`; class 0 is the reference. Every class must
/// be present. The basis is centered and scaled before fitting.
pub fn fit_pscore(
    d_base: &[f64],
    labels: &[usize],
    w: &[f64],
    classes: &[&str],
    degree: usize,
) -> Result<PscoreModel> {
    let n = d_base.len();
    let k_classes = classes.len();
    if labels.len() != n || w.len() != n {
        return Err(Error::InvalidArgument(
            "d_base, labels and weights must have equal length".into(),
        ));
    }
    if degree > MAX_DEGREE {
        return Err(Error::InvalidArgument(format!(
            "propensity degree must be at most {MAX_DEGREE}, got {degree}"
        )));
    }
    if k_classes < 2 {
        return Err(Error::InvalidArgument("need at least two classes".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k_classes) {
        return Err(Error::InvalidArgument(format!("label {bad} has no class")));
    }
    let total_w: f64 = w.iter().sum();
    if !(total_w > 0.0) {
        return Err(Error::InvalidArgument("weights sum to zero".into()));
    }
    let mut shares = vec![0.0; k_classes];
    for (&l, &wi) in labels.iter().zip(w) {
        shares[l] += wi;
    }
    for s in &mut shares {
        *s /= total_w;
    }
    if let Some(k) = shares.iter().position(|&s| s <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "class {:?} has no observations",
            classes[k]
        )));
    }

    let center = d_base.iter().zip(w).map(|(d, w)| d * w).sum::<f64>() / total_w;
    let var = d_base
        .iter()
        .zip(w)
        .map(|(d, w)| w * (d - center).powi(2))
        .sum::<f64>()
        / total_w;
    let (scale, degree) = if var > 0.0 {
        (var.sqrt(), degree)
    } else {
        (1.0, 0)
    };
    let p = degree + 1;
    let km = k_classes - 1;
    let dim = km * p;

    let mut z = vec![0.0; n * p];
    for (i, &d) in d_base.iter().enumerate() {
        let zi = (d - center) / scale;
        let mut v = 1.0;
        for j in 0..p {
            z[i * p + j] = v;
            v *= zi;
        }
    }
    let wn: Vec<f64> = w.iter().map(|w| w / total_w).collect();

    let mut coef = vec![vec![0.0; p]; km];
    for (k, row) in coef.iter_mut().enumerate() {
        row[0] = (shares[k + 1] / shares[0]).ln();
    }

    let loglik = |coef: &[Vec<f64>]| -> f64 {
        let mut probs = vec![0.0; k_classes];
        let mut ll = 0.0;
        for i in 0..n {
            if wn[i] == 0.0 {
                continue;
            }
            softmax(coef, &z[i * p..(i + 1) * p], &mut probs);
            ll += wn[i] * probs[labels[i]].max(f64::MIN_POSITIVE).ln();
        }
        ll
    };

    let mut ll = loglik(&coef);
    let mut iterations = 0;
    let mut converged = false;
    let mut probs = vec![0.0; k_classes];
    loop {
        let mut grad = DVector::<f64>::zeros(dim);
        let mut info = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..n {
            if wn[i] == 0.0 {
                continue;
            }
            let zi = &z[i * p..(i + 1) * p];
            softmax(&coef, zi, &mut probs);
            for k in 0..km {
                let resid = if labels[i] == k + 1 { 1.0 } else { 0.0 } - probs[k + 1];
                for j in 0..p {
                    grad[k * p + j] += wn[i] * resid * zi[j];
                }
                for l in 0..km {
                    let c = wn[i] * probs[k + 1] * (if k == l { 1.0 } else { 0.0 } - probs[l + 1]);
                    for j in 0..p {
                        for m in 0..p {
                            info[(k * p + j, l * p + m)] += c * zi[j] * zi[m];
                        }
                    }
                }
            }
        }
        if grad.amax() < GRADIENT_TOL {
            converged = true;
            break;
        }
        if iterations >= MAX_ITERATIONS {
            break;
        }
        iterations += 1;

        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => match info.clone().lu().solve(&grad) {
                Some(s) => s,
                None => {
                    return Err(Error::SeparationDetected {
                        max_coef: max_abs(&coef),
                    })
                }
            },
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<Vec<f64>> = coef
                .iter()
                .enumerate()
                .map(|(k, row)| {
                    row.iter()
                        .enumerate()
                        .map(|(j, c)| c + t * step[k * p + j])
                        .collect()
                })
                .collect();
            let trial_ll = loglik(&trial);
            if trial_ll.is_finite() && trial_ll >= ll - 1e-15 {
                coef = trial;
                ll = trial_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        let max_coef = max_abs(&coef);
        if max_coef > SEPARATION_BOUND {
            return Err(Error::SeparationDetected { max_coef });
        }
        if !accepted {
            break;
        }
    }

    Ok(PscoreModel {
        classes: classes.iter().map(|s| s.to_string()).collect(),
        degree,
        center,
        scale,
        coef,
        shares,
        log_likelihood: ll,
        iterations,
        converged,
    })
}

fn max_abs(coef: &[Vec<f64>]) -> f64 {
    coef.iter()
        .flatten()
        .fold(0.0_f64, |acc, c| acc.max(c.abs()))
}

/// Reweighting of control units toward one mover class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    pub n_clipped: usize,
    pub clip: Option<f64>,
    pub sum_before_clip: f64,
    pub sum_after_clip: f64,
    /// Data-weighted mean of the unclipped weights; close to 1 when the
    /// propensity model is adequate.
    pub mean_before_clip: f64,
}

/// Weight `P(mover | d) / P(control | d) * P(control) / P(mover)` for each
/// control, truncated at `clip` when given.
pub fn reweight(
    model: &PscoreModel,
    control_d: &[f64],
    control_w: &[f64],
    mover_class: usize,
    control_class: usize,
    clip: Option<f64>,
) -> Result<WeightVector> {
    let k = model.n_classes();
    if mover_class >= k || control_class >= k || mover_class == control_class {
        return Err(Error::InvalidArgument(format!(
            "classes {mover_class} and {control_class} are not two distinct classes of the model"
        )));
    }
    if control_d.len() != control_w.len() {
        return Err(Error::InvalidArgument(
            "control treatments and weights must have equal length".into(),
        ));
    }
    if let Some(c) = clip {
        if !(c > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "clip must be positive, got {c}"
            )));
        }
    }
    let share_ratio = model.shares[control_class] / model.shares[mover_class];
    let mut weights = Vec::with_capacity(control_d.len());
    for &d in control_d {
        let probs = model.predict(d);
        let pc = probs[control_class];
        if pc < MIN_CONTROL_PROBABILITY {
            return Err(Error::ZeroControlProbability { d, prob: pc });
        }
        weights.push(probs[mover_class] / pc * share_ratio);
    }
    let sum_before_clip: f64 = weights.iter().sum();
    let wsum: f64 = control_w.iter().sum();
    let mean_before_clip = if wsum > 0.0 {
        weights
            .iter()
            .zip(control_w)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / wsum
    } else {
        f64::NAN
    };
    let mut n_clipped = 0;
    if let Some(c) = clip {
        for v in &mut weights {
            if *v > c {
                *v = c;
                n_clipped += 1;
            }
        }
    }
    let sum_after_clip = weights.iter().sum();
    Ok(WeightVector {
        weights,
        n_clipped,
        clip,
        sum_before_clip,
        sum_after_clip,
        mean_before_clip,
    })
}
