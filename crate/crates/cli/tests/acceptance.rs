//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::{Command, ExitCode};
use std::time::Instant;

use contdid::estimators::{
    ampos_nostayers, ampos_reg, dynamic_effects, long_run_reg, twfe_reference, wampos_ps,
    wampos_reg, BandwidthRule, CefConfig, DynamicConfig, LongRunControls, Method, Target, TrimRule,
};
use contdid::inference::BootstrapSpec;
use contdid::montecarlo::{replication_seeds, run_replication, summarize, McConfig, Replication};
use contdid::panel::{classify, Panel};
use contdid::report::{EstimateConfig, MethodChoice, Request};
use contdid::simulate::{generate, oracle, DgpSpec, Dist, Regime};
use contdid::smoothing::Kernel;
use contdid::Result;

const REPS: usize = 200;
/// Bias must stay below this many Monte Carlo standard errors.
const BIAS_MCSE: f64 = 3.0;
const AGREEMENT_MCSE: f64 = 4.0;
const SEPARATION_MCSE: f64 = 10.0;
const RUNTIME_LIMIT_SECS: f64 = 120.0;
const SIGN_FLIP_SHARE: f64 = 0.95;
const FE_TOL: f64 = 1e-10;
const SCALE_RTOL: f64 = 1e-10;
const IDENTITY_TOL: f64 = 1e-12;
const CURVE_MCSE: f64 = 2.0;
const COVERAGE: (f64, f64) = (0.90, 0.98);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn dist(s: &str) -> Dist {
    s.parse().unwrap()
}

fn mean_mcse(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    (m, sd / n.sqrt())
}

fn draw(rep: &Replication, target: Target, method: Method, ell: Option<usize>) -> Option<f64> {
    rep.draws
        .as_ref()
        .ok()?
        .iter()
        .find(|d| d.target == target && d.method == method && d.ell == ell)
        .map(|d| d.estimate)
}

fn replicate(cfg: &McConfig) -> Vec<Replication> {
    (0..cfg.replications)
        .map(|r| run_replication(cfg, r).unwrap())
        .collect()
}

/// Linear design: common slope 1.5, unit and period effects, unit noise.
/// Treatment changes are bounded away from zero so slope ratios have finite
/// variance.
fn linear_dgp() -> DgpSpec {
    DgpSpec {
        n: 2000,
        periods: 2,
        slope: Dist::Point(1.5),
        dd: dist("mixture(0.5: uniform(0.25, 1.25) | 0.5: uniform(-1.25, -0.25))"),
        ..DgpSpec::default()
    }
}

fn linear_config(
    bootstrap: Option<BootstrapSpec>,
    requests: Vec<Request>,
    method: MethodChoice,
) -> McConfig {
    McConfig {
        dgp: linear_dgp(),
        replications: REPS,
        seed: 1,
        estimate: EstimateConfig {
            requests,
            method,
            bootstrap,
            ..EstimateConfig::default()
        },
    }
}

fn bias_check(
    label: &str,
    s: &contdid::montecarlo::McSummary,
    target: Target,
    method: Method,
    ell: Option<usize>,
) -> (bool, String) {
    match s.row(target, method, ell) {
        Some(row) if row.n_failed == 0 => {
            let (b, se) = (row.bias.unwrap(), row.mcse.unwrap());
            (
                b.abs() < BIAS_MCSE * se,
                format!(
                    "{label} bias {b:+.4} (mcse {se:.4}, truth {:.4})",
                    row.mean_truth.unwrap()
                ),
            )
        }
        Some(row) => (
            false,
            format!("{label}: {} failed replications", row.n_failed),
        ),
        None => (false, format!("{label}: no estimates")),
    }
}

fn c1_c3(reps: &[Replication], cfg: &McConfig, secs: f64) -> (Verdict, Verdict) {
    let s = summarize(reps, cfg);
    let checks = [
        bias_check("delta1", &s, Target::Delta1, Method::Regression, None),
        bias_check("delta2 reg", &s, Target::Delta2, Method::Regression, None),
        bias_check("delta2 ps", &s, Target::Delta2, Method::Pscore, None),
    ];
    let mut pass = checks.iter().all(|c| c.0) && secs < RUNTIME_LIMIT_SECS;
    let mut detail: Vec<String> = checks.into_iter().map(|c| c.1).collect();
    for t in [Target::Delta1, Target::Delta2] {
        let truth = s
            .row(t, Method::Regression, None)
            .and_then(|r| r.mean_truth);
        pass &= truth.is_some_and(|v| (v - 1.5).abs() < 1e-12);
    }
    detail.push(format!("runtime {secs:.1}s"));
    let c1 = verdict(pass, detail.join("; "));

    let diffs: Vec<f64> = reps
        .iter()
        .filter_map(|r| {
            Some(
                draw(r, Target::Delta2, Method::Regression, None)?
                    - draw(r, Target::Delta2, Method::Pscore, None)?,
            )
        })
        .collect();
    let (m, se) = mean_mcse(&diffs);
    let mean_abs = diffs.iter().map(|d| d.abs()).sum::<f64>() / diffs.len() as f64;
    let c3 = verdict(
        diffs.len() == REPS && m.abs() < AGREEMENT_MCSE * se,
        format!(
            "mean(reg - ps) {m:+.5}, mcse of difference {se:.5}, mean |reg - ps| {mean_abs:.5}, {} pairs",
            diffs.len()
        ),
    )
    .with_threshold(format!("|mean| < {AGREEMENT_MCSE} mcse"));
    (c1, c3)
}

impl Verdict {
    fn with_threshold(mut self, t: String) -> Self {
        self.detail = format!("{} [{t}]", self.detail);
        self
    }
}

fn c2() -> Verdict {
    let cfg = McConfig {
        dgp: DgpSpec {
            n: 2000,
            slope: Dist::Point(1.0),
            slope_dd_coef: 1.0,
            slope_dd_power: 1.0,
            dd: dist("mixture(0.5: uniform(0.2, 2) | 0.5: uniform(-2, -0.2))"),
            ..DgpSpec::default()
        },
        replications: REPS,
        seed: 2,
        estimate: EstimateConfig {
            requests: vec![Request::Delta1, Request::Delta2],
            ..EstimateConfig::default()
        },
    };
    let s = summarize(&replicate(&cfg), &cfg);
    let a = bias_check("delta1", &s, Target::Delta1, Method::Regression, None);
    let b = bias_check("delta2", &s, Target::Delta2, Method::Regression, None);
    let (r1, r2) = (
        s.row(Target::Delta1, Method::Regression, None).unwrap(),
        s.row(Target::Delta2, Method::Regression, None).unwrap(),
    );
    let gap = (r1.mean_truth.unwrap() - r2.mean_truth.unwrap()).abs();
    let max_mcse = r1.mcse.unwrap().max(r2.mcse.unwrap());
    verdict(
        a.0 && b.0 && gap > SEPARATION_MCSE * max_mcse,
        format!(
            "{}; {}; oracle gap {gap:.4} vs {SEPARATION_MCSE} x {max_mcse:.4}",
            a.1, b.1
        ),
    )
}

/// Two-period design with stayers and two mover groups of equal size that
/// increase by `a` and `b` with slopes `sa` and `sb`.
#[derive(Debug, Clone, Copy)]
struct TwoGroups {
    p_stay: f64,
    a: f64,
    b: f64,
    sa: f64,
    sb: f64,
}

impl TwoGroups {
    /// Population TWFE coefficient: with two periods it is the slope of the
    /// outcome change on the treatment change.
    fn twfe(&self) -> f64 {
        let p = (1.0 - self.p_stay) / 2.0;
        let m = p * (self.a + self.b);
        let var = p * self.a * self.a + p * self.b * self.b - m * m;
        p * ((self.a - m) * self.a * self.sa + (self.b - m) * self.b * self.sb) / var
    }

    fn delta2(&self) -> f64 {
        (self.a * self.sa + self.b * self.sb) / (self.a + self.b)
    }
}

fn search_adversarial() -> TwoGroups {
    let changes = [0.1, 0.25, 0.5, 1.0, 2.0];
    let slopes = [0.15, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0, 100.0];
    let mut best: Option<(f64, TwoGroups)> = None;
    for p_stay in [0.2, 0.3, 0.4, 0.5, 0.6] {
        for (i, &a) in changes.iter().enumerate() {
            for &b in &changes[i + 1..] {
                for &sa in &slopes {
                    for &sb in &slopes {
                        let g = TwoGroups {
                            p_stay,
                            a,
                            b,
                            sa,
                            sb,
                        };
                        let ratio = g.twfe() / g.delta2();
                        if best.is_none_or(|(r, _)| ratio < r) {
                            best = Some((ratio, g));
                        }
                    }
                }
            }
        }
    }
    best.unwrap().1
}

fn c4() -> Verdict {
    let g = search_adversarial();
    // Slope law s0 + coef * |dD|^power through the two group slopes.
    let s0 = g.sb / 3.0;
    let power = ((g.sa - s0) / (g.sb - s0)).ln() / (g.a / g.b).ln();
    let coef = (g.sa - s0) / g.a.powf(power);
    let cfg = McConfig {
        dgp: DgpSpec {
            n: 2000,
            p_stay: g.p_stay,
            dd: Dist::Discrete(vec![g.a, g.b]),
            slope: Dist::Point(s0),
            slope_dd_coef: coef,
            slope_dd_power: power,
            ..DgpSpec::default()
        },
        replications: REPS,
        seed: 4,
        estimate: EstimateConfig {
            requests: vec![Request::Delta2, Request::Twfe],
            ..EstimateConfig::default()
        },
    };
    let mut positive_slopes = true;
    let mut flips = 0;
    let reps = replicate(&cfg);
    for (r, rep) in reps.iter().enumerate() {
        let (twfe, d2) = (
            draw(rep, Target::Twfe, Method::Regression, None),
            draw(rep, Target::Delta2, Method::Regression, None),
        );
        if let (Some(t), Some(d)) = (twfe, d2) {
            if t.signum() != d.signum() {
                flips += 1;
            }
        }
        if r < 20 {
            let dgp = DgpSpec {
                seed: replication_seeds(cfg.seed, r).0,
                ..cfg.dgp.clone()
            };
            let (_, truth) = generate(&dgp).unwrap();
            positive_slopes &= truth
                .units
                .iter()
                .filter(|u| u.d[1] != u.d[0])
                .all(|u| u.slope > 0.0);
        }
    }
    let share = flips as f64 / REPS as f64;
    let s = summarize(&reps, &cfg);
    verdict(
        share >= SIGN_FLIP_SHARE && positive_slopes,
        format!(
            "searched design {g:?}: population twfe {:.3} vs delta2 {:.3}; sign differs in {flips}/{REPS}; mean twfe {:.3}, mean delta2 {:.3}; all slopes positive: {positive_slopes}",
            g.twfe(),
            g.delta2(),
            s.row(Target::Twfe, Method::Regression, None).map_or(f64::NAN, |r| r.mean_estimate),
            s.row(Target::Delta2, Method::Regression, None).map_or(f64::NAN, |r| r.mean_estimate),
        ),
    )
}

fn estimate_values(p: &Panel) -> Vec<(String, Result<f64>)> {
    let s = classify(p, 0.0).unwrap();
    let cef = CefConfig::default();
    let mut out: Vec<(String, Result<f64>)> = vec![
        (
            "delta1".into(),
            ampos_reg(p, &s, &cef, &TrimRule::default()).map(|e| e.value),
        ),
        (
            "delta1 no stayers".into(),
            ampos_nostayers(p, &s, &cef, &TrimRule::default(), &[0.3, 0.1]).map(|e| e.value),
        ),
        ("twfe".into(), twfe_reference(p).map(|e| e.value)),
    ];
    for (name, w) in [
        ("reg", wampos_reg(p, &s, &cef)),
        ("ps", wampos_ps(p, &s, 2, None)),
    ] {
        match w {
            Ok(w) => out.extend(
                w.results()
                    .into_iter()
                    .map(|(t, r)| (format!("{t} {name}"), r.clone().map(|e| e.value))),
            ),
            Err(e) => out.push((name.into(), Err(e))),
        }
    }
    if p.n_periods() >= 3 {
        out.push((
            "long run".into(),
            long_run_reg(
                p,
                &s,
                1,
                &cef,
                &TrimRule::default(),
                LongRunControls::NotYetMoved,
            )
            .map(|e| e.value),
        ));
    }
    for method in [Method::Regression, Method::Pscore] {
        let cfg = DynamicConfig {
            method,
            ..DynamicConfig::default()
        };
        match dynamic_effects(p, &s, &cfg) {
            Ok(d) => {
                out.extend(
                    d.effects
                        .iter()
                        .map(|e| (format!("{} {}", e.label(), method.name()), Ok(e.value))),
                );
                out.push((
                    format!("delta_plus {}", method.name()),
                    d.delta_plus.map(|e| e.value),
                ));
            }
            Err(e) => out.push((format!("dynamic {}", method.name()), Err(e))),
        }
    }
    out
}

/// Largest deviation between `base` mapped by `f` and `other`, or `None`
/// when the two runs disagree on which estimates exist.
fn max_deviation(
    base: &[(String, Result<f64>)],
    other: &[(String, Result<f64>)],
    f: impl Fn(f64) -> f64,
    relative: bool,
) -> Option<(f64, usize)> {
    let mut worst = 0.0_f64;
    let mut n = 0;
    for ((_, a), (_, b)) in base.iter().zip(other) {
        match (a, b) {
            (Ok(x), Ok(y)) => {
                let want = f(*x);
                let scale = if relative { want.abs().max(1.0) } else { 1.0 };
                worst = worst.max((y - want).abs() / scale);
                n += 1;
            }
            (Err(e1), Err(e2)) if e1.code() == e2.code() => {}
            _ => return None,
        }
    }
    (base.len() == other.len()).then_some((worst, n))
}

fn discrete_rows(seed: u64) -> Vec<[f64; 5]> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for cell in 0..5 {
        let d1 = cell as f64;
        for k in 0..36 {
            let dd = match k % 3 {
                0 => 0.0,
                1 => rng.random_range(0.2..2.0),
                _ => -rng.random_range(0.2..2.0),
            };
            let y1: f64 = rng.random_range(-1.0..1.0);
            let y2 = y1 + 0.3 * d1 * d1 + (1.0 + d1) * dd + rng.random_range(-1.0..1.0);
            rows.push([d1, d1 + dd, y1, y2, rng.random_range(0.5..1.5)]);
        }
    }
    rows
}

/// Direct cell-mean estimator: stayers with the same baseline value are
/// the controls of each mover.
fn cell_means(rows: &[[f64; 5]]) -> [f64; 3] {
    let stayer_mean = |d1: f64| {
        let (s, w) = rows
            .iter()
            .filter(|r| r[0] == d1 && r[1] == r[0])
            .fold((0.0, 0.0), |(s, w), r| (s + r[4] * (r[3] - r[2]), w + r[4]));
        s / w
    };
    let side = |sign: f64| {
        let m: Vec<_> = rows.iter().filter(|r| (r[1] - r[0]) * sign > 0.0).collect();
        let w: f64 = m.iter().map(|r| r[4]).sum();
        let num: f64 = m
            .iter()
            .map(|r| r[4] * (r[3] - r[2] - stayer_mean(r[0])))
            .sum();
        let den: f64 = m.iter().map(|r| r[4] * (r[1] - r[0])).sum();
        (num / den, w)
    };
    let ((di, wi), (dd, wd)) = (side(1.0), side(-1.0));
    let share = wi / (wi + wd);
    [di, dd, share * di + (1.0 - share) * dd]
}

fn c5() -> Verdict {
    let mut pass = true;
    let mut fe = 0.0_f64;
    let mut scale = 0.0_f64;
    let mut agg = 0.0_f64;
    let mut cell = 0.0_f64;
    let mut compared = 0;
    for seed in 0..6u64 {
        let staggered = seed % 2 == 1;
        let spec = DgpSpec {
            n: 400,
            periods: if staggered { 4 } else { 3 },
            seed,
            regime: if staggered {
                Regime::Staggered
            } else {
                Regime::Static
            },
            slope: dist("normal(1, 0.5)"),
            lags: if staggered { vec![1.0, 2.0] } else { vec![] },
            ..DgpSpec::default()
        };
        let (p, _) = generate(&spec).unwrap();
        let base = estimate_values(&p);
        let shifted =
            p.map_outcomes(|i, t, y| y + 3.0 * (i as f64).sin() * 10.0 + 7.0 * t as f64 - 2.5);
        let scaled = p.map_outcomes(|_, _, y| 3.7 * y);
        match (
            max_deviation(&base, &estimate_values(&shifted), |x| x, false),
            max_deviation(&base, &estimate_values(&scaled), |x| 3.7 * x, true),
        ) {
            (Some((d1, n)), Some((d2, _))) => {
                fe = fe.max(d1);
                scale = scale.max(d2);
                compared += n;
            }
            _ => pass = false,
        }
        let s = classify(&p, 0.0).unwrap();
        for w in [
            wampos_reg(&p, &s, &CefConfig::default()),
            wampos_ps(&p, &s, 2, Some(20.0)),
        ] {
            let w = w.unwrap();
            if let (Ok(i), Ok(d), Ok(c)) = (&w.increasers, &w.decreasers, &w.combined) {
                let sh = c.details["share_increasers"];
                agg = agg.max((c.value - (sh * i.value + (1.0 - sh) * d.value)).abs());
            }
        }
    }
    for seed in 0..3u64 {
        let rows = discrete_rows(seed);
        let n = rows.len();
        let p = Panel::new(
            (0..n).map(|i| format!("u{i}")).collect(),
            vec![1.0, 2.0],
            rows.iter().flat_map(|r| [r[0], r[1]]).collect(),
            rows.iter().flat_map(|r| [r[2], r[3]]).collect(),
            Some(rows.iter().map(|r| r[4]).collect()),
        )
        .unwrap();
        let s = classify(&p, 0.0).unwrap();
        let cef = CefConfig {
            bandwidth: BandwidthRule::Fixed(0.5),
            kernel: Kernel::Epanechnikov,
            ..CefConfig::default()
        };
        let w = wampos_reg(&p, &s, &cef).unwrap();
        let want = cell_means(&rows);
        for (got, v) in [&w.increasers, &w.decreasers, &w.combined]
            .into_iter()
            .zip(want)
        {
            match got {
                Ok(e) => cell = cell.max((e.value - v).abs()),
                Err(_) => pass = false,
            }
        }
    }
    pass &= compared > 0
        && fe < FE_TOL
        && scale < SCALE_RTOL
        && agg < IDENTITY_TOL
        && cell < IDENTITY_TOL;
    verdict(
        pass,
        format!(
            "{compared} estimates: fixed effects max change {fe:.2e} (< {FE_TOL:e}); outcome scaling max relative error {scale:.2e} (< {SCALE_RTOL:e}); aggregation identity {agg:.2e} (< {IDENTITY_TOL:e}); cell means {cell:.2e} (< {IDENTITY_TOL:e})"
        ),
    )
}

struct NoStayerRun {
    bias: f64,
    bias_mcse: f64,
    curve_means: Vec<(f64, f64, f64)>,
    failed: usize,
}

fn no_stayer_run(n: usize, seed: u64) -> NoStayerRun {
    let grid: Vec<f64> = [4.0, 3.0, 2.0, 1.0]
        .iter()
        .map(|k| k * 200.0 / n as f64)
        .collect();
    let mut errors = Vec::new();
    let mut curves: Vec<Vec<f64>> = vec![Vec::new(); grid.len()];
    let mut failed = 0;
    for r in 0..100 {
        let spec = DgpSpec {
            n,
            seed: replication_seeds(seed, r).0,
            p_stay: 0.0,
            slope: Dist::Point(1.0),
            slope_dd_coef: 1.0,
            dd: dist("uniform(-1, 1)"),
            ..DgpSpec::default()
        };
        let (p, truth) = generate(&spec).unwrap();
        let s = classify(&p, 0.0).unwrap();
        match ampos_nostayers(&p, &s, &CefConfig::default(), &TrimRule::default(), &grid) {
            Ok(e) => {
                errors.push(e.value - oracle(&truth, Target::Delta1, None).unwrap());
                for (k, pt) in e.curve.iter().flatten().enumerate() {
                    if let Some(v) = pt.value {
                        curves[k].push(v);
                    }
                }
            }
            Err(_) => failed += 1,
        }
    }
    let (bias, bias_mcse) = mean_mcse(&errors);
    let curve_means = grid
        .iter()
        .zip(&curves)
        .map(|(&d, v)| {
            let (m, se) = mean_mcse(v);
            (d, m, se)
        })
        .collect();
    NoStayerRun {
        bias,
        bias_mcse,
        curve_means,
        failed,
    }
}

fn c6() -> Verdict {
    let small = no_stayer_run(2000, 6);
    let large = no_stayer_run(20_000, 6);
    let bottom = &large.curve_means[large.curve_means.len() / 2..];
    let values: Vec<f64> = bottom.iter().map(|c| c.1).collect();
    let spread = values.iter().cloned().fold(f64::MIN, f64::max)
        - values.iter().cloned().fold(f64::MAX, f64::min);
    let max_mcse = bottom.iter().map(|c| c.2).fold(0.0, f64::max);
    let pass = small.failed == 0
        && large.failed == 0
        && large.bias.abs() < small.bias.abs()
        && spread < CURVE_MCSE * max_mcse;
    let curve: Vec<String> = large
        .curve_means
        .iter()
        .map(|(d, m, se)| format!("{d:.3}:{m:.4}±{se:.4}"))
        .collect();
    verdict(
        pass,
        format!(
            "|bias| {:.4} (mcse {:.4}) at n=2000, {:.4} (mcse {:.4}) at n=20000; n=20000 curve [{}]; bottom-half spread {spread:.4} vs {CURVE_MCSE} x {max_mcse:.4}",
            small.bias.abs(),
            small.bias_mcse,
            large.bias.abs(),
            large.bias_mcse,
            curve.join(", ")
        ),
    )
}

fn c7() -> Verdict {
    let cfg = McConfig {
        dgp: DgpSpec {
            n: 2000,
            periods: 5,
            regime: Regime::Staggered,
            slope: Dist::Point(1.0),
            jump: Dist::Point(1.0),
            lags: vec![1.0, 2.0],
            ..DgpSpec::default()
        },
        replications: REPS,
        seed: 7,
        estimate: EstimateConfig {
            requests: vec![Request::LongRun, Request::Dynamic],
            ell: Some(1),
            lmax: Some(1),
            long_run_controls: LongRunControls::NotYetMoved,
            ..EstimateConfig::default()
        },
    };
    let s = summarize(&replicate(&cfg), &cfg);
    let against = |target: Target, ell: Option<usize>, beta: f64| match s.row(
        target,
        Method::Regression,
        ell,
    ) {
        Some(row) if row.n_failed == 0 => {
            let se = row.sd_estimate.unwrap() / (row.n_ok as f64).sqrt();
            let dev = row.mean_estimate - beta;
            (
                dev.abs() < BIAS_MCSE * se,
                format!(
                    "{target}[{}] mean {:.4} vs {beta} (mcse {se:.4})",
                    ell.map_or("-".into(), |l| l.to_string()),
                    row.mean_estimate
                ),
            )
        }
        _ => (false, format!("{target}: failed replications")),
    };
    let checks = [
        against(Target::DeltaPlusL, Some(0), 1.0),
        against(Target::DeltaPlusL, Some(1), 2.0),
        bias_check(
            "delta_plus",
            &s,
            Target::DeltaPlus,
            Method::Regression,
            None,
        ),
        against(Target::Delta1LongRun, Some(1), 2.0),
    ];
    verdict(
        checks.iter().all(|c| c.0),
        checks
            .into_iter()
            .map(|c| c.1)
            .collect::<Vec<_>>()
            .join("; "),
    )
}

fn c8() -> Verdict {
    let cfg = linear_config(
        Some(BootstrapSpec {
            replications: 200,
            seed: 0,
            ci_level: 0.95,
        }),
        vec![Request::Delta2],
        MethodChoice::Regression,
    );
    let start = Instant::now();
    let s = summarize(&replicate(&cfg), &cfg);
    match s.row(Target::Delta2, Method::Regression, None).and_then(|r| r.coverage.map(|c| (c, r))) {
        Some((c, row)) => verdict(
            (COVERAGE.0..=COVERAGE.1).contains(&c) && row.n_ok == REPS,
            format!(
                "coverage {c:.3} over {} replications with B=200, mean se {:.4}, sd of estimates {:.4}, {:.0}s",
                row.n_ok,
                row.mean_se.unwrap_or(f64::NAN),
                row.sd_estimate.unwrap_or(f64::NAN),
                start.elapsed().as_secs_f64()
            ),
        ),
        None => verdict(false, "no bootstrap intervals".into()),
    }
}

fn c9() -> Verdict {
    let dir = std::env::temp_dir().join(format!("contdid-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let csv = dir.join("panel.csv");
    let csv = csv.to_str().unwrap();
    let bin = env!("CARGO_BIN_EXE_contdid");
    let invocations: Vec<Vec<&str>> = vec![
        vec![
            "simulate",
            "--seed",
            "9",
            "--set",
            "n=500",
            "--set",
            "periods=4",
            "--set",
            "regime=staggered",
            "--set",
            "lags=1,2",
            "--output",
            csv,
        ],
        vec![
            "estimate", "--input", csv, "--target", "all", "--method", "both", "--lmax", "2",
            "--boot", "50", "--seed", "9",
        ],
        vec![
            "estimate",
            "--input",
            csv,
            "--target",
            "delta1,delta2",
            "--delta-grid",
            "auto",
            "--method",
            "both",
            "--boot",
            "30",
            "--seed",
            "3",
            "--reselect",
        ],
        vec![
            "estimate",
            "--input",
            csv,
            "--target",
            "long_run",
            "--ell",
            "2",
            "--bandwidth",
            "cv",
            "--boot",
            "20",
            "--seed",
            "5",
        ],
        vec![
            "montecarlo",
            "--set",
            "n=300",
            "--reps",
            "8",
            "--seed",
            "9",
            "--target",
            "delta1,delta2,twfe",
            "--method",
            "both",
            "--boot",
            "20",
        ],
        vec!["diagnose", "--input", csv],
    ];
    let mut differing = Vec::new();
    let mut errors = Vec::new();
    for args in &invocations {
        let runs: Vec<Vec<u8>> = [None, Some("3")]
            .iter()
            .map(|threads| {
                let mut cmd = Command::new(bin);
                cmd.args(args);
                if let Some(t) = threads {
                    cmd.env("RAYON_NUM_THREADS", t);
                }
                let out = cmd.output().unwrap();
                if !out.status.success() {
                    errors.push(args[0].to_string());
                }
                if args[0] == "simulate" {
                    std::fs::read(csv).unwrap()
                } else {
                    out.stdout
                }
            })
            .collect();
        if runs[0] != runs[1] || runs[0].is_empty() {
            differing.push(args[0..2].join(" "));
        }
    }
    verdict(
        differing.is_empty() && errors.is_empty(),
        format!(
            "{} invocations run twice (second with 3 worker threads); differing: {differing:?}; failed: {errors:?}",
            invocations.len()
        ),
    )
}

fn main() -> ExitCode {
    let names = [
        "homogeneous recovery",
        "AMPOS and WAMPOS separate",
        "estimand agreement",
        "TWFE sign contrast",
        "exact invariances",
        "no-stayer consistency",
        "dynamics",
        "bootstrap calibration",
        "determinism",
    ];
    let start = Instant::now();
    let cfg = linear_config(
        None,
        vec![Request::Delta1, Request::Delta2],
        MethodChoice::Both,
    );
    let reps = replicate(&cfg);
    let (v1, v3) = c1_c3(&reps, &cfg, start.elapsed().as_secs_f64());
    let verdicts = [v1, c2(), v3, c4(), c5(), c6(), c7(), c8(), c9()];
    let mut failed = 0;
    for (k, (name, v)) in names.iter().zip(verdicts).enumerate() {
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {} {}: {name}: {}",
            k + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    println!(
        "{} of {} criteria passed in {:.0}s",
        names.len() - failed,
        names.len(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
