use contdid::estimators::Target;
use contdid::estimators::{
    ampos_nostayers, ampos_reg, dynamic_effects, long_run_reg, twfe_reference, wampos_ps,
    wampos_reg, BandwidthRule, CefConfig, DynamicConfig, LongRunControls, Method, TrimRule,
};
use contdid::panel::{check_monotone_baseline, classify, ingest, BaselineClass, Panel, Schema};
use contdid::propensity::fit_pscore;
use contdid::simulate::{generate, oracle, DgpSpec, Dist, Regime};
use contdid::smoothing::{fit_cef, Kernel, SmootherSpec};
use proptest::prelude::*;

/// Every estimator value on `p`, labelled. `a` rescales treatment thresholds.
fn all_estimates(p: &Panel, a: f64) -> Vec<(String, Result<f64, contdid::Error>, bool)> {
    let s = classify(p, 0.0).unwrap();
    let cef = CefConfig::default();
    let mut out = Vec::new();
    out.push((
        "ampos".into(),
        ampos_reg(p, &s, &cef, &TrimRule::default()).map(|e| e.value),
        false,
    ));
    let grid = [0.3 * a, 0.1 * a];
    out.push((
        "ampos_nostayers".into(),
        ampos_nostayers(p, &s, &cef, &TrimRule::default(), &grid).map(|e| e.value),
        false,
    ));
    match wampos_reg(p, &s, &cef) {
        Ok(w) => {
            for (t, r) in w.results() {
                out.push((format!("reg {t}"), r.clone().map(|e| e.value), false));
            }
        }
        Err(e) => out.push(("reg".into(), Err(e), false)),
    }
    match wampos_ps(p, &s, 2, None) {
        Ok(w) => {
            for (t, r) in w.results() {
                out.push((format!("ps {t}"), r.clone().map(|e| e.value), true));
            }
        }
        Err(e) => out.push(("ps".into(), Err(e), true)),
    }
    for method in [Method::Regression, Method::Pscore] {
        let cfg = DynamicConfig {
            method,
            clip: None,
            ..DynamicConfig::default()
        };
        let ps = method == Method::Pscore;
        match dynamic_effects(p, &s, &cfg) {
            Ok(d) => {
                for e in d.effects.iter().chain(&d.doses) {
                    out.push((format!("{} {}", e.label(), method.name()), Ok(e.value), ps));
                }
                out.push((
                    format!("delta_plus {}", method.name()),
                    d.delta_plus.map(|e| e.value),
                    ps,
                ));
            }
            Err(e) => out.push((format!("dynamic {}", method.name()), Err(e), ps)),
        }
    }
    if p.n_periods() >= 3 {
        out.push((
            "long_run".into(),
            long_run_reg(
                p,
                &s,
                1,
                &cef,
                &TrimRule::default(),
                LongRunControls::NotYetMoved,
            )
            .map(|e| e.value),
            false,
        ));
    }
    out.push(("twfe".into(), twfe_reference(p).map(|e| e.value), false));
    out
}

fn is_dose(label: &str) -> bool {
    label.starts_with("delta_plus_d_l")
}

fn sim_panel(seed: u64, n: usize, periods: usize, p_stay: f64, staggered: bool) -> Panel {
    let spec = DgpSpec {
        n,
        periods,
        seed,
        p_stay,
        regime: if staggered {
            Regime::Staggered
        } else {
            Regime::Static
        },
        jump: Dist::Uniform(0.2, 1.5),
        slope: Dist::Normal(1.0, 0.5),
        lags: if staggered { vec![1.0, 1.5] } else { vec![] },
        ..DgpSpec::default()
    };
    generate(&spec).unwrap().0
}

fn panel_strategy() -> impl Strategy<Value = Panel> {
    (
        any::<u64>(),
        80usize..160,
        2usize..5,
        0.3f64..0.7,
        any::<bool>(),
    )
        .prop_map(|(seed, n, t, p, stag)| sim_panel(seed, n, t, p, stag))
}

fn compare(
    base: &[(String, Result<f64, contdid::Error>, bool)],
    other: &[(String, Result<f64, contdid::Error>, bool)],
    expect: impl Fn(&str, f64) -> f64,
    tol: impl Fn(f64, bool) -> f64,
) -> Result<(), TestCaseError> {
    prop_assert_eq!(base.len(), other.len());
    for ((name, a, ps), (name2, b, _)) in base.iter().zip(other) {
        prop_assert_eq!(name, name2);
        match (a, b) {
            (Ok(x), Ok(y)) => {
                let want = expect(name, *x);
                prop_assert!(
                    (y - want).abs() <= tol(want, *ps),
                    "{}: {} vs {}",
                    name,
                    y,
                    want
                );
            }
            (Err(e1), Err(e2)) => prop_assert_eq!(e1.code(), e2.code(), "{}", name),
            _ => prop_assert!(false, "{}: {:?} vs {:?}", name, a, b),
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fixed_effects_cancel(p in panel_strategy(), alphas in prop::collection::vec(-10.0f64..10.0, 160), gammas in prop::collection::vec(-10.0f64..10.0, 5)) {
        let shifted = p.map_outcomes(|i, t, y| y + alphas[i] + gammas[t]);
        let base = all_estimates(&p, 1.0);
        prop_assert!(base.iter().filter(|e| e.1.is_ok()).count() >= 8);
        compare(&base, &all_estimates(&shifted, 1.0), |_, x| x, |_, _| 1e-10)?;
    }

    #[test]
    fn outcome_scale_equivariance(p in panel_strategy(), c in 0.1f64..10.0) {
        let scaled = p.map_outcomes(|_, _, y| c * y);
        let base = all_estimates(&p, 1.0);
        compare(&base, &all_estimates(&scaled, 1.0), |n, x| if is_dose(n) { x } else { c * x }, |w, _| 1e-10 * w.abs().max(1.0))?;
    }

    #[test]
    fn treatment_affine_equivariance(p in panel_strategy(), a in 0.2f64..5.0, b in -5.0f64..5.0) {
        let moved = p.map_treatments(|_, _, d| a * d + b);
        let base = all_estimates(&p, 1.0);
        let factor = |n: &str| {
            if is_dose(n) {
                a
            } else if n.starts_with("delta_plus_l") {
                1.0
            } else {
                1.0 / a
            }
        };
        compare(&base, &all_estimates(&moved, a), |n, x| factor(n) * x, |w, ps| if ps { 1e-7 } else { 1e-9 } * w.abs().max(1.0))?;
    }

    #[test]
    fn share_weighted_aggregation(p in panel_strategy()) {
        let s = classify(&p, 0.0).unwrap();
        let fits = [wampos_reg(&p, &s, &CefConfig::default()), wampos_ps(&p, &s, 2, Some(20.0))];
        for w in fits.into_iter().flatten() {
            if let (Ok(i), Ok(d), Ok(c)) = (&w.increasers, &w.decreasers, &w.combined) {
                let share = c.details["share_increasers"];
                prop_assert_eq!(Some(share), w.share_increasers);
                prop_assert!((c.value - (share * i.value + (1.0 - share) * d.value)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reruns_are_bit_identical(p in panel_strategy()) {
        let a = all_estimates(&p, 1.0);
        let b = all_estimates(&p, 1.0);
        for ((_, x, _), (_, y, _)) in a.iter().zip(&b) {
            match (x, y) {
                (Ok(x), Ok(y)) => prop_assert_eq!(x.to_bits(), y.to_bits()),
                (x, y) => prop_assert_eq!(x, y),
            }
        }
    }
}

/// Baseline, second-period treatment, two outcomes and a weight.
type Row = (f64, f64, f64, f64, f64);

/// Two-period panel with five baseline values and several stayers per value.
fn discrete_panel(seed: u64) -> (Panel, Vec<Row>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for cell in 0..5 {
        let d1 = cell as f64;
        let n_cell = 30 + rng.random_range(0..10);
        for k in 0..n_cell {
            let dd = match k % 3 {
                0 => 0.0,
                1 => rng.random_range(0.2..2.0),
                _ => -rng.random_range(0.2..2.0),
            };
            let y1: f64 = rng.random_range(-1.0..1.0);
            let y2 = y1 + d1 * d1 * 0.3 + (1.0 + d1) * dd + rng.random_range(-1.0..1.0);
            let w = rng.random_range(0.5..1.5);
            rows.push((d1, d1 + dd, y1, y2, w));
        }
    }
    let n = rows.len();
    let panel = Panel::new(
        (0..n).map(|i| i.to_string()).collect(),
        vec![1.0, 2.0],
        rows.iter().flat_map(|r| [r.0, r.1]).collect(),
        rows.iter().flat_map(|r| [r.2, r.3]).collect(),
        Some(rows.iter().map(|r| r.4).collect()),
    )
    .unwrap();
    (panel, rows)
}

/// Cell-mean estimator computed directly from the rows.
fn cell_mean_estimates(rows: &[Row]) -> (f64, f64, f64, f64) {
    let stayer_mean = |d1: f64| {
        let (s, w) = rows
            .iter()
            .filter(|r| r.0 == d1 && r.1 == r.0)
            .fold((0.0, 0.0), |(s, w), r| (s + r.4 * (r.3 - r.2), w + r.4));
        s / w
    };
    let direction = |sign: f64| {
        let movers: Vec<_> = rows.iter().filter(|r| (r.1 - r.0) * sign > 0.0).collect();
        let w: f64 = movers.iter().map(|r| r.4).sum();
        let num: f64 = movers
            .iter()
            .map(|r| r.4 * (r.3 - r.2 - stayer_mean(r.0)))
            .sum::<f64>()
            / w;
        let den: f64 = movers.iter().map(|r| r.4 * (r.1 - r.0)).sum::<f64>() / w;
        (num / den, w)
    };
    let (di, wi) = direction(1.0);
    let (dd, wd) = direction(-1.0);
    let share = wi / (wi + wd);
    let movers: Vec<_> = rows.iter().filter(|r| r.1 != r.0).collect();
    let w: f64 = movers.iter().map(|r| r.4).sum();
    let d1 = movers
        .iter()
        .map(|r| r.4 * (r.3 - r.2 - stayer_mean(r.0)) / (r.1 - r.0))
        .sum::<f64>()
        / w;
    (di, dd, share * di + (1.0 - share) * dd, d1)
}

#[test]
fn discrete_baseline_matches_cell_means() {
    for seed in 0..5 {
        let (p, rows) = discrete_panel(seed);
        let s = classify(&p, 0.0).unwrap();
        let (di, dd, d2, d1) = cell_mean_estimates(&rows);
        for (kernel, degree) in [(Kernel::Epanechnikov, 1), (Kernel::Rectangular, 0)] {
            let cef = CefConfig {
                bandwidth: BandwidthRule::Fixed(0.5),
                kernel,
                degree,
                ..CefConfig::default()
            };
            let w = wampos_reg(&p, &s, &cef).unwrap();
            assert!((w.increasers.unwrap().value - di).abs() < 1e-12);
            assert!((w.decreasers.unwrap().value - dd).abs() < 1e-12);
            assert!((w.combined.unwrap().value - d2).abs() < 1e-12);
            let a = ampos_reg(&p, &s, &cef, &TrimRule::None).unwrap();
            assert!((a.value - d1).abs() < 1e-12);
        }
        // A quartic logit in five support points is saturated.
        let w = wampos_ps(&p, &s, 4, None).unwrap();
        assert!((w.increasers.unwrap().value - di).abs() < 1e-7);
        assert!((w.decreasers.unwrap().value - dd).abs() < 1e-7);
        assert!((w.combined.unwrap().value - d2).abs() < 1e-7);
    }
}

fn small_paths() -> impl Strategy<Value = (usize, Vec<Vec<f64>>)> {
    (2usize..6)
        .prop_flat_map(|t| {
            (
                Just(t),
                prop::collection::vec(prop::collection::vec(0u8..3, t), 1..12),
            )
        })
        .prop_map(|(t, rows)| {
            (
                t,
                rows.into_iter()
                    .map(|r| r.into_iter().map(f64::from).collect())
                    .collect(),
            )
        })
}

fn panel_from_paths(paths: &[Vec<f64>]) -> Panel {
    let t = paths[0].len();
    Panel::new(
        (0..paths.len()).map(|i| i.to_string()).collect(),
        (0..t).map(|k| k as f64).collect(),
        paths.iter().flatten().copied().collect(),
        vec![0.0; paths.len() * t],
        None,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn first_move_and_indicators_by_brute_force((t, paths) in small_paths()) {
        let p = panel_from_paths(&paths);
        let s = classify(&p, 0.0).unwrap();
        for (i, path) in paths.iter().enumerate() {
            let brute = (1..t).find(|&k| path[k] != path[k - 1]).map_or(t + 1, |k| k + 1);
            prop_assert_eq!(s.first_move_date(i), brute);
            for k in 1..t {
                prop_assert_eq!(s.is_mover(i, k), s.is_increaser(i, k) || s.is_decreaser(i, k));
                prop_assert!(!(s.is_increaser(i, k) && s.is_decreaser(i, k)));
                prop_assert_eq!(s.moved_beyond(i, k, 0.0), s.is_mover(i, k));
                for delta in [0.5, 1.5] {
                    prop_assert!(!s.moved_beyond(i, k, delta) || s.is_mover(i, k));
                }
            }
        }
    }

    #[test]
    fn classification_ignores_outcomes_and_rescales_thresholds((_t, paths) in small_paths(), c in -5.0f64..5.0, a in 0.1f64..4.0, b in -3.0f64..3.0) {
        let p = panel_from_paths(&paths);
        let s = classify(&p, 0.0).unwrap();
        prop_assert_eq!(&classify(&p.map_outcomes(|_, _, y| y + c), 0.0).unwrap(), &s);
        let moved = classify(&p.map_treatments(|_, _, d| a * d + b), 0.0).unwrap();
        for i in 0..p.n_units() {
            prop_assert_eq!(moved.first_move(i), s.first_move(i));
            for k in 1..p.n_periods() {
                prop_assert_eq!(moved.is_increaser(i, k), s.is_increaser(i, k));
                prop_assert_eq!(moved.is_decreaser(i, k), s.is_decreaser(i, k));
                prop_assert_eq!(moved.moved_beyond(i, k, 1.5 * a), s.moved_beyond(i, k, 1.5));
            }
        }
    }

    #[test]
    fn row_order_does_not_matter(seed in any::<u64>(), perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let p = sim_panel(seed, 40, 3, 0.5, false);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<&str> = text.lines().skip(1).collect();
        lines.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
        let shuffled = format!("unit,time,d,y\n{}\n", lines.join("\n"));
        let q = ingest(shuffled.as_bytes(), &Schema::default()).unwrap();
        prop_assert_eq!(&q, &p);
    }

    #[test]
    fn relabelled_units_give_the_same_estimates(seed in any::<u64>(), perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let p = sim_panel(seed, 120, 2, 0.5, false);
        let mut order: Vec<usize> = (0..p.n_units()).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
        let q = p.resample(&order);
        let base = all_estimates(&p, 1.0);
        compare(&base, &all_estimates(&q, 1.0), |_, x| x, |w, _| 1e-10 * w.abs().max(1.0))?;
    }

    #[test]
    fn pscores_sum_to_one_and_follow_affine_maps(seed in any::<u64>(), a in 0.2f64..5.0, b in -5.0f64..5.0, degree in 0usize..4) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = 400;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let labels: Vec<usize> = x
            .iter()
            .map(|&v| {
                let u: f64 = rng.random();
                if u < 0.2 + 0.2 * v { 1 } else if u < 0.7 { 2 } else { 0 }
            })
            .collect();
        let w = vec![1.0; n];
        let classes = ["control", "increase", "decrease"];
        let m = fit_pscore(&x, &labels, &w, &classes, degree).unwrap();
        let xa: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let ma = fit_pscore(&xa, &labels, &w, &classes, degree).unwrap();
        for _ in 0..1000 {
            let q: f64 = rng.random_range(-0.5..2.5);
            let pr = m.predict(q);
            prop_assert!((pr.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            prop_assert!(pr.iter().all(|&v| v > 0.0 && v < 1.0));
            let pa = ma.predict(a * q + b);
            for (u, v) in pr.iter().zip(&pa) {
                prop_assert!((u - v).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn smoother_shift_and_scale(seed in any::<u64>(), c in -10.0f64..10.0, k in 0.1f64..10.0, degree in 0u8..2) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = 200;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let dy: Vec<f64> = x.iter().map(|v| (3.0 * v).sin() + rng.random_range(-0.5..0.5)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let spec = SmootherSpec { bandwidth: 0.15, kernel: Kernel::Epanechnikov, degree };
        let base = fit_cef(&x, &dy, &w, &spec).unwrap();
        let shifted = fit_cef(&x, &dy.iter().map(|v| v + c).collect::<Vec<_>>(), &w, &spec).unwrap();
        let scaled = fit_cef(&x, &dy.iter().map(|v| v * k).collect::<Vec<_>>(), &w, &spec).unwrap();
        let (lo, hi) = dy.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        for q in [0.1, 0.3, 0.5, 0.77, 0.95] {
            let v = base.eval(q).unwrap().value;
            prop_assert!((shifted.eval(q).unwrap().value - (v + c)).abs() < 1e-10);
            prop_assert!((scaled.eval(q).unwrap().value - k * v).abs() < 1e-10 * k.max(1.0));
            if degree == 0 {
                prop_assert!(v >= lo && v <= hi);
            }
        }
    }

    #[test]
    fn oracle_slope_average_lies_within_unit_slopes(seed in any::<u64>(), quad in -1.0f64..1.0, coef in 0.0f64..2.0) {
        let spec = DgpSpec {
            n: 200,
            seed,
            quad,
            slope: Dist::Normal(1.0, 1.0),
            slope_dd_coef: coef,
            ..DgpSpec::default()
        };
        let (_, truth) = generate(&spec).unwrap();
        let slopes: Vec<f64> = (0..spec.n)
            .filter(|&i| truth.units[i].d[1] != truth.units[i].d[0])
            .map(|i| {
                let d = &truth.units[i].d;
                (truth.potential(i, 1, d) - truth.potential(i, 1, &[d[0], d[0]])) / (d[1] - d[0])
            })
            .collect();
        let (lo, hi) = slopes.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        for t in [Target::Delta1, Target::Delta2i, Target::Delta2d, Target::Delta2] {
            let v = oracle(&truth, t, None).unwrap();
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn staggered_paths_never_cross_baseline(seed in any::<u64>(), periods in 2usize..7) {
        let spec = DgpSpec {
            n: 100,
            periods,
            seed,
            regime: Regime::Staggered,
            jump: Dist::Uniform(0.1, 2.0),
            ..DgpSpec::default()
        };
        let (p, _) = generate(&spec).unwrap();
        prop_assert!(check_monotone_baseline(&p, 0.0).iter().all(|&c| c == BaselineClass::AlwaysAbove));
    }
}
