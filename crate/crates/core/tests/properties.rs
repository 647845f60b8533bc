use proptest::prelude::*;
use st_meta::characterize::{pulse_boundary, stable_points_3d};
use st_meta::classifier::{classify, mirror_outcome, Bands, Windows};
use st_meta::{simulate, CascadeConfig, Polarity, Region, SimOptions, StageParams, Waveform};

fn stage() -> impl Strategy<Value = StageParams> {
    (1.0f64..5.0, 0.5f64..3.0, 0.05f64..0.95, -0.5f64..0.5, -12.0f64..-6.0, any::<bool>(), -1.0f64..1.0)
        .prop_map(|(lg, sat, feedback, r, lt, inv, rail_offset)| StageParams {
            gain: 10f64.powf(lg),
            sat,
            feedback,
            v_ref: r * sat,
            tau0: 10f64.powf(lt),
            polarity: if inv { Polarity::Inverting } else { Polarity::NonInverting },
            rail_offset,
        })
        .prop_filter("needs hysteresis", |p| p.feedback * p.gain > 1.5)
}

fn sign(p: &StageParams) -> f64 {
    if p.polarity == Polarity::Inverting {
        1.0
    } else {
        -1.0
    }
}

fn offset(p: &StageParams) -> f64 {
    (1.0 - p.feedback) * p.v_ref
}

/// A sampled signal that wanders between rails on a uniform grid.
fn wander() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    prop::collection::vec((-1.2f64..1.2, 1usize..400), 1..8).prop_map(|levels| {
        let mut t = Vec::new();
        let mut v = Vec::new();
        let mut prev = levels[0].0;
        for (level, n) in levels {
            for i in 0..n {
                t.push(t.len() as f64 * 1e-10);
                // short ramps between plateaus
                let a = ((i + 1) as f64 / 10.0).min(1.0);
                v.push(prev + a * (level - prev));
            }
            prev = level;
        }
        (t, v)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_region_diverges_exponentially(p in stage(), g_frac in -0.5f64..0.5, d_frac in 0.1f64..1.0, up in any::<bool>()) {
        let ka = p.feedback * p.gain;
        // γ2 from the input; keep it well inside the rails
        let g = g_frac * p.sat;
        let v_in = sign(&p) * (g * (p.feedback - 1.0 / p.gain) + offset(&p));
        let room = (p.sat - g.abs()) / ka;
        let d0 = if up { 1e-4 } else { -1e-4 } * room * d_frac;
        let tau2 = p.tau0 / (ka - 1.0);
        let t_end = tau2 * (0.5 * room / d0.abs()).ln();
        let cfg = CascadeConfig::new(vec![p], vec![g + d0]).unwrap();
        let tr = simulate(&cfg, &Waveform::constant(v_in), t_end, &SimOptions::default()).unwrap();
        for (&t, &v) in tr.times.iter().zip(&tr.outputs[0]) {
            let dev = d0 * (t / tau2).exp();
            prop_assert!(((v - g) - dev).abs() <= 1e-8 * dev.abs().max(g.abs()), "t = {t:e}: {v} vs {}", g + dev);
        }
    }

    #[test]
    fn saturated_output_relaxes_to_rail(p in stage(), v0_frac in -1.0f64..1.0, hi in any::<bool>(), margin in 0.01f64..1.0) {
        // |u| ≥ M for every v in [-M, M] once the input is past both thresholds
        let reach = p.feedback * p.sat + p.sat / p.gain + margin * p.sat;
        let v_in = sign(&p) * (offset(&p) + if hi { -reach } else { reach });
        let rail = if hi { p.sat } else { -p.sat };
        let v0 = v0_frac * p.sat;
        let cfg = CascadeConfig::new(vec![p], vec![v0]).unwrap();
        let tr = simulate(&cfg, &Waveform::constant(v_in), 5.0 * p.tau0, &SimOptions::default()).unwrap();
        let expect_region = if hi { Region::SaturationHi } else { Region::SaturationLo };
        for ((&t, &v), &r) in tr.times.iter().zip(&tr.outputs[0]).zip(&tr.regions[0]) {
            let exact = rail + (v0 - rail) * (-t / p.tau0).exp();
            prop_assert!((v - exact).abs() <= 1e-9 * p.sat, "t = {t:e}: {v} vs {exact}");
            prop_assert_eq!(r, expect_region);
        }
    }

    #[test]
    fn thresholds_bound_the_hysteresis(p in stage()) {
        let (lo, hi) = p.thresholds();
        let width = 2.0 * (p.feedback * p.sat - p.sat / p.gain);
        prop_assert!(lo < hi);
        prop_assert!(((hi - lo) - width).abs() <= 1e-12 * p.sat);
        prop_assert!((0.5 * (lo + hi) - sign(&p) * offset(&p)).abs() <= 1e-12 * p.sat);
    }

    #[test]
    fn rest_points_count(p in stage(), x in -1.5f64..1.5) {
        let (lo, hi) = p.thresholds();
        let v_in = 0.5 * (lo + hi) + x * (hi - lo);
        let n = p.rest_points(v_in).len();
        if v_in > lo && v_in < hi {
            prop_assert_eq!(n, 3);
        } else if v_in < lo || v_in > hi {
            prop_assert_eq!(n, 1);
        }
    }

    #[test]
    fn gamma2_inverse_round_trip(p in stage(), v in -1.0f64..1.0) {
        let target = v * p.sat;
        let back = p.gamma2(p.gamma2_inverse(target));
        prop_assert!((back - target).abs() <= 1e-9 * p.sat);
    }

    #[test]
    fn classification_ignores_time_scale((t, v) in wander(), k in -40i32..40) {
        let p = StageParams::reference();
        let bands = Bands::for_stage(&p);
        let w = Windows::for_stage(&p, 2e-9);
        // a power of two keeps every scaled time exact
        let s = 2f64.powi(k);
        let ts: Vec<f64> = t.iter().map(|x| x * s).collect();
        let a = classify(&t, &v, &bands, &w);
        let b = classify(&ts, &v, &bands, &w.scaled(s));
        prop_assert_eq!(a.outcome(), b.outcome());
        prop_assert_eq!(a.crossings.len(), b.crossings.len());
    }

    #[test]
    fn classification_mirrors((t, v) in wander()) {
        let p = StageParams::reference();
        let bands = Bands::for_stage(&p);
        let w = Windows::for_stage(&p, 2e-9);
        let flipped: Vec<f64> = v.iter().map(|x| -x).collect();
        let a = classify(&t, &v, &bands, &w);
        let b = classify(&t, &flipped, &bands, &w);
        prop_assert_eq!(mirror_outcome(a.outcome()), b.outcome());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn cascade_boundary_is_no_shorter(gain in 2.5f64..4.0, feedback in 0.3f64..0.8) {
        let p = StageParams { gain: 10f64.powf(gain), feedback, ..StageParams::reference() };
        let opts = SimOptions::default();
        let edge = 1e-2 * p.tau0;
        let one = pulse_boundary(&[p], edge, 1e-3, &opts).unwrap();
        let two = pulse_boundary(&[p, p], edge, 1e-3, &opts).unwrap();
        prop_assert!(two >= one * (1.0 - 2e-3), "cascade {two:e} < single {one:e}");
    }

    #[test]
    fn intermediate_outputs_iff_both_stages_metastable(s1 in stage(), s2 in stage()) {
        // a centred second stage cannot hold its own input rails inside its band
        let s2 = StageParams { sat: s1.sat, v_ref: 0.0, ..s2 };
        let grid: Vec<f64> = (0..=200).map(|i| (-1.5 + 3.0 * i as f64 / 200.0) * s1.sat).collect();
        let map = stable_points_3d(&s1, &s2, &grid).unwrap();
        for pt in &map.points {
            prop_assert_eq!(pt.has_intermediate_output(&s2), pt.is_double_metastable(), "{:?}", pt);
        }
        if let Some(c) = map.metastable_clearance() {
            prop_assert!(c > 0.0);
        }
    }
}
