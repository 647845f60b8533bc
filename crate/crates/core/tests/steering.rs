use st_meta::classifier::{classify, Bands, EventTag, LogicLevel, Windows};
use st_meta::steering::*;
use st_meta::*;

fn p_star() -> StageParams {
    StageParams::reference()
}

fn replay(plan: &SteeringPlan) -> Trace {
    let cfg = CascadeConfig::new(plan.stages.clone(), plan.initial_outputs.clone()).unwrap();
    simulate(&cfg, &plan.waveform, plan.end_time(), &SimOptions::default()).unwrap()
}

#[test]
fn sine_round_trip_tracks_target() {
    let p = p_star();
    let s = Sine::new(0.3, 20e6);
    let t_end = 100e-9;
    let w = invert_region2(&p, &s, t_end, &ControlOptions::default()).unwrap();
    let cfg = CascadeConfig::new(vec![p], vec![0.0]).unwrap();
    let tr = simulate(&cfg, &w, t_end, &SimOptions::default()).unwrap();
    let n = 4000;
    let mse: f64 = (0..n)
        .map(|i| {
            let t = t_end * i as f64 / n as f64;
            (tr.value_at(0, t) - s.value(t)).powi(2)
        })
        .sum::<f64>()
        / n as f64;
    assert!(mse.sqrt() < 0.01 * 0.3, "rms {}", mse.sqrt());
}

#[test]
fn large_sine_violates_at_analytic_time() {
    let p = p_star();
    let (a, f) = (1.2, 20e6);
    let omega = 2.0 * std::f64::consts::PI * f;
    // |w + τ0 w'| = a·sqrt(1 + (ωτ0)²)·|sin(ωt + φ)| first reaches M
    let phi = (omega * p.tau0).atan();
    let r = p.sat / (a * (1.0 + (omega * p.tau0).powi(2)).sqrt());
    let t_star = (r.asin() - phi) / omega;
    let ctrl = ControlOptions::default();
    let h = p.tau2() / 10.0;
    match invert_region2(&p, &Sine::new(a, f), 100e-9, &ctrl) {
        Err(SteeringError::ValidityViolation { t, value }) => {
            assert!(t >= t_star && t - t_star <= h, "t = {t:e}, expected {t_star:e}");
            assert!(value > p.sat);
        }
        other => panic!("expected a validity violation, got {other:?}"),
    }
}

#[test]
fn entry_parks_on_metastable_line() {
    let p = p_star();
    let ctrl = ControlOptions::default();
    let plan = plan_metastable_entry(&p, -0.499, &ctrl).unwrap();
    // rest line v = v_in / (k − 1/A)
    let expected = -0.499 * (0.5 - 1e-3);
    assert!((plan.waveform.last_value() - expected).abs() < 1e-6);
    assert!((plan.parked_outputs[0] + 0.499).abs() <= plan.delta_park);

    let hold = plan.phase(Phase::HoldOnGamma2).unwrap();
    let tr = replay(&plan);
    for i in 0..=2000 {
        let t = hold.start + (hold.end - hold.start) * i as f64 / 2000.0;
        let off = tr.value_at(0, t) - p.gamma2(plan.waveform.sample(t));
        assert!(off.abs() <= 2.0 * plan.delta_park, "t = {t:e}, off = {off:e}");
    }
}

#[test]
fn symmetric_entry_parks_at_zero() {
    let plan = plan_metastable_entry(&p_star(), 0.0, &ControlOptions::default()).unwrap();
    assert!(plan.waveform.last_value().abs() < 1e-6);
    assert!(plan.parked_outputs[0].abs() <= plan.delta_park);
}

#[test]
fn released_stage_diverges_at_tau2_rate() {
    let p = p_star();
    let plan = plan_metastable_entry(&p, -0.499, &ControlOptions::default()).unwrap();
    let t_hold_end = plan.end_time();
    for dir in [ReleaseDirection::Up, ReleaseDirection::Down] {
        let r = release(&plan, dir, 30.0 * p.tau2());
        let tr = replay(&r);
        let rest = p.gamma2(r.waveform.last_value());
        let d = |t: f64| tr.value_at(0, t) - rest;
        // still inside the linear region: |v + τ0·v'| stays below M
        let (ta, tb) = (t_hold_end + p.tau2(), t_hold_end + 4.0 * p.tau2());
        let rate = (d(tb) / d(ta)).ln() / (tb - ta);
        assert!((rate * p.tau2() - 1.0).abs() < 0.05, "rate {rate:e}");
        let moved = d(r.end_time());
        match dir {
            ReleaseDirection::Up => assert!(moved > 0.0),
            ReleaseDirection::Down => assert!(moved < 0.0),
        }
    }
}

#[test]
fn cascade_parks_at_double_metastable_point() {
    let p = p_star();
    let ctrl = ControlOptions::default();
    let plan = plan_cascade_metastable(&p, &p, -0.999, &ctrl).unwrap();
    let x = plan.waveform.last_value();
    assert!((x + 0.249).abs() < 2e-3, "v_in {x}");
    let cfg = CascadeConfig::new(vec![p, p], vec![0.0, 0.0]).unwrap();
    let fp = equilibrate(&cfg, x).into_iter().find(|f| f.all_metastable()).expect("double-metastable point");
    for s in 0..2 {
        assert!((plan.parked_outputs[s] - fp.outputs[s]).abs() < 1e-3, "stage {s}");
    }
    assert!((plan.parked_outputs[1] + 0.999).abs() <= 10.0 * plan.delta_park);
}

#[test]
fn monotone_release_glitches_output() {
    let p = p_star();
    let g = plan_glitch_release(&p, &p, &ControlOptions::default()).unwrap();
    assert_eq!(first_decrease(&g.plan.waveform, g.release_start), None);
    let tr = replay(&g.plan);
    let k0 = tr.times.iter().position(|&t| t >= g.release_start).unwrap();
    let mut w = Windows::for_stage(&p, 2.0 * p.tau0);
    w.reference_time = g.release_start;
    let label = classify(&tr.times[k0..], &tr.outputs[1][k0..], &Bands::for_stage(&p), &w);
    assert_eq!(label.outcome(), (LogicLevel::Hi, EventTag::Glitch));
}

#[test]
fn replay_is_bit_identical() {
    let p = p_star();
    let plan = plan_cascade_metastable(&p, &p, -0.999, &ControlOptions::default()).unwrap();
    let tr = replay(&plan);
    let last = tr.times.len() - 1;
    assert_eq!(tr.outputs[0][last], plan.parked_outputs[0]);
    assert_eq!(tr.outputs[1][last], plan.parked_outputs[1]);
    assert_eq!(replay(&plan).outputs, tr.outputs);
}

#[test]
fn rejects_bad_controls() {
    let p = p_star();
    let coarse = ControlOptions {
        control_period: Some(2.0 * p.tau2()),
        ..ControlOptions::default()
    };
    assert!(matches!(
        plan_metastable_entry(&p, 0.0, &coarse),
        Err(SteeringError::ControlPeriodTooCoarse { .. })
    ));
    let gain = ControlOptions {
        gain: 1.5,
        ..ControlOptions::default()
    };
    assert!(matches!(plan_metastable_entry(&p, 0.0, &gain), Err(SteeringError::BadGain(_))));
    assert!(matches!(
        plan_metastable_entry(&p, 1.5, &ControlOptions::default()),
        Err(SteeringError::TargetOutOfRange(_))
    ));
}
