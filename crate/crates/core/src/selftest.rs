//! End-to-end checks of the model against its closed-form behaviour.
//!
//! Each criterion is self-contained and deterministic (seeded RNG). Values
//! that follow from the model algebra are recomputed here from first
//! principles rather than through [`StageParams`] helpers.

use std::fmt;
use std::time::{Duration, Instant};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::characterize::{
    default_rate, default_resolution, hysteresis_sweep, late_transition_sweep, nominal_delay, pulse_sweep,
    stable_points_3d, table_grid_run, table_stage, Direction, PulseOutcome, TableOptions,
};
use crate::classifier::{classify, Bands, EventTag, Windows};
use crate::model::{Polarity, Region, StageParams};
use crate::simulator::{equilibrate, simulate, CascadeConfig, SimOptions};
use crate::steering::{first_decrease, invert_region2, plan_glitch_release, ControlOptions, Sine, SteeringError, Target};
use crate::waveform::Waveform;

pub const CRITERIA: [(u8, &str); 10] = [
    (1, "closed-form oracle"),
    (2, "threshold agreement"),
    (3, "cascade hysteresis"),
    (4, "static-input outcome table"),
    (5, "late-transition scaling"),
    (6, "glitch emergence"),
    (7, "race ordering"),
    (8, "sine forcing"),
    (9, "pulse propagation"),
    (10, "stable-point map"),
];

#[derive(Debug, Clone)]
pub struct CriterionReport {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} {} {} ({:.2} s): {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.title,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Runs one criterion; unknown ids fail.
pub fn run(id: u8) -> CriterionReport {
    let title = CRITERIA.iter().find(|c| c.0 == id).map_or("unknown", |c| c.1);
    let start = Instant::now();
    let outcome = match id {
        1 => oracle(),
        2 => thresholds(),
        3 => cascade_hysteresis(),
        4 => outcome_table(),
        5 => late_scaling(),
        6 => glitch(),
        7 => race(),
        8 => sine(),
        9 => pulses(),
        10 => stable_map(),
        _ => Err(format!("no criterion {id}")),
    };
    let elapsed = start.elapsed();
    let (passed, detail) = match outcome {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    CriterionReport {
        id,
        title,
        passed,
        detail,
        elapsed,
    }
}

pub fn run_all() -> Vec<CriterionReport> {
    CRITERIA.iter().map(|&(id, _)| run(id)).collect()
}

/// A valid stage with hysteresis, spread over several decades.
pub fn random_stage(rng: &mut ChaCha8Rng) -> StageParams {
    loop {
        let sat = rng.random_range(0.5..3.0);
        let p = StageParams {
            gain: 10f64.powf(rng.random_range(1.0..5.0)),
            sat,
            feedback: rng.random_range(0.05..0.95),
            v_ref: rng.random_range(-0.5..0.5) * sat,
            tau0: 10f64.powf(rng.random_range(-12.0..-6.0)),
            polarity: if rng.random_bool(0.5) {
                Polarity::Inverting
            } else {
                Polarity::NonInverting
            },
            rail_offset: rng.random_range(-1.0..1.0),
        };
        if p.feedback * p.gain > 1.5 {
            return p;
        }
    }
}

/// `(V_L, V_H)` straight from the switching condition `|u| = M` at a
/// saturated output.
fn oracle_thresholds(p: &StageParams) -> (f64, f64) {
    let s = if p.polarity == Polarity::Inverting { 1.0 } else { -1.0 };
    let off = (1.0 - p.feedback) * p.v_ref;
    // saturation at v = ±M ends where u = A(k·v + off − s·v_in) reaches v
    let leave = |v: f64| (p.feedback * v + off - v / p.gain) / s;
    let (a, b) = (leave(p.sat), leave(-p.sat));
    (a.min(b), a.max(b))
}

fn oracle_gamma2(p: &StageParams, v_in: f64) -> f64 {
    let s = if p.polarity == Polarity::Inverting { 1.0 } else { -1.0 };
    p.gain * (s * v_in - (1.0 - p.feedback) * p.v_ref) / (p.feedback * p.gain - 1.0)
}

fn oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let opts = SimOptions::default();
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for _ in 0..50 {
        let p = random_stage(&mut rng);
        let tau2 = p.tau0 / (p.feedback * p.gain - 1.0);
        for region in [Region::SaturationHi, Region::Linear, Region::SaturationLo] {
            let mut attempts = 0;
            let (v_in, v0, rest, rate, t_end) = loop {
                attempts += 1;
                if attempts > 10_000 {
                    return Err(format!("no constant input puts {p:?} in {region:?}"));
                }
                let v_in = rng.random_range(-2.0..2.0) * p.sat;
                match region {
                    Region::Linear => {
                        let g = oracle_gamma2(&p, v_in);
                        // |u| = |v + (kA − 1)(v − γ2)| ≤ M along the whole run
                        let room = (p.sat - g.abs()) / (p.feedback * p.gain);
                        if room < 1e-3 * p.sat / (p.feedback * p.gain) {
                            continue;
                        }
                        let d0 = 1e-4 * room * rng.random_range(0.5..1.0);
                        let d0 = if rng.random_bool(0.5) { d0 } else { -d0 };
                        break (v_in, g + d0, g, 1.0 / tau2, tau2 * (0.5 * room / d0.abs()).ln());
                    }
                    _ => {
                        let m = if region == Region::SaturationHi { p.sat } else { -p.sat };
                        let v0 = rng.random_range(-1.0..1.0) * p.sat;
                        // drive is affine in v, so both ends in the region keep the run there
                        if p.region_of(v_in, v0) != region || p.region_of(v_in, m) != region {
                            continue;
                        }
                        break (v_in, v0, m, -1.0 / p.tau0, 5.0 * p.tau0);
                    }
                }
            };
            let cfg = CascadeConfig::new(vec![p], vec![v0]).map_err(err)?;
            let tr = simulate(&cfg, &Waveform::constant(v_in), t_end, &opts).map_err(err)?;
            for (&t, &v) in tr.times.iter().zip(&tr.outputs[0]) {
                let transient = (v0 - rest) * (rate * t).exp();
                let exact = rest + transient;
                let scale = exact.abs().max(transient.abs()).max(f64::MIN_POSITIVE);
                worst = worst.max((v - exact).abs() / scale);
            }
            runs += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst < 1e-8, || format!("relative error {worst:e} ≥ 1e-8"))?;
    ensure(secs < 10.0, || format!("took {secs:.1} s ≥ 10 s"))?;
    Ok(format!("{runs} runs, worst relative error {worst:.2e}"))
}

fn thresholds() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let opts = SimOptions::default();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let p = random_stage(&mut rng);
        let res = default_resolution(&[p]);
        let curve = hysteresis_sweep(&[p], default_rate(&[p], res), res, &opts).map_err(err)?;
        let (vl, vh) = oracle_thresholds(&p);
        let width = vh - vl;
        let up = curve.switch_point(0, Direction::Up).ok_or("no single upward switch")?;
        let down = curve.switch_point(0, Direction::Down).ok_or("no single downward switch")?;
        worst = worst.max((up - vh).abs() / width).max((down - vl).abs() / width);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst <= 1e-4, || format!("switch point off by {worst:e}·width"))?;
    ensure(secs < 30.0, || format!("took {secs:.1} s ≥ 30 s"))?;
    Ok(format!("20 sweeps, worst deviation {worst:.2e}·width"))
}

/// `(V_1, V_2)` for a metastable first stage feeding `s2`.
fn oracle_v1_v2(s1: &StageParams, s2: &StageParams) -> (f64, f64) {
    let (lo2, hi2) = oracle_thresholds(s2);
    // invert γ2 of stage 1 at stage 2's thresholds
    let inv = |v: f64| {
        let s = if s1.polarity == Polarity::Inverting { 1.0 } else { -1.0 };
        s * (v * (s1.feedback * s1.gain - 1.0) / s1.gain + (1.0 - s1.feedback) * s1.v_ref)
    };
    (inv(lo2), inv(hi2))
}

fn cascade_hysteresis() -> Check {
    let a = StageParams::reference();
    let b = StageParams {
        gain: 200.0,
        feedback: 0.3,
        ..a
    };
    let opts = SimOptions::default();
    let mut lines = Vec::new();
    for (s1, s2) in [(a, a), (a, b), (b, a)] {
        let stages = [s1, s2];
        let res = default_resolution(&stages);
        let curve = hysteresis_sweep(&stages, default_rate(&stages, res), res, &opts).map_err(err)?;
        let (vl, vh) = oracle_thresholds(&s1);
        let width = vh - vl;
        let up = curve.switch_point(1, Direction::Up).ok_or("no single outer upward switch")?;
        let down = curve.switch_point(1, Direction::Down).ok_or("no single outer downward switch")?;
        ensure((up - vh).abs() <= 1e-4 * width && (down - vl).abs() <= 1e-4 * width, || {
            format!("outer switch points ({down}, {up}) differ from stage-1 thresholds ({vl}, {vh})")
        })?;

        // measured extent of the double-metastable rest states
        let (v1, v2) = oracle_v1_v2(&s1, &s2);
        let cfg = CascadeConfig::new(stages.to_vec(), vec![0.0, 0.0]).map_err(err)?;
        let step = 1e-4 * width;
        let n = ((vh - vl) / step).ceil() as usize;
        let meta: Vec<f64> = (0..=n)
            .map(|i| vl + i as f64 * step)
            .filter(|&v| equilibrate(&cfg, v).iter().any(|fp| fp.all_metastable()))
            .collect();
        let (&lo, &hi) = meta.first().zip(meta.last()).ok_or("no double-metastable rest state")?;
        let (e1, e2) = (v1.min(v2), v1.max(v2));
        ensure((lo - e1).abs() <= 1e-3 * width && (hi - e2).abs() <= 1e-3 * width, || {
            format!("metastable band [{lo}, {hi}] differs from [{e1}, {e2}]")
        })?;
        ensure((v2 - v1).abs() < width, || format!("|V2 − V1| = {} not below the width {width}", (v2 - v1).abs()))?;
        lines.push(format!("band [{lo:.4}, {hi:.4}]"));
    }
    let d_ab = oracle_v1_v2(&a, &b);
    let d_ba = oracle_v1_v2(&b, &a);
    let (g_ab, g_ba) = (d_ab.1 - d_ab.0, d_ba.1 - d_ba.0);
    ensure((g_ab - g_ba).abs() <= 1e-12 * a.hysteresis_width(), || {
        format!("V2 − V1 depends on stage order: {g_ab} vs {g_ba}")
    })?;
    Ok(format!("{}; V2 − V1 = {g_ab:.6} in either order", lines.join(", ")))
}

fn outcome_table() -> Check {
    let p = table_stage();
    let grid = table_grid_run(&p, &p, &TableOptions::default()).map_err(err)?;
    let bad = grid.mismatches();
    if !bad.is_empty() {
        let list: Vec<String> = bad
            .iter()
            .map(|c| format!("{:?}/{}/{}: {}", c.cell.bucket, c.cell.v_m.name(), c.cell.v_out.name(), c.observed_text()))
            .collect();
        return Err(format!("{} mismatching cells: {}", bad.len(), list.join("; ")));
    }
    let races = grid.cells.iter().filter(|c| c.expected.is_race()).count();
    Ok(format!("{} cells agree, {races} of them races with both orders observed", grid.cells.len()))
}

fn late_scaling() -> Check {
    let p = StageParams::reference();
    // larger overdrives add a τ0·ε term from the shifted saturated tail
    let eps: Vec<f64> = (0..9).map(|i| 1e-9 * p.sat * 10f64.powf(i as f64 * 0.5)).collect();
    let sweep = late_transition_sweep(&p, &eps, &SimOptions::default()).map_err(err)?;
    let tau2 = p.tau0 / (p.feedback * p.gain - 1.0);
    let rel = (sweep.slope - tau2).abs() / tau2;
    ensure(rel < 0.05, || format!("slope {:e} s is {:.2}% from tau2", sweep.slope, 100.0 * rel))?;
    Ok(format!("slope {:.4e} s, tau2 {tau2:.4e} s, r² {:.6}", sweep.slope, sweep.r_squared))
}

fn glitch() -> Check {
    let p = StageParams::reference();
    let g = plan_glitch_release(&p, &p, &ControlOptions::default()).map_err(err)?;
    ensure(first_decrease(&g.plan.waveform, g.release_start).is_none(), || "release input falls".into())?;
    let cfg = CascadeConfig::new(g.plan.stages.clone(), g.plan.initial_outputs.clone()).map_err(err)?;
    let opts = SimOptions {
        samples: 20_000,
        ..SimOptions::default()
    };
    let tr = simulate(&cfg, &g.plan.waveform, g.plan.end_time(), &opts).map_err(err)?;
    let k = tr.times.partition_point(|&t| t < g.release_start);
    let mut w = Windows::for_stage(&p, nominal_delay(&[p, p], &opts).map_err(err)?);
    w.reference_time = g.release_start;
    let label = classify(&tr.times[k..], &tr.outputs[1][k..], &Bands::for_stage(&p), &w);
    ensure(label.event == EventTag::Glitch, || format!("output classified as {}", label.event.name()))?;
    Ok(format!(
        "monotone release from t = {:.3e} s, output crossings {:?}",
        g.release_start, label.crossings
    ))
}

fn race() -> Check {
    // with a high gain τ2 ≪ τ0 and the second stage can never finish first
    let p = table_stage();
    let stages = vec![p, p];
    let cfg = CascadeConfig::new(stages.clone(), vec![0.0, 0.0]).map_err(err)?;
    let fp = equilibrate(&cfg, 0.0)
        .into_iter()
        .find(|f| f.all_metastable())
        .ok_or("no double-metastable rest state at v_in = 0")?;
    let opts = SimOptions {
        samples: 20_000,
        ..SimOptions::default()
    };
    let windows = Windows::for_stage(&p, nominal_delay(&stages, &opts).map_err(err)?);
    let bands = Bands::for_stage(&p);
    let delta = 1e-6 * p.sat;
    let mut out = Vec::new();
    for (nudge, want) in [
        ([delta, 0.0], EventTag::MetaResolveDown),
        ([delta * 1e-6, delta], EventTag::DoubleTransition),
    ] {
        let init = vec![fp.outputs[0] + nudge[0], fp.outputs[1] + nudge[1]];
        let cfg = CascadeConfig::new(stages.clone(), init).map_err(err)?;
        let tr = simulate(&cfg, &Waveform::constant(0.0), 150.0 * p.slowest_tau(), &opts).map_err(err)?;
        let label = classify(&tr.times, &tr.outputs[1], &bands, &windows);
        ensure(label.event == want, || {
            format!("nudge {nudge:?} gave {}, expected {}", label.event.name(), want.name())
        })?;
        out.push(format!("{} ({})", label.event.name(), label.final_logic));
    }
    Ok(format!("stage 1 first: {}; stage 2 first: {}", out[0], out[1]))
}

fn sine() -> Check {
    let p = StageParams::reference();
    let ctrl = ControlOptions::default();
    let (a, f, t_end) = (0.3, 20e6, 100e-9);
    let target = Sine::new(a, f);
    let w = invert_region2(&p, &target, t_end, &ctrl).map_err(err)?;
    let cfg = CascadeConfig::new(vec![p], vec![target.value(0.0)]).map_err(err)?;
    let tr = simulate(&cfg, &w, t_end, &ctrl.sim).map_err(err)?;
    let n = 4000;
    let rms = ((0..n)
        .map(|i| {
            let t = t_end * i as f64 / n as f64;
            (tr.value_at(0, t) - target.value(t)).powi(2)
        })
        .sum::<f64>()
        / n as f64)
        .sqrt();
    ensure(rms < 0.01 * a, || format!("rms error {rms:e} V"))?;

    let big = 1.2;
    let omega = 2.0 * std::f64::consts::PI * f;
    let wt = omega * p.tau0;
    let t_star = ((p.sat / (big * (1.0 + wt * wt).sqrt())).asin() - wt.atan()) / omega;
    let h = p.tau0 / (p.feedback * p.gain - 1.0) / 10.0;
    match invert_region2(&p, &Sine::new(big, f), t_end, &ctrl) {
        Err(SteeringError::ValidityViolation { t, .. }) if t >= t_star && t - t_star <= h => {
            Ok(format!("rms {:.2e} of amplitude; violation at {t:.6e} s, predicted {t_star:.6e} s", rms / a))
        }
        Err(SteeringError::ValidityViolation { t, .. }) => {
            Err(format!("violation at {t:e} s, predicted {t_star:e} s"))
        }
        other => Err(format!("amplitude {big} not rejected: {other:?}")),
    }
}

fn pulses() -> Check {
    let p = StageParams::reference();
    let opts = SimOptions::default();
    let edge = 1e-2 * p.tau0;
    let widths: Vec<f64> = [0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 8.0, 12.0, 20.0, 40.0].iter().map(|w| w * p.tau0).collect();
    let single = pulse_sweep(&[p], &widths, edge, &opts).map_err(err)?;
    let cascade = pulse_sweep(&[p, p], &widths, edge, &opts).map_err(err)?;
    ensure(cascade.boundary >= single.boundary, || {
        format!("cascade boundary {:e} below single-stage {:e}", cascade.boundary, single.boundary)
    })?;
    // close to the boundary the output edge is still settling; check well above it
    let floor = 2.0 * cascade.boundary;
    let mut worst: f64 = 0.0;
    for report in [&single, &cascade] {
        for r in &report.results {
            if r.outcome == PulseOutcome::Propagated && r.width >= floor {
                worst = worst.max(r.width_error().unwrap_or(f64::INFINITY));
            }
        }
    }
    ensure(worst <= 0.02, || format!("width error {:.2}%", 100.0 * worst))?;
    Ok(format!(
        "boundaries {:.3e} s / {:.3e} s, worst width error {:.3}% above {floor:.2e} s",
        single.boundary,
        cascade.boundary,
        100.0 * worst
    ))
}

fn stable_map() -> Check {
    let p = StageParams::reference();
    let grid: Vec<f64> = (0..=2400).map(|i| -1.2 + 1e-3 * i as f64).collect();
    let map = stable_points_3d(&p, &p, &grid).map_err(err)?;
    let on_curve = |s: &StageParams, x: f64, y: f64| s.rest_points(x).iter().any(|&(_, v)| (v - y).abs() <= 1e-12 * s.sat);
    let mut intermediate = 0;
    for pt in &map.points {
        ensure(pt.has_intermediate_output(&p) == pt.is_double_metastable(), || {
            format!("rest state {pt:?} breaks intermediate ⇔ double-metastable")
        })?;
        ensure(on_curve(&p, pt.v_in, pt.v_m) && on_curve(&p, pt.v_m, pt.v_out), || {
            format!("rest state {pt:?} is off a single-stage curve")
        })?;
        intermediate += usize::from(pt.is_double_metastable());
    }
    ensure(intermediate > 0, || "no double-metastable rest state".into())?;
    let gap = map.metastable_clearance().ok_or("no clearance defined")?;
    ensure(gap > 0.0, || "metastable segment touches a stable point".into())?;
    Ok(format!("{} rest states, {intermediate} double-metastable, clearance {gap:.3} V", map.points.len()))
}
