//! Input schedules that hold stages inside their linear region.
//!
//! The linear region is unstable with time constant `τ2`, so an open-loop
//! inverse cannot be replayed in floating point: rounding grows like
//! `e^{t/τ2}`. Schedules are therefore computed in closed loop against the
//! same integrator the simulator uses, one breakpoint per control period,
//! and emitted as a [`Waveform`]. Replaying that waveform through
//! [`simulate`](crate::simulator::simulate) reproduces the planned
//! trajectory bit for bit.

use thiserror::Error;

use crate::model::StageParams;
use crate::simulator::{Piece, SimError, SimOptions, StageIntegrator};
use crate::waveform::Waveform;

#[derive(Debug, Error)]
pub enum SteeringError {
    #[error("target leaves the linear region at t = {t:e} s (|w + tau0*w'| = {value:.6} V > M)")]
    ValidityViolation { t: f64, value: f64 },
    #[error("target {0} V is outside the reachable band")]
    TargetOutOfRange(f64),
    #[error("tracking error {error:e} V at t = {t:e} s; control period too coarse")]
    Diverged { t: f64, error: f64 },
    #[error("control period {period:e} s is not shorter than tau2 = {tau2:e} s")]
    ControlPeriodTooCoarse { period: f64, tau2: f64 },
    #[error("control gain must lie in (0, 1], got {0}")]
    BadGain(f64),
    #[error("the input schedule must be monotone but is not at t = {0:e} s")]
    NotMonotone(f64),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// A differentiable output trajectory.
pub trait Target {
    fn value(&self, t: f64) -> f64;
    fn slope(&self, t: f64) -> f64;
    /// Second derivative; only used to steer through a second stage.
    fn curvature(&self, _t: f64) -> f64 {
        0.0
    }
}

impl Target for Waveform {
    fn value(&self, t: f64) -> f64 {
        self.sample(t)
    }

    fn slope(&self, t: f64) -> f64 {
        self.derivative_at(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sine {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub offset: f64,
}

impl Sine {
    pub fn new(amplitude: f64, frequency: f64) -> Sine {
        Sine {
            amplitude,
            frequency,
            phase: 0.0,
            offset: 0.0,
        }
    }

    fn omega(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.frequency
    }
}

impl Target for Sine {
    fn value(&self, t: f64) -> f64 {
        self.offset + self.amplitude * (self.omega() * t + self.phase).sin()
    }

    fn slope(&self, t: f64) -> f64 {
        self.amplitude * self.omega() * (self.omega() * t + self.phase).cos()
    }

    fn curvature(&self, t: f64) -> f64 {
        -self.amplitude * self.omega().powi(2) * (self.omega() * t + self.phase).sin()
    }
}

/// `w(t) = goal + (start − goal)·e^{−(t − t0)/τ}`; a negative `τ` grows.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Approach {
    start: f64,
    goal: f64,
    t0: f64,
    tau: f64,
}

impl Target for Approach {
    fn value(&self, t: f64) -> f64 {
        self.goal + (self.start - self.goal) * (-(t - self.t0) / self.tau).exp()
    }

    fn slope(&self, t: f64) -> f64 {
        -(self.start - self.goal) / self.tau * (-(t - self.t0) / self.tau).exp()
    }

    fn curvature(&self, t: f64) -> f64 {
        (self.start - self.goal) / self.tau.powi(2) * (-(t - self.t0) / self.tau).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOptions {
    /// Defaults to a tenth of the fastest steered stage's `τ2`.
    pub control_period: Option<f64>,
    /// Fraction of the tracking error removed per control period.
    pub gain: f64,
    /// Outer-loop error decay per control period when steering a second stage.
    pub outer_gain: f64,
    /// Park tolerance relative to `M`.
    pub delta_park_rel: f64,
    /// Approach ramp duration in units of `τ0`.
    pub approach_time: f64,
    /// Time constant of reference transits in units of `τ0`.
    pub transit_tau: f64,
    /// Hold duration in units of `τ0`.
    pub hold_time: f64,
    pub sim: SimOptions,
}

impl Default for ControlOptions {
    fn default() -> Self {
        ControlOptions {
            control_period: None,
            gain: 0.5,
            outer_gain: 0.2,
            delta_park_rel: 1e-5,
            approach_time: 10.0,
            transit_tau: 4.0,
            hold_time: 20.0,
            sim: SimOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReleaseDirection {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    ApproachRamp,
    TrackTarget,
    HoldOnGamma2,
    HandoffToStage2,
    Release(ReleaseDirection),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSpan {
    pub phase: Phase,
    pub start: f64,
    pub end: f64,
}

/// A materialised input schedule with the state it starts from.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringPlan {
    pub stages: Vec<StageParams>,
    pub initial_outputs: Vec<f64>,
    pub waveform: Waveform,
    pub phases: Vec<PhaseSpan>,
    pub control_period: f64,
    pub gain: f64,
    /// Allowed distance from the metastable line while parked.
    pub delta_park: f64,
    /// Stage outputs at the end of the last controlled phase.
    pub parked_outputs: Vec<f64>,
}

impl SteeringPlan {
    pub fn end_time(&self) -> f64 {
        self.waveform.end_time()
    }

    pub fn phase(&self, phase: Phase) -> Option<PhaseSpan> {
        self.phases.iter().copied().find(|p| p.phase == phase)
    }
}

/// Open-loop region-2 inverse at one instant: the input whose metastable
/// response has value `w` and slope `w_dot`.
pub fn feedforward_input(p: &StageParams, w: f64, w_dot: f64) -> f64 {
    p.gamma2_inverse(w - p.tau2() * w_dot)
}

/// Feedback gains `(k_e, k_x)` for the law
/// `x[n+1] = x_ff[n+1] + k_e·(v[n] − w[n]) + k_x·(x[n] − x_ff[n])`.
///
/// Over one period with the input moving linearly from `x[n]` to `x[n+1]`
/// the linear-region response is `v[n+1] = E·v[n] + a·x[n] + b·x[n+1] + …`.
/// Both closed-loop poles are placed at `1 − gain`. A one-step inverse that
/// solves for `x[n+1]` alone would leave the input with a pole near −1.
fn feedback_gains(p: &StageParams, h: f64, gain: f64) -> (f64, f64) {
    let t2 = p.tau2();
    let e = (h / t2).exp();
    let c1 = p.polarity.sign() / (p.feedback - 1.0 / p.gain);
    let b = c1 * (h + t2 - t2 * e) / h;
    let a = c1 * (1.0 - e) - b;
    let z = 1.0 - gain;
    let k_e = (e - z).powi(2) / -(e * b + a);
    let k_x = 2.0 * z - e - b * k_e;
    (k_e, k_x)
}

fn check_validity(p: &StageParams, target: &dyn Target, t0: f64, t1: f64, h: f64) -> Result<(), SteeringError> {
    let n = ((t1 - t0) / h).ceil() as usize;
    for i in 0..=n {
        let t = (t0 + i as f64 * h).min(t1);
        let value = target.value(t) + p.tau0 * target.slope(t);
        if value.abs() > p.sat {
            return Err(SteeringError::ValidityViolation { t, value: value.abs() });
        }
    }
    Ok(())
}

/// Shared stepping machinery: a chain of integrators fed by one input.
struct Chain {
    stages: Vec<StageParams>,
    integrators: Vec<StageIntegrator>,
    points: Vec<(f64, f64)>,
    h: f64,
    gains: (f64, f64),
    /// Never let the input fall.
    monotone: bool,
}

impl Chain {
    fn new(stages: &[StageParams], outputs: &[f64], x0: f64, h: f64, gain: f64, sim: &SimOptions) -> Chain {
        let mut integrators = Vec::with_capacity(stages.len());
        let mut input = x0;
        for (i, (p, &v)) in stages.iter().zip(outputs).enumerate() {
            integrators.push(StageIntegrator::new(*p, i, 0.0, v, input, sim));
            input = v;
        }
        Chain {
            stages: stages.to_vec(),
            integrators,
            points: vec![(0.0, x0)],
            h,
            gains: feedback_gains(&stages[0], h, gain),
            monotone: false,
        }
    }

    fn t(&self) -> f64 {
        self.points[self.points.len() - 1].0
    }

    fn x(&self) -> f64 {
        self.points[self.points.len() - 1].1
    }

    fn v(&self, stage: usize) -> f64 {
        self.integrators[stage].value()
    }

    /// Advances every stage with the input moving linearly to `x` at `t1`.
    fn push(&mut self, t1: f64, x: f64) -> Result<(), SteeringError> {
        let (t0, x0) = (self.t(), self.x());
        let seg = Piece::segment(t0, x0, t1, x);
        let mut marks: Vec<usize> = self.integrators.iter().map(|it| it.pieces().len()).collect();
        self.integrators[0].advance(&seg, t1)?;
        for s in 1..self.integrators.len() {
            let (before, after) = self.integrators.split_at_mut(s);
            let upstream = &before[s - 1];
            for piece in &upstream.pieces()[marks[s - 1]..] {
                after[0].advance(piece, t1)?;
            }
            marks[s - 1] = upstream.pieces().len();
        }
        self.points.push((t1, x));
        Ok(())
    }

    fn next_time(&self) -> f64 {
        // breakpoints on an exact grid keep long schedules free of drift
        let k = (self.t() / self.h).round() + 1.0;
        k * self.h
    }

    /// One control period steering stage 0 along the reference `w` whose
    /// feedforward input is `ff`, both given at the period start and end.
    fn step_stage1(&mut self, w_now: f64, ff_now: f64, ff_next: f64) -> Result<(), SteeringError> {
        let t1 = self.next_time();
        let (k_e, k_x) = self.gains;
        let mut x = ff_next + k_e * (self.v(0) - w_now) + k_x * (self.x() - ff_now);
        if self.monotone {
            x = x.max(self.x());
        }
        self.push(t1, x)
    }

    /// Tracks `target` with stage 0 until `t_stop`.
    fn track(&mut self, target: &dyn Target, t_stop: f64, tol: f64) -> Result<(), SteeringError> {
        let p = self.stages[0];
        let ff = |t: f64| feedforward_input(&p, target.value(t), target.slope(t));
        while self.t() < t_stop - 0.5 * self.h {
            let t0 = self.t();
            let w = target.value(t0);
            let err = self.v(0) - w;
            if err.abs() > tol {
                return Err(SteeringError::Diverged { t: t0, error: err });
            }
            let t1 = self.next_time();
            self.step_stage1(w, ff(t0), ff(t1))?;
        }
        Ok(())
    }

    /// Tracks `target` with the second of two stages by steering the first.
    fn track_outer(&mut self, target: &dyn Target, outer_gain: f64, t_stop: f64, tol: f64) -> Result<(), SteeringError> {
        let (p1, p2) = (self.stages[0], self.stages[1]);
        let slope2 = p2.polarity.sign() * (p2.feedback - 1.0 / p2.gain);
        let boost = slope2 * (1.0 + outer_gain / self.h * p2.tau2());
        // stage-1 reference and its slope for a frozen outer error e
        let want_m = |t: f64, e: f64| {
            let m = feedforward_input(&p2, target.value(t), target.slope(t)) + boost * e;
            let dm = slope2 * (target.slope(t) - p2.tau2() * target.curvature(t));
            (m, feedforward_input(&p1, m, dm))
        };
        while self.t() < t_stop - 0.5 * self.h {
            let t0 = self.t();
            let e2 = self.v(1) - target.value(t0);
            if e2.abs() > tol {
                return Err(SteeringError::Diverged { t: t0, error: e2 });
            }
            let t1 = self.next_time();
            let (m0, ff0) = want_m(t0, e2);
            let (_, ff1) = want_m(t1, e2);
            self.step_stage1(m0, ff0, ff1)?;
        }
        Ok(())
    }

    fn ramp(&mut self, t1: f64, x: f64) -> Result<(), SteeringError> {
        self.push(t1, x)
    }
}

fn control_period(stages: &[StageParams], ctrl: &ControlOptions) -> Result<f64, SteeringError> {
    let tau2 = stages.iter().map(StageParams::tau2).fold(f64::INFINITY, f64::min);
    let h = ctrl.control_period.unwrap_or(tau2 / 10.0);
    if !(ctrl.gain > 0.0 && ctrl.gain <= 1.0) {
        return Err(SteeringError::BadGain(ctrl.gain));
    }
    if !(h > 0.0 && h < tau2) {
        return Err(SteeringError::ControlPeriodTooCoarse { period: h, tau2 });
    }
    Ok(h)
}

/// Input schedule that makes a single stage, started at `target(0)`, follow
/// `target` over `[0, t_end]` inside its linear region.
///
/// Fails with [`SteeringError::ValidityViolation`] at the first control
/// instant where `|w + τ0·w'| > M`.
pub fn invert_region2(
    p: &StageParams,
    target: &dyn Target,
    t_end: f64,
    ctrl: &ControlOptions,
) -> Result<Waveform, SteeringError> {
    p.validate().map_err(|source| SimError::Model { stage: 0, source })?;
    let h = control_period(&[*p], ctrl)?;
    check_validity(p, target, 0.0, t_end, h)?;
    let v0 = target.value(0.0);
    let x0 = feedforward_input(p, v0, target.slope(0.0));
    let mut chain = Chain::new(&[*p], &[v0], x0, h, ctrl.gain, &ctrl.sim);
    chain.track(target, t_end, 1e-2 * p.sat)?;
    Ok(Waveform::new(chain.points).expect("control grid is increasing"))
}

struct Builder {
    chain: Chain,
    phases: Vec<PhaseSpan>,
    initial_outputs: Vec<f64>,
}

impl Builder {
    fn mark(&mut self, phase: Phase, start: f64) {
        let end = self.chain.t();
        self.phases.push(PhaseSpan { phase, start, end });
    }

    fn finish(self, ctrl: &ControlOptions) -> SteeringPlan {
        let parked = (0..self.chain.stages.len()).map(|s| self.chain.v(s)).collect();
        SteeringPlan {
            stages: self.chain.stages.clone(),
            initial_outputs: self.initial_outputs,
            waveform: Waveform::new(self.chain.points).expect("control grid is increasing"),
            phases: self.phases,
            control_period: self.chain.h,
            gain: ctrl.gain,
            delta_park: ctrl.delta_park_rel * self.chain.stages[0].sat,
            parked_outputs: parked,
        }
    }
}

/// Ramps the first stage's input up to its upper threshold from a settled
/// state below the band.
fn approach(stages: &[StageParams], ctrl: &ControlOptions) -> Result<Builder, SteeringError> {
    let h = control_period(stages, ctrl)?;
    let s1 = stages[0];
    let (vl, vh) = s1.thresholds();
    let start = vl - (vh - vl);
    let mut outputs = Vec::with_capacity(stages.len());
    let mut input = start;
    for p in stages {
        let v = p
            .rest_points(input)
            .into_iter()
            .find(|(r, _)| r.is_saturated())
            .map(|(_, v)| v)
            .ok_or_else(|| SimError::InvalidConfig("no saturated rest state below the band".into()))?;
        outputs.push(v);
        input = v;
    }
    let mut b = Builder {
        chain: Chain::new(stages, &outputs, start, h, ctrl.gain, &ctrl.sim),
        phases: Vec::new(),
        initial_outputs: outputs,
    };
    b.chain.ramp(ctrl.approach_time * s1.tau0, vh)?;
    b.mark(Phase::ApproachRamp, 0.0);
    Ok(b)
}

fn transit_end(from: f64, to: f64, tau: f64, t0: f64, tol: f64) -> f64 {
    let gap = (from - to).abs();
    if gap <= tol {
        t0
    } else {
        t0 + tau * (gap / tol).ln()
    }
}

/// Moves stage 0 to `goal` along its metastable line and holds it there.
fn park_stage1(b: &mut Builder, goal: f64, hold: bool, ctrl: &ControlOptions) -> Result<(), SteeringError> {
    let p = b.chain.stages[0];
    let delta_park = ctrl.delta_park_rel * p.sat;
    let t0 = b.chain.t();
    let r = Approach {
        start: b.chain.v(0),
        goal,
        t0,
        tau: ctrl.transit_tau * p.tau0,
    };
    let t_hold = transit_end(r.start, goal, r.tau, t0, 0.1 * delta_park);
    b.chain.track(&r, t_hold, 10.0 * delta_park)?;
    b.mark(Phase::TrackTarget, t0);
    if hold {
        let t1 = b.chain.t();
        let fixed = Approach {
            start: goal,
            goal,
            t0: t1,
            tau: 1.0,
        };
        b.chain.track(&fixed, t1 + ctrl.hold_time * p.tau0, 10.0 * delta_park)?;
        b.mark(Phase::HoldOnGamma2, t1);
    }
    Ok(())
}

/// Ramps a single stage to its threshold, then steers its output along the
/// metastable line to `v_m_target` and holds it there.
pub fn plan_metastable_entry(
    stage: &StageParams,
    v_m_target: f64,
    ctrl: &ControlOptions,
) -> Result<SteeringPlan, SteeringError> {
    stage.validate().map_err(|source| SimError::Model { stage: 0, source })?;
    if !(v_m_target.abs() < stage.sat) {
        return Err(SteeringError::TargetOutOfRange(v_m_target));
    }
    let mut b = approach(&[*stage], ctrl)?;
    park_stage1(&mut b, v_m_target, true, ctrl)?;
    Ok(b.finish(ctrl))
}

/// Threshold of `s2` first met by its input moving from `from` towards the
/// band.
fn handoff_level(s2: &StageParams, from: f64) -> f64 {
    let (lo, hi) = s2.thresholds();
    if from > hi {
        lo
    } else {
        hi
    }
}

fn cascade_builder(
    s1: &StageParams,
    s2: &StageParams,
    v_out_target: f64,
    ctrl: &ControlOptions,
) -> Result<Builder, SteeringError> {
    for (i, s) in [s1, s2].into_iter().enumerate() {
        s.validate().map_err(|source| SimError::Model { stage: i, source })?;
    }
    if !(v_out_target.abs() < s2.sat) {
        return Err(SteeringError::TargetOutOfRange(v_out_target));
    }
    let mut b = approach(&[*s1, *s2], ctrl)?;
    let handoff = handoff_level(s2, b.chain.v(0));
    if !(handoff.abs() < s1.sat) {
        return Err(SteeringError::TargetOutOfRange(handoff));
    }
    park_stage1(&mut b, handoff, false, ctrl)?;

    let delta_park = ctrl.delta_park_rel * s2.sat;
    let tol = 10.0 * delta_park;
    let t0 = b.chain.t();
    let r = Approach {
        start: b.chain.v(1),
        goal: v_out_target,
        t0,
        tau: ctrl.transit_tau * s2.tau0,
    };
    let t_hold = transit_end(r.start, v_out_target, r.tau, t0, 0.1 * delta_park);
    b.chain.track_outer(&r, ctrl.outer_gain, t_hold, 1e-2 * s2.sat)?;
    b.mark(Phase::HandoffToStage2, t0);
    let t1 = b.chain.t();
    let fixed = Approach {
        start: v_out_target,
        goal: v_out_target,
        t0: t1,
        tau: 1.0,
    };
    let hold = ctrl.hold_time * s1.tau0.max(s2.tau0);
    b.chain.track_outer(&fixed, ctrl.outer_gain, t1 + hold, tol)?;
    b.mark(Phase::HoldOnGamma2, t1);
    Ok(b)
}

/// Drives both stages of a cascade onto their metastable lines, with the
/// final output held at `v_out_target`.
pub fn plan_cascade_metastable(
    s1: &StageParams,
    s2: &StageParams,
    v_out_target: f64,
    ctrl: &ControlOptions,
) -> Result<SteeringPlan, SteeringError> {
    Ok(cascade_builder(s1, s2, v_out_target, ctrl)?.finish(ctrl))
}

/// Ends control: the first stage's input is nudged over one control period
/// so that its output resolves in `direction`, then held for `duration`.
pub fn release(plan: &SteeringPlan, direction: ReleaseDirection, duration: f64) -> SteeringPlan {
    let p = plan.stages[0];
    let delta_park = plan.delta_park;
    // moving the input by Δx shifts the rest line by Δx / slope
    let slope = p.polarity.sign() * (p.feedback - 1.0 / p.gain);
    let shift = match direction {
        ReleaseDirection::Up => -delta_park,
        ReleaseDirection::Down => delta_park,
    };
    let mut w = plan.waveform.clone();
    let (t, x) = (w.end_time(), w.last_value());
    let nudged = x + slope * shift;
    w.push(t + plan.control_period, nudged).expect("later breakpoint");
    w.push(t + plan.control_period + duration, nudged).expect("later breakpoint");
    let mut phases = plan.phases.clone();
    phases.push(PhaseSpan {
        phase: Phase::Release(direction),
        start: t,
        end: w.end_time(),
    });
    SteeringPlan {
        waveform: w,
        phases,
        ..plan.clone()
    }
}

/// Plan in which a strictly monotone input rise, starting from a parked
/// double-metastable state with the output in the HI band, produces an
/// output glitch.
#[derive(Debug, Clone, PartialEq)]
pub struct GlitchScenario {
    pub plan: SteeringPlan,
    /// Start of the monotone part of the input.
    pub release_start: f64,
}

/// Time of the first breakpoint at or after `t0` where the waveform falls.
pub fn first_decrease(w: &Waveform, t0: f64) -> Option<f64> {
    w.points()
        .windows(2)
        .filter(|s| s[0].0 >= t0)
        .find(|s| s[1].1 < s[0].1)
        .map(|s| s[1].0)
}

pub fn plan_glitch_release(s1: &StageParams, s2: &StageParams, ctrl: &ControlOptions) -> Result<GlitchScenario, SteeringError> {
    let (_, vh2) = s2.thresholds();
    // HI band of the output, with v_m still below the upper threshold of stage 2
    let parked_out = 0.9 * s2.sat;
    let mut b = cascade_builder(s1, s2, parked_out, ctrl)?;
    if !(b.chain.v(0) < vh2) {
        return Err(SteeringError::TargetOutOfRange(parked_out));
    }
    // Stage 1 can only move up its unstable line on its own: one dip in the
    // input leaves v_m above the rest line before the monotone part starts.
    let slope1 = s1.polarity.sign() / (s1.feedback - 1.0 / s1.gain);
    let delta_park = ctrl.delta_park_rel * s1.sat;
    let t = b.chain.next_time();
    let x = b.chain.x();
    b.chain.push(t, x - delta_park / slope1)?;
    let release_start = b.chain.t();

    // exponential ride whose feedforward input starts at the current input
    // and only rises
    let v0 = b.chain.v(0);
    let gap = v0 - s1.gamma2(b.chain.x());
    if !(gap > 0.0) {
        return Err(SteeringError::Diverged { t: release_start, error: gap });
    }
    let ride = ctrl.transit_tau * s1.tau0;
    let d = gap * ride / s1.tau2();
    // stays in the linear region while w + τ0·w' ≤ M
    let w_max = (s1.sat + s1.tau0 * (v0 - d) / ride) / (1.0 + s1.tau0 / ride);
    let goal = v0 + 0.95 * (w_max.min(s1.sat) - v0);
    let r = Approach {
        start: v0,
        goal: v0 - d,
        t0: release_start,
        tau: -ride,
    };
    let t_ramp = release_start + ride * (1.0 + (goal - v0) / d).ln();
    b.chain.monotone = true;
    b.chain.track(&r, t_ramp, 1e-2 * s1.sat)?;
    let (vl1, vh1) = s1.thresholds();
    let t = b.chain.t();
    b.chain.ramp(t + s1.tau0, vh1 + 0.1 * (vh1 - vl1))?;
    let t = b.chain.t();
    let settle = 40.0 * s1.tau0.max(s2.tau0);
    let x = b.chain.x();
    b.chain.ramp(t + settle, x)?;
    b.mark(Phase::Release(ReleaseDirection::Up), release_start);

    let plan = b.finish(ctrl);
    if let Some(t) = first_decrease(&plan.waveform, release_start) {
        return Err(SteeringError::NotMonotone(t));
    }
    Ok(GlitchScenario { plan, release_start })
}

