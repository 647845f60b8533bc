//! Time-domain integration of a unidirectional cascade of stages.
//!
//! Each stage is solved on its own, in order, with the previous stage's
//! output as its input signal. Within a piece the stage region is fixed, its
//! ODE is the affine relaxation `v' = λ·(v − rest(t))`, and the solution is
//! computed in closed form as an exponential polynomial. Pieces end at input
//! breakpoints, at a maximum span (so growing modes stay representable), and
//! at region changes located by bisection on the amplifier drive.

use std::io::Write;

use thiserror::Error;

use crate::model::{ModelError, Region, StageParams};
use crate::quasi::QuasiPoly;
use crate::waveform::Waveform;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("stage {stage}: {source}")]
    Model {
        stage: usize,
        #[source]
        source: ModelError,
    },
    #[error("step-size underflow in stage {stage} at t = {t:e} s")]
    StepUnderflow { t: f64, stage: usize },
    #[error("simulation end time must be positive and finite, got {0}")]
    BadEndTime(f64),
    #[error("tolerance must lie in (1e-12, 1e-3), got {0}")]
    BadTolerance(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    /// Relative tolerance; event times are located to `tol · τ_fast`.
    pub tol: f64,
    /// Uniform output samples per trace (event times are added on top).
    pub samples: usize,
    /// Bisection guard for each located event.
    pub max_event_iterations: usize,
    /// Output levels, as fractions of the stage's `M`, whose crossings are
    /// located and recorded as events.
    pub crossing_levels: Vec<f64>,
    /// Longest piece in the linear region, in units of `τ2`.
    pub linear_span: f64,
    /// Longest piece in saturation, in units of `τ0`.
    pub saturated_span: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            tol: 1e-9,
            samples: 2000,
            max_event_iterations: 128,
            crossing_levels: vec![-0.8, 0.0, 0.8],
            linear_span: 16.0,
            saturated_span: 64.0,
        }
    }
}

impl SimOptions {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.tol > 1e-12 && self.tol < 1e-3) {
            return Err(SimError::BadTolerance(self.tol));
        }
        if self.linear_span <= 0.0 || self.saturated_span <= 0.0 {
            return Err(SimError::InvalidConfig("piece spans must be positive".into()));
        }
        Ok(())
    }
}

/// Stages in signal order plus the initial output of each.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeConfig {
    pub stages: Vec<StageParams>,
    pub initial_outputs: Vec<f64>,
}

impl CascadeConfig {
    pub fn new(stages: Vec<StageParams>, initial_outputs: Vec<f64>) -> Result<Self, SimError> {
        let c = CascadeConfig {
            stages,
            initial_outputs,
        };
        c.validate()?;
        Ok(c)
    }

    /// Cascade started in the unique truly stable state for a constant input
    /// `v_in`, if there is one; otherwise the first stable combination.
    pub fn settled(stages: Vec<StageParams>, v_in: f64) -> Result<Self, SimError> {
        let probe = CascadeConfig {
            initial_outputs: vec![0.0; stages.len()],
            stages,
        };
        probe.validate()?;
        let fp = equilibrate(&probe, v_in)
            .into_iter()
            .find(FixedPoint::is_truly_stable)
            .ok_or_else(|| SimError::InvalidConfig(format!("no stable state at v_in = {v_in}")))?;
        CascadeConfig::new(probe.stages, fp.outputs)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.stages.is_empty() {
            return Err(SimError::InvalidConfig("cascade needs at least one stage".into()));
        }
        if self.stages.len() != self.initial_outputs.len() {
            return Err(SimError::InvalidConfig(format!(
                "{} stages but {} initial outputs",
                self.stages.len(),
                self.initial_outputs.len()
            )));
        }
        for (i, s) in self.stages.iter().enumerate() {
            s.validate()
                .map_err(|source| SimError::Model { stage: i, source })?;
        }
        if let Some(i) = self.initial_outputs.iter().position(|v| !v.is_finite()) {
            return Err(SimError::InvalidConfig(format!("initial output {i} is not finite")));
        }
        Ok(())
    }
}

/// One closed-form piece of a signal, valid on `[t0, t1]` in local time
/// `τ = t − t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub t0: f64,
    pub t1: f64,
    pub region: Option<Region>,
    pub f: QuasiPoly,
}

impl Piece {
    /// Straight segment through `(ta, va)` and `(tb, vb)`.
    pub fn segment(ta: f64, va: f64, tb: f64, vb: f64) -> Piece {
        Piece {
            t0: ta,
            t1: tb,
            region: None,
            f: QuasiPoly::linear(va, (vb - va) / (tb - ta)),
        }
    }

    pub fn hold(t0: f64, t1: f64, v: f64) -> Piece {
        Piece {
            t0,
            t1,
            region: None,
            f: QuasiPoly::constant(v),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.f.eval(t - self.t0)
    }
}

/// Piecewise closed-form signal on `[0, end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pieces: Vec<Piece>,
}

impl Signal {
    pub fn from_pieces(pieces: Vec<Piece>) -> Signal {
        Signal { pieces }
    }

    /// Waveform restricted to `[0, t_end]`; the final hold is open-ended.
    pub fn from_waveform(w: &Waveform, t_end: f64) -> Signal {
        let pts = w.points();
        let mut pieces = Vec::with_capacity(pts.len() + 1);
        if pts[0].0 > 0.0 {
            pieces.push(Piece::hold(0.0, pts[0].0, pts[0].1));
        }
        for s in pts.windows(2) {
            let ((ta, va), (tb, vb)) = (s[0], s[1]);
            if tb <= 0.0 {
                continue;
            }
            if ta >= t_end {
                break;
            }
            pieces.push(Piece::segment(ta, va, tb, vb));
        }
        let (tl, vl) = pts[pts.len() - 1];
        if tl < t_end {
            pieces.push(Piece::hold(tl.max(0.0), f64::INFINITY, vl));
        }
        Signal { pieces }
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    fn piece_index(&self, t: f64) -> usize {
        self.pieces
            .partition_point(|p| p.t0 <= t)
            .saturating_sub(1)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.pieces[self.piece_index(t)].eval(t)
    }

    pub fn region_at(&self, t: f64) -> Option<Region> {
        self.pieces[self.piece_index(t)].region
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    RegionChange { from: Region, to: Region },
    LevelCrossing { level: f64, rising: bool },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub t: f64,
    pub stage: usize,
    pub kind: EventKind,
}

/// Output of one stage: its closed-form trajectory and located events.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSolution {
    pub output: Signal,
    pub events: Vec<Event>,
}

impl StageSolution {
    /// Times at which the output crosses `level` (absolute volts).
    pub fn crossings(&self, level: f64) -> Vec<(f64, bool)> {
        self.events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::LevelCrossing { level: l, rising } if l == level => Some((e.t, rising)),
                _ => None,
            })
            .collect()
    }
}

/// Incremental integrator for a single stage.
///
/// Feeding it the same input pieces in the same order always yields
/// bit-identical output, whether the pieces arrive in one call or many.
#[derive(Debug, Clone)]
pub struct StageIntegrator {
    params: StageParams,
    opts: SimOptions,
    stage: usize,
    t: f64,
    v: f64,
    region: Region,
    pieces: Vec<Piece>,
    events: Vec<Event>,
    stalls: usize,
}

const MAX_STALLS: usize = 1000;
const MIN_SAMPLES: usize = 4;
const MAX_SAMPLES: usize = 32;

impl StageIntegrator {
    pub fn new(params: StageParams, stage: usize, t0: f64, v0: f64, v_in0: f64, opts: &SimOptions) -> Self {
        StageIntegrator {
            region: params.region_of(v_in0, v0),
            params,
            opts: opts.clone(),
            stage,
            t: t0,
            v: v0,
            pieces: Vec::new(),
            events: Vec::new(),
            stalls: 0,
        }
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn value(&self) -> f64 {
        self.v
    }

    pub fn region(&self) -> Region {
        self.region
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    fn span(&self) -> f64 {
        match self.region {
            Region::Linear => self.opts.linear_span * self.params.tau2(),
            _ => self.opts.saturated_span * self.params.tau0,
        }
    }

    fn rest_for(&self, g: &QuasiPoly) -> QuasiPoly {
        let p = &self.params;
        match self.region {
            Region::Linear => {
                // γ2 is affine in v_in; the constant part goes through
                // gamma2 itself so a held input rests bit-exactly on γ2.
                let slope = p.polarity.sign() / (p.feedback - 1.0 / p.gain);
                let mut rest = QuasiPoly::zero();
                let mut has_poly = false;
                for t in g.terms() {
                    let mut c: Vec<f64> = t.coeffs.iter().map(|&x| slope * x).collect();
                    if t.rate == 0.0 {
                        c[0] = p.gamma2(t.coeffs[0]);
                        has_poly = true;
                    }
                    rest.add_term(t.rate, &c);
                }
                if !has_poly {
                    rest.add_term(0.0, &[p.gamma2(0.0)]);
                }
                rest
            }
            r => QuasiPoly::constant(p.rest_point(r, 0.0)),
        }
    }

    fn drive_of(&self, y: &QuasiPoly, g: &QuasiPoly) -> QuasiPoly {
        let p = &self.params;
        let mut u = y.affine(
            p.gain * (1.0 - p.feedback) * p.v_ref,
            p.gain * p.feedback,
        );
        u.add_scaled(g, -p.gain * p.polarity.sign());
        u
    }

    /// Integrates up to `min(input.t1, until)` using `input` as the stage input.
    pub fn advance(&mut self, input: &Piece, until: f64) -> Result<(), SimError> {
        let stop = input.t1.min(until);
        while self.t < stop {
            let end = stop.min(self.t + self.span());
            let h = end - self.t;
            let g = input.f.shifted(self.t - input.t0);
            let rest = self.rest_for(&g);
            let rate = self.params.region_rate(self.region);
            let y = QuasiPoly::relax(rate, &rest, self.v);
            let u = self.drive_of(&y, &g);

            let n = ((MAX_SAMPLES as f64 * h / self.span()).ceil() as usize).clamp(MIN_SAMPLES, MAX_SAMPLES);
            let exit = self.find_exit(&u, h, n);
            let piece_len = exit.map_or(h, |(tau, _)| tau);
            self.record_crossings(&y, piece_len, n);

            let t_next = match exit {
                Some(_) => self.t + piece_len,
                None => end,
            };
            if t_next <= self.t {
                self.stalls += 1;
                if self.stalls > MAX_STALLS {
                    return Err(SimError::StepUnderflow {
                        t: self.t,
                        stage: self.stage,
                    });
                }
            } else {
                self.stalls = 0;
                self.pieces.push(Piece {
                    t0: self.t,
                    t1: t_next,
                    region: Some(self.region),
                    f: y.clone(),
                });
            }
            self.v = y.eval(piece_len);
            if let Some((_, to)) = exit {
                self.events.push(Event {
                    t: t_next,
                    stage: self.stage,
                    kind: EventKind::RegionChange {
                        from: self.region,
                        to,
                    },
                });
                self.region = to;
            }
            self.t = t_next;
        }
        Ok(())
    }

    /// First local time in `(0, h]` at which the drive leaves the current
    /// region, with the region entered.
    fn find_exit(&self, u: &QuasiPoly, h: f64, n: usize) -> Option<(f64, Region)> {
        let inside = |tau: f64| self.params.region_of_drive(u.eval(tau)) == self.region;
        let mut lo = 0.0;
        let mut hi = None;
        for i in 1..=n {
            let tau = h * i as f64 / n as f64;
            if !inside(tau) {
                hi = Some(tau);
                break;
            }
            lo = tau;
        }
        let mut hi = hi?;
        let resolution = self.opts.tol * self.params.fastest_tau();
        for _ in 0..self.opts.max_event_iterations {
            if hi - lo <= resolution {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if inside(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some((hi, self.params.region_of_drive(u.eval(hi))))
    }

    fn record_crossings(&mut self, y: &QuasiPoly, len: f64, n: usize) {
        if self.opts.crossing_levels.is_empty() || len <= 0.0 {
            return;
        }
        let taus: Vec<f64> = (0..=n).map(|i| len * i as f64 / n as f64).collect();
        let vals: Vec<f64> = taus.iter().map(|&t| y.eval(t)).collect();
        let resolution = self.opts.tol * self.params.fastest_tau();
        let mut found = Vec::new();
        for &frac in &self.opts.crossing_levels {
            let level = frac * self.params.sat;
            for i in 0..n {
                let (a, b) = (vals[i] - level, vals[i + 1] - level);
                let rising = a <= 0.0 && b > 0.0;
                let falling = a >= 0.0 && b < 0.0;
                if !(rising || falling) {
                    continue;
                }
                let (mut lo, mut hi) = (taus[i], taus[i + 1]);
                for _ in 0..self.opts.max_event_iterations {
                    if hi - lo <= resolution {
                        break;
                    }
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    let d = y.eval(mid) - level;
                    let past = if rising { d > 0.0 } else { d < 0.0 };
                    if past {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                found.push(Event {
                    t: self.t + hi,
                    stage: self.stage,
                    kind: EventKind::LevelCrossing { level, rising },
                });
            }
        }
        found.sort_by(|a, b| a.t.total_cmp(&b.t));
        self.events.extend(found);
    }

    pub fn finish(self) -> StageSolution {
        StageSolution {
            output: Signal {
                pieces: self.pieces,
            },
            events: self.events,
        }
    }
}

/// Solves one stage driven by `input` over `[0, t_end]`.
pub fn solve_stage(
    params: &StageParams,
    stage: usize,
    input: &Signal,
    v0: f64,
    t_end: f64,
    opts: &SimOptions,
) -> Result<StageSolution, SimError> {
    let mut it = StageIntegrator::new(*params, stage, 0.0, v0, input.eval(0.0), opts);
    for piece in input.pieces() {
        if it.time() >= t_end {
            break;
        }
        if piece.t1 <= it.time() {
            continue;
        }
        it.advance(piece, t_end)?;
    }
    Ok(it.finish())
}

/// Time-stamped multi-signal result of a cascade simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub times: Vec<f64>,
    pub v_in: Vec<f64>,
    /// One column per stage, in cascade order.
    pub outputs: Vec<Vec<f64>>,
    pub regions: Vec<Vec<Region>>,
    pub events: Vec<Event>,
    pub stages: Vec<StageParams>,
    solutions: Vec<StageSolution>,
    input: Signal,
}

impl Trace {
    pub fn stage_count(&self) -> usize {
        self.outputs.len()
    }

    pub fn output(&self) -> &[f64] {
        &self.outputs[self.outputs.len() - 1]
    }

    pub fn solution(&self, stage: usize) -> &StageSolution {
        &self.solutions[stage]
    }

    /// Exact value of a stage output at any time in range.
    pub fn value_at(&self, stage: usize, t: f64) -> f64 {
        self.solutions[stage].output.eval(t)
    }

    pub fn input_at(&self, t: f64) -> f64 {
        self.input.eval(t)
    }

    pub fn end_time(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// CSV with header `t,v_in,v_m1,…,v_out,region1,…`. Voltages are mapped
    /// to external coordinates with each stage's rail offset; `v_in` uses the
    /// first stage's.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SimError> {
        let mut out = csv::Writer::from_writer(w);
        let n = self.outputs.len();
        let mut header = vec!["t".to_string(), "v_in".to_string()];
        for i in 0..n.saturating_sub(1) {
            header.push(format!("v_m{}", i + 1));
        }
        header.push("v_out".into());
        for i in 0..n {
            header.push(format!("region{}", i + 1));
        }
        out.write_record(&header).map_err(csv_io)?;
        let off_in = self.stages[0].rail_offset;
        for (k, &t) in self.times.iter().enumerate() {
            let mut row = Vec::with_capacity(header.len());
            row.push(format!("{t:.16e}"));
            row.push(format!("{:.16e}", self.v_in[k] + off_in));
            for (s, col) in self.outputs.iter().enumerate() {
                row.push(format!("{:.16e}", self.stages[s].to_external(col[k])));
            }
            for col in &self.regions {
                row.push(col[k].number().to_string());
            }
            out.write_record(&row).map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> SimError {
    SimError::Io(std::io::Error::other(e))
}

/// Simulates `config` driven by `input` over `[0, t_end]`.
pub fn simulate(
    config: &CascadeConfig,
    input: &Waveform,
    t_end: f64,
    opts: &SimOptions,
) -> Result<Trace, SimError> {
    config.validate()?;
    opts.validate()?;
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(SimError::BadEndTime(t_end));
    }
    let input_signal = Signal::from_waveform(input, t_end);
    let mut solutions: Vec<StageSolution> = Vec::with_capacity(config.stages.len());
    for (i, (stage, &v0)) in config.stages.iter().zip(&config.initial_outputs).enumerate() {
        let drive = solutions.last().map_or(&input_signal, |s| &s.output);
        solutions.push(solve_stage(stage, i, drive, v0, t_end, opts)?);
    }

    let mut times: Vec<f64> = (0..opts.samples.max(2))
        .map(|i| t_end * i as f64 / (opts.samples.max(2) - 1) as f64)
        .collect();
    times.extend(solutions.iter().flat_map(|s| s.events.iter().map(|e| e.t)));
    times.extend(input.points().iter().map(|p| p.0));
    times.retain(|&t| (0.0..=t_end).contains(&t));
    times.sort_by(f64::total_cmp);
    times.dedup();

    let v_in = times.iter().map(|&t| input.sample(t)).collect();
    let outputs = solutions
        .iter()
        .map(|s| times.iter().map(|&t| s.output.eval(t)).collect())
        .collect();
    let regions = solutions
        .iter()
        .map(|s| {
            times
                .iter()
                .map(|&t| s.output.region_at(t).unwrap_or(Region::Linear))
                .collect()
        })
        .collect();
    let mut events: Vec<Event> = solutions.iter().flat_map(|s| s.events.iter().copied()).collect();
    events.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.stage.cmp(&b.stage)));

    Ok(Trace {
        times,
        v_in,
        outputs,
        regions,
        events,
        stages: config.stages.clone(),
        solutions,
        input: input_signal,
    })
}

/// A rest state of the whole cascade for a constant input.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub outputs: Vec<f64>,
    pub regions: Vec<Region>,
}

impl FixedPoint {
    /// Every stage sits on a saturated (truly stable) rest point.
    pub fn is_truly_stable(&self) -> bool {
        self.regions.iter().all(|r| r.is_saturated())
    }

    pub fn is_stage_metastable(&self, stage: usize) -> bool {
        self.regions[stage] == Region::Linear
    }

    pub fn all_metastable(&self) -> bool {
        self.regions.iter().all(|&r| r == Region::Linear)
    }
}

/// Enumerates every combination of per-stage rest points consistent with a
/// constant input `v_in`.
pub fn equilibrate(config: &CascadeConfig, v_in: f64) -> Vec<FixedPoint> {
    let mut partial = vec![FixedPoint {
        outputs: Vec::new(),
        regions: Vec::new(),
    }];
    for stage in &config.stages {
        let mut next = Vec::new();
        for fp in &partial {
            let input = fp.outputs.last().copied().unwrap_or(v_in);
            for (region, v) in stage.rest_points(input) {
                let mut f = fp.clone();
                f.outputs.push(v);
                f.regions.push(region);
                next.push(f);
            }
        }
        partial = next;
    }
    partial
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single(v0: f64) -> CascadeConfig {
        CascadeConfig::new(vec![StageParams::reference()], vec![v0]).unwrap()
    }

    #[test]
    fn rc_step_in_region_one() {
        let tr = simulate(&single(0.0), &Waveform::constant(-1.0), 3e-9, &SimOptions::default()).unwrap();
        let v = tr.value_at(0, 1e-9);
        assert_relative_eq!(v, 1.0 - (-1.0f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(v, 0.6321, epsilon = 1e-4);
    }

    #[test]
    fn linear_region_grows_with_tau2() {
        let p = StageParams::reference();
        let delta = 1e-6;
        let tr = simulate(&single(delta), &Waveform::constant(0.0), 2e-11, &SimOptions::default()).unwrap();
        for &t in &[0.0, 1e-12, 2e-12, 4e-12] {
            assert_relative_eq!(tr.value_at(0, t), delta * (t / p.tau2()).exp(), max_relative = 1e-10);
        }
        // leaves the linear band and saturates high eventually
        assert!(tr
            .events
            .iter()
            .any(|e| matches!(e.kind, EventKind::RegionChange { from: Region::Linear, to: Region::SaturationHi })));
    }

    #[test]
    fn exact_metastable_state_is_held() {
        let p = StageParams::reference();
        let g = p.gamma2(0.1);
        let tr = simulate(&single(g), &Waveform::constant(0.1), 50e-9, &SimOptions::default()).unwrap();
        assert!(tr.outputs[0].iter().all(|&v| v == g));
        assert!(tr.regions[0].iter().all(|&r| r == Region::Linear));
    }

    #[test]
    fn region_annotation_changes_only_at_events() {
        let cfg = CascadeConfig::settled(vec![StageParams::reference(); 2], -1.0).unwrap();
        let w = Waveform::ramp_hold(-1.0, 1.0, 1e8).unwrap();
        let tr = simulate(&cfg, &w, 40e-9, &SimOptions::default()).unwrap();
        for s in 0..2 {
            for k in 1..tr.times.len() {
                if tr.regions[s][k] != tr.regions[s][k - 1] {
                    let t = tr.times[k];
                    assert!(
                        tr.events.iter().any(|e| e.stage == s
                            && e.t == t
                            && matches!(e.kind, EventKind::RegionChange { .. })),
                        "stage {s} region change at {t:e} without event"
                    );
                }
            }
        }
    }

    #[test]
    fn appending_a_stage_keeps_earlier_columns() {
        let p = StageParams::reference();
        let w = Waveform::pulse(-1.0, 1.0, 1e-9, 3e-9, 0.2e-9).unwrap();
        let one = CascadeConfig::settled(vec![p], -1.0).unwrap();
        let two = CascadeConfig::settled(vec![p; 2], -1.0).unwrap();
        let opts = SimOptions::default();
        let a = simulate(&one, &w, 10e-9, &opts).unwrap();
        let b = simulate(&two, &w, 10e-9, &opts).unwrap();
        assert_eq!(a.solution(0), b.solution(0));
        for (k, &t) in a.times.iter().enumerate() {
            assert_eq!(b.value_at(0, t), a.outputs[0][k]);
        }
    }

    #[test]
    fn deterministic() {
        let cfg = CascadeConfig::settled(vec![StageParams::reference(); 2], -1.0).unwrap();
        let w = Waveform::ramp_hold(-1.0, 1.0, 1e9).unwrap();
        let opts = SimOptions::default();
        assert_eq!(simulate(&cfg, &w, 10e-9, &opts).unwrap(), simulate(&cfg, &w, 10e-9, &opts).unwrap());
    }

    #[test]
    fn rejects_bad_arguments() {
        let cfg = single(0.0);
        let w = Waveform::constant(0.0);
        let opts = SimOptions::default();
        assert!(matches!(simulate(&cfg, &w, 0.0, &opts), Err(SimError::BadEndTime(_))));
        let bad = SimOptions { tol: 1e-2, ..opts.clone() };
        assert!(matches!(simulate(&cfg, &w, 1e-9, &bad), Err(SimError::BadTolerance(_))));
        assert!(CascadeConfig::new(vec![], vec![]).is_err());
        assert!(CascadeConfig::new(vec![StageParams::reference()], vec![]).is_err());
    }

    #[test]
    fn equilibrate_two_reference_stages_at_zero() {
        let cfg = CascadeConfig::new(vec![StageParams::reference(); 2], vec![0.0; 2]).unwrap();
        let fps = equilibrate(&cfg, 0.0);
        let stable: Vec<_> = fps.iter().filter(|f| f.is_truly_stable()).map(|f| f.outputs.clone()).collect();
        assert_eq!(stable.len(), 2);
        assert!(stable.contains(&vec![1.0, -1.0]));
        assert!(stable.contains(&vec![-1.0, 1.0]));
        assert!(fps.iter().any(|f| f.outputs == vec![0.0, 0.0] && f.all_metastable()));
        assert_eq!(fps.len(), 5);
    }

    #[test]
    fn equilibrate_forced_and_double_metastable() {
        let p = StageParams::reference();
        let cfg = CascadeConfig::new(vec![p; 2], vec![0.0; 2]).unwrap();
        let fps = equilibrate(&cfg, -0.9);
        assert_eq!(fps.len(), 1);
        assert_eq!(fps[0].outputs, vec![1.0, -1.0]);
        let fps = equilibrate(&cfg, 0.1);
        let dm: Vec<_> = fps.iter().filter(|f| f.all_metastable()).collect();
        assert_eq!(dm.len(), 1);
        let v_out = dm[0].outputs[1];
        assert!(v_out > -1.0 && v_out < 1.0 && v_out != 0.0);
    }

    #[test]
    fn perturbations_leave_metastable_points() {
        // forward simulation of a small perturbation diverges from every
        // metastable fixed point and settles on a truly stable one
        let p = StageParams::reference();
        let cfg = CascadeConfig::new(vec![p; 2], vec![0.0; 2]).unwrap();
        for fp in equilibrate(&cfg, 0.0).iter().filter(|f| !f.is_truly_stable()) {
            let mut init = fp.outputs.clone();
            for (v, r) in init.iter_mut().zip(&fp.regions) {
                if *r == Region::Linear {
                    *v += 1e-6;
                }
            }
            let c = CascadeConfig::new(vec![p; 2], init).unwrap();
            let tr = simulate(&c, &Waveform::constant(0.0), 20e-9, &SimOptions::default()).unwrap();
            let end: Vec<f64> = (0..2).map(|s| tr.value_at(s, 20e-9)).collect();
            assert!(end.iter().all(|v| (v.abs() - 1.0).abs() < 1e-6), "{end:?}");
        }
    }

    #[test]
    fn trace_csv_header() {
        let cfg = CascadeConfig::settled(vec![StageParams::reference(); 3], -1.0).unwrap();
        let opts = SimOptions { samples: 3, ..SimOptions::default() };
        let tr = simulate(&cfg, &Waveform::constant(-1.0), 1e-9, &opts).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,v_in,v_m1,v_m2,v_out,region1,region2,region3");
        assert!(lines.next().unwrap().starts_with("0.0000000000000000e0,"));
    }
}
