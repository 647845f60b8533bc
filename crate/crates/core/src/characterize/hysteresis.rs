use thiserror::Error;

use crate::model::{v1_v2, Region, StageParams};
use crate::simulator::{simulate, CascadeConfig, EventKind, SimError, SimOptions};
use crate::waveform::Waveform;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sweep rate {rate:e} V/s spends {step_time:e} s per resolution step, need at least {min:e} s")]
    RateTooFast { rate: f64, step_time: f64, min: f64 },
    #[error("stage {stage} had not settled at the end of the {direction:?} sweep")]
    NotSettled { stage: usize, direction: Direction },
    #[error("resolution must be positive, got {0}")]
    BadResolution(f64),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub direction: Direction,
    /// `(v_in, v_out)` along the sweep.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HysteresisCurve {
    /// Per stage: up and down branches of that stage's output against `v_in`.
    pub branches: Vec<Vec<Branch>>,
    /// Per stage: input voltages at which the stage output crossed mid level.
    pub switch_points: Vec<Vec<(Direction, f64)>>,
    pub resolution: f64,
}

impl HysteresisCurve {
    /// Switch points of the final output.
    pub fn outer_switch_points(&self) -> &[(Direction, f64)] {
        &self.switch_points[self.switch_points.len() - 1]
    }

    /// The single switch point of `stage` in `direction`, if there is exactly one.
    pub fn switch_point(&self, stage: usize, direction: Direction) -> Option<f64> {
        let mut it = self.switch_points[stage].iter().filter(|(d, _)| *d == direction);
        match (it.next(), it.next()) {
            (Some(&(_, v)), None) => Some(v),
            _ => None,
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["stage", "direction", "v_in", "v_out"])?;
        for (s, branches) in self.branches.iter().enumerate() {
            for b in branches {
                let dir = match b.direction {
                    Direction::Up => "up",
                    Direction::Down => "down",
                };
                for &(x, y) in &b.points {
                    out.write_record(&[(s + 1).to_string(), dir.to_string(), format!("{x:.16e}"), format!("{y:.16e}")])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// `1e-4` of the first stage's hysteresis width.
pub fn default_resolution(stages: &[StageParams]) -> f64 {
    1e-4 * stages[0].hysteresis_width()
}

/// Slowest rate that still leaves forty time constants per resolution step.
pub fn default_rate(stages: &[StageParams], resolution: f64) -> f64 {
    resolution / (40.0 * slowest(stages))
}

fn slowest(stages: &[StageParams]) -> f64 {
    stages.iter().map(StageParams::slowest_tau).fold(0.0, f64::max)
}

/// Quasi-static up-then-down sweep of a cascade over the full input range.
pub fn hysteresis_sweep(
    stages: &[StageParams],
    rate: f64,
    resolution: f64,
    opts: &SimOptions,
) -> Result<HysteresisCurve, SweepError> {
    if !(resolution > 0.0) {
        return Err(SweepError::BadResolution(resolution));
    }
    let tau = slowest(stages);
    let step_time = resolution / rate.abs();
    if !(step_time >= 10.0 * tau) {
        return Err(SweepError::RateTooFast {
            rate,
            step_time,
            min: 10.0 * tau,
        });
    }
    let s1 = stages[0];
    let (vl, vh) = s1.thresholds();
    let margin = 0.1 * (vh - vl);
    let lo = (-s1.sat).min(vl - margin);
    let hi = s1.sat.max(vh + margin);
    let cfg = CascadeConfig::settled(stages.to_vec(), lo)?;

    let ramp = (hi - lo) / rate.abs();
    let settle = 40.0 * tau;
    let t_up = ramp;
    let t_down = t_up + settle;
    let t_end = t_down + ramp + settle;
    let w = Waveform::new(vec![(0.0, lo), (t_up, hi), (t_down, hi), (t_down + ramp, lo)])
        .expect("increasing breakpoints");
    let trace = simulate(&cfg, &w, t_end, opts)?;

    let dir_at = |t: f64| if t <= t_down { Direction::Up } else { Direction::Down };
    let mut switch_points = vec![Vec::new(); stages.len()];
    for e in &trace.events {
        if let EventKind::LevelCrossing { level, .. } = e.kind {
            if level == 0.0 {
                switch_points[e.stage].push((dir_at(e.t), w.sample(e.t)));
            }
        }
    }

    for (stage, p) in stages.iter().enumerate() {
        for (t, direction) in [(t_down, Direction::Up), (t_end, Direction::Down)] {
            let v = trace.value_at(stage, t);
            let settled = [Region::SaturationHi, Region::SaturationLo]
                .iter()
                .any(|&r| (v - p.rest_point(r, 0.0)).abs() <= 1e-6 * p.sat);
            if !settled {
                return Err(SweepError::NotSettled { stage, direction });
            }
        }
    }

    let branches = (0..stages.len())
        .map(|s| {
            let mut up = Vec::new();
            let mut down = Vec::new();
            for (k, &t) in trace.times.iter().enumerate() {
                let pt = (trace.v_in[k], trace.outputs[s][k]);
                if t <= t_up {
                    up.push(pt);
                } else if t >= t_down && t <= t_down + ramp {
                    down.push(pt);
                }
            }
            vec![
                Branch {
                    direction: Direction::Up,
                    points: up,
                },
                Branch {
                    direction: Direction::Down,
                    points: down,
                },
            ]
        })
        .collect();

    Ok(HysteresisCurve {
        branches,
        switch_points,
        resolution,
    })
}

/// Double-metastable rest points `(v_in, v_m, v_out)` across the band
/// between `V_1` and `V_2`, in increasing `v_in`.
pub fn metastable_band_trace(s1: &StageParams, s2: &StageParams, points: usize) -> Vec<(f64, f64, f64)> {
    let (a, b) = v1_v2(s1, s2);
    let (lo, hi) = (a.min(b), a.max(b));
    if hi <= lo || points < 2 {
        return Vec::new();
    }
    (0..points)
        .map(|i| {
            let v_in = if i == points - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (points - 1) as f64
            };
            let v_m = s1.gamma2(v_in);
            (v_in, v_m, s2.gamma2(v_m))
        })
        .collect()
}
