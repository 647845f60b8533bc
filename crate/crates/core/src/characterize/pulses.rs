use rayon::prelude::*;

use crate::classifier::Bands;
use crate::model::StageParams;
use crate::simulator::{simulate, CascadeConfig, SimError, SimOptions};
use crate::waveform::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PulseOutcome {
    /// The output reached the opposite logic band.
    Propagated,
    /// The output crossed mid level but never reached the opposite band.
    Runt,
    Suppressed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseResult {
    pub width: f64,
    pub outcome: PulseOutcome,
    /// Time between the first two output mid crossings.
    pub output_width: Option<f64>,
}

impl PulseResult {
    /// `|output width − input width| / input width`, for propagated pulses.
    pub fn width_error(&self) -> Option<f64> {
        match (self.outcome, self.output_width) {
            (PulseOutcome::Propagated, Some(w)) => Some((w - self.width).abs() / self.width),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseReport {
    pub edge_time: f64,
    pub results: Vec<PulseResult>,
    /// Smallest propagating width, located by bisection.
    pub boundary: f64,
}

impl PulseReport {
    pub fn max_width_error(&self) -> Option<f64> {
        self.results.iter().filter_map(PulseResult::width_error).reduce(f64::max)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["width", "outcome", "output_width", "relative_width_error"])?;
        for r in &self.results {
            let outcome = match r.outcome {
                PulseOutcome::Propagated => "propagated",
                PulseOutcome::Runt => "runt",
                PulseOutcome::Suppressed => "suppressed",
            };
            out.write_record(&[
                format!("{:.16e}", r.width),
                outcome.to_string(),
                r.output_width.map_or(String::new(), |w| format!("{w:.16e}")),
                r.width_error().map_or(String::new(), |e| format!("{e:.6e}")),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// One full-range input pulse of mid-level `width` into a cascade at rest.
pub fn pulse_once(stages: &[StageParams], width: f64, edge_time: f64, opts: &SimOptions) -> Result<PulseResult, SimError> {
    let s1 = stages[0];
    let base = -s1.sat;
    let cfg = CascadeConfig::settled(stages.to_vec(), base)?;
    let tau = stages.iter().map(StageParams::slowest_tau).fold(0.0, f64::max);
    let start = tau;
    let w = Waveform::pulse(base, s1.sat, start, width, edge_time)
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let t_end = start + width + edge_time + 20.0 * tau * stages.len() as f64;
    let tr = simulate(&cfg, &w, t_end, opts)?;

    let last = stages.len() - 1;
    let bands = Bands::for_stage(&stages[last]);
    let out = &tr.outputs[last];
    let v0 = out[0];
    let reached_opposite = if v0 < 0.0 {
        out.iter().any(|&v| v >= bands.hi)
    } else {
        out.iter().any(|&v| v <= bands.lo)
    };
    let crossings = tr.solution(last).crossings(0.0);
    let outcome = if reached_opposite {
        PulseOutcome::Propagated
    } else if !crossings.is_empty() {
        PulseOutcome::Runt
    } else {
        PulseOutcome::Suppressed
    };
    let output_width = (crossings.len() >= 2).then(|| crossings[1].0 - crossings[0].0);
    Ok(PulseResult {
        width,
        outcome,
        output_width,
    })
}

/// Smallest width that propagates, bisected in `[lo, hi]` to relative
/// precision `rel`.
pub fn pulse_boundary(stages: &[StageParams], edge_time: f64, rel: f64, opts: &SimOptions) -> Result<f64, SimError> {
    let tau = stages.iter().map(StageParams::slowest_tau).fold(0.0, f64::max);
    let mut lo = 0.0;
    let mut hi = edge_time.max(tau);
    while pulse_once(stages, hi, edge_time, opts)?.outcome != PulseOutcome::Propagated {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 * tau {
            return Err(SimError::InvalidConfig("no propagating pulse width found".into()));
        }
    }
    while hi - lo > rel * hi {
        let mid = 0.5 * (lo + hi);
        if pulse_once(stages, mid, edge_time, opts)?.outcome == PulseOutcome::Propagated {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

pub fn pulse_sweep(stages: &[StageParams], widths: &[f64], edge_time: f64, opts: &SimOptions) -> Result<PulseReport, SimError> {
    if let Some(&w) = widths.iter().find(|&&w| !(w > 0.0)) {
        return Err(SimError::InvalidConfig(format!("pulse width must be positive, got {w}")));
    }
    let results = widths
        .par_iter()
        .map(|&w| pulse_once(stages, w, edge_time, opts))
        .collect::<Result<Vec<_>, _>>()?;
    let boundary = pulse_boundary(stages, edge_time, 1e-4, opts)?;
    Ok(PulseReport {
        edge_time,
        results,
        boundary,
    })
}
