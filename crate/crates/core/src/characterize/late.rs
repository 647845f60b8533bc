use rayon::prelude::*;

use crate::model::{Polarity, Region, StageParams};
use crate::simulator::{simulate, CascadeConfig, SimError, SimOptions};
use crate::waveform::Waveform;

/// Delays of a single stage driven just past its upper threshold, and their
/// straight-line fit against `ln(1/ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LateSweep {
    pub overdrives: Vec<f64>,
    /// Output mid-crossing time measured from the moment the input passes
    /// the threshold.
    pub delays: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope.
    pub slope_stderr: f64,
    pub r_squared: f64,
}

impl LateSweep {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epsilon", "ln_inv_epsilon", "delay"])?;
        for (&e, &d) in self.overdrives.iter().zip(&self.delays) {
            out.write_record(&[format!("{e:.16e}"), format!("{:.16e}", (1.0 / e).ln()), format!("{d:.16e}")])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Least-squares line `y = a + b·x`; returns `(b, a, stderr(b), r²)`.
fn fit(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let sse: f64 = x.iter().zip(y).map(|(u, v)| (v - a - b * u).powi(2)).sum();
    let stderr = if x.len() > 2 {
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    (b, a, stderr, r2)
}

/// Mid-crossing delay after the input ramps from well inside the hysteresis
/// band to `V_H + ε` and holds there.
pub fn late_delay(stage: &StageParams, eps: f64, opts: &SimOptions) -> Result<f64, SimError> {
    let (vl, vh) = stage.thresholds();
    let start = 0.5 * (vl + vh);
    let cfg = CascadeConfig::new(vec![*stage], vec![stage.rest_point(held_region(stage), 0.0)])?;
    // the input must be settled well within τ2 of passing the threshold
    let ramp = 1e-2 * stage.tau2();
    let slope = (vh + eps - start) / ramp;
    let w = Waveform::new(vec![(0.0, start), (ramp, vh + eps)]).expect("increasing");
    let t_cross = (vh - start) / slope;
    // worst case: growth from ε/den over the whole rail, plus a saturated edge
    let den = stage.feedback - 1.0 / stage.gain;
    let growth = stage.tau2() * ((stage.sat * den / eps).ln().max(0.0) + 2.0);
    let t_end = ramp + growth + 10.0 * stage.tau0;
    let tr = simulate(&cfg, &w, t_end, opts)?;
    tr.solution(0)
        .crossings(0.0)
        .first()
        .map(|&(t, _)| t - t_cross)
        .ok_or_else(|| SimError::InvalidConfig(format!("no output transition for overdrive {eps:e}")))
}

/// Saturation held inside the band after the input came from below.
fn held_region(stage: &StageParams) -> Region {
    match stage.polarity {
        Polarity::Inverting => Region::SaturationHi,
        Polarity::NonInverting => Region::SaturationLo,
    }
}

pub fn late_transition_sweep(stage: &StageParams, overdrives: &[f64], opts: &SimOptions) -> Result<LateSweep, SimError> {
    if let Some(&e) = overdrives.iter().find(|&&e| !(e > 0.0)) {
        return Err(SimError::InvalidConfig(format!("overdrive must be positive, got {e}")));
    }
    let delays: Vec<f64> = overdrives
        .par_iter()
        .map(|&e| late_delay(stage, e, opts))
        .collect::<Result<_, _>>()?;
    let x: Vec<f64> = overdrives.iter().map(|e| (1.0 / e).ln()).collect();
    let (slope, intercept, slope_stderr, r_squared) = fit(&x, &delays);
    Ok(LateSweep {
        overdrives: overdrives.to_vec(),
        delays,
        slope,
        intercept,
        slope_stderr,
        r_squared,
    })
}
