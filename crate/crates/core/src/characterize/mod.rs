//! Batch experiments over the model: hysteresis sweeps, the static-input
//! outcome grid, pulse and late-transition sweeps, and the stable-point map.

mod hysteresis;
mod late;
mod pulses;
mod stable3d;
mod table;

pub use hysteresis::{default_rate, default_resolution, hysteresis_sweep, metastable_band_trace, Branch, Direction, HysteresisCurve, SweepError};
pub use late::{late_delay, late_transition_sweep, LateSweep};
pub use pulses::{pulse_boundary, pulse_once, pulse_sweep, PulseOutcome, PulseReport, PulseResult};
pub use stable3d::{stable_points_3d, MapPoint, StablePointMap};
pub use table::{table_grid_run, CellResult, TableGrid, TableOptions};

use crate::model::StageParams;
use crate::simulator::{simulate, CascadeConfig, SimError, SimOptions};
use crate::waveform::Waveform;

/// Low-gain stage used for the static-input grid: `τ2 = 2·τ0`, so lingering
/// near the metastable line is long enough to be told apart from a clean
/// edge.
pub fn table_stage() -> StageParams {
    StageParams {
        gain: 3.0,
        ..StageParams::reference()
    }
}

/// Mid-level delay of the last stage for a full-range input step applied at
/// `t = 0` to a cascade settled at the low input rail.
pub fn nominal_delay(stages: &[StageParams], opts: &SimOptions) -> Result<f64, SimError> {
    let s1 = stages[0];
    let (lo, hi) = s1.thresholds();
    let swing = hi - lo;
    let (from, to) = (lo - swing - s1.sat, hi + swing + s1.sat);
    let cfg = CascadeConfig::settled(stages.to_vec(), from)?;
    let tau = stages.iter().map(StageParams::slowest_tau).fold(0.0, f64::max);
    let edge = 1e-2 * stages.iter().map(StageParams::fastest_tau).fold(f64::INFINITY, f64::min);
    let w = Waveform::new(vec![(0.0, from), (edge, to)]).expect("two increasing points");
    let t_end = 40.0 * tau * stages.len() as f64;
    let tr = simulate(&cfg, &w, t_end, opts)?;
    let sol = tr.solution(stages.len() - 1);
    sol.crossings(0.0)
        .first()
        .map(|&(t, _)| t)
        .ok_or_else(|| SimError::InvalidConfig("reference step never crossed mid level".into()))
}
