use std::io::Write;

use rayon::prelude::*;

use crate::classifier::{
    classify, full_expected_table, write_grid_csv, Bands, Bucket, Expectation, InitState, OutcomeLabel, TableCell,
    Windows,
};
use crate::model::{v1_v2, Polarity, StageParams};
use crate::simulator::{simulate, CascadeConfig, SimError, SimOptions};
use crate::waveform::Waveform;

use super::nominal_delay;

#[derive(Debug, Clone, PartialEq)]
pub struct TableOptions {
    /// Distance of the "close to threshold" buckets, relative to `V_H − V_L`.
    pub eps_rel: f64,
    /// Metastable offset, relative to `M`.
    pub delta_rel: f64,
    /// Offset of the lagging stage in race runs, relative to `delta`.
    pub race_ratio: f64,
    /// Offset of a fast-resolving first stage in the single-nudge race,
    /// relative to `delta`.
    pub race_boost: f64,
    /// Simulated time in units of the slowest time constant.
    pub duration: f64,
    pub sim: SimOptions,
}

impl Default for TableOptions {
    fn default() -> Self {
        TableOptions {
            eps_rel: 1e-4,
            delta_rel: 1e-6,
            race_ratio: 1e-6,
            race_boost: 1e3,
            duration: 150.0,
            sim: SimOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: TableCell,
    pub v_in: f64,
    pub expected: Expectation,
    /// One label for ordinary cells, two (first stage first, second stage
    /// first) for race cells.
    pub observed: Vec<OutcomeLabel>,
    pub agrees: bool,
}

impl CellResult {
    pub fn observed_text(&self) -> String {
        self.observed
            .iter()
            .map(|l| format!("{} {}", l.final_logic, l.event))
            .collect::<Vec<_>>()
            .join(" / ")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableGrid {
    pub cells: Vec<CellResult>,
    pub nominal_delay: f64,
}

impl TableGrid {
    pub fn mismatches(&self) -> Vec<&CellResult> {
        self.cells.iter().filter(|c| !c.agrees).collect()
    }

    /// Observed outcomes of one subtable (1–9) in the grid layout.
    pub fn write_csv<W: Write>(&self, subtable: usize, w: W) -> csv::Result<()> {
        let cells: Vec<(TableCell, String)> = self.cells.iter().map(|c| (c.cell, c.observed_text())).collect();
        write_grid_csv(subtable, &cells, w)
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        for c in &self.cells {
            s.push_str(&format!(
                "[{}] subtable {} v_m={} v_out={}: expected {}, observed {}\n",
                if c.agrees { "ok" } else { "MISMATCH" },
                c.cell.bucket.subtable(),
                c.cell.v_m.name(),
                c.cell.v_out.name(),
                c.expected,
                c.observed_text()
            ));
        }
        s
    }
}

/// Input voltage representing each bucket for an inverting pair.
fn bucket_input(b: Bucket, s1: &StageParams, s2: &StageParams, eps_rel: f64) -> f64 {
    let (vl, vh) = s1.thresholds();
    let (v1, v2) = v1_v2(s1, s2);
    let width = vh - vl;
    let eps = eps_rel * width;
    match b {
        Bucket::FarBelowLow => vl - width,
        Bucket::JustBelowLow => vl - eps,
        Bucket::BelowV1 => 0.5 * (vl + v1),
        Bucket::NearV1 => v1 - eps,
        Bucket::BetweenV1V2 => 0.5 * (v1 + v2),
        Bucket::NearV2 => v2 + eps,
        Bucket::AboveV2 => 0.5 * (v2 + vh),
        Bucket::JustAboveHigh => vh + eps,
        Bucket::FarAboveHigh => vh + width,
    }
}

fn init_value(state: InitState, p: &StageParams, v_in: f64, delta: f64) -> f64 {
    match state {
        InitState::Lo => -p.sat,
        InitState::Hi => p.sat,
        InitState::Meta => p.gamma2(v_in),
        InitState::MetaUp => p.gamma2(v_in) + delta,
        InitState::MetaDown => p.gamma2(v_in) - delta,
    }
}

/// Simulates every cell of the static-input grid (tabulated subtables plus
/// mirrors) for two inverting stages and compares with the expectation.
pub fn table_grid_run(s1: &StageParams, s2: &StageParams, opts: &TableOptions) -> Result<TableGrid, SimError> {
    if s1.polarity != Polarity::Inverting || s2.polarity != Polarity::Inverting {
        return Err(SimError::InvalidConfig("the outcome grid is defined for inverting stages".into()));
    }
    let stages = vec![*s1, *s2];
    let nominal = nominal_delay(&stages, &opts.sim)?;
    let tau = s1.slowest_tau().max(s2.slowest_tau());
    let t_end = opts.duration * tau;
    let bands = Bands::for_stage(s2);
    let windows = Windows::for_stage(
        &StageParams {
            tau0: s1.tau0.max(s2.tau0),
            ..*s2
        },
        nominal,
    );

    let run = |cell: &TableCell, v_in: f64, d1: f64, d2: f64| -> Result<OutcomeLabel, SimError> {
        let v_m0 = init_value(cell.v_m, s1, v_in, d1);
        let v_out0 = init_value(cell.v_out, s2, v_m0, d2);
        let cfg = CascadeConfig::new(stages.clone(), vec![v_m0, v_out0])?;
        let tr = simulate(&cfg, &Waveform::constant(v_in), t_end, &opts.sim)?;
        Ok(classify(&tr.times, tr.output(), &bands, &windows))
    };

    let delta = opts.delta_rel * s1.sat.min(s2.sat);
    let cells: Vec<(TableCell, Expectation)> = full_expected_table();
    let results: Result<Vec<CellResult>, SimError> = cells
        .par_iter()
        .map(|(cell, expected)| {
            let v_in = bucket_input(cell.bucket, s1, s2, opts.eps_rel);
            let (observed, agrees) = match expected {
                Expectation::Race {
                    stage1_first,
                    stage2_first,
                } => {
                    let both_meta = is_meta(cell.v_m) && is_meta(cell.v_out);
                    let (first, second) = if both_meta {
                        // the lagging stage starts much closer to its line
                        (
                            run(cell, v_in, delta, delta * opts.race_ratio)?,
                            run(cell, v_in, delta * opts.race_ratio, delta)?,
                        )
                    } else {
                        (
                            run(cell, v_in, delta * opts.race_boost, delta)?,
                            run(cell, v_in, delta * opts.race_ratio, delta)?,
                        )
                    };
                    let ok = stage1_first.contains(&first.outcome()) && stage2_first.contains(&second.outcome());
                    (vec![first, second], ok)
                }
                e => {
                    let l = run(cell, v_in, delta, delta)?;
                    let ok = e.accepts(l.outcome());
                    (vec![l], ok)
                }
            };
            Ok(CellResult {
                cell: *cell,
                v_in,
                expected: expected.clone(),
                observed,
                agrees,
            })
        })
        .collect();
    Ok(TableGrid {
        cells: results?,
        nominal_delay: nominal,
    })
}

fn is_meta(s: InitState) -> bool {
    matches!(s, InitState::MetaUp | InitState::MetaDown | InitState::Meta)
}
