//! Output-trace classification into logic outcomes and event shapes, plus
//! the expected outcome grid for static inputs.

use std::fmt;
use std::io::Write;

use crate::model::StageParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LogicLevel {
    Lo,
    Hi,
    Unresolved,
}

impl LogicLevel {
    pub fn mirrored(self) -> LogicLevel {
        match self {
            LogicLevel::Lo => LogicLevel::Hi,
            LogicLevel::Hi => LogicLevel::Lo,
            LogicLevel::Unresolved => LogicLevel::Unresolved,
        }
    }
}

impl fmt::Display for LogicLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogicLevel::Lo => "0",
            LogicLevel::Hi => "1",
            LogicLevel::Unresolved => "X",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventTag {
    None,
    FastTransition,
    LateTransition,
    Glitch,
    MiniGlitch,
    Runt,
    DoubleTransition,
    MetaHold,
    MetaResolveUp,
    MetaResolveDown,
}

impl EventTag {
    pub fn mirrored(self) -> EventTag {
        match self {
            EventTag::MetaResolveUp => EventTag::MetaResolveDown,
            EventTag::MetaResolveDown => EventTag::MetaResolveUp,
            e => e,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EventTag::None => "none",
            EventTag::FastTransition => "fast_transition",
            EventTag::LateTransition => "late_transition",
            EventTag::Glitch => "glitch",
            EventTag::MiniGlitch => "mini_glitch",
            EventTag::Runt => "runt",
            EventTag::DoubleTransition => "double_transition",
            EventTag::MetaHold => "meta_hold",
            EventTag::MetaResolveUp => "meta_resolve_up",
            EventTag::MetaResolveDown => "meta_resolve_down",
        }
    }
}

impl fmt::Display for EventTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeLabel {
    pub final_logic: LogicLevel,
    pub event: EventTag,
    /// Mid-level crossing times, in order.
    pub crossings: Vec<f64>,
    /// Set when the trace ends undecided without a long enough plateau.
    pub diagnostic: Option<String>,
}

impl OutcomeLabel {
    pub fn outcome(&self) -> Outcome {
        (self.final_logic, self.event)
    }
}

pub type Outcome = (LogicLevel, EventTag);

pub fn mirror_outcome((l, e): Outcome) -> Outcome {
    (l.mirrored(), e.mirrored())
}

/// Logic bands: at or below `lo` reads LO, at or above `hi` reads HI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bands {
    pub lo: f64,
    pub hi: f64,
}

impl Bands {
    /// Outer 10% of the rail span on each side.
    pub fn for_stage(p: &StageParams) -> Bands {
        Bands {
            lo: -0.8 * p.sat,
            hi: 0.8 * p.sat,
        }
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    fn state(&self, v: f64) -> Band {
        if v <= self.lo {
            Band::Lo
        } else if v >= self.hi {
            Band::Hi
        } else {
            Band::Mid
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Band {
    Lo,
    Mid,
    Hi,
}

impl Band {
    fn logic(self) -> LogicLevel {
        match self {
            Band::Lo => LogicLevel::Lo,
            Band::Hi => LogicLevel::Hi,
            Band::Mid => LogicLevel::Unresolved,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Windows {
    pub late_factor: f64,
    pub glitch_window: f64,
    pub meta_min_duration: f64,
    /// Reference full-range step delay of the circuit being classified.
    pub nominal_delay: f64,
    /// Time from which transition delays are measured.
    pub reference_time: f64,
}

impl Windows {
    pub fn for_stage(p: &StageParams, nominal_delay: f64) -> Windows {
        Windows {
            late_factor: 3.0,
            glitch_window: 100.0 * p.tau0,
            meta_min_duration: 20.0 * p.tau0,
            nominal_delay,
            reference_time: 0.0,
        }
    }

    pub fn scaled(&self, s: f64) -> Windows {
        Windows {
            late_factor: self.late_factor,
            glitch_window: self.glitch_window * s,
            meta_min_duration: self.meta_min_duration * s,
            nominal_delay: self.nominal_delay * s,
            reference_time: self.reference_time * s,
        }
    }
}

/// Mid crossings of a sampled signal, linearly interpolated.
pub fn mid_crossings(times: &[f64], values: &[f64], mid: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut last: Option<(f64, f64)> = None;
    for (&t, &v) in times.iter().zip(values) {
        let d = v - mid;
        if d == 0.0 {
            continue;
        }
        if let Some((tp, dp)) = last {
            if (dp < 0.0) != (d < 0.0) {
                out.push(tp + (t - tp) * (dp / (dp - d)));
            }
        }
        last = Some((t, d));
    }
    out
}

/// Labels one output column.
pub fn classify(times: &[f64], values: &[f64], bands: &Bands, windows: &Windows) -> OutcomeLabel {
    assert_eq!(times.len(), values.len(), "times and values differ in length");
    let crossings = mid_crossings(times, values, bands.mid());
    let states: Vec<Band> = values.iter().map(|&v| bands.state(v)).collect();
    let Some((&first, &last)) = states.first().zip(states.last()) else {
        return OutcomeLabel {
            final_logic: LogicLevel::Unresolved,
            event: EventTag::None,
            crossings,
            diagnostic: Some("empty trace".into()),
        };
    };

    // visited bands with consecutive repeats merged
    let mut visits: Vec<Band> = Vec::new();
    for &s in &states {
        if s != Band::Mid && visits.last() != Some(&s) {
            visits.push(s);
        }
    }

    let label = |final_logic, event| OutcomeLabel {
        final_logic,
        event,
        crossings: crossings.clone(),
        diagnostic: None,
    };

    if last == Band::Mid {
        let run_start = states
            .iter()
            .rposition(|&s| s != Band::Mid)
            .map_or(times[0], |i| times[i + 1]);
        let run = times[times.len() - 1] - run_start;
        if run >= windows.meta_min_duration {
            return label(LogicLevel::Unresolved, EventTag::MetaHold);
        }
        return OutcomeLabel {
            diagnostic: Some(format!(
                "output still between bands at the end; undecided for {run:e} s, below the {:e} s plateau minimum",
                windows.meta_min_duration
            )),
            ..label(LogicLevel::Unresolved, EventTag::None)
        };
    }

    let final_logic = last.logic();
    if first == Band::Mid {
        let event = match visits.len() {
            1 if last == Band::Hi => EventTag::MetaResolveUp,
            1 => EventTag::MetaResolveDown,
            _ => EventTag::DoubleTransition,
        };
        return label(final_logic, event);
    }

    if states.iter().all(|&s| s == first) {
        return label(final_logic, EventTag::None);
    }
    let event = match visits.len() {
        1 if crossings.is_empty() => EventTag::MiniGlitch,
        1 => EventTag::Runt,
        2 => {
            let delay = crossings[0] - windows.reference_time;
            if delay > windows.late_factor * windows.nominal_delay {
                EventTag::LateTransition
            } else {
                EventTag::FastTransition
            }
        }
        _ if last == first => {
            let span = crossings[crossings.len() - 1] - crossings[0];
            if span <= windows.glitch_window {
                EventTag::Glitch
            } else {
                EventTag::DoubleTransition
            }
        }
        _ => EventTag::DoubleTransition,
    };
    label(final_logic, event)
}

/// Input-voltage bucket of the static-input outcome grid. The first five are
/// the tabulated ones; the rest are their mirror images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bucket {
    FarBelowLow,
    JustBelowLow,
    BelowV1,
    NearV1,
    BetweenV1V2,
    NearV2,
    AboveV2,
    JustAboveHigh,
    FarAboveHigh,
}

impl Bucket {
    pub const ALL: [Bucket; 9] = [
        Bucket::FarBelowLow,
        Bucket::JustBelowLow,
        Bucket::BelowV1,
        Bucket::NearV1,
        Bucket::BetweenV1V2,
        Bucket::FarAboveHigh,
        Bucket::JustAboveHigh,
        Bucket::AboveV2,
        Bucket::NearV2,
    ];

    /// Subtable number 1–9; 6–9 mirror 1–4.
    pub fn subtable(self) -> usize {
        match self {
            Bucket::FarBelowLow => 1,
            Bucket::JustBelowLow => 2,
            Bucket::BelowV1 => 3,
            Bucket::NearV1 => 4,
            Bucket::BetweenV1V2 => 5,
            Bucket::FarAboveHigh => 6,
            Bucket::JustAboveHigh => 7,
            Bucket::AboveV2 => 8,
            Bucket::NearV2 => 9,
        }
    }

    pub fn mirrored(self) -> Bucket {
        match self {
            Bucket::FarBelowLow => Bucket::FarAboveHigh,
            Bucket::JustBelowLow => Bucket::JustAboveHigh,
            Bucket::BelowV1 => Bucket::AboveV2,
            Bucket::NearV1 => Bucket::NearV2,
            Bucket::BetweenV1V2 => Bucket::BetweenV1V2,
            Bucket::FarAboveHigh => Bucket::FarBelowLow,
            Bucket::JustAboveHigh => Bucket::JustBelowLow,
            Bucket::AboveV2 => Bucket::BelowV1,
            Bucket::NearV2 => Bucket::NearV1,
        }
    }
}

/// Initial state of one stage output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InitState {
    Lo,
    MetaDown,
    Meta,
    MetaUp,
    Hi,
}

impl InitState {
    pub const ALL: [InitState; 5] = [
        InitState::Lo,
        InitState::MetaDown,
        InitState::Meta,
        InitState::MetaUp,
        InitState::Hi,
    ];

    pub fn mirrored(self) -> InitState {
        match self {
            InitState::Lo => InitState::Hi,
            InitState::MetaDown => InitState::MetaUp,
            InitState::Meta => InitState::Meta,
            InitState::MetaUp => InitState::MetaDown,
            InitState::Hi => InitState::Lo,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InitState::Lo => "0",
            InitState::MetaDown => "metadown",
            InitState::Meta => "meta",
            InitState::MetaUp => "metaup",
            InitState::Hi => "1",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TableCell {
    pub bucket: Bucket,
    pub v_m: InitState,
    pub v_out: InitState,
}

impl TableCell {
    pub fn mirrored(self) -> TableCell {
        TableCell {
            bucket: self.bucket.mirrored(),
            v_m: self.v_m.mirrored(),
            v_out: self.v_out.mirrored(),
        }
    }
}

/// What a grid cell should show.
#[derive(Debug, Clone, PartialEq)]
pub enum Expectation {
    Exactly(Outcome),
    /// Any of these is acceptable (outcome depends on delay ratios the
    /// model fixes differently from real circuits).
    AnyOf(Vec<Outcome>),
    /// Order-of-resolution race; each side lists its acceptable outcomes.
    Race {
        stage1_first: Vec<Outcome>,
        stage2_first: Vec<Outcome>,
    },
}

impl Expectation {
    pub fn mirrored(&self) -> Expectation {
        let m = |v: &Vec<Outcome>| v.iter().copied().map(mirror_outcome).collect();
        match self {
            Expectation::Exactly(o) => Expectation::Exactly(mirror_outcome(*o)),
            Expectation::AnyOf(v) => Expectation::AnyOf(m(v)),
            Expectation::Race {
                stage1_first,
                stage2_first,
            } => Expectation::Race {
                stage1_first: m(stage1_first),
                stage2_first: m(stage2_first),
            },
        }
    }

    pub fn accepts(&self, o: Outcome) -> bool {
        match self {
            Expectation::Exactly(e) => *e == o,
            Expectation::AnyOf(v) => v.contains(&o),
            Expectation::Race {
                stage1_first,
                stage2_first,
            } => stage1_first.contains(&o) || stage2_first.contains(&o),
        }
    }

    pub fn is_race(&self) -> bool {
        matches!(self, Expectation::Race { .. })
    }
}

impl fmt::Display for Expectation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |v: &Vec<Outcome>| {
            v.iter()
                .map(|(l, e)| format!("{l} {e}"))
                .collect::<Vec<_>>()
                .join("|")
        };
        match self {
            Expectation::Exactly((l, e)) => write!(f, "{l} {e}"),
            Expectation::AnyOf(v) => f.write_str(&list(v)),
            Expectation::Race {
                stage1_first,
                stage2_first,
            } => write!(f, "race({} / {})", list(stage1_first), list(stage2_first)),
        }
    }
}

/// Expected outcomes for the five tabulated input buckets.
pub fn expected_table() -> Vec<(TableCell, Expectation)> {
    use Bucket::*;
    use EventTag as E;
    use InitState::*;
    use LogicLevel::{Hi as H, Lo as L, Unresolved as X};

    let ex = Expectation::Exactly;
    let mut t = Vec::new();
    let mut put = |bucket, v_m, v_out, e: Expectation| {
        t.push((TableCell { bucket, v_m, v_out }, e));
    };

    put(FarBelowLow, Hi, Lo, ex((L, E::None)));
    put(FarBelowLow, Hi, Hi, ex((L, E::FastTransition)));
    put(
        FarBelowLow,
        Lo,
        Lo,
        Expectation::AnyOf(vec![(L, E::None), (L, E::MiniGlitch), (L, E::Runt)]),
    );
    put(FarBelowLow, Lo, Hi, ex((L, E::FastTransition)));

    put(JustBelowLow, Hi, Lo, ex((L, E::None)));
    put(JustBelowLow, Hi, Hi, ex((L, E::FastTransition)));
    put(JustBelowLow, Lo, Lo, ex((L, E::Glitch)));
    put(JustBelowLow, Lo, Hi, ex((L, E::LateTransition)));

    put(BelowV1, Hi, Lo, ex((L, E::None)));
    put(BelowV1, Hi, Hi, ex((L, E::FastTransition)));
    put(BelowV1, MetaUp, Lo, ex((L, E::Glitch)));
    put(BelowV1, MetaUp, Hi, ex((L, E::LateTransition)));
    for v_m in [Meta, MetaDown, Lo] {
        put(BelowV1, v_m, Lo, ex((H, E::FastTransition)));
        put(BelowV1, v_m, Hi, ex((H, E::None)));
    }

    put(NearV1, Hi, Lo, ex((L, E::None)));
    put(NearV1, Hi, Hi, ex((L, E::FastTransition)));
    put(
        NearV1,
        MetaUp,
        Lo,
        Expectation::Race {
            stage1_first: vec![(L, E::None), (L, E::MiniGlitch), (L, E::Runt)],
            stage2_first: vec![(L, E::Glitch)],
        },
    );
    put(NearV1, MetaUp, Hi, ex((L, E::LateTransition)));
    for v_m in [Meta, MetaDown] {
        put(NearV1, v_m, Lo, ex((H, E::LateTransition)));
        put(NearV1, v_m, Hi, ex((H, E::None)));
    }
    put(NearV1, Lo, Lo, ex((H, E::FastTransition)));
    put(NearV1, Lo, Hi, ex((H, E::None)));

    put(BetweenV1V2, Hi, Lo, ex((L, E::None)));
    put(BetweenV1V2, Hi, Hi, ex((L, E::FastTransition)));
    put(BetweenV1V2, MetaUp, Lo, ex((L, E::None)));
    put(BetweenV1V2, MetaUp, MetaDown, ex((L, E::MetaResolveDown)));
    put(BetweenV1V2, MetaUp, Meta, ex((L, E::MetaResolveDown)));
    put(
        BetweenV1V2,
        MetaUp,
        MetaUp,
        Expectation::Race {
            stage1_first: vec![(L, E::MetaResolveDown)],
            stage2_first: vec![(L, E::DoubleTransition)],
        },
    );
    put(BetweenV1V2, MetaUp, Hi, ex((L, E::LateTransition)));
    put(BetweenV1V2, Meta, Lo, ex((L, E::None)));
    put(BetweenV1V2, Meta, MetaDown, ex((L, E::MetaResolveDown)));
    put(BetweenV1V2, Meta, Meta, ex((X, E::MetaHold)));
    put(BetweenV1V2, Meta, MetaUp, ex((H, E::MetaResolveUp)));
    put(BetweenV1V2, Meta, Hi, ex((H, E::None)));
    put(BetweenV1V2, MetaDown, Lo, ex((H, E::LateTransition)));
    put(
        BetweenV1V2,
        MetaDown,
        MetaDown,
        Expectation::Race {
            stage1_first: vec![(H, E::MetaResolveUp)],
            stage2_first: vec![(H, E::DoubleTransition)],
        },
    );
    put(BetweenV1V2, MetaDown, Meta, ex((H, E::MetaResolveUp)));
    put(BetweenV1V2, MetaDown, MetaUp, ex((H, E::MetaResolveUp)));
    put(BetweenV1V2, MetaDown, Hi, ex((H, E::None)));
    put(BetweenV1V2, Lo, Lo, ex((H, E::FastTransition)));
    put(BetweenV1V2, Lo, Hi, ex((H, E::None)));
    t
}

/// Tabulated cells plus their mirror images (subtable 5 is self-mirror, so
/// only cells without a tabulated counterpart are added there).
pub fn full_expected_table() -> Vec<(TableCell, Expectation)> {
    let base = expected_table();
    let mut all = base.clone();
    for (cell, e) in &base {
        let m = cell.mirrored();
        if !all.iter().any(|(c, _)| *c == m) {
            all.push((m, e.mirrored()));
        }
    }
    all.sort_by_key(|(c, _)| (c.bucket.subtable(), std::cmp::Reverse(c.v_m), c.v_out));
    all
}

/// Writes one subtable as a matrix: rows are initial `v_m`, columns initial
/// `v_out`, cells whatever text the caller supplies.
pub fn write_grid_csv<W: Write>(subtable: usize, cells: &[(TableCell, String)], w: W) -> csv::Result<()> {
    let mine: Vec<&(TableCell, String)> = cells.iter().filter(|(c, _)| c.bucket.subtable() == subtable).collect();
    let mut cols: Vec<InitState> = mine.iter().map(|(c, _)| c.v_out).collect();
    cols.sort();
    cols.dedup();
    let mut rows: Vec<InitState> = mine.iter().map(|(c, _)| c.v_m).collect();
    rows.sort_by(|a, b| b.cmp(a));
    rows.dedup();

    let mut out = csv::Writer::from_writer(w);
    let mut header = vec![format!("v_m\\v_out")];
    header.extend(cols.iter().map(|c| c.name().to_string()));
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.name().to_string()];
        for &c in &cols {
            let text = mine
                .iter()
                .find(|(cell, _)| cell.v_m == r && cell.v_out == c)
                .map_or(String::new(), |(_, s)| s.clone());
            rec.push(text);
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
