//! Piecewise-linear input traces.
//!
//! A [`Waveform`] is a list of breakpoints with strictly increasing times. It
//! holds its first value before the first breakpoint and its last value after
//! the last one, so it is defined and continuous for every `t`.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WaveformError {
    #[error("waveform needs at least one breakpoint")]
    Empty,
    #[error("breakpoint times must strictly increase (index {0})")]
    NonIncreasing(usize),
    #[error("breakpoint {0} is not finite")]
    NotFinite(usize),
    #[error("ramp slope must be non-zero")]
    ZeroSlope,
    #[error("pulse width must be >= 0 and edge time > 0")]
    BadPulse,
    #[error("cannot join waveforms: {left} V does not meet {right} V")]
    Discontinuous { left: f64, right: f64 },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv header must be \"t,v\", found {0:?}")]
    Header(String),
    #[error("csv row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    points: Vec<(f64, f64)>,
}

impl Waveform {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Waveform, WaveformError> {
        if points.is_empty() {
            return Err(WaveformError::Empty);
        }
        for (i, &(t, v)) in points.iter().enumerate() {
            if !t.is_finite() || !v.is_finite() {
                return Err(WaveformError::NotFinite(i));
            }
            if i > 0 && t <= points[i - 1].0 {
                return Err(WaveformError::NonIncreasing(i));
            }
        }
        Ok(Waveform { points })
    }

    pub fn constant(v: f64) -> Waveform {
        Waveform {
            points: vec![(0.0, v)],
        }
    }

    /// Linear ramp from `v_start` at `t = 0` to `v_end`, then hold. Only the
    /// magnitude of `slope` is used.
    pub fn ramp_hold(v_start: f64, v_end: f64, slope: f64) -> Result<Waveform, WaveformError> {
        if slope == 0.0 || !slope.is_finite() {
            return Err(WaveformError::ZeroSlope);
        }
        if v_start == v_end {
            return Ok(Waveform::constant(v_start));
        }
        let duration = (v_end - v_start).abs() / slope.abs();
        Waveform::new(vec![(0.0, v_start), (duration, v_end)])
    }

    /// Trapezoidal pulse whose mid-level crossings are exactly `width` apart.
    ///
    /// With `width < edge_time` the pulse degenerates to a triangle that does
    /// not reach `peak`; `width = 0` tops out at the mid level.
    pub fn pulse(
        base: f64,
        peak: f64,
        t_start: f64,
        width: f64,
        edge_time: f64,
    ) -> Result<Waveform, WaveformError> {
        if !(width >= 0.0) || !(edge_time > 0.0) || !(t_start >= 0.0) {
            return Err(WaveformError::BadPulse);
        }
        let mut pts = Vec::with_capacity(5);
        if t_start > 0.0 {
            pts.push((0.0, base));
        }
        pts.push((t_start, base));
        if width > edge_time {
            pts.push((t_start + edge_time, peak));
            pts.push((t_start + width, peak));
        } else {
            let apex_t = t_start + 0.5 * (edge_time + width);
            let frac = 0.5 + 0.5 * width / edge_time;
            pts.push((apex_t, base + (peak - base) * frac));
        }
        pts.push((t_start + width + edge_time, base));
        Waveform::new(pts)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn start_time(&self) -> f64 {
        self.points[0].0
    }

    pub fn end_time(&self) -> f64 {
        self.points[self.points.len() - 1].0
    }

    pub fn first_value(&self) -> f64 {
        self.points[0].1
    }

    pub fn last_value(&self) -> f64 {
        self.points[self.points.len() - 1].1
    }

    /// Index of the segment `[p[i], p[i+1])` containing `t`, if any.
    fn segment_index(&self, t: f64) -> Option<usize> {
        let n = self.points.len();
        if n < 2 || t < self.points[0].0 || t >= self.points[n - 1].0 {
            return None;
        }
        // partition_point gives the first breakpoint with time > t
        Some(self.points.partition_point(|&(tp, _)| tp <= t) - 1)
    }

    pub fn sample(&self, t: f64) -> f64 {
        match self.segment_index(t) {
            None if t < self.start_time() => self.first_value(),
            None => self.last_value(),
            Some(i) => {
                let (ta, va) = self.points[i];
                let (tb, vb) = self.points[i + 1];
                if t == ta {
                    va
                } else {
                    va + (vb - va) * ((t - ta) / (tb - ta))
                }
            }
        }
    }

    /// Segment slope, left-continuous at breakpoints.
    pub fn derivative_at(&self, t: f64) -> f64 {
        let n = self.points.len();
        if n < 2 || t <= self.start_time() || t > self.end_time() {
            return 0.0;
        }
        let i = self.points.partition_point(|&(tp, _)| tp < t);
        let (ta, va) = self.points[i - 1];
        let (tb, vb) = self.points[i];
        (vb - va) / (tb - ta)
    }

    /// Time-shift by `dt ≥ 0`: `shifted(d).sample(t + d) == sample(t)`.
    pub fn shifted(&self, dt: f64) -> Waveform {
        let mut pts: Vec<(f64, f64)> = self.points.iter().map(|&(t, v)| (t + dt, v)).collect();
        if pts[0].0 > 0.0 && self.points[0].0 == 0.0 {
            pts.insert(0, (0.0, self.points[0].1));
        }
        Waveform { points: pts }
    }

    /// Appends `next`, re-timed to start at this waveform's last breakpoint.
    /// The two must meet at the same voltage.
    pub fn then(&self, next: &Waveform) -> Result<Waveform, WaveformError> {
        let (left, right) = (self.last_value(), next.first_value());
        if left != right {
            return Err(WaveformError::Discontinuous { left, right });
        }
        let origin = self.end_time() - next.start_time();
        let mut pts = self.points.clone();
        pts.extend(next.points.iter().skip(1).map(|&(t, v)| (t + origin, v)));
        Waveform::new(pts)
    }

    /// Appends a breakpoint after the current end.
    pub fn push(&mut self, t: f64, v: f64) -> Result<(), WaveformError> {
        if !t.is_finite() || !v.is_finite() {
            return Err(WaveformError::NotFinite(self.points.len()));
        }
        if t <= self.end_time() {
            return Err(WaveformError::NonIncreasing(self.points.len()));
        }
        self.points.push((t, v));
        Ok(())
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Waveform {
        Waveform {
            points: self.points.iter().map(|&(t, v)| (t, f(v))).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), WaveformError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "v"])?;
        for &(t, v) in &self.points {
            out.write_record([t.to_string(), v.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Waveform, WaveformError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(r);
        let header = rdr.headers()?.clone();
        if header.len() != 2 || &header[0] != "t" || &header[1] != "v" {
            return Err(WaveformError::Header(header.iter().collect::<Vec<_>>().join(",")));
        }
        let mut pts = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64, WaveformError> {
                rec.get(i)
                    .ok_or_else(|| WaveformError::Row {
                        row: row + 1,
                        msg: "missing column".into(),
                    })?
                    .parse::<f64>()
                    .map_err(|e| WaveformError::Row {
                        row: row + 1,
                        msg: e.to_string(),
                    })
            };
            pts.push((parse(0)?, parse(1)?));
        }
        Waveform::new(pts)
    }

    pub fn save(&self, path: &Path) -> Result<(), WaveformError> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Waveform, WaveformError> {
        Waveform::read_csv(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ramp_hold_breakpoints() {
        let w = Waveform::ramp_hold(0.0, 1.0, 1e9).unwrap();
        assert_eq!(w.points(), &[(0.0, 0.0), (1e-9, 1.0)]);
        assert_eq!(Waveform::ramp_hold(0.0, 0.0, 5.0).unwrap(), Waveform::constant(0.0));
        assert!(matches!(
            Waveform::ramp_hold(0.0, 1.0, 0.0),
            Err(WaveformError::ZeroSlope)
        ));
    }

    #[test]
    fn sample_and_derivative() {
        let w = Waveform::ramp_hold(0.0, 1.0, 1e9).unwrap();
        assert_eq!(w.sample(0.5e-9), 0.5);
        assert_eq!(w.sample(3e-9), 1.0);
        assert_eq!(w.derivative_at(2e-9), 0.0);
        approx::assert_relative_eq!(w.derivative_at(0.5e-9), 1e9, max_relative = 1e-12);
        // left-continuous at the corner
        approx::assert_relative_eq!(w.derivative_at(1e-9), 1e9, max_relative = 1e-12);
    }

    #[test]
    fn pulse_mid_width_is_exact() {
        let w = Waveform::pulse(0.0, 1.0, 1e-9, 100e-12, 10e-12).unwrap();
        let mids: Vec<f64> = w
            .points()
            .windows(2)
            .filter_map(|s| {
                let ((ta, va), (tb, vb)) = (s[0], s[1]);
                ((va - 0.5) * (vb - 0.5) < 0.0).then(|| ta + (0.5 - va) / (vb - va) * (tb - ta))
            })
            .collect();
        assert_eq!(mids.len(), 2);
        assert!((mids[1] - mids[0] - 100e-12).abs() < 1e-24);
    }

    #[test]
    fn zero_width_pulse_is_triangle_to_mid() {
        let w = Waveform::pulse(0.0, 1.0, 0.0, 0.0, 10e-12).unwrap();
        assert_eq!(w.points().len(), 3);
        assert_eq!(w.points()[1].1, 0.5);
    }

    #[test]
    fn csv_round_trip_exact() {
        let w = Waveform::new(vec![(0.0, -0.1), (1.234e-10, 0.3333333333333333), (2e-9, 1.0)]).unwrap();
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,v\n"));
        assert!(!text.contains('e'), "plain decimal expected: {text}");
        assert_eq!(Waveform::read_csv(buf.as_slice()).unwrap(), w);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Waveform::new(vec![]).is_err());
        assert!(Waveform::new(vec![(0.0, 0.0), (0.0, 1.0)]).is_err());
        assert!(Waveform::read_csv("x,y\n0,0\n".as_bytes()).is_err());
        assert!(Waveform::read_csv("t,v\n0,abc\n".as_bytes()).is_err());
    }

    fn arb_waveform() -> impl Strategy<Value = Waveform> {
        (prop::collection::vec((1e-12f64..1e-9, -1.0f64..1.0), 1..8), -1.0f64..1.0).prop_map(
            |(steps, v0)| {
                let mut pts = vec![(0.0, v0)];
                let mut t = 0.0;
                for (dt, v) in steps {
                    t += dt;
                    pts.push((t, v));
                }
                Waveform::new(pts).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn concatenation_is_associative(a in arb_waveform(), b in arb_waveform(), c in arb_waveform()) {
            // force continuity by pinning the joins to the left end value
            let b = b.map_values(|v| v - b.first_value() + a.last_value());
            let c = c.map_values(|v| v - c.first_value() + b.last_value());
            let left = a.then(&b).unwrap().then(&c).unwrap();
            let right = a.then(&b.then(&c).unwrap()).unwrap();
            for (p, q) in left.points().iter().zip(right.points()) {
                prop_assert!((p.0 - q.0).abs() <= 1e-21 && (p.1 - q.1).abs() <= 1e-15);
            }
            prop_assert_eq!(left.points().len(), right.points().len());
        }

        #[test]
        fn shift_equivariance(w in arb_waveform(), d in 0.0f64..1e-9, t in 0.0f64..5e-9) {
            let s = w.shifted(d);
            prop_assert!((s.sample(t + d) - w.sample(t)).abs() < 1e-12);
        }

        #[test]
        fn monotone_on_monotone_segments(w in arb_waveform(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            for seg in w.points().windows(2) {
                let ((ta, va), (tb, vb)) = (seg[0], seg[1]);
                let (x, y) = (ta + a.min(b) * (tb - ta), ta + a.max(b) * (tb - ta));
                let (sx, sy) = (w.sample(x), w.sample(y));
                if vb >= va { prop_assert!(sx <= sy + 1e-15); } else { prop_assert!(sx + 1e-15 >= sy); }
            }
        }
    }
}
