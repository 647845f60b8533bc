//! Closed-form geometry of a single ideal-OpAmp Schmitt-Trigger stage.
//!
//! All voltages here are in internal symmetric coordinates: the stage output
//! saturates at `±sat`, and the mid-rail line is `0`. `rail_offset` only
//! matters when values are exported.
//!
//! The amplifier drive of a stage is
//!
//! ```text
//! u = A · (k·v_out + (1 − k)·v_ref − s·v_in)
//! ```
//!
//! with `s = +1` for an inverting and `s = −1` for a non-inverting stage. The
//! OpAmp output is `clamp(u, −M, +M)` and the output node relaxes towards it
//! through the `R0·C0` pole. Only the divider ratio `k` enters the dynamics;
//! the individual resistors are not modelled.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("gain·feedback must exceed 1 for bistability (k·A = {0})")]
    NoHysteresis(f64),
    #[error("feedback fraction must lie in (0, 1), got {0}")]
    FeedbackOutOfRange(f64),
    #[error("saturation voltage must be positive and finite, got {0}")]
    BadSaturation(f64),
    #[error("output time constant must be positive and finite, got {0}")]
    BadTimeConstant(f64),
    #[error("parameter {0} is not finite")]
    NotFinite(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Inverting,
    NonInverting,
}

impl Polarity {
    /// Sign of the input term in the amplifier drive.
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Inverting => 1.0,
            Polarity::NonInverting => -1.0,
        }
    }

    pub fn flipped(self) -> Polarity {
        match self {
            Polarity::Inverting => Polarity::NonInverting,
            Polarity::NonInverting => Polarity::Inverting,
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Polarity::Inverting => f.write_str("inverting"),
            Polarity::NonInverting => f.write_str("non_inverting"),
        }
    }
}

/// Operating region of a stage in the `(v_in, v_out)` phase plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    /// Region 1: OpAmp saturated high, output relaxes to `+M`.
    SaturationHi,
    /// Region 2: OpAmp linear, output runs away from the `γ2` line.
    Linear,
    /// Region 3: OpAmp saturated low, output relaxes to `−M`.
    SaturationLo,
}

impl Region {
    /// Region number as used in phase diagrams and CSV exports (1, 2, 3).
    pub fn number(self) -> u8 {
        match self {
            Region::SaturationHi => 1,
            Region::Linear => 2,
            Region::SaturationLo => 3,
        }
    }

    pub fn is_saturated(self) -> bool {
        self != Region::Linear
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Electrical parameters of one ideal-OpAmp Schmitt-Trigger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageParams {
    /// OpAmp open-loop gain `A`.
    pub gain: f64,
    /// Saturation half-range `M` in volts.
    pub sat: f64,
    /// Divider ratio `k = R_B / (R_A + R_B)`.
    pub feedback: f64,
    /// Reference voltage at the bottom of the divider.
    pub v_ref: f64,
    /// Output pole `R0·C0` in seconds.
    pub tau0: f64,
    pub polarity: Polarity,
    /// Offset from internal to external coordinates.
    pub rail_offset: f64,
}

/// Quantities that follow algebraically from [`StageParams`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedQuantities {
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
    pub gamma1: f64,
    pub gamma3: f64,
    pub v_threshold_lo: f64,
    pub v_threshold_hi: f64,
    /// Magnitude of `dγ2/dv_in`; the sign equals the polarity sign.
    pub gamma2_slope: f64,
}

impl StageParams {
    /// Reference stage: A = 1000, M = 1 V, k = 0.5, V_R = 0, τ0 = 1 ns, inverting.
    pub fn reference() -> StageParams {
        StageParams {
            gain: 1000.0,
            sat: 1.0,
            feedback: 0.5,
            v_ref: 0.0,
            tau0: 1e-9,
            polarity: Polarity::Inverting,
            rail_offset: 0.0,
        }
    }

    pub fn with_polarity(mut self, polarity: Polarity) -> StageParams {
        self.polarity = polarity;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("gain", self.gain),
            ("sat", self.sat),
            ("feedback", self.feedback),
            ("v_ref", self.v_ref),
            ("tau0", self.tau0),
            ("rail_offset", self.rail_offset),
        ] {
            if !v.is_finite() {
                return Err(ModelError::NotFinite(name));
            }
        }
        if self.sat <= 0.0 {
            return Err(ModelError::BadSaturation(self.sat));
        }
        if self.tau0 <= 0.0 {
            return Err(ModelError::BadTimeConstant(self.tau0));
        }
        if !(self.feedback > 0.0 && self.feedback < 1.0) {
            return Err(ModelError::FeedbackOutOfRange(self.feedback));
        }
        let loop_gain = self.feedback * self.gain;
        if loop_gain <= 1.0 {
            return Err(ModelError::NoHysteresis(loop_gain));
        }
        Ok(())
    }

    pub fn derived(&self) -> Result<DerivedQuantities, ModelError> {
        self.validate()?;
        let (lo, hi) = self.thresholds();
        Ok(DerivedQuantities {
            tau1: self.tau0,
            tau2: self.tau2(),
            tau3: self.tau0,
            gamma1: self.sat,
            gamma3: -self.sat,
            v_threshold_lo: lo,
            v_threshold_hi: hi,
            gamma2_slope: 1.0 / self.gamma2_denominator(),
        })
    }

    /// Time constant of the unstable linear region, `τ0 / (kA − 1)`.
    pub fn tau2(&self) -> f64 {
        self.tau0 / (self.feedback * self.gain - 1.0)
    }

    /// The shorter of the two time constants; sets step and event resolution.
    pub fn fastest_tau(&self) -> f64 {
        self.tau0.min(self.tau2())
    }

    pub fn slowest_tau(&self) -> f64 {
        self.tau0.max(self.tau2())
    }

    fn gamma2_denominator(&self) -> f64 {
        self.feedback - 1.0 / self.gain
    }

    fn divider_offset(&self) -> f64 {
        (1.0 - self.feedback) * self.v_ref
    }

    /// Amplifier drive before clamping.
    pub fn drive(&self, v_in: f64, v_out: f64) -> f64 {
        self.gain
            * (self.feedback * v_out + self.divider_offset() - self.polarity.sign() * v_in)
    }

    /// Region for a given drive value; points on a boundary count as linear.
    pub fn region_of_drive(&self, u: f64) -> Region {
        if u > self.sat {
            Region::SaturationHi
        } else if u < -self.sat {
            Region::SaturationLo
        } else {
            Region::Linear
        }
    }

    pub fn region_of(&self, v_in: f64, v_out: f64) -> Region {
        self.region_of_drive(self.drive(v_in, v_out))
    }

    /// `dv_out/dt` of the full clamped model.
    pub fn output_slope(&self, v_in: f64, v_out: f64) -> f64 {
        let u = self.drive(v_in, v_out).clamp(-self.sat, self.sat);
        (u - v_out) / self.tau0
    }

    /// Metastable rest point `γ2(v_in)`.
    pub fn gamma2(&self, v_in: f64) -> f64 {
        (self.polarity.sign() * v_in - self.divider_offset()) / self.gamma2_denominator()
    }

    /// Rest point of the region's local ODE. For the linear region the point
    /// may lie outside the region; callers check validity.
    pub fn rest_point(&self, region: Region, v_in: f64) -> f64 {
        match region {
            Region::SaturationHi => self.sat,
            Region::Linear => self.gamma2(v_in),
            Region::SaturationLo => -self.sat,
        }
    }

    /// Exponential rate of the region's local ODE `v' = rate·(v − rest)`.
    pub fn region_rate(&self, region: Region) -> f64 {
        match region {
            Region::Linear => 1.0 / self.tau2(),
            _ => -1.0 / self.tau0,
        }
    }

    /// Input thresholds `(V_L, V_H)`.
    pub fn thresholds(&self) -> (f64, f64) {
        let m = self.sat;
        let swing = self.feedback * m - m / self.gain;
        let lo = self.divider_offset() - swing;
        let hi = self.divider_offset() + swing;
        match self.polarity {
            Polarity::Inverting => (lo, hi),
            Polarity::NonInverting => (-hi, -lo),
        }
    }

    pub fn hysteresis_width(&self) -> f64 {
        let (lo, hi) = self.thresholds();
        hi - lo
    }

    /// Input voltage whose metastable rest point is `v_out_target`.
    pub fn gamma2_inverse(&self, v_out_target: f64) -> f64 {
        self.polarity.sign() * (v_out_target * self.gamma2_denominator() + self.divider_offset())
    }

    /// Rest points at `v_in` that lie inside their own region.
    pub fn rest_points(&self, v_in: f64) -> Vec<(Region, f64)> {
        [Region::SaturationHi, Region::Linear, Region::SaturationLo]
            .into_iter()
            .filter_map(|r| {
                let v = self.rest_point(r, v_in);
                (self.region_of(v_in, v) == r).then_some((r, v))
            })
            .collect()
    }

    pub fn to_external(&self, v: f64) -> f64 {
        v + self.rail_offset
    }
}

/// Input voltages `(V_1, V_2)` at which a metastable `stage1` outputs
/// exactly `stage2`'s lower and upper thresholds.
///
/// For a non-inverting first stage the γ2 line falls with `v_in`, so
/// `V_1 > V_2`.
pub fn v1_v2(stage1: &StageParams, stage2: &StageParams) -> (f64, f64) {
    let (lo2, hi2) = stage2.thresholds();
    (stage1.gamma2_inverse(lo2), stage1.gamma2_inverse(hi2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reference_derived_values() {
        let d = StageParams::reference().derived().unwrap();
        assert_relative_eq!(d.tau2, 1e-9 / 499.0, max_relative = 1e-15);
        assert_eq!(d.gamma1, 1.0);
        assert_eq!(d.gamma3, -1.0);
        assert_relative_eq!(d.gamma2_slope, 1.0 / 0.499, max_relative = 1e-15);
        assert_eq!(d.tau1, d.tau3);
        assert!(d.tau2 < d.tau1);
    }

    #[test]
    fn rejects_degenerate_loop_gain() {
        let mut p = StageParams::reference();
        p.gain = 2.0;
        assert!(matches!(p.derived(), Err(ModelError::NoHysteresis(_))));
        p.gain = 1000.0;
        p.feedback = 1.0;
        assert!(matches!(p.validate(), Err(ModelError::FeedbackOutOfRange(_))));
        p.feedback = 0.5;
        p.tau0 = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn region_examples() {
        let p = StageParams::reference();
        assert_eq!(p.region_of(-1.0, 0.0), Region::SaturationHi);
        assert_eq!(p.region_of(0.0, 0.0), Region::Linear);
        assert_eq!(p.region_of(1.0, 0.0), Region::SaturationLo);
        // exactly on the boundary line
        assert_eq!(p.region_of_drive(p.sat), Region::Linear);
        assert_eq!(p.region_of_drive(-p.sat), Region::Linear);
    }

    #[test]
    fn rest_point_examples() {
        let p = StageParams::reference();
        assert_eq!(p.rest_point(Region::Linear, 0.0), 0.0);
        assert_relative_eq!(p.rest_point(Region::Linear, 0.1), 0.1 / 0.499, max_relative = 1e-14);
        assert_eq!(p.rest_point(Region::SaturationHi, 0.37), 1.0);
        // γ2 solves v = A(k v − v_in)
        let v = p.rest_point(Region::Linear, 0.1);
        assert!((v - p.drive(0.1, v)).abs() < 1e-12);
    }

    #[test]
    fn threshold_examples() {
        let p = StageParams::reference();
        let (lo, hi) = p.thresholds();
        assert_relative_eq!(lo, -0.499, max_relative = 1e-14);
        assert_relative_eq!(hi, 0.499, max_relative = 1e-14);
        let mut q = p;
        q.v_ref = 0.1;
        let (lo2, hi2) = q.thresholds();
        assert_relative_eq!(lo2 - lo, 0.05, max_relative = 1e-12);
        assert_relative_eq!(hi2 - hi, 0.05, max_relative = 1e-12);
    }

    #[test]
    fn gamma2_inverse_examples() {
        let p = StageParams::reference();
        assert_eq!(p.gamma2_inverse(0.0), 0.0);
        assert_relative_eq!(p.gamma2_inverse(-0.499), -0.249001, max_relative = 1e-13);
        assert_relative_eq!(p.gamma2_inverse(0.499), 0.249001, max_relative = 1e-13);
    }

    #[test]
    fn v1_v2_examples() {
        let p = StageParams::reference();
        let (v1, v2) = v1_v2(&p, &p);
        assert_relative_eq!(v1, -0.249001, max_relative = 1e-13);
        assert_relative_eq!(v2, 0.249001, max_relative = 1e-13);
        assert!(v2 - v1 < p.hysteresis_width());
        assert_relative_eq!(v2 - v1, 0.498002, max_relative = 1e-12);
    }

    #[test]
    fn narrow_second_stage_shrinks_band_linearly() {
        let p = StageParams::reference();
        let slope = p.derived().unwrap().gamma2_slope;
        for gain in [2.5, 2.1, 2.01, 2.0001] {
            let mut q = p;
            q.gain = gain;
            let (v1, v2) = v1_v2(&p, &q);
            assert_relative_eq!(v2 - v1, q.hysteresis_width() / slope, max_relative = 1e-12);
        }
    }

    #[test]
    fn polarity_mirrors_thresholds() {
        let mut p = StageParams::reference();
        p.v_ref = 0.13;
        let (lo, hi) = p.thresholds();
        let (mlo, mhi) = p.with_polarity(Polarity::NonInverting).thresholds();
        assert_relative_eq!(mlo, -hi, max_relative = 1e-14);
        assert_relative_eq!(mhi, -lo, max_relative = 1e-14);
    }

    #[test]
    fn rest_points_on_both_branches_inside_hysteresis() {
        let p = StageParams::reference();
        let pts = p.rest_points(0.0);
        assert_eq!(pts.len(), 3);
        let pts = p.rest_points(-0.8);
        assert_eq!(pts, vec![(Region::SaturationHi, 1.0)]);
    }
}
