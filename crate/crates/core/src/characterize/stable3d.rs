use crate::model::{Region, StageParams};
use crate::simulator::{equilibrate, CascadeConfig, SimError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapPoint {
    pub v_in: f64,
    pub v_m: f64,
    pub v_out: f64,
    pub regions: [Region; 2],
}

impl MapPoint {
    pub fn is_truly_stable(&self) -> bool {
        self.regions.iter().all(|r| r.is_saturated())
    }

    pub fn is_double_metastable(&self) -> bool {
        self.regions.iter().all(|&r| r == Region::Linear)
    }

    /// Output strictly between the saturation levels.
    pub fn has_intermediate_output(&self, stage2: &StageParams) -> bool {
        self.v_out.abs() < stage2.sat
    }
}

/// All rest states of a two-stage cascade over a grid of constant inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct StablePointMap {
    pub points: Vec<MapPoint>,
}

impl StablePointMap {
    /// Projection onto the `(v_in, v_m)` plane.
    pub fn stage1_projection(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.v_in, p.v_m)).collect()
    }

    /// Projection onto the `(v_m, v_out)` plane.
    pub fn stage2_projection(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.v_m, p.v_out)).collect()
    }

    /// Projection onto the `(v_in, v_out)` plane.
    pub fn cascade_projection(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.v_in, p.v_out)).collect()
    }

    /// Smallest Euclidean distance from a double-metastable point to any
    /// truly stable point.
    pub fn metastable_clearance(&self) -> Option<f64> {
        let stable: Vec<&MapPoint> = self.points.iter().filter(|p| p.is_truly_stable()).collect();
        self.points
            .iter()
            .filter(|p| p.is_double_metastable())
            .flat_map(|m| {
                stable.iter().map(move |s| {
                    ((m.v_in - s.v_in).powi(2) + (m.v_m - s.v_m).powi(2) + (m.v_out - s.v_out).powi(2)).sqrt()
                })
            })
            .reduce(f64::min)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["v_in", "v_m", "v_out", "region1", "region2", "truly_stable"])?;
        for p in &self.points {
            out.write_record(&[
                format!("{:.16e}", p.v_in),
                format!("{:.16e}", p.v_m),
                format!("{:.16e}", p.v_out),
                p.regions[0].number().to_string(),
                p.regions[1].number().to_string(),
                p.is_truly_stable().to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn stable_points_3d(s1: &StageParams, s2: &StageParams, grid: &[f64]) -> Result<StablePointMap, SimError> {
    let cfg = CascadeConfig::new(vec![*s1, *s2], vec![0.0, 0.0])?;
    let points = grid
        .iter()
        .flat_map(|&v_in| {
            equilibrate(&cfg, v_in).into_iter().map(move |fp| MapPoint {
                v_in,
                v_m: fp.outputs[0],
                v_out: fp.outputs[1],
                regions: [fp.regions[0], fp.regions[1]],
            })
        })
        .collect();
    Ok(StablePointMap { points })
}
