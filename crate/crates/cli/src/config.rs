//! `key = value` run configuration with `[section]` headers.
//!
//! Every quantity with a unit carries it in the key name. Unknown sections
//! and keys are errors, so a typo never silently falls back to a default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use st_meta::{ModelError, Polarity, StageParams};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Read { path: PathBuf, reason: String },
    #[error("keys outside a section are not allowed: {0}")]
    Unsectioned(String),
    #[error("unknown section [{0}]")]
    UnknownSection(String),
    #[error("unknown key `{key}` in [{section}]")]
    UnknownKey { section: String, key: String },
    #[error("[{section}] {key} = {value:?}: {reason}")]
    BadValue {
        section: String,
        key: String,
        value: String,
        reason: String,
    },
    #[error("stage sections must be numbered from 1 without gaps; [stage{0}] is missing")]
    MissingStage(usize),
    #[error("stage {stage}: {source}")]
    Stage { stage: usize, source: ModelError },
    #[error("{0}")]
    Invalid(String),
}

const STAGE_KEYS: &[&str] = &["gain", "sat_m_v", "feedback_k", "v_ref_v", "tau0_s", "polarity", "rail_offset_v"];

const SECTIONS: &[(&str, &[&str])] = &[
    ("output", &["dir"]),
    (
        "simulate",
        &["v_low_v", "v_high_v", "t_start_s", "width_s", "edge_s", "t_end_s", "samples", "waveform_file"],
    ),
    ("hysteresis", &["rate_v_per_s", "resolution_v"]),
    ("table", &["eps_rel", "delta_rel", "duration_tau"]),
    ("pulses", &["widths_s", "edge_s"]),
    ("late", &["eps_min_v", "eps_max_v", "points"]),
    (
        "steer",
        &["mode", "target_v", "release", "release_s", "control_period_s", "gain", "delta_park_rel"],
    ),
    ("invert", &["amplitude_v", "frequency_hz", "offset_v", "t_end_s", "control_period_s", "gain"]),
    ("stable3d", &["v_min_v", "v_max_v", "points"]),
];

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    /// Stages from `[stage1]`, `[stage2]`, …; missing keys take reference values.
    pub stages: Vec<StageParams>,
    pub out_dir: Option<PathBuf>,
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let ini = Ini::load_from_file(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut raw = BTreeMap::new();
        for (name, props) in ini.iter() {
            let Some(name) = name else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(ConfigError::Unsectioned(k.to_string()));
                }
                continue;
            };
            let keys: BTreeMap<String, String> = props.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
            raw.insert(name.to_string(), keys);
        }
        RunConfig::from_sections(raw, path.parent())
    }

    fn from_sections(
        raw: BTreeMap<String, BTreeMap<String, String>>,
        base: Option<&Path>,
    ) -> Result<RunConfig, ConfigError> {
        let mut stage_sections = BTreeMap::new();
        for (name, keys) in &raw {
            let allowed: &[&str] = if let Some(n) = name.strip_prefix("stage") {
                let idx: usize = n.parse().map_err(|_| ConfigError::UnknownSection(name.clone()))?;
                if idx == 0 {
                    return Err(ConfigError::UnknownSection(name.clone()));
                }
                stage_sections.insert(idx, keys);
                STAGE_KEYS
            } else {
                SECTIONS
                    .iter()
                    .find(|(s, _)| *s == name)
                    .map(|(_, k)| *k)
                    .ok_or_else(|| ConfigError::UnknownSection(name.clone()))?
            };
            if let Some(key) = keys.keys().find(|k| !allowed.contains(&k.as_str())) {
                return Err(ConfigError::UnknownKey {
                    section: name.clone(),
                    key: key.clone(),
                });
            }
        }

        let mut stages = Vec::new();
        for (i, (&idx, keys)) in stage_sections.iter().enumerate() {
            if idx != i + 1 {
                return Err(ConfigError::MissingStage(i + 1));
            }
            let p = parse_stage(&format!("stage{idx}"), keys)?;
            p.validate().map_err(|source| ConfigError::Stage { stage: idx, source })?;
            stages.push(p);
        }

        let mut cfg = RunConfig {
            stages,
            out_dir: None,
            sections: raw,
        };
        cfg.out_dir = cfg.get::<PathBuf>("output", "dir")?.map(|d| match base {
            Some(b) if d.is_relative() => b.join(d),
            _ => d,
        });
        Ok(cfg)
    }

    /// Typed value of `[section] key`, if present.
    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let Some(value) = self.sections.get(section).and_then(|s| s.get(key)) else {
            return Ok(None);
        };
        value.trim().parse().map(Some).map_err(|e: T::Err| ConfigError::BadValue {
            section: section.into(),
            key: key.into(),
            value: value.clone(),
            reason: e.to_string(),
        })
    }

    pub fn get_or<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(section, key)?.unwrap_or(default))
    }

    /// Comma-separated list of numbers.
    pub fn get_list(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        let Some(value) = self.sections.get(section).and_then(|s| s.get(key)) else {
            return Ok(None);
        };
        value
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
            .map_err(|e| ConfigError::BadValue {
                section: section.into(),
                key: key.into(),
                value: value.clone(),
                reason: e.to_string(),
            })
    }

    /// The first `n` configured stages, padded with copies of the last one
    /// (or of `fallback` when none are configured).
    pub fn stages(&self, n: usize, fallback: StageParams) -> Vec<StageParams> {
        let last = self.stages.last().copied().unwrap_or(fallback);
        (0..n).map(|i| self.stages.get(i).copied().unwrap_or(last)).collect()
    }
}

fn parse_stage(section: &str, keys: &BTreeMap<String, String>) -> Result<StageParams, ConfigError> {
    let num = |key: &str, default: f64| -> Result<f64, ConfigError> {
        match keys.get(key) {
            None => Ok(default),
            Some(v) => v.trim().parse().map_err(|e: std::num::ParseFloatError| ConfigError::BadValue {
                section: section.into(),
                key: key.into(),
                value: v.clone(),
                reason: e.to_string(),
            }),
        }
    };
    let r = StageParams::reference();
    let polarity = match keys.get("polarity").map(|s| s.trim().to_ascii_lowercase()) {
        None => r.polarity,
        Some(s) if s == "inverting" => Polarity::Inverting,
        Some(s) if s == "non-inverting" || s == "noninverting" => Polarity::NonInverting,
        Some(s) => {
            return Err(ConfigError::BadValue {
                section: section.into(),
                key: "polarity".into(),
                value: s,
                reason: "expected `inverting` or `non-inverting`".into(),
            })
        }
    };
    Ok(StageParams {
        gain: num("gain", r.gain)?,
        sat: num("sat_m_v", r.sat)?,
        feedback: num("feedback_k", r.feedback)?,
        v_ref: num("v_ref_v", r.v_ref)?,
        tau0: num("tau0_s", r.tau0)?,
        polarity,
        rail_offset: num("rail_offset_v", r.rail_offset)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, text).unwrap();
        RunConfig::load(&path)
    }

    #[test]
    fn stages_and_defaults() {
        let cfg = parse("[stage1]\ngain = 3\ntau0_s = 2e-9\n[stage2]\npolarity = non-inverting\n").unwrap();
        assert_eq!(cfg.stages.len(), 2);
        assert_eq!(cfg.stages[0].gain, 3.0);
        assert_eq!(cfg.stages[0].tau0, 2e-9);
        assert_eq!(cfg.stages[0].sat, 1.0);
        assert_eq!(cfg.stages[1].polarity, Polarity::NonInverting);
        assert_eq!(cfg.stages(3, StageParams::reference())[2], cfg.stages[1]);
    }

    #[test]
    fn rejects_unknown_keys_and_sections() {
        assert!(matches!(parse("[stage1]\ntau0 = 1e-9\n"), Err(ConfigError::UnknownKey { .. })));
        assert!(matches!(parse("[pulse]\nedge_s = 1\n"), Err(ConfigError::UnknownSection(_))));
        assert!(matches!(parse("gain = 3\n"), Err(ConfigError::Unsectioned(_))));
        assert!(matches!(parse("[stage2]\ngain = 3\n"), Err(ConfigError::MissingStage(1))));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(parse("[stage1]\ngain = fast\n"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(parse("[stage1]\nfeedback_k = 1.5\n"), Err(ConfigError::Stage { .. })));
        let cfg = parse("[pulses]\nwidths_s = 1e-9, x\n").unwrap();
        assert!(cfg.get_list("pulses", "widths_s").is_err());
    }

    #[test]
    fn inline_comments() {
        let cfg = parse("[stage1]\npolarity = non-inverting  # flipped\ngain = 50 ; low\n").unwrap();
        assert_eq!(cfg.stages[0].polarity, Polarity::NonInverting);
        assert_eq!(cfg.stages[0].gain, 50.0);
    }

    #[test]
    fn typed_lookup() {
        let cfg = parse("[late]\npoints = 7\neps_min_v = 1e-9\n[pulses]\nwidths_s = 1e-9, 2e-9\n").unwrap();
        assert_eq!(cfg.get::<usize>("late", "points").unwrap(), Some(7));
        assert_eq!(cfg.get_or("late", "eps_max_v", 1e-5).unwrap(), 1e-5);
        assert_eq!(cfg.get_list("pulses", "widths_s").unwrap(), Some(vec![1e-9, 2e-9]));
    }
}
