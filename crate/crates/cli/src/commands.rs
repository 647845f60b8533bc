use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use st_meta::characterize::{
    default_rate, default_resolution, hysteresis_sweep, late_transition_sweep, nominal_delay, pulse_sweep,
    stable_points_3d, table_grid_run, table_stage, SweepError, TableOptions,
};
use st_meta::classifier::{classify, Bands, Windows};
use st_meta::steering::{
    invert_region2, plan_cascade_metastable, plan_glitch_release, plan_metastable_entry, release, ControlOptions,
    Phase, ReleaseDirection, Sine, SteeringError, SteeringPlan, Target,
};
use st_meta::{simulate, v1_v2, CascadeConfig, SimError, SimOptions, StageParams, Waveform};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("validity violation at t = {t:.9e} s: |v + tau0*v'| = {value:.6} V exceeds M")]
    Validity { t: f64, value: f64 },
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Validity { .. } => 3,
            CliError::Failed(_) => 1,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Model { .. } | SimError::InvalidConfig(_) | SimError::BadEndTime(_) | SimError::BadTolerance(_) => {
                CliError::Config(ConfigError::Invalid(e.to_string()))
            }
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<SteeringError> for CliError {
    fn from(e: SteeringError) -> Self {
        match e {
            SteeringError::ValidityViolation { t, value } => CliError::Validity { t, value },
            SteeringError::TargetOutOfRange(_)
            | SteeringError::ControlPeriodTooCoarse { .. }
            | SteeringError::BadGain(_) => CliError::Config(ConfigError::Invalid(e.to_string())),
            SteeringError::Sim(s) => s.into(),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::RateTooFast { .. } | SweepError::BadResolution(_) => {
                CliError::Config(ConfigError::Invalid(e.to_string()))
            }
            SweepError::Sim(s) => s.into(),
            other => CliError::Failed(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Failed(format!("{}: {e}", path.display()))
}

/// Everything a subcommand needs besides its own flags.
pub struct Run {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    /// `None` with `--no-timestamp`.
    pub stamp: Option<String>,
    pub stage_count: Option<usize>,
    pub files: Vec<PathBuf>,
    pub report: String,
}

impl Run {
    fn path(&self, name: &str, ext: &str) -> PathBuf {
        match &self.stamp {
            Some(s) => self.out_dir.join(format!("{name}_{s}.{ext}")),
            None => self.out_dir.join(format!("{name}.{ext}")),
        }
    }

    fn write<E: std::fmt::Display>(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> Result<(), E>,
    ) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| io_err(&self.out_dir, e))?;
        let path = self.path(name, "csv");
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w).map_err(|e| io_err(&path, e))?;
        w.flush().map_err(|e| io_err(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    fn line(&mut self, s: impl AsRef<str>) {
        self.report.push_str(s.as_ref());
        self.report.push('\n');
    }

    /// Saves the accumulated report next to the CSV files.
    pub fn finish(&mut self, name: &str) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| io_err(&self.out_dir, e))?;
        let path = self.path(name, "txt");
        std::fs::write(&path, &self.report).map_err(|e| io_err(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    fn stages(&self, default_count: usize) -> Vec<StageParams> {
        let n = self
            .stage_count
            .unwrap_or(if self.config.stages.is_empty() { default_count } else { self.config.stages.len() });
        self.config.stages(n.max(1), StageParams::reference())
    }

    fn stages_exact(&self, n: usize, fallback: StageParams) -> Vec<StageParams> {
        self.config.stages(n, fallback)
    }
}

fn slowest(stages: &[StageParams]) -> f64 {
    stages.iter().map(StageParams::slowest_tau).fold(0.0, f64::max)
}

fn describe(stages: &[StageParams]) -> String {
    stages
        .iter()
        .enumerate()
        .map(|(i, p)| {
            format!(
                "stage {}: A = {}, M = {} V, k = {}, V_R = {} V, tau0 = {:e} s, {:?}",
                i + 1,
                p.gain,
                p.sat,
                p.feedback,
                p.v_ref,
                p.tau0,
                p.polarity
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn simulate_cmd(run: &mut Run) -> Result<(), CliError> {
    let stages = run.stages(1);
    let c = &run.config;
    let s1 = stages[0];
    let tau = slowest(&stages);
    let (w, t_end) = match c.get::<PathBuf>("simulate", "waveform_file")? {
        Some(path) => {
            let w = Waveform::load(&path).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
            let end = w.end_time() + 20.0 * tau * stages.len() as f64;
            (w, c.get_or("simulate", "t_end_s", end)?)
        }
        None => {
            let lo = c.get_or("simulate", "v_low_v", -s1.sat)?;
            let hi = c.get_or("simulate", "v_high_v", s1.sat)?;
            let start = c.get_or("simulate", "t_start_s", tau)?;
            let edge = c.get_or("simulate", "edge_s", 1e-2 * s1.tau0)?;
            let w = match c.get::<f64>("simulate", "width_s")? {
                Some(width) => Waveform::pulse(lo, hi, start, width, edge),
                None => Waveform::new(vec![(0.0, lo), (start, lo), (start + edge, hi)]),
            }
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            let end = w.end_time() + 20.0 * tau * stages.len() as f64;
            (w, c.get_or("simulate", "t_end_s", end)?)
        }
    };
    let opts = SimOptions {
        samples: c.get_or("simulate", "samples", SimOptions::default().samples)?,
        ..SimOptions::default()
    };
    let cfg = CascadeConfig::settled(stages.clone(), w.first_value())?;
    let tr = simulate(&cfg, &w, t_end, &opts)?;
    run.write("simulate", |f| tr.write_csv(f))?;

    run.line(describe(&stages));
    run.line(format!("simulated {t_end:e} s, {} events", tr.events.len()));
    let last = stages.len() - 1;
    let p = stages[last];
    let windows = Windows::for_stage(&p, nominal_delay(&stages, &opts)?);
    let label = classify(&tr.times, &tr.outputs[last], &Bands::for_stage(&p), &windows);
    let final_values: Vec<String> = (0..stages.len()).map(|s| format!("{:.9}", tr.outputs[s][tr.times.len() - 1])).collect();
    run.line(format!("final outputs: {}", final_values.join(", ")));
    run.line(format!("output behaviour: {} ({})", label.event.name(), label.final_logic));
    Ok(())
}

pub fn hysteresis_cmd(run: &mut Run) -> Result<(), CliError> {
    let stages = run.stages(1);
    let res = run.config.get_or("hysteresis", "resolution_v", default_resolution(&stages))?;
    let rate = run.config.get_or("hysteresis", "rate_v_per_s", default_rate(&stages, res))?;
    let curve = hysteresis_sweep(&stages, rate, res, &SimOptions::default())?;
    run.write("hysteresis", |f| curve.write_csv(f))?;
    run.write("hysteresis_switch_points", |f| -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(f);
        w.write_record(["stage", "direction", "v_in"])?;
        for (s, pts) in curve.switch_points.iter().enumerate() {
            for (d, v) in pts {
                let dir = if *d == st_meta::characterize::Direction::Up { "up" } else { "down" };
                w.write_record(&[(s + 1).to_string(), dir.to_string(), format!("{v:.16e}")])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;

    run.line(describe(&stages));
    run.line(format!("sweep rate {rate:e} V/s, resolution {res:e} V"));
    let (vl, vh) = stages[0].thresholds();
    run.line(format!("stage 1 thresholds: V_L = {vl:.9} V, V_H = {vh:.9} V"));
    for (s, pts) in curve.switch_points.iter().enumerate() {
        let list: Vec<String> = pts.iter().map(|(d, v)| format!("{d:?} {v:.9}")).collect();
        run.line(format!("stage {} switch points: {}", s + 1, list.join(", ")));
    }
    if stages.len() >= 2 {
        let (v1, v2) = v1_v2(&stages[0], &stages[1]);
        run.line(format!("metastable band of stages 1-2: V_1 = {v1:.9} V, V_2 = {v2:.9} V"));
    }
    Ok(())
}

pub fn table_cmd(run: &mut Run) -> Result<(), CliError> {
    let stages = if run.config.stages.is_empty() {
        vec![table_stage(); 2]
    } else {
        run.stages_exact(2, table_stage())
    };
    let d = TableOptions::default();
    let opts = TableOptions {
        eps_rel: run.config.get_or("table", "eps_rel", d.eps_rel)?,
        delta_rel: run.config.get_or("table", "delta_rel", d.delta_rel)?,
        duration: run.config.get_or("table", "duration_tau", d.duration)?,
        ..d
    };
    let grid = table_grid_run(&stages[0], &stages[1], &opts)?;
    for sub in 1..=9 {
        run.write(&format!("table_{sub}"), |f| grid.write_csv(sub, f))?;
    }
    run.line(describe(&stages));
    run.line(grid.report());
    let bad = grid.mismatches().len();
    run.line(format!("{} cells, {bad} mismatches", grid.cells.len()));
    if bad > 0 {
        return Err(CliError::Failed(format!("{bad} table cells disagree with the expected outcomes")));
    }
    Ok(())
}

pub fn pulses_cmd(run: &mut Run) -> Result<(), CliError> {
    let stages = run.stages(1);
    let s1 = stages[0];
    let widths = match run.config.get_list("pulses", "widths_s")? {
        Some(w) => w,
        None => [0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 8.0, 12.0, 20.0, 40.0].iter().map(|w| w * s1.tau0).collect(),
    };
    let edge = run.config.get_or("pulses", "edge_s", 1e-2 * s1.tau0)?;
    let report = pulse_sweep(&stages, &widths, edge, &SimOptions::default())?;
    run.write("pulses", |f| report.write_csv(f))?;
    run.line(describe(&stages));
    run.line(format!("propagation boundary: {:.6e} s", report.boundary));
    if let Some(e) = report.max_width_error() {
        run.line(format!("largest relative width error of propagated pulses: {:.4}%", 100.0 * e));
    }
    Ok(())
}

pub fn late_cmd(run: &mut Run) -> Result<(), CliError> {
    let p = run.stages_exact(1, StageParams::reference())[0];
    let lo = run.config.get_or("late", "eps_min_v", 1e-9 * p.sat)?;
    let hi = run.config.get_or("late", "eps_max_v", 1e-5 * p.sat)?;
    let n: usize = run.config.get_or("late", "points", 9)?;
    if !(lo > 0.0 && hi > lo && n >= 2) {
        return Err(ConfigError::Invalid("late: need 0 < eps_min_v < eps_max_v and points >= 2".into()).into());
    }
    let eps: Vec<f64> = (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect();
    let sweep = late_transition_sweep(&p, &eps, &SimOptions::default())?;
    run.write("late", |f| sweep.write_csv(f))?;
    run.line(describe(&[p]));
    run.line(format!(
        "delay slope {:.6e} s per unit ln(1/eps) (stderr {:.2e}), tau2 = {:.6e} s, r^2 = {:.6}",
        sweep.slope,
        sweep.slope_stderr,
        p.tau2(),
        sweep.r_squared
    ));
    Ok(())
}

fn control_options(run: &Run, section: &str) -> Result<ControlOptions, CliError> {
    let d = ControlOptions::default();
    let delta_park_rel = if section == "steer" {
        run.config.get_or(section, "delta_park_rel", d.delta_park_rel)?
    } else {
        d.delta_park_rel
    };
    Ok(ControlOptions {
        control_period: run.config.get(section, "control_period_s")?,
        gain: run.config.get_or(section, "gain", d.gain)?,
        delta_park_rel,
        ..d
    })
}

fn replay(plan: &SteeringPlan, opts: &SimOptions) -> Result<st_meta::Trace, CliError> {
    let cfg = CascadeConfig::new(plan.stages.clone(), plan.initial_outputs.clone())?;
    Ok(simulate(&cfg, &plan.waveform, plan.end_time(), opts)?)
}

pub fn steer_cmd(run: &mut Run) -> Result<(), CliError> {
    let ctrl = control_options(run, "steer")?;
    let mode = run.config.get_or("steer", "mode", "entry".to_string())?;
    let mut plan = match mode.as_str() {
        "entry" => {
            let stages = run.stages_exact(2, StageParams::reference());
            // the next stage's lower threshold unless told otherwise
            let target = run.config.get_or("steer", "target_v", stages[1].thresholds().0)?;
            plan_metastable_entry(&stages[0], target, &ctrl)?
        }
        "cascade" => {
            let stages = run.stages_exact(2, StageParams::reference());
            let target = run.config.get_or("steer", "target_v", -(1.0 - 1e-3) * stages[1].sat)?;
            plan_cascade_metastable(&stages[0], &stages[1], target, &ctrl)?
        }
        "glitch" => {
            let stages = run.stages_exact(2, StageParams::reference());
            plan_glitch_release(&stages[0], &stages[1], &ctrl)?.plan
        }
        other => {
            return Err(ConfigError::BadValue {
                section: "steer".into(),
                key: "mode".into(),
                value: other.into(),
                reason: "expected entry, cascade or glitch".into(),
            }
            .into())
        }
    };
    let direction = match run.config.get_or("steer", "release", "none".to_string())?.as_str() {
        "none" => None,
        "up" => Some(ReleaseDirection::Up),
        "down" => Some(ReleaseDirection::Down),
        other => {
            return Err(ConfigError::BadValue {
                section: "steer".into(),
                key: "release".into(),
                value: other.into(),
                reason: "expected none, up or down".into(),
            }
            .into())
        }
    };
    if mode == "glitch" && direction.is_some() {
        return Err(ConfigError::Invalid("[steer] release is not used in glitch mode, which ends in its own release".into()).into());
    }
    if let Some(dir) = direction {
        let duration = run.config.get_or("steer", "release_s", 20.0 * slowest(&plan.stages))?;
        plan = release(&plan, dir, duration);
    }
    let opts = SimOptions {
        samples: 20_000,
        ..SimOptions::default()
    };
    let tr = replay(&plan, &opts)?;
    run.write("steer", |f| plan.waveform.write_csv(f))?;
    run.write("steer_trace", |f| tr.write_csv(f))?;

    run.line(describe(&plan.stages));
    run.line(format!("mode {mode}, control period {:e} s, gain {}", plan.control_period, plan.gain));
    for ph in &plan.phases {
        run.line(format!("{:?}: {:.6e} s .. {:.6e} s", ph.phase, ph.start, ph.end));
    }
    let parked: Vec<String> = plan.parked_outputs.iter().map(|v| format!("{v:.9}")).collect();
    run.line(format!(
        "parked input {:.9} V, outputs {}",
        plan.waveform.sample(plan.phases.last().map_or(0.0, |p| p.end)),
        parked.join(", ")
    ));
    if let Some(start) = plan.phases.iter().find(|ph| matches!(ph.phase, Phase::Release(_))).map(|ph| ph.start) {
        let last = plan.stages.len() - 1;
        let p = plan.stages[last];
        let mut windows = Windows::for_stage(&p, nominal_delay(&plan.stages, &opts)?);
        windows.reference_time = start;
        let k = tr.times.partition_point(|&t| t < start);
        let label = classify(&tr.times[k..], &tr.outputs[last][k..], &Bands::for_stage(&p), &windows);
        run.line(format!(
            "output behaviour after release at {start:.6e} s: {} ({})",
            label.event.name(),
            label.final_logic
        ));
    }
    Ok(())
}

pub fn invert_cmd(run: &mut Run, target_file: Option<&Path>) -> Result<(), CliError> {
    let p = run.stages_exact(1, StageParams::reference())[0];
    let ctrl = control_options(run, "invert")?;
    let (target, t_end): (Box<dyn Target>, f64) = match target_file {
        Some(path) => {
            let w = Waveform::load(path).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
            let end = w.end_time();
            (Box::new(w), end)
        }
        None => {
            let mut s = Sine::new(
                run.config.get_or("invert", "amplitude_v", 0.3 * p.sat)?,
                run.config.get_or("invert", "frequency_hz", 20e6)?,
            );
            s.offset = run.config.get_or("invert", "offset_v", 0.0)?;
            let end = run.config.get_or("invert", "t_end_s", 2.0 / s.frequency)?;
            (Box::new(s), end)
        }
    };
    let w = invert_region2(&p, target.as_ref(), t_end, &ctrl)?;
    let cfg = CascadeConfig::new(vec![p], vec![target.value(0.0)])?;
    let tr = simulate(&cfg, &w, t_end, &SimOptions::default())?;
    run.write("invert", |f| w.write_csv(f))?;
    run.write("invert_trace", |f| tr.write_csv(f))?;

    let n = 4000;
    let rms = ((0..=n)
        .map(|i| {
            let t = t_end * i as f64 / n as f64;
            (tr.value_at(0, t) - target.value(t)).powi(2)
        })
        .sum::<f64>()
        / (n + 1) as f64)
        .sqrt();
    run.line(describe(&[p]));
    run.line(format!("{} breakpoints over {t_end:e} s, rms tracking error {rms:.3e} V", w.points().len()));
    Ok(())
}

pub fn stable3d_cmd(run: &mut Run) -> Result<(), CliError> {
    let stages = run.stages_exact(2, StageParams::reference());
    let m = stages[0].sat;
    let lo = run.config.get_or("stable3d", "v_min_v", -1.2 * m)?;
    let hi = run.config.get_or("stable3d", "v_max_v", 1.2 * m)?;
    let n: usize = run.config.get_or("stable3d", "points", 2401)?;
    if !(hi > lo && n >= 2) {
        return Err(ConfigError::Invalid("stable3d: need v_max_v > v_min_v and points >= 2".into()).into());
    }
    let grid: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let map = stable_points_3d(&stages[0], &stages[1], &grid)?;
    run.write("stable3d", |f| map.write_csv(f))?;
    run.line(describe(&stages));
    let meta = map.points.iter().filter(|p| p.is_double_metastable()).count();
    run.line(format!("{} rest states, {meta} with both stages metastable", map.points.len()));
    if let Some(gap) = map.metastable_clearance() {
        run.line(format!("distance from the metastable segment to the nearest stable state: {gap:.6} V"));
    }
    Ok(())
}
