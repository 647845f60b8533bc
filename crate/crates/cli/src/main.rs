use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use commands::{CliError, Run};
use config::RunConfig;

/// Experiments on the piecewise-linear Schmitt-Trigger model.
#[derive(Parser, Debug)]
#[command(name = "st-meta", version)]
struct Args {
    /// Run configuration (`[section]` headers, `key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `[output] dir`.
    #[arg(long, global = true, env = "ST_META_OUT")]
    out: Option<PathBuf>,

    /// Name output files without a timestamp so reruns overwrite them.
    #[arg(long, global = true)]
    no_timestamp: bool,

    /// Number of cascaded stages; missing `[stageN]` sections repeat the last one.
    #[arg(long, global = true)]
    stages: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Transient response to a step, a pulse or a waveform file.
    Simulate,
    /// Quasi-static up/down sweep of the input.
    Hysteresis,
    /// Static-input outcome grid of a two-stage cascade.
    Table,
    /// Pulse propagation and the pass/suppress width boundary.
    Pulses,
    /// Delay against overdrive just past the upper threshold.
    Late,
    /// Drive stages into metastability (entry, cascade or glitch scenario).
    Steer,
    /// Input that makes one stage follow a target inside its linear region.
    Invert {
        /// Target output waveform as a `t,v` CSV; defaults to the configured sine.
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// All rest states of a two-stage cascade over a grid of inputs.
    Stable3d,
    /// Run the built-in checks and exit nonzero on any failure.
    Selftest {
        /// Run a single criterion.
        #[arg(long)]
        criterion: Option<u8>,
    },
}

fn execute(args: Args) -> Result<(), CliError> {
    if let Command::Selftest { criterion } = args.command {
        let reports = match criterion {
            Some(id) => vec![st_meta::selftest::run(id)],
            None => st_meta::selftest::run_all(),
        };
        for r in &reports {
            println!("{r}");
        }
        let failed = reports.iter().filter(|r| !r.passed).count();
        if failed > 0 {
            return Err(CliError::Failed(format!("{failed} criteria failed")));
        }
        return Ok(());
    }

    let config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if args.stages == Some(0) {
        return Err(config::ConfigError::Invalid("--stages must be at least 1".into()).into());
    }
    let out_dir = args
        .out
        .clone()
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let mut run = Run {
        config,
        out_dir,
        stamp: (!args.no_timestamp).then(|| chrono::Local::now().format("%Y%m%dT%H%M%S").to_string()),
        stage_count: args.stages,
        files: Vec::new(),
        report: String::new(),
    };
    let (name, result) = match &args.command {
        Command::Simulate => ("simulate", commands::simulate_cmd(&mut run)),
        Command::Hysteresis => ("hysteresis", commands::hysteresis_cmd(&mut run)),
        Command::Table => ("table", commands::table_cmd(&mut run)),
        Command::Pulses => ("pulses", commands::pulses_cmd(&mut run)),
        Command::Late => ("late", commands::late_cmd(&mut run)),
        Command::Steer => ("steer", commands::steer_cmd(&mut run)),
        Command::Invert { target } => ("invert", commands::invert_cmd(&mut run, target.as_deref())),
        Command::Stable3d => ("stable3d", commands::stable3d_cmd(&mut run)),
        Command::Selftest { .. } => unreachable!("handled above"),
    };
    // a failed invariant still leaves its data behind for inspection
    if result.is_ok() || matches!(result, Err(CliError::Failed(_))) && !run.report.is_empty() {
        run.finish(name)?;
    }
    print!("{}", run.report);
    for f in &run.files {
        println!("wrote {}", f.display());
    }
    result
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
