use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qtransient::experiment::{
    diff_report, load_results, parse_config, run_experiment, write_results, ConfigOverrides, DIFF_FILE,
};
use qtransient::{zoo, Error, Result};

/// Transient mean and covariance of time-varying Markovian queueing networks.
#[derive(Parser)]
#[command(name = "qtransient", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run methods on a preset or model file and write CSV results.
    Run(RunArgs),
    /// Compare every method in a result directory against simulation.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        /// Method used as the reference.
        #[arg(long, default_value = "simulate")]
        reference: String,
    },
    /// Print a built-in model as JSON in the model file format.
    Export {
        #[arg(long, conflicts_with = "study")]
        preset: Option<usize>,
        /// `priority` or `peer`.
        #[arg(long)]
        study: Option<String>,
        #[arg(long, default_value_t = 20.0)]
        horizon: f64,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON file with any of the flag values; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Retrial experiment preset, 1..=10.
    #[arg(long, conflicts_with = "model")]
    preset: Option<usize>,
    /// Model file in the JSON model format.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Comma-separated subset of fluid, adjusted, measure-zero, simulate, exact.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    /// Sample grid as t0:t1:step.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quad_order: Option<usize>,
    /// Truncation caps for the exact method, comma-separated.
    #[arg(long)]
    caps: Option<String>,
    /// Simulation threads (default from QTRANSIENT_WORKERS, else all cores).
    #[arg(long)]
    workers: Option<usize>,
}

fn run(args: RunArgs) -> Result<i32> {
    let flags = ConfigOverrides {
        preset: args.preset,
        model: args.model,
        methods: args.methods,
        reps: args.reps,
        seed: args.seed,
        dt: args.dt,
        grid: args.grid,
        out: args.out,
        quad_order: args.quad_order,
        caps: args.caps,
        workers: args.workers,
    };
    let cfg = parse_config(args.config.as_deref(), flags)?;
    let results = run_experiment(&cfg)?;
    write_results(&results, &cfg.out)?;
    for (m, w) in &results.warnings {
        eprintln!("warning [{m}]: {w}");
    }
    for f in &results.failures {
        eprintln!("error [{}]: {}", f.method, f.message);
    }
    println!("wrote {}", cfg.out.display());
    Ok(results.exit_code())
}

fn report(input: PathBuf, reference: &str) -> Result<i32> {
    let records = load_results(&input)?;
    let report = diff_report(&records, reference)?;
    let path = input.join(DIFF_FILE);
    report.write_csv(std::fs::File::create(&path)?)?;
    println!("wrote {}", path.display());
    Ok(0)
}

fn export(preset: Option<usize>, study: Option<&str>, horizon: f64, out: Option<PathBuf>) -> Result<i32> {
    let model = match (preset, study) {
        (Some(id), _) => zoo::retrial_preset_model(id)?,
        (None, Some("priority")) => zoo::build_priority(&zoo::priority_study(horizon)?)?,
        (None, Some("peer")) => zoo::build_peer(&zoo::peer_study(horizon))?,
        (None, Some(other)) => return Err(Error::Usage(format!("study: unknown study `{other}`"))),
        (None, None) => return Err(Error::Usage("give --preset or --study".into())),
    };
    let json = model.to_json()?;
    match out {
        Some(path) => std::fs::write(path, json + "\n")?,
        None => println!("{json}"),
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::Report { input, reference } => report(input, &reference),
        Command::Export {
            preset,
            study,
            horizon,
            out,
        } => export(preset, study.as_deref(), horizon, out),
    };
    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("qtransient: {e}");
            ExitCode::from(Error::exit_code(&e) as u8)
        }
    }
}
