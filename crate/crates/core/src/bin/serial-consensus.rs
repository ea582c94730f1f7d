use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use serial_consensus::cli::presets::{preset, DEFAULT_SEED, PRESET_NAMES};
use serial_consensus::cli::run::{compare, run, RunOptions, EXIT_CONFIG, EXIT_CONVERGED, EXIT_IO, EXIT_NOT_CONVERGED};
use serial_consensus::cli::scenario::{parse_scenario, ControllerKind, Scenario};

/// Simulate compositional and conventional high-order consensus protocols.
#[derive(Debug, Parser)]
#[command(name = "serial-consensus", version)]
struct Args {
    /// Scenario file (TOML).
    #[arg(long, conflicts_with = "preset", required_unless_present_any = ["preset", "list_presets"])]
    scenario: Option<PathBuf>,
    /// Built-in scenario name.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the controller (compositional, conventional, naive-serial).
    #[arg(long, conflicts_with = "compare")]
    controller: Option<ControllerKind>,
    /// Comma-separated controllers to run side by side.
    #[arg(long, value_delimiter = ',')]
    compare: Option<Vec<ControllerKind>>,
    /// Seed for initial conditions, delays, disturbances and preset parameters.
    #[arg(long)]
    seed: Option<u64>,
    /// Integrator step (s).
    #[arg(long)]
    dt: Option<f64>,
    /// Simulation horizon (s).
    #[arg(long = "t-end")]
    t_end: Option<f64>,
    /// Do not print the report.
    #[arg(long)]
    quiet: bool,
    /// Also write a gnuplot script next to the CSV.
    #[arg(long)]
    gnuplot: bool,
    /// Print the built-in scenario names and exit.
    #[arg(long)]
    list_presets: bool,
}

fn load(args: &Args) -> Result<Scenario, (i32, String)> {
    let mut sc = if let Some(path) = &args.scenario {
        let text = fs::read_to_string(path).map_err(|e| (EXIT_IO, format!("{}: {e}", path.display())))?;
        parse_scenario(&text).map_err(|e| (EXIT_CONFIG, e.to_string()))?
    } else {
        let name = args.preset.as_deref().unwrap_or_default();
        preset(name, args.seed.unwrap_or(DEFAULT_SEED)).map_err(|e| (EXIT_CONFIG, e.to_string()))?
    };
    if args.scenario.is_some() {
        if let Some(seed) = args.seed {
            sc.seed = seed;
        }
    }
    if let Some(dt) = args.dt {
        sc.integrator.dt = dt;
    }
    if let Some(t) = args.t_end {
        sc.integrator.t_end = t;
    }
    if let Some(c) = args.controller {
        sc.cascade.controller = c;
    }
    sc.validate().map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    Ok(sc)
}

fn main() -> ExitCode {
    let args = Args::parse();
    if args.list_presets {
        for name in PRESET_NAMES {
            println!("{name}");
        }
        return ExitCode::SUCCESS;
    }
    let sc = match load(&args) {
        Ok(sc) => sc,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(code as u8);
        }
    };
    let opts = RunOptions {
        quiet: args.quiet,
        gnuplot: args.gnuplot,
    };
    let code = match &args.compare {
        Some(list) => match compare(&sc, list, &args.out, opts) {
            Ok(rows) if rows.iter().all(|r| r.report.converged) => EXIT_CONVERGED,
            Ok(_) => EXIT_NOT_CONVERGED,
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        None => run(&sc, &args.out, opts),
    };
    ExitCode::from(code as u8)
}
