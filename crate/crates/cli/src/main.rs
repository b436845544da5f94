use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use stochmps_cli::config::ScenarioConfig;
use stochmps_cli::{presets, runner, CliError};

/// Stochastic trajectory simulator for monitored spin chains.
#[derive(Debug, Parser)]
#[command(name = "stochmps", version, about)]
struct Cli {
    /// Scenario file (TOML)
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Bundled scenario name (see --list-presets)
    #[arg(long)]
    preset: Option<String>,

    /// Override the ensemble base seed
    #[arg(long)]
    seed: Option<u64>,

    /// Override the number of trajectories
    #[arg(long)]
    trajectories: Option<usize>,

    /// Override the output directory
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    /// Override the trajectory bond-dimension cap
    #[arg(long)]
    max_bond: Option<usize>,

    /// Start from a state snapshot instead of the ground state
    #[arg(long, value_name = "FILE")]
    initial_state: Option<PathBuf>,

    /// List bundled presets and exit
    #[arg(long)]
    list_presets: bool,

    /// Print a bundled preset's TOML and exit
    #[arg(long, value_name = "NAME")]
    dump_preset: Option<String>,
}

fn load_config(cli: &Cli) -> Result<ScenarioConfig, CliError> {
    let mut config = match (&cli.config, &cli.preset) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            ScenarioConfig::from_toml(&text)?
        }
        (None, Some(name)) => presets::load(name)?,
        (None, None) => {
            return Err(CliError::config("--config", "either --config or --preset is required"))
        }
        (Some(_), Some(_)) => unreachable!("clap enforces the conflict"),
    };

    if let Some(seed) = cli.seed {
        config.run.base_seed = seed;
    }
    if let Some(n) = cli.trajectories {
        config.run.trajectories = n;
    }
    if let Some(dir) = &cli.out_dir {
        config.output.directory = dir.clone();
    }
    if let Some(d) = cli.max_bond {
        config.run.max_bond = d;
    }
    if let Some(path) = &cli.initial_state {
        config.ground_state.initial_state = Some(path.clone());
    }
    config.validate()?;
    Ok(config)
}

fn real_main() -> Result<(), CliError> {
    let cli = Cli::parse();

    if let Ok(threads) = std::env::var("STOCHMPS_THREADS") {
        let n: usize = threads
            .parse()
            .map_err(|_| CliError::config("STOCHMPS_THREADS", "expected a thread count"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::internal(e.to_string()))?;
    }

    if cli.list_presets {
        for name in presets::names() {
            println!("{name}");
        }
        return Ok(());
    }
    if let Some(name) = &cli.dump_preset {
        let text = presets::toml_source(name).ok_or_else(|| {
            CliError::config("--dump-preset", format!("unknown preset `{name}`"))
        })?;
        print!("{text}");
        return Ok(());
    }

    let config = load_config(&cli)?;
    let manifest = runner::run(&config)?;
    println!(
        "wrote {} trajectories ({} time points each) to {}",
        manifest.trajectories.len(),
        manifest.time_points,
        config.output.directory.display()
    );
    for t in &manifest.trajectories {
        if t.budget_exceeded {
            eprintln!(
                "warning: trajectory {} exceeded the truncation budget (discarded {:.3e})",
                t.stream, t.total_discarded
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error[{}]: {err}", err.category());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
