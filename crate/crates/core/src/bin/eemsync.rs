use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use eemsync::scenario::{bundled, resolve, run_scenario, validate_config, ScenarioKind, BUNDLED};
use eemsync::Error;

#[derive(Parser)]
#[command(name = "eemsync", version, about = "Clock ensemble simulation and synchronization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more scenario configs (file paths or bundled scenario names).
    Run {
        #[arg(required = true)]
        configs: Vec<String>,
        /// Output directory; each scenario writes into <out>/<name>.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        horizon: Option<usize>,
        /// Number of scenarios run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Check a config and print the resolved settings.
    Validate { config: String },
    /// List scenario kinds and bundled configs.
    ListScenarios,
}

fn load(config: &str) -> Result<String, Error> {
    let path = PathBuf::from(config);
    if path.exists() {
        return Ok(std::fs::read_to_string(path)?);
    }
    bundled(config)
        .map(str::to_string)
        .ok_or_else(|| Error::Config(vec![format!("no such file or bundled scenario: {config}")]))
}

fn code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Json(_) => 2,
        Error::Numerical(_) | Error::Convergence { .. } => 3,
        _ => 1,
    }
}

fn run_one(config: &str, out: &std::path::Path, seed: Option<u64>, horizon: Option<usize>) -> Result<(), Error> {
    let raw = load(config)?;
    let mut res = validate_config(&raw)?;
    if seed.is_some() || horizon.is_some() {
        let mut cfg = res.cfg.clone();
        cfg.seed = seed.unwrap_or(cfg.seed);
        cfg.horizon = horizon.or(cfg.horizon);
        res = resolve(cfg)?;
    }
    let dir = out.join(&res.cfg.name);
    let manifest = run_scenario(&res, &dir)?;
    println!("{}: {} files in {}", manifest.name, manifest.files.len(), dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            configs,
            out,
            seed,
            horizon,
            jobs,
        } => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build();
            let pool = match pool {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            let results: Vec<(String, Result<(), Error>)> = pool.install(|| {
                configs
                    .par_iter()
                    .map(|c| (c.clone(), run_one(c, &out, seed, horizon)))
                    .collect()
            });
            let mut worst = 0u8;
            for (c, r) in results {
                if let Err(e) = r {
                    eprintln!("{c}: {e}");
                    worst = worst.max(code(&e));
                }
            }
            return ExitCode::from(worst);
        }
        Command::Validate { config } => load(&config).and_then(|raw| validate_config(&raw)).map(|r| {
            println!(
                "{}: valid {} scenario, {} clocks, horizon {}, seed {}",
                r.cfg.name,
                r.cfg.kind.name(),
                r.model.n,
                r.cfg.horizon(),
                r.cfg.seed
            );
        }),
        Command::ListScenarios => {
            for k in ScenarioKind::ALL {
                let has = BUNDLED.iter().any(|(n, _)| *n == k.name());
                println!("{:<24} {}{}", k.name(), k.describe(), if has { "" } else { " (no bundled config)" });
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(code(&e))
        }
    }
}
