//! `eki`: run ensemble Kalman inversion experiments from TOML configs.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eki::experiments::{self, ExperimentConfig};
use eki::EkiError;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_IO: u8 = 1;

#[derive(Parser)]
#[command(name = "eki", version, about = "Ensemble Kalman inversion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write diagnostics.csv, config.snapshot and SVG plots.
    Run {
        /// Config file, or `preset:<name>` for a bundled preset.
        #[arg(long)]
        config: String,
        /// Output directory (created if missing); defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the ensemble and algorithm seeds.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the bundled presets.
    ListPresets {
        /// Print the TOML of this preset instead.
        #[arg(long)]
        show: Option<String>,
    },
    /// Parse and check a config without running it.
    Validate {
        #[arg(long)]
        config: String,
    },
}

enum Failure {
    Config(String),
    Numerical(String),
    Io(String),
}

impl Failure {
    fn from_eki(context: &str, e: EkiError) -> Self {
        let msg = format!("{context}: {e}");
        if e.is_config_error() {
            Failure::Config(msg)
        } else if matches!(e.root(), EkiError::Io(_) | EkiError::Csv(_)) {
            Failure::Io(msg)
        } else {
            Failure::Numerical(msg)
        }
    }
}

fn load(config: &str) -> Result<String, Failure> {
    if let Some(name) = config.strip_prefix("preset:") {
        return experiments::preset(name)
            .map(str::to_string)
            .ok_or_else(|| {
                Failure::Config(format!("unknown preset {name:?}; see `eki list-presets`"))
            });
    }
    fs::read_to_string(config)
        .map_err(|e| Failure::Config(format!("{config}: cannot read config: {e}")))
}

fn run(config: &str, out: Option<PathBuf>, seed: Option<u64>) -> Result<(), Failure> {
    let mut text = load(config)?;
    if let Some(seed) = seed {
        text = experiments::with_seed_override(&text, seed)
            .map_err(|e| Failure::from_eki(config, e))?;
    }
    let cfg = ExperimentConfig::from_toml_str(&text).map_err(|e| Failure::from_eki(config, e))?;
    let out = out
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| {
            Failure::Config(format!(
                "{config}: no --out given and no output_dir in the config"
            ))
        })?;
    let rec = experiments::run_experiment_text(&text).map_err(|e| Failure::from_eki(config, e))?;
    let written =
        experiments::emit_outputs(&rec, &out).map_err(|e| Failure::from_eki(config, e))?;
    for path in &written {
        log::info!("wrote {}", path.display());
    }
    println!(
        "{}: stopped at t = {}{} after {} recorded times; outputs in {}",
        cfg.name.as_deref().unwrap_or(config),
        rec.stop_time,
        if rec.cap_hit {
            " (safety cap reached)"
        } else {
            ""
        },
        rec.trajectory.len(),
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EKI_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed } => run(&config, out, seed),
        Command::ListPresets { show: Some(name) } => match experiments::preset(&name) {
            Some(text) => {
                print!("{text}");
                Ok(())
            }
            None => Err(Failure::Config(format!("unknown preset {name:?}"))),
        },
        Command::ListPresets { show: None } => {
            for name in experiments::list_presets() {
                println!("{name}");
            }
            Ok(())
        }
        Command::Validate { config } => load(&config).and_then(|text| {
            ExperimentConfig::from_toml_str(&text)
                .map(|_| println!("{config}: ok"))
                .map_err(|e| Failure::from_eki(&config, e))
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Config(m) => (EXIT_CONFIG, m),
                Failure::Numerical(m) => (EXIT_NUMERICAL, m),
                Failure::Io(m) => (EXIT_IO, m),
            };
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
