use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use uwb_trust::harness::scenario::{BUNDLED, DEFAULT_CALIBRATION_SAMPLES};
use uwb_trust::harness::{
    load_scenario, read_trace, run, summarize, write_outputs, HarnessError, ModeSelection,
};
use uwb_trust::ranging::ProfileRange;
use uwb_trust::threats::BatteryConfig;
use uwb_trust::trust::{SecuritySchemes, TrustConfig};

#[derive(Parser)]
#[command(
    name = "uwb-trust",
    version,
    about = "Trustworthiness assessment for UWB localization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario file (or a bundled scenario by name).
    Run {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Recompute the summary of a trace CSV.
    Summarize {
        trace: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Show configuration defaults.
    Config {
        #[arg(long)]
        dump_defaults: bool,
    },
    /// Bundled scenarios.
    Scenarios {
        #[command(subcommand)]
        action: ScenarioAction,
    },
}

#[derive(Subcommand)]
enum ScenarioAction {
    List,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Basic,
    Sequential,
    Both,
}

impl From<ModeArg> for ModeSelection {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Basic => ModeSelection::Basic,
            ModeArg::Sequential => ModeSelection::Sequential,
            ModeArg::Both => ModeSelection::Both,
        }
    }
}

#[derive(Serialize)]
struct Defaults {
    trust: TrustConfig,
    schemes: SecuritySchemes,
    radio: uwb_trust::harness::scenario::RadioSettings,
    node: uwb_trust::harness::scenario::NodeSettings,
    detector: DetectorDefaults,
    battery: BatteryConfig,
}

#[derive(Serialize)]
struct DetectorDefaults {
    calibration_samples: usize,
    environments: ProfileRange,
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run {
            scenario,
            mode,
            seed,
            out,
        } => {
            let mut config = load_scenario(&scenario)?;
            if let Some(mode) = mode {
                config.mode = mode.into();
            }
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let outputs = run(&config)?;
            write_outputs(&config, &outputs, &out)?;
            for o in &outputs {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&o.summary).expect("summary serializes")
                );
            }
        }
        Command::Summarize { trace, threshold } => {
            let file = std::fs::File::open(&trace).map_err(|source| HarnessError::Io {
                path: trace.display().to_string(),
                source,
            })?;
            let rows = read_trace(std::io::BufReader::new(file))?;
            let summary = summarize(&rows, threshold)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serializes")
            );
        }
        Command::Config { dump_defaults } => {
            if !dump_defaults {
                eprintln!("nothing to do; pass --dump-defaults");
                return Ok(());
            }
            let defaults = Defaults {
                trust: TrustConfig::default(),
                schemes: SecuritySchemes::default(),
                radio: Default::default(),
                node: Default::default(),
                detector: DetectorDefaults {
                    calibration_samples: DEFAULT_CALIBRATION_SAMPLES,
                    environments: ProfileRange::default(),
                },
                battery: BatteryConfig::default(),
            };
            print!(
                "{}",
                toml::to_string(&defaults).expect("defaults serialize")
            );
        }
        Command::Scenarios {
            action: ScenarioAction::List,
        } => {
            for (name, text) in BUNDLED {
                let description = uwb_trust::harness::parse_scenario(text, name, None)?
                    .description
                    .split_whitespace()
                    .collect::<Vec<_>>()
                    .join(" ");
                println!("{name}\t{description}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
