use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptsafe::export;
use adaptsafe::sim::{self, ScenarioConfig, ScenarioMode};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adaptsafe", version, about = "Adaptive safety-filter simulation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its logs.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// aclf_only | robust_fixed | zonotope_adaptive | gaussian_adaptive
        #[arg(long)]
        mode: Option<ScenarioMode>,
        #[arg(long)]
        no_noise: bool,
    },
    /// Run several scenarios and tabulate their metrics.
    Compare {
        /// Comma-separated config files.
        #[arg(long, value_delimiter = ',', required = true)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Matching and barrier-criterion diagnostics on sampled states.
    Check {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Print the case-study config as JSON.
    DefaultConfig {
        #[arg(long, default_value = "zonotope_adaptive")]
        mode: ScenarioMode,
    },
}

fn load(path: Option<&Path>) -> adaptsafe::Result<ScenarioConfig> {
    match path {
        Some(p) => ScenarioConfig::load(p),
        None => Ok(ScenarioConfig::case_study(ScenarioMode::ZonotopeAdaptive)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(cmd: Command) -> adaptsafe::Result<ExitCode> {
    match cmd {
        Command::Run {
            config,
            out,
            seed,
            mode,
            no_noise,
        } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if no_noise {
                cfg.noise_on = false;
            }
            let log = sim::run(&cfg)?;
            let files = export::write_run(&log, &out)?;
            println!("{}", serde_json::to_string_pretty(&log.metrics)?);
            for f in files {
                eprintln!("wrote {}", f.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare { configs, out } => {
            let cfgs = configs
                .iter()
                .map(|p| ScenarioConfig::load(p))
                .collect::<adaptsafe::Result<Vec<_>>>()?;
            let (cmp, logs) = sim::compare(&cfgs)?;
            for (row, log) in cmp.rows.iter().zip(&logs) {
                export::write_run(log, &out.join(&row.label))?;
            }
            export::write_comparison(&cmp, &out)?;
            print!("{}", cmp.table());
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { config, samples } => {
            let cfg = load(config.as_deref())?;
            let report = sim::structural_check(&cfg, samples)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::DefaultConfig { mode } => {
            println!("{}", serde_json::to_string_pretty(&ScenarioConfig::case_study(mode))?);
            Ok(ExitCode::SUCCESS)
        }
    }
}
