use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use volterra_core::expcli::{self, ExperimentConfig, EXIT_ACCEPTANCE, EXIT_CONFIG, EXIT_PASS};

/// Volterra path-regularity experiments.
#[derive(Parser)]
#[command(name = "volterra-exp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write CSVs plus manifest.json.
    Run {
        config: PathBuf,
        /// Output directory (overrides `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replicas: Option<usize>,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, u8> {
    ExperimentConfig::load(path).map_err(|msg| {
        eprintln!("error: {msg}");
        EXIT_CONFIG as u8
    })
}

fn report_findings(path: &PathBuf, cfg: &ExperimentConfig) -> bool {
    let findings = expcli::validate(cfg);
    for f in &findings {
        eprintln!("{}: error: {f}", path.display());
    }
    findings.is_empty()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Validate { config } => match load(&config) {
            Err(c) => c,
            Ok(cfg) if report_findings(&config, &cfg) => {
                println!("{}: ok", config.display());
                EXIT_PASS as u8
            }
            Ok(_) => EXIT_CONFIG as u8,
        },
        Command::Run {
            config,
            out,
            seed,
            replicas,
        } => match load(&config) {
            Err(c) => c,
            Ok(mut cfg) => {
                if let Some(s) = seed {
                    cfg.seed = s;
                }
                if let Some(r) = replicas {
                    cfg.replicas = r;
                }
                if let Some(o) = out {
                    cfg.out_dir = Some(o);
                }
                if !report_findings(&config, &cfg) {
                    EXIT_CONFIG as u8
                } else {
                    let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
                    match expcli::run(&cfg, &dir) {
                        Err(e) => {
                            eprintln!("{}: error: {e}", config.display());
                            expcli::exit_code(&e) as u8
                        }
                        Ok(outcome) => {
                            for c in &outcome.checks {
                                println!(
                                    "{} {} = {:e} {} {:e}",
                                    if c.passed { "PASS" } else { "FAIL" },
                                    c.name,
                                    c.value,
                                    c.relation,
                                    c.threshold
                                );
                            }
                            println!("manifest: {}", dir.join("manifest.json").display());
                            if outcome.passed() {
                                EXIT_PASS as u8
                            } else {
                                EXIT_ACCEPTANCE as u8
                            }
                        }
                    }
                }
            }
        },
    };
    ExitCode::from(code)
}
