use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mtcp::runner::{load_config, run};

#[derive(Parser)]
#[command(name = "mtcp", version, about = "Two-type contact process experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config (or a previous run's
    /// manifest.json).
    Run {
        config: PathBuf,
        /// Override a config key, e.g. `--set replicas=1000` or
        /// `--set params.t_eval=20`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, overrides } => {
            let result = load_config(&config, &overrides).and_then(|c| run(&c));
            match result {
                Ok(manifest) => {
                    for v in &manifest.verdicts {
                        println!("{} {}: {}", if v.passed { "PASS" } else { "FLAG" }, v.name, v.detail);
                    }
                    println!("outputs written to {}", manifest.config.output_dir.display());
                    if manifest.passed {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(3)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
    }
}
