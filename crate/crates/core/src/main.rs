use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use superdiff::acceptance::{run_suite, Scale};
use superdiff::campaign::{run_file, template, ExitStatus};

#[derive(Parser)]
#[command(name = "superdiff", version, about = "Branching diffusion and superprocess experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a campaign config; outputs go under $SUPERDIFF_OUTPUT_ROOT (default ./runs).
    Run { config: PathBuf },
    /// Run the acceptance battery and print one line per criterion.
    Verify {
        suite: Suite,
        /// Comma-separated criterion ids (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
    /// Print a template config for an experiment kind.
    Describe { kind: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Fast,
    Full,
}

fn code(s: ExitStatus) -> ExitCode {
    ExitCode::from(s as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => match run_file(&config) {
            Ok((dir, status, manifest)) => {
                println!("{}", dir.display());
                println!("manifest-digest {}", manifest.config_digest);
                if status == ExitStatus::Inconclusive {
                    eprintln!("run finished but the outcome is flagged inconclusive; see summary.json");
                }
                code(status)
            }
            Err(e) => {
                eprintln!("error: {e}");
                code(ExitStatus::for_error(&e))
            }
        },
        Command::Verify { suite, only } => {
            let scale = match suite {
                Suite::Fast => Scale::Fast,
                Suite::Full => Scale::Full,
            };
            let ids: Vec<u8> = if only.is_empty() { (1..=15).collect() } else { only };
            let mut failed = 0;
            for id in ids {
                let r = &run_suite(scale, &[id])[0];
                println!("{}", r.line());
                failed += !r.pass as usize;
            }
            if failed == 0 {
                ExitCode::SUCCESS
            } else {
                eprintln!("{failed} criteria failed");
                ExitCode::from(1)
            }
        }
        Command::Describe { kind } => match template(&kind) {
            Ok(v) => {
                println!("{}", serde_json::to_string_pretty(&v).expect("json"));
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                code(ExitStatus::Validation)
            }
        },
    }
}
