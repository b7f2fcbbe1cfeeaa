use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use defham_cli::{run_file, scenario, validate_file};

#[derive(Parser)]
#[command(name = "defham", version, about = "Run and check deformed Hamiltonian scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts and report.json.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = "defham-out")]
        out_dir: PathBuf,
        /// Worker threads (defaults to the number of cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check a scenario against the schema without running it.
    Validate { scenario: PathBuf },
    /// Print the JSON schema of scenario files.
    Schema,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenario,
            out_dir,
            threads,
        } => {
            if let Some(t) = threads {
                if t == 0 {
                    eprintln!("error: --threads must be at least 1");
                    return ExitCode::from(2);
                }
                rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build_global()
                    .expect("thread pool is configured once");
            }
            let start = Instant::now();
            match run_file(&scenario, &out_dir) {
                Ok(report) => {
                    for c in &report.checks {
                        let tag = if c.pass { "PASS" } else { "FAIL" };
                        let rel = serde_json::to_value(c.relation).expect("relation serializes");
                        println!("{tag} {}: {:e} {} {:e}", c.name, c.measured, rel.as_str().unwrap_or("?"), c.threshold);
                    }
                    if let Some(e) = &report.error {
                        println!("ERROR {e}");
                    }
                    println!("{} in {:.3} s", if report.pass { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
                    ExitCode::from(if report.pass { 0 } else { 1 })
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
        Command::Validate { scenario } => match validate_file(&scenario) {
            Ok(s) => {
                println!("valid {} scenario", s.kind());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
        Command::Schema => {
            println!("{}", serde_json::to_string_pretty(&scenario::schema()).expect("schema serializes"));
            ExitCode::SUCCESS
        }
    }
}
