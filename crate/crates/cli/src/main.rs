use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use dalton_cli::config::HubConfig;
use dalton_cli::report::{self, ReportRow};
use dalton_cli::sim::SimArgs;
use dalton_cli::{parse_span, Failure};
use dalton_core::hhi::CalibrationTable;

#[derive(Parser)]
#[command(name = "dalton", version, about = "Indoor air quality hub, household simulator and HHI reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the hub: bus, pipeline, store and HTTP gateway.
    Serve {
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
    },
    /// Run a scenario and write its emission log.
    Sim {
        scenario: PathBuf,
        /// Simulated time, seconds or a span like `2h`.
        #[arg(long, default_value = "2h", value_parser = parse_span)]
        duration: Duration,
        #[arg(long)]
        seed: Option<u64>,
        /// Step as fast as possible instead of once per wall-clock second.
        #[arg(long)]
        fast: bool,
        /// Write files only; no broker connection.
        #[arg(long)]
        offline: bool,
        /// Emission log path (default `<scenario>.emissions.ndjson`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:1883")]
        broker: String,
    },
    /// Score recorded readings: emission logs, a folder of them, or a store.
    Hhi {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Calibration table (default: built-in table).
        #[arg(long)]
        calib: Option<PathBuf>,
        /// Window stride, seconds or a span.
        #[arg(long, value_parser = parse_span)]
        stride: Option<Duration>,
        /// Output file; `.csv` selects CSV, otherwise NDJSON. Default stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("dalton: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Serve { config } => {
            let cfg = HubConfig::load(&config).map_err(|e| Failure::config(format!("{}: {e}", config.display())))?;
            dalton_cli::serve::run(cfg)
        }
        Command::Sim {
            scenario,
            duration,
            seed,
            fast,
            offline,
            out,
            broker,
        } => {
            let summary = dalton_cli::sim::run(&SimArgs {
                scenario,
                duration,
                seed,
                fast,
                offline,
                out,
                broker,
            })?;
            println!("{summary}");
            Ok(())
        }
        Command::Hhi {
            inputs,
            calib,
            stride,
            out,
        } => {
            let mut cal = match &calib {
                Some(p) => CalibrationTable::load(p).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?,
                None => CalibrationTable::default(),
            };
            if let Some(s) = stride {
                cal.stride_ms = s.as_millis() as i64;
            }
            let mut runs: Vec<(String, Vec<ReportRow>)> = Vec::new();
            for input in &inputs {
                let streams = report::load_input(input)?;
                report::check_coverage(&streams, &cal)?;
                runs.push((input.display().to_string(), report::score(&streams, &cal)?));
            }
            let summaries: Vec<_> = runs.iter().map(|(l, r)| report::summarize(l, r)).collect();
            let table = report::table(&summaries);
            match &out {
                Some(path) => {
                    let csv = path.extension().is_some_and(|x| x == "csv");
                    let mut f = std::io::BufWriter::new(
                        std::fs::File::create(path).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?,
                    );
                    report::write_rows(&mut f, &runs, csv)?;
                    print!("{table}");
                }
                None => {
                    report::write_rows(&mut std::io::stdout().lock(), &runs, false)?;
                    eprint!("{table}");
                }
            }
            let _ = std::io::stdout().flush();
            Ok(())
        }
    }
}
