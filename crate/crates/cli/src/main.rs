use std::path::PathBuf;
use std::process::ExitCode;

use batch_trajopt_cli::{run, RunOptions, TableFormat, EXIT_CONFIG};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "batch-trajopt", version, about = "Batched trajectory-optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON configuration file.
    Run {
        config: PathBuf,
        /// Worker threads for batched solves.
        #[arg(long)]
        workers: Option<usize>,
        /// Base random seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Table format.
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    let Command::Run {
        config,
        workers,
        seed,
        out,
        format,
    } = cli.command;
    let opts = RunOptions {
        workers,
        seed,
        out,
        format: match format {
            Format::Csv => TableFormat::Csv,
            Format::Json => TableFormat::Json,
        },
    };
    let outcome = run(&config, &opts);
    if let Some(msg) = &outcome.message {
        eprintln!("error: {msg}");
    }
    if let (Some(report), Some(dir)) = (&outcome.report, &outcome.out_dir) {
        for w in &report.warnings {
            eprintln!("warning: {w}");
        }
        for e in &report.errors {
            eprintln!("solver failure: {e}");
        }
        println!("{}: wrote {} files to {}", report.experiment, report.files.len(), dir.display());
    }
    ExitCode::from(outcome.exit_code as u8)
}
