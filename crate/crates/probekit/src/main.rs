use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use probekit::model::{HeadKind, Strategy};
use probekit::pipeline::{self, TrainArgs};

#[derive(Parser)]
#[command(name = "probekit", version, about = "Probe heads over frozen-encoder embedding banks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted-signal synthetic embedding bank
    Synth {
        /// JSON synthesis spec
        #[arg(long)]
        spec: PathBuf,
        /// Output bank directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a probe on a bank, producing a run directory
    Train {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long, value_enum)]
        strategy: Strategy,
        #[arg(long, value_enum)]
        head: HeadKind,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        warmup_epochs: Option<usize>,
        /// Peak learning rate
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        weight_decay: Option<f64>,
        /// Dropout rate for the attention head
        #[arg(long)]
        dropout: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained run on a bank, rewriting the run's metrics.json
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        bank: PathBuf,
    },
    /// Write layer_weights.csv for an all-strategy run
    ExportWeights {
        #[arg(long)]
        run: PathBuf,
    },
    /// Run the finite-difference gradient suite over all ops and probes
    Gradcheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { spec, out } => pipeline::cmd_synth(&spec, &out),
        Command::Train {
            bank,
            strategy,
            head,
            epochs,
            warmup_epochs,
            lr,
            batch_size,
            weight_decay,
            dropout,
            seed,
            out,
        } => pipeline::cmd_train(&TrainArgs {
            bank,
            strategy,
            head,
            epochs,
            warmup_epochs,
            lr,
            batch_size,
            weight_decay,
            dropout,
            seed,
            out,
        }),
        Command::Eval { run, bank } => pipeline::cmd_eval(&run, &bank).map(|_| ()),
        Command::ExportWeights { run } => pipeline::cmd_export_weights(&run),
        Command::Gradcheck => {
            let mut stdout = std::io::stdout();
            match pipeline::cmd_gradcheck(&mut stdout) {
                Ok(true) => return ExitCode::SUCCESS,
                Ok(false) => return ExitCode::from(1),
                Err(e) => Err(e),
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
