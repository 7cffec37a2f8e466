use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qgaf_cli::{run_compare, run_encode, run_ingest, run_merge, run_train, CliError, Overrides, PipelineConfig};
use qgaf_core::FieldKind;

#[derive(Parser, Debug)]
#[command(name = "qgaf", version, about = "GAF / quantum GAF image pipeline for return series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Global seed for shot streams, splits and initialization.
    #[arg(long)]
    seed: Option<u64>,
    /// Use exact probabilities instead of sampled shots.
    #[arg(long)]
    exact: bool,
    /// gasf, gadf, qgasf or qgadf.
    #[arg(long)]
    encoder: Option<FieldKind>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<PipelineConfig, CliError> {
        PipelineConfig::load(&self.config)?.apply(&Overrides {
            seed: self.seed,
            exact: self.exact,
            encoder: self.encoder,
            out: self.out.clone(),
        })
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load and clean prices, write daily returns.
    Ingest(Common),
    /// Encode labeled windows as archives.
    Encode(Common),
    /// Cross-validate the CNN on an archive directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/archives/<encoder>`.
        #[arg(long)]
        archives: Option<PathBuf>,
    },
    /// Run the baseline and candidate encoders on identical splits.
    Compare(Common),
    /// Validate a config, or merge comparison reports into one table.
    Report {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, requires = "config")]
        check_config: bool,
        /// `report.json` files to merge.
        #[arg(long, num_args = 1..)]
        merge: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest(c) => {
            let s = run_ingest(&c.load()?)?;
            println!(
                "{} price rows, {} filled, {} leading dropped -> {} returns",
                s.price_rows, s.filled, s.dropped_leading, s.return_rows
            );
        }
        Command::Encode(c) => {
            let cfg = c.load()?;
            let m = run_encode(&cfg)?;
            println!(
                "{} {} archives ({} skipped) in {}",
                m.count,
                m.encoder,
                m.skipped.len(),
                qgaf_cli::pipeline::archives_dir(&cfg, m.encoder).display()
            );
        }
        Command::Train { common, archives } => {
            let s = run_train(&common.load()?, archives.as_deref())?;
            println!(
                "{} archives, {} folds: MAE {:.6} MSE {:.6}",
                s.archives,
                s.folds.len(),
                s.aggregate.mae,
                s.aggregate.mse
            );
        }
        Command::Compare(c) => {
            let report = run_compare(&c.load()?)?;
            print!("{}", report.table_markdown());
        }
        Command::Report {
            config,
            check_config,
            merge,
            out,
        } => {
            if check_config {
                let cfg = PipelineConfig::load(config.as_deref().expect("required by clap"))?;
                println!("{}", cfg.to_pretty_json());
                println!("config_hash {}", cfg.hash());
            } else if !merge.is_empty() {
                let out = out.unwrap_or_else(|| PathBuf::from("."));
                print!("{}", run_merge(&merge, &out)?.table_markdown());
            } else {
                return Err(CliError::usage("report needs --check-config or --merge"));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
