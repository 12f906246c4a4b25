use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ngc_cli::commands::{self, EvalOptions};
use ngc_cli::config::RunConfig;
use ngc_cli::CliError;

#[derive(Parser)]
#[command(name = "ngc", version, about = "Noisy graph cleaning: label cleaning and OOD detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic train/test CSVs described by the config.
    Generate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Warm up, run the cleaning epochs and save the model artifacts.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a CSV against stored prototypes and write verdicts.
    Detect {
        model_dir: PathBuf,
        test_csv: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        zeta: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a detection CSV with labelled data and write a JSON report.
    Eval {
        detection_csv: PathBuf,
        truth_csv: PathBuf,
        /// Supplies the class count and the default threshold.
        #[arg(long, required_unless_present = "num_classes")]
        config: Option<PathBuf>,
        #[arg(long)]
        num_classes: Option<usize>,
        /// Overrides `detection.zeta` from the config (default 0.5).
        #[arg(long, allow_negative_numbers = true)]
        zeta: Option<f64>,
        /// Also write the F-measure for every threshold -1.00..=1.00.
        #[arg(long)]
        sweep_zeta: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { config } => {
            let cfg = RunConfig::load(&config)?;
            let s = commands::generate(&cfg)?;
            println!("wrote {} training samples to {}", s.train_len, s.train_path.display());
            if let Some(p) = s.test_path {
                println!("wrote {} test samples to {}", s.test_len, p.display());
            }
        }
        Command::Train { config } => {
            let cfg = RunConfig::load(&config)?;
            let s = commands::train(&cfg)?;
            if let Some(last) = s.epochs.last() {
                let noise = last.selected_noise_rate.map_or(String::new(), |r| format!(", selected noise rate {r:.4}"));
                println!("epoch {}: {} samples selected{noise}", last.epoch, s.selected_count);
            } else {
                println!("warm-up only ({} epochs); no cleaning epochs run", s.warmup_losses.len());
            }
            println!("artifacts in {}", cfg.output_dir.display());
        }
        Command::Detect {
            model_dir,
            test_csv,
            zeta,
            out,
        } => {
            let s = commands::detect(&model_dir, &test_csv, zeta, &out)?;
            println!("{} samples, {} rejected as OOD", s.samples, s.rejected);
        }
        Command::Eval {
            detection_csv,
            truth_csv,
            config,
            num_classes,
            zeta,
            sweep_zeta,
            out,
        } => {
            let cfg = config.as_deref().map(RunConfig::load).transpose()?;
            let num_classes = match (num_classes, &cfg) {
                (Some(k), _) => k,
                (None, Some(c)) => c.num_classes(),
                (None, None) => unreachable!("clap requires one of them"),
            };
            let zeta = zeta.or(cfg.map(|c| c.detection.zeta)).unwrap_or(0.5);
            let opts = EvalOptions {
                num_classes,
                zeta,
                sweep_out: sweep_zeta.as_deref(),
            };
            let r = commands::eval(&detection_csv, &truth_csv, &opts, &out)?;
            println!("accuracy {:.4}, AUROC {:.4}, F-measure {:.4} at zeta {zeta}", r.accuracy, r.auroc, r.f_measure);
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
