//! Command-line interface for the surface-defect saliency network: train,
//! infer, eval, synth and inspect subcommands over one flat configuration
//! format. Exit codes: 0 success, 2 config errors, 3 data errors, 4
//! checkpoint errors.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use jaffnet::config::RunConfig;
use jaffnet::error::{CliError, Result};
use jaffnet::{dataset, evaluate, infer, inspect, trainer};
use jaffnet_core::data::{BackgroundKind, DefectKind};

#[derive(Parser)]
#[command(name = "jaffnet", version, about = "Surface-defect saliency detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TrainArgs {
    /// Configuration file (flat key=value lines); defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory holding images/ and masks/
    #[arg(long)]
    data: PathBuf,
    /// Output directory for loss.csv and checkpoints
    #[arg(long)]
    out: PathBuf,
    /// Override the configured seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured step budget (also clears any epoch budget)
    #[arg(long)]
    steps: Option<u64>,
}

#[derive(Args)]
struct InferArgs {
    /// Checkpoint to load
    #[arg(long)]
    ckpt: PathBuf,
    /// Optional config whose architecture must match the checkpoint
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for saliency maps
    #[arg(long)]
    out: PathBuf,
    /// Input PNG images
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of predicted saliency maps (*.png)
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth masks with matching stems
    #[arg(long)]
    gt: PathBuf,
    /// Output directory for the report CSVs
    #[arg(long)]
    out: PathBuf,
    /// Also render a precision-recall curve PNG
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    /// Number of image/mask pairs
    #[arg(long)]
    count: usize,
    /// Square image side length
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Base seed; sample i uses seed + i
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// scratch | patch | inclusion | none | mixed
    #[arg(long, default_value = "mixed")]
    kind: String,
    /// flat | grating | blobs | mixed
    #[arg(long, default_value = "mixed")]
    background: String,
    /// Defect contrast in (0, 1]; drawn per sample when omitted
    #[arg(long)]
    contrast: Option<f64>,
    /// Salt-and-pepper fraction baked into the images
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

#[derive(Args)]
struct InspectArgs {
    /// Configuration file; defaults describe the full-width network
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on an image/mask dataset
    Train(TrainArgs),
    /// Produce saliency maps for input images
    Infer(InferArgs),
    /// Score predicted maps against ground truth
    Eval(EvalArgs),
    /// Generate a synthetic defect dataset
    Synth(SynthArgs),
    /// Print parameter count and per-stage shapes
    Inspect(InspectArgs),
}

fn parse_mixed<T: FromStr>(label: &str, value: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if value == "mixed" {
        return Ok(None);
    }
    value
        .parse::<T>()
        .map(Some)
        .map_err(|e| CliError::Config(format!("invalid {label} {value:?}: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let mut run_config = RunConfig::load(args.config.as_deref())?;
            if let Some(seed) = args.seed {
                run_config.seed = seed;
            }
            if let Some(steps) = args.steps {
                run_config.steps = steps;
                run_config.epochs = None;
            }
            let outcome = trainer::cmd_train(&run_config, &args.data, &args.out)?;
            println!(
                "trained {} steps: total loss {:.6} -> {:.6}",
                outcome.steps, outcome.first_total, outcome.last_total
            );
            println!("checkpoint: {}", outcome.final_checkpoint.display());
            println!("loss log: {}", outcome.loss_csv.display());
        }
        Command::Infer(args) => {
            let run_config = match &args.config {
                None => None,
                Some(path) => Some(RunConfig::load(Some(path))?),
            };
            let written = infer::cmd_infer(&args.ckpt, run_config.as_ref(), &args.inputs, &args.out)?;
            for path in written {
                println!("{}", path.display());
            }
        }
        Command::Eval(args) => {
            let artifacts = evaluate::cmd_eval(&args.pred, &args.gt, &args.out, args.plot)?;
            let report = &artifacts.report;
            println!("images: {}", report.image_count);
            println!("mae: {:.6}", report.mae);
            match report.f_w {
                Some(f_w) => println!("f_w: {f_w:.6}"),
                None => println!("f_w: undefined (no non-degenerate ground truth)"),
            }
            println!("s_measure: {:.6}", report.s_m);
            println!("e_measure: {:.6}", report.e_m);
            if let Some(max_f) = report.max_f {
                println!("max_f: {max_f:.6}");
            }
            println!("reports: {}", artifacts.aggregate_csv.display());
        }
        Command::Synth(args) => {
            let synth = dataset::SynthArgs {
                count: args.count,
                image_size: args.size,
                kind: parse_mixed::<DefectKind>("defect kind", &args.kind)?,
                background: parse_mixed::<BackgroundKind>("background", &args.background)?,
                contrast: args.contrast,
                noise_rho: args.noise,
                seed: args.seed,
            };
            let specs = dataset::write_synth(&args.out, &synth)?;
            println!("wrote {} samples to {}", specs.len(), args.out.display());
        }
        Command::Inspect(args) => {
            let run_config = RunConfig::load(args.config.as_deref())?;
            inspect::cmd_inspect(&run_config, &mut std::io::stdout())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
