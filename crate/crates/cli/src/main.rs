use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use crowngen_cli::{stages, CliError, Result, RunConfig, StageSummary};
use crowngen_core::context::Arm;

#[derive(Parser)]
#[command(name = "crowngen", version, about = "Dental crown shell generation pipeline")]
struct Cli {
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    arm: Option<ArmArg>,
    /// Case-id glob for per-case stages
    #[arg(long, global = true)]
    cases: Option<String>,
    /// Run output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset root
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArmArg {
    WithMargin,
    Baseline,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark into the dataset root
    Synth {
        #[arg(long)]
        n_cases: Option<usize>,
    },
    /// Sample network inputs and targets for one arm
    Preprocess,
    /// Train on the train split
    Train,
    /// Predict coarse and fine clouds
    Predict,
    /// Ball-pivoting reconstruction of predictions
    Reconstruct,
    /// Extract margin lines from reconstructed shells
    ExtractMargin,
    /// Per-case chamfer and margin metrics
    Evaluate,
    /// Two-arm comparison table
    Report,
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(a) = cli.arm {
        cfg.arm = match a {
            ArmArg::WithMargin => Arm::WithMargin,
            ArmArg::Baseline => Arm::Baseline,
        };
    }
    if let Some(c) = &cli.cases {
        cfg.cases = Some(c.clone());
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(d) = &cli.data {
        cfg.data_root = d.clone();
    }
    if let Command::Synth { n_cases: Some(n) } = cli.command {
        cfg.n_cases = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn summarize(stage: &str, s: &StageSummary) {
    eprintln!(
        "{stage}: {} processed, {} skipped, {} failed",
        s.processed.len(),
        s.skipped.len(),
        s.failed.len()
    );
}

fn per_case(stage: &str, r: Result<StageSummary>) -> Result<()> {
    let s = r?;
    summarize(stage, &s);
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve(cli)?;
    match cli.command {
        Command::Synth { .. } => {
            let m = stages::synth_stage(&cfg)?;
            eprintln!("synth: {} cases in {}", m.cases.len(), cfg.data_root.display());
            Ok(())
        }
        Command::Preprocess => per_case("preprocess", stages::preprocess_stage(&cfg)),
        Command::Train => {
            let log = stages::train_stage(&cfg)?;
            eprintln!("train: {} epochs", log.epochs.len());
            Ok(())
        }
        Command::Predict => per_case("predict", stages::predict_stage(&cfg)),
        Command::Reconstruct => per_case("reconstruct", stages::reconstruct_stage(&cfg)),
        Command::ExtractMargin => per_case("extract-margin", stages::extract_margin_stage(&cfg)),
        Command::Evaluate => per_case("evaluate", stages::evaluate_stage(&cfg)),
        Command::Report => {
            let report = crowngen_cli::build_report(&cfg.out_dir)?;
            for arm in &report.missing {
                eprintln!("warning: arm {} has no evaluated cases; table is partial", arm.name());
            }
            report.write(&cfg.out_dir)?;
            print!("{}", report.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &CliError) -> u8 {
    e.exit_code() as u8
}
