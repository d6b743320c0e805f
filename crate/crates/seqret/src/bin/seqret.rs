//! Command-line entry point for the staged estimation pipeline.
//!
//! Exit codes: 0 on success, 1 when a pipeline stage fails, 2 on input
//! errors (missing files, malformed config, bad arguments).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use seqret::pipeline::{run_pipeline, PipelineConfig, SynthSection};
use seqret::records::read_csv;
use seqret::synthgen::generate_population;
use seqret::Error;

#[derive(Parser)]
#[command(name = "seqret", about = "Sequential education-choice returns pipeline")]
struct Cli {
    /// Worker threads for the parallel stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Pipeline config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Override the output directory from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the synthetic-input seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage: ingest through curriculum.
    Run(RunArgs),
    /// Run ingest and the stage-1 bachelor-choice model only.
    Stage1(RunArgs),
    /// Run through the per-bachelor stage-2 models.
    Stage2(RunArgs),
    /// Run through career-probability composition.
    Compose(RunArgs),
    /// Run through the reduced-form returns estimates.
    Returns(RunArgs),
    /// Run through the pairwise bootstrap.
    Bootstrap(RunArgs),
    /// Run through the counterfactual policy simulations.
    Simulate(RunArgs),
    /// Run through the curriculum-composition analytics.
    Curriculum(RunArgs),
    /// Generate a synthetic population with known truth.
    Synth {
        /// DGP config JSON (a `synth` section: preset, n, seed, strength).
        #[arg(long)]
        config: PathBuf,
        /// Output CSV in the ingestion schema.
        #[arg(long)]
        out: PathBuf,
        /// Also write the generating parameters as JSON.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Validate an input CSV and report retained rows and drop reasons.
    Validate {
        /// Input CSV in the ingestion schema.
        #[arg(long)]
        input: PathBuf,
    },
}

fn is_input_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Io { .. }
            | Error::Json(_)
            | Error::Csv(_)
            | Error::InvalidConfig(_)
            | Error::InvalidRecord { .. }
            | Error::UnknownField(_)
    )
}

fn load_config(args: &RunArgs) -> Result<PipelineConfig, Error> {
    let mut cfg = PipelineConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        match &mut cfg.synth {
            Some(s) => s.seed = seed,
            None => {
                return Err(Error::InvalidConfig(
                    "--seed requires a 'synth' input section".into(),
                ))
            }
        }
    }
    Ok(cfg)
}

fn staged(args: &RunArgs, through: Option<&str>) -> Result<(), Error> {
    let cfg = load_config(args)?;
    let summary = run_pipeline(&cfg, through)?;
    println!(
        "retained {} of {} rows; stages: {}",
        summary.validation.n_retained,
        summary.validation.n_rows,
        summary.manifest.stages_run.join(", ")
    );
    for name in summary.manifest.files.keys() {
        println!("wrote {}", cfg.out_dir.join(name).display());
    }
    Ok(())
}

fn synth(config: &PathBuf, out: &PathBuf, truth: Option<&PathBuf>) -> Result<(), Error> {
    let text = std::fs::read_to_string(config)
        .map_err(|e| Error::io(config.display().to_string(), e))?;
    let section: SynthSection = serde_json::from_str(&text)?;
    let (records, dgp_truth) = generate_population(&section.build()?)?;
    seqret::records::write_csv(out, &records)?;
    println!("wrote {} ({} rows)", out.display(), records.len());
    if let Some(path) = truth {
        let mut body = serde_json::to_string_pretty(&dgp_truth)?;
        body.push('\n');
        std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn validate(input: &PathBuf) -> Result<(), Error> {
    let (_, report) = read_csv(input)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // best effort; a later global-pool init elsewhere would be a bug
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    let result = match &cli.command {
        Command::Run(a) => staged(a, None),
        Command::Stage1(a) => staged(a, Some("stage1")),
        Command::Stage2(a) => staged(a, Some("stage2")),
        Command::Compose(a) => staged(a, Some("compose")),
        Command::Returns(a) => staged(a, Some("returns")),
        Command::Bootstrap(a) => staged(a, Some("bootstrap")),
        Command::Simulate(a) => staged(a, Some("simulate")),
        Command::Curriculum(a) => staged(a, Some("curriculum")),
        Command::Synth { config, out, truth } => synth(config, out, truth.as_ref()),
        Command::Validate { input } => validate(input),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if is_input_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
