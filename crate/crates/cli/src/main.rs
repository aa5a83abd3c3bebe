use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use mevg_cli::{run, CliError, Overrides, RunConfig, RunSummary, SweepAxis};
use mevg_core::NoiseReuse;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PredictorKind {
    Analytic,
    Bridge,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NoiseReuseArg {
    Predicted,
    Rederived,
}

/// Generate a multi-event sequence of video latents, one clip per prompt.
#[derive(Debug, Parser)]
#[command(name = "mevg", version, allow_negative_numbers = true)]
struct Args {
    /// Run config JSON, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Clip prompt, in order; repeat for each event.
    #[arg(long = "prompt")]
    prompts: Vec<String>,
    /// Multi-event story to split into prompts.
    #[arg(long, conflicts_with = "prompts")]
    story: Option<String>,
    #[arg(long)]
    num_prompts: Option<usize>,
    /// Split the story with the chat-completion service.
    #[arg(long, requires = "story")]
    llm: bool,
    #[arg(long, value_enum)]
    predictor: Option<PredictorKind>,
    /// host:port of a bridge server; implies --predictor bridge.
    #[arg(long)]
    bridge_addr: Option<String>,
    /// Inference steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Frames per clip.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    delta_lfai: Option<f64>,
    #[arg(long)]
    delta_sgs: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// Seeds both the initial latent and the guidance noise.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    noise_reuse: Option<NoiseReuseArg>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Grid axis `name=v1,v2,...` over delta_lfai, delta_sgs, eta or seed;
    /// repeat for a cartesian product.
    #[arg(long = "sweep")]
    sweep: Vec<String>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

fn overrides(args: &Args) -> Result<Overrides, CliError> {
    if matches!(args.predictor, Some(PredictorKind::Bridge)) && args.bridge_addr.is_none() {
        let configured = args.config.is_some();
        if !configured {
            return Err(CliError::Config(
                "--predictor bridge needs --bridge-addr".into(),
            ));
        }
    }
    if matches!(args.predictor, Some(PredictorKind::Analytic)) && args.bridge_addr.is_some() {
        return Err(CliError::Config(
            "--bridge-addr conflicts with --predictor analytic".into(),
        ));
    }
    Ok(Overrides {
        prompts: args.prompts.clone(),
        story: args.story.clone(),
        num_prompts: args.num_prompts,
        use_llm: args.llm,
        bridge_addr: args.bridge_addr.clone(),
        analytic: matches!(args.predictor, Some(PredictorKind::Analytic)),
        steps: args.steps,
        frames: args.frames,
        delta_lfai: args.delta_lfai,
        delta_sgs: args.delta_sgs,
        eta: args.eta,
        seed: args.seed,
        noise_reuse: args.noise_reuse.map(|n| match n {
            NoiseReuseArg::Predicted => NoiseReuse::Predicted,
            NoiseReuseArg::Rederived => NoiseReuse::Rederived,
        }),
        out: args.out.clone(),
        sweep: args
            .sweep
            .iter()
            .map(|s| SweepAxis::parse(s))
            .collect::<Result<_, _>>()?,
    })
}

fn main_inner(args: &Args) -> Result<(), CliError> {
    let ov = overrides(args)?;
    let cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if matches!(args.predictor, Some(PredictorKind::Bridge))
        && args.bridge_addr.is_none()
        && !matches!(cfg.predictor, mevg_cli::PredictorConfig::Bridge { .. })
    {
        return Err(CliError::Config(
            "--predictor bridge needs --bridge-addr".into(),
        ));
    }
    match run(cfg, &ov)? {
        RunSummary::Single { dir, manifest } => {
            println!("wrote {} clips to {}", manifest.clips.len(), dir.display());
        }
        RunSummary::Sweep { dir, points } => {
            println!("wrote {} sweep runs to {}", points.len(), dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let level = match args.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match main_inner(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mevg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
