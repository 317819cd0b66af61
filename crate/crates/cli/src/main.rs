//! `rockflow`: generate data, train compression and predictor models, run
//! inference, evaluate and profile, or run the whole comparison.
//!
//! Settings come from built-in defaults, then the `--config` TOML file, then
//! `--set key=value` overrides and command flags in the order given. The output
//! root is `--out`, else `$ROCKFLOW_OUTPUT`, else `output_dir` from the config,
//! else `./runs`.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure.

mod commands;
mod config;
mod manifest;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rockflow_core::compression::CompressionKind;
use rockflow_core::profile::CountingAllocator;

use commands::Context;
use config::PipelineKind;

#[global_allocator]
static ALLOCATOR: CountingAllocator = CountingAllocator;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage `{stage}` failed (run {run_id}): {message}")]
    Stage { stage: String, run_id: String, message: String },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Stage { .. } => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "rockflow", version, about = "Surrogate models for reactive flow in porous media")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set predictor.plan.one_step.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output root directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the reactive-flow solver once per configured seed.
    Generate,
    /// Train an autoencoder (`ae`) or adversarial autoencoder (`aae`).
    TrainCompression {
        #[arg(long)]
        kind: Option<String>,
    },
    /// Train a next-step predictor, then optionally fine-tune it on rollouts.
    TrainPredictor {
        #[arg(long, value_enum)]
        pipeline: Option<PipelineKind>,
        #[arg(long)]
        compression: Option<String>,
        #[arg(long)]
        variant: Option<String>,
        /// Rollout length of the second training stage.
        #[arg(long)]
        rollout: Option<usize>,
    },
    /// Autoregressive predictions for validation (or the named) simulations.
    Infer {
        /// Model name; every trained model when omitted.
        #[arg(long = "model")]
        models: Vec<String>,
        #[arg(long = "sim")]
        sims: Vec<String>,
        /// Stop each rollout once a field's correlation drops below the threshold.
        #[arg(long)]
        handoff: bool,
    },
    /// Metrics, tables and plots for trained models.
    Evaluate {
        #[arg(long = "model")]
        models: Vec<String>,
    },
    /// Parameter count, training memory and time, and inference time per model.
    Profile,
    /// Train and evaluate every model of the comparison.
    ReproduceAll {
        /// Generate the dataset first when it is missing.
        #[arg(long)]
        generate: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::TrainCompression { .. } => "train-compression",
            Command::TrainPredictor { .. } => "train-predictor",
            Command::Infer { .. } => "infer",
            Command::Evaluate { .. } => "evaluate",
            Command::Profile => "profile",
            Command::ReproduceAll { .. } => "reproduce-all",
        }
    }

    /// Command flags expressed as configuration overrides.
    fn overrides(&self) -> Vec<String> {
        let quoted = |key: &str, v: &str| format!("{key}=\"{v}\"");
        let mut out = Vec::new();
        match self {
            Command::TrainCompression { kind: Some(k) } => out.push(quoted("compression.kind", k)),
            Command::TrainPredictor { pipeline, compression, variant, rollout } => {
                if let Some(p) = pipeline {
                    out.push(quoted("predictor.pipeline", p.name()));
                }
                if let Some(c) = compression {
                    out.push(quoted("predictor.compression", c));
                }
                if let Some(v) = variant {
                    out.push(quoted("predictor.plan.variant", &v.replace("++", "pp")));
                }
                if let Some(t) = rollout {
                    out.push(format!("predictor.plan.rollout_horizon={t}"));
                }
            }
            _ => {}
        }
        out
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut overrides = cli.set.clone();
    overrides.extend(cli.command.overrides());
    let (cfg, table) = config::load(cli.config.as_deref(), &overrides)?;
    let root = cfg.output_root(cli.out.as_deref());
    let snapshot = serde_json::to_value(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    log::debug!("raw configuration: {table:?}");
    let mut ctx = Context::new(cfg, root, cli.command.name(), snapshot);
    let result = dispatch(&mut ctx, &cli.command);
    if ctx.manifest.outputs.is_empty() && result.is_err() {
        return result;
    }
    ctx.manifest.append_to(&ctx.root).map_err(|e| CliError::Stage {
        stage: "manifest".into(),
        run_id: ctx.manifest.run_id.clone(),
        message: e.to_string(),
    })?;
    result
}

fn models_or_all(ctx: &Context, models: &[String]) -> Result<Vec<String>, CliError> {
    let models = if models.is_empty() { ctx.trained_models() } else { models.to_vec() };
    if models.is_empty() {
        return Err(CliError::Config(format!("no trained models under {}", ctx.root.display())));
    }
    for m in &models {
        ctx.require_checkpoint(&ctx.predictor_path(m))?;
    }
    Ok(models)
}

fn dispatch(ctx: &mut Context, command: &Command) -> Result<(), CliError> {
    match command {
        Command::Generate => {
            ctx.stage("generate", commands::generate)?;
        }
        Command::TrainCompression { .. } => {
            let data = ctx.load_data()?;
            let kind = ctx.cfg.compression.kind;
            ctx.stage("train-compression", |ctx| commands::train_compression(ctx, &data, kind))?;
        }
        Command::TrainPredictor { .. } => {
            let p = ctx.cfg.predictor.clone();
            if p.pipeline == PipelineKind::Rom {
                let kind: CompressionKind = p.compression.expect("validated with the config");
                ctx.require_checkpoint(&ctx.compression_path(kind))?;
            }
            let data = ctx.load_data()?;
            let names = ctx.stage("train-predictor", |ctx| commands::train_predictor(ctx, &data, p.pipeline, p.compression, &p.plan))?;
            log::info!("trained {}", names.join(", "));
        }
        Command::Infer { models, sims, handoff } => {
            let models = models_or_all(ctx, models)?;
            let data = ctx.load_data()?;
            ctx.stage("infer", |ctx| commands::infer(ctx, &data, &models, sims, *handoff))?;
        }
        Command::Evaluate { models } => {
            let models = models_or_all(ctx, models)?;
            let data = ctx.load_data()?;
            let rows = ctx.stage("evaluate", |ctx| commands::evaluate(ctx, &data, &models))?;
            print!("{}", rockflow_core::report::render_tables(&rows));
        }
        Command::Profile => {
            let data = ctx.load_data()?;
            let records = ctx.stage("profile", |ctx| commands::profile(ctx, &data))?;
            print!("{}", rockflow_core::profile::render_profile_table(&records));
        }
        Command::ReproduceAll { generate } => {
            if *generate && ctx.require_dataset().is_err() {
                ctx.stage("generate", commands::generate)?;
            }
            let data = ctx.load_data()?;
            let rows = commands::reproduce_all(ctx, &data)?;
            print!("{}", rockflow_core::report::render_tables(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
