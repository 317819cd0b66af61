//! Run configuration: one TOML file, overridden by `--set key=value` flags.

use std::path::{Path, PathBuf};

use rockflow_core::compression::{AutoencoderSpec, CompressionKind, CompressionTrainConfig};
use rockflow_core::experiment::{PredictorPlan, Regime};
use rockflow_core::predictor::Variant;
use rockflow_core::solver::SolverConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable naming the output root when neither `--out` nor the config sets it.
pub const OUTPUT_ENV: &str = "ROCKFLOW_OUTPUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: Option<PathBuf>,
    /// Dataset directory, relative to the output directory unless absolute.
    pub dataset: PathBuf,
    pub generator: GeneratorSection,
    pub split: SplitSection,
    pub compression: CompressionSection,
    pub predictor: PredictorSection,
    pub evaluation: EvaluationSection,
    pub reproduce: ReproduceSection,
    pub profile: ProfileSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: None,
            dataset: PathBuf::from("dataset"),
            generator: GeneratorSection::default(),
            split: SplitSection::default(),
            compression: CompressionSection::default(),
            predictor: PredictorSection::default(),
            evaluation: EvaluationSection::default(),
            reproduce: ReproduceSection::default(),
            profile: ProfileSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub solver: SolverConfig,
    pub seeds: Vec<u64>,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        Self { solver: SolverConfig::default(), seeds: (1000..1010).collect() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    /// Explicit validation simulations; takes precedence over `validation_count`.
    pub validation_ids: Vec<String>,
    /// Hold out the last N simulations when no ids are given.
    pub validation_count: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressionSection {
    pub kind: CompressionKind,
    pub widths: [usize; 4],
    pub leaky_slope: f64,
    pub init_seed: u64,
    pub train: CompressionTrainConfig,
}

impl Default for CompressionSection {
    fn default() -> Self {
        let spec = AutoencoderSpec::full(CompressionKind::Ae);
        Self { kind: CompressionKind::Ae, widths: spec.widths, leaky_slope: spec.leaky_slope, init_seed: 0, train: CompressionTrainConfig::default() }
    }
}

impl CompressionSection {
    pub fn spec(&self, kind: CompressionKind) -> AutoencoderSpec {
        AutoencoderSpec { kind, widths: self.widths, leaky_slope: self.leaky_slope }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineKind {
    Rom,
    Gsi,
    #[serde(alias = "whole-domain-baseline")]
    #[value(alias = "whole-domain-baseline")]
    WholeDomain,
}

impl PipelineKind {
    pub fn name(self) -> &'static str {
        match self {
            PipelineKind::Rom => "rom",
            PipelineKind::Gsi => "gsi",
            PipelineKind::WholeDomain => "whole-domain",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorSection {
    pub pipeline: PipelineKind,
    /// Required for the reduced-order pipeline.
    pub compression: Option<CompressionKind>,
    pub plan: PredictorPlan,
}

impl Default for PredictorSection {
    fn default() -> Self {
        Self { pipeline: PipelineKind::Gsi, compression: None, plan: PredictorPlan::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    /// First history snapshot of every evaluated rollout.
    pub start: usize,
    pub steps: usize,
    pub clip: bool,
    pub handoff_threshold: f64,
    /// Include training simulations in the report.
    pub include_train: bool,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { start: 0, steps: 30, clip: false, handoff_threshold: 0.75, include_train: true }
    }
}

/// Templates for the full comparison: four reduced-order models (AE/AAE x
/// UNet/UNet++), four grid-size-invariant models (UNet/UNet++, one-step and
/// rollout) and a whole-domain baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReproduceSection {
    pub rom: PredictorPlan,
    pub gsi: PredictorPlan,
    pub baseline: PredictorPlan,
}

impl Default for ReproduceSection {
    fn default() -> Self {
        let gsi = PredictorPlan { rollout_horizon: Some(8), ..PredictorPlan::default() };
        Self {
            rom: PredictorPlan { regime: Regime::WholeDomain, ..PredictorPlan::default() },
            gsi,
            baseline: PredictorPlan { variant: Variant::UnetPlusPlus, regime: Regime::WholeDomain, ..PredictorPlan::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSection {
    /// Training epochs timed per profiled model.
    pub epochs: usize,
    pub inference_steps: usize,
}

impl Default for ProfileSection {
    fn default() -> Self {
        Self { epochs: 1, inference_steps: 97 }
    }
}

fn parse_override(raw: &str) -> Result<(Vec<String>, toml::Value), CliError> {
    let (key, value) = raw.split_once('=').ok_or_else(|| CliError::Config(format!("override `{raw}` is not key=value")))?;
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key.trim().split('.').map(String::from).collect(), parsed))
}

fn apply_override(root: &mut toml::Table, path: &[String], value: toml::Value) -> Result<(), CliError> {
    let (last, parents) = path.split_last().ok_or_else(|| CliError::Config("empty override key".into()))?;
    let mut table = root;
    for p in parents {
        let entry = table.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| CliError::Config(format!("`{p}` is not a table")))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

/// Defaults, then the file, then `--set` overrides.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<(RunConfig, toml::Table), CliError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for raw in overrides {
        let (path, value) = parse_override(raw)?;
        apply_override(&mut table, &path, value)?;
    }
    let cfg: RunConfig = toml::Value::Table(table.clone())
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok((cfg, table))
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let ids = &self.split.validation_ids;
        let unique: std::collections::HashSet<&String> = ids.iter().collect();
        if unique.len() != ids.len() {
            return Err(CliError::Config("validation_ids contains duplicates".into()));
        }
        self.generator.solver.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.compression.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.evaluation.steps == 0 {
            return Err(CliError::Config("evaluation.steps must be at least 1".into()));
        }
        if self.predictor.pipeline == PipelineKind::Rom && self.predictor.compression.is_none() {
            return Err(CliError::Config("predictor.compression must name `ae` or `aae` for the rom pipeline".into()));
        }
        Ok(())
    }

    /// `--out`, then the environment variable, then the config, then `runs`.
    pub fn output_root(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
            .or_else(|| self.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("runs"))
    }

    pub fn dataset_dir(&self, root: &Path) -> PathBuf {
        if self.dataset.is_absolute() {
            self.dataset.clone()
        } else {
            root.join(&self.dataset)
        }
    }
}
