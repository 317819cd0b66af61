//! Pipeline stages behind each command. Every file written is recorded in the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rockflow_core::checkpoint::Checkpoint;
use rockflow_core::compression::{latent_moments, CompressionKind, CompressionModel};
use rockflow_core::dataset::{ScalerParams, SimulationSeries, FIELD_NAMES, HISTORY};
use rockflow_core::experiment::{encode_dataset, PreparedData, evaluate_engine, model_name, train_compression_model, train_predictor_plan, PredictorPlan, Regime};
use rockflow_core::inference::{HandoffMetric, InferenceEngine, RolloutRequest};
use rockflow_core::io::{read_dataset, write_dataset, MANIFEST_FILE as DATASET_MANIFEST};
use rockflow_core::metrics::PCC_THRESHOLD;
use rockflow_core::predictor::{count_parameters, Predictor, PredictorSpec, Variant};
use rockflow_core::profile::{measure, render_profile_table, ProfileRecord};
use rockflow_core::report::{per_timestep_curves, render_tables, summarize, write_steps_csv, write_summary_csv, Split, SummaryRow};
use rockflow_core::solver::generate_dataset;
use rockflow_core::training::TrainHistory;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineKind, RunConfig};
use crate::manifest::{CheckpointRecord, RunManifest};
use crate::{plots, CliError};

pub type Fallible<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

pub struct Context {
    pub cfg: RunConfig,
    pub root: PathBuf,
    pub manifest: RunManifest,
}

/// Metadata stored next to predictor weights.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictorMeta {
    pub model: String,
    pub pipeline: PipelineKind,
    pub compression: Option<CompressionKind>,
    pub compression_id: Option<String>,
    pub scaler: ScalerParams,
    pub rollout_horizon: Option<usize>,
    pub history: TrainHistory,
}

impl Context {
    pub fn new(cfg: RunConfig, root: PathBuf, command: &str, snapshot: serde_json::Value) -> Self {
        Self { cfg, manifest: RunManifest::new(command, snapshot), root }
    }

    /// Run a stage, turning any failure into an error naming the stage and run.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Fallible<T>) -> Result<T, CliError> {
        log::info!("stage {name} (run {})", self.manifest.run_id);
        f(self).map_err(|e| CliError::Stage { stage: name.into(), run_id: self.manifest.run_id.clone(), message: e.to_string() })
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.cfg.dataset_dir(&self.root)
    }

    fn checkpoint_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn compression_path(&self, kind: CompressionKind) -> PathBuf {
        self.checkpoint_dir().join(format!("compression-{}.ckpt", kind.name()))
    }

    pub fn predictor_path(&self, model: &str) -> PathBuf {
        self.checkpoint_dir().join(format!("{model}.ckpt"))
    }

    fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    fn output(&mut self, path: &Path, kind: &str) -> Fallible<()> {
        self.manifest.output(&self.root, path, kind)?;
        Ok(())
    }

    fn write_text(&mut self, path: &Path, text: &str, kind: &str) -> Fallible<()> {
        if let Some(d) = path.parent() {
            fs::create_dir_all(d)?;
        }
        fs::write(path, text)?;
        self.output(path, kind)
    }

    fn write_json<S: Serialize>(&mut self, path: &Path, value: &S, kind: &str) -> Fallible<()> {
        let text = serde_json::to_string_pretty(value)?;
        self.write_text(path, &text, kind)
    }

    fn save_checkpoint(&mut self, ck: &Checkpoint, model: &str, path: &Path) -> Fallible<()> {
        ck.save(path)?;
        self.output(path, "checkpoint")?;
        let rel = path.strip_prefix(&self.root).unwrap_or(path).to_string_lossy().into_owned();
        self.manifest.checkpoints.retain(|c| c.model != model);
        self.manifest.checkpoints.push(CheckpointRecord { model: model.into(), id: ck.id(), path: rel });
        Ok(())
    }

    /// Reads the configured dataset; a missing dataset is a configuration error.
    pub fn require_dataset(&self) -> Result<(), CliError> {
        let dir = self.dataset_dir();
        if dir.join(DATASET_MANIFEST).is_file() {
            Ok(())
        } else {
            Err(CliError::Config(format!("no dataset at {}; run `generate` first or set `dataset`", dir.display())))
        }
    }

    pub fn require_checkpoint(&self, path: &Path) -> Result<(), CliError> {
        if path.is_file() {
            Ok(())
        } else {
            Err(CliError::Config(format!("checkpoint {} does not exist", path.display())))
        }
    }

    /// Load, split and scale the dataset; unknown validation ids are configuration errors.
    pub fn load_data(&mut self) -> Result<PreparedData, CliError> {
        self.require_dataset()?;
        let dir = self.dataset_dir();
        let (series, latent) = self.stage("load-dataset", |ctx| {
            let out = read_dataset(&dir)?;
            let mut files = vec![dir.join(DATASET_MANIFEST)];
            files.extend(out.0.iter().map(|s| dir.join(format!("{}.bin", s.sim_id))));
            for f in files {
                ctx.manifest.input(&ctx.root, &f, "dataset")?;
            }
            Ok(out)
        })?;
        if latent {
            return Err(CliError::Config(format!("{} holds latent series, not physical fields", dir.display())));
        }
        let split = &self.cfg.split;
        let prepared = if split.validation_ids.is_empty() {
            let count = split.validation_count.unwrap_or((series.len() / 5).max(1));
            PreparedData::split_last(&series, count)
        } else {
            PreparedData::new(&series, &split.validation_ids)
        };
        let prepared = prepared.map_err(|e| CliError::Config(e.to_string()))?;
        log::info!(
            "{} training and {} validation simulations",
            prepared.raw_train.len(),
            prepared.raw_validation.len()
        );
        Ok(prepared)
    }

    /// Predictor checkpoints present in the output directory, sorted by name.
    pub fn trained_models(&self) -> Vec<String> {
        let mut names: Vec<String> = fs::read_dir(self.checkpoint_dir())
            .into_iter()
            .flatten()
            .flatten()
            .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".ckpt")).map(String::from))
            .filter(|n| !n.starts_with("compression-"))
            .collect();
        names.sort();
        names
    }
}

pub fn generate(ctx: &mut Context) -> Fallible<Vec<SimulationSeries>> {
    let g = &ctx.cfg.generator;
    let series = generate_dataset(&g.solver, &g.seeds)?;
    let dir = ctx.dataset_dir();
    write_dataset(&series, &dir, false)?;
    ctx.output(&dir.join(DATASET_MANIFEST), "dataset")?;
    for s in &series {
        ctx.output(&dir.join(format!("{}.bin", s.sim_id)), "dataset")?;
    }
    Ok(series)
}

pub fn train_compression(ctx: &mut Context, data: &PreparedData, kind: CompressionKind) -> Fallible<String> {
    let section = ctx.cfg.compression.clone();
    let spec = section.spec(kind);
    let (model, history) = train_compression_model(&spec, data, &section.train, section.init_seed)?;
    let validation: Vec<_> = data.validation.iter().flat_map(|s| s.snapshots()).collect();
    let moments = if validation.is_empty() { None } else { Some(latent_moments(&model, &validation)?) };
    let name = format!("compression-{}", kind.name());
    let mut ck = Checkpoint::new("compression", &spec, &section.train, history.best_epoch, section.train.seed, model.store.clone())?;
    ck.header.extra = serde_json::json!({
        "model": name,
        "init_seed": section.init_seed,
        "scaler": data.scaler,
        "history": history,
        "latent_moments": moments,
    });
    let path = ctx.compression_path(kind);
    ctx.save_checkpoint(&ck, &name, &path)?;
    if let Some(best) = history.epochs.get(history.best_epoch) {
        log::info!("{name}: validation MSE {:.3e} at epoch {}", best.val_mse, best.epoch);
    }
    Ok(name)
}

pub fn load_compression(ctx: &mut Context, kind: CompressionKind) -> Fallible<(CompressionModel, String)> {
    let path = ctx.compression_path(kind);
    let ck = Checkpoint::load(&path)?;
    let mut model = CompressionModel::new(&ck.spec()?, 0)?;
    ck.restore_into(&mut model.store)?;
    ctx.manifest.input(&ctx.root, &path, "checkpoint")?;
    Ok((model, ck.id()))
}

/// Train one predictor plan; returns the names of the one-step and (if any) rollout models.
pub fn train_predictor(
    ctx: &mut Context,
    data: &PreparedData,
    pipeline: PipelineKind,
    compression: Option<CompressionKind>,
    plan: &PredictorPlan,
) -> Fallible<Vec<String>> {
    let mut plan = plan.clone();
    let (train, validation, prefix, compression_id) = match pipeline {
        PipelineKind::Gsi => (data.train.clone(), data.validation.clone(), "gsi", None),
        PipelineKind::WholeDomain => {
            plan.regime = Regime::WholeDomain;
            (data.train.clone(), data.validation.clone(), "baseline", None)
        }
        PipelineKind::Rom => {
            let kind = compression.ok_or("the rom pipeline needs a compression kind")?;
            plan.regime = Regime::WholeDomain;
            let (model, id) = load_compression(ctx, kind)?;
            (encode_dataset(&model, &data.train)?, encode_dataset(&model, &data.validation)?, kind.name(), Some(id))
        }
    };
    let trained = train_predictor_plan(&plan, &train, &validation)?;
    let compression = if pipeline == PipelineKind::Rom { compression } else { None };
    let mut stages = vec![(None, &trained.one_step, &trained.one_step_history, &plan.one_step)];
    if let Some((w, h)) = &trained.rollout {
        stages.push((plan.rollout_horizon, w, h, &plan.rollout));
    }
    let mut names = Vec::new();
    for (horizon, weights, history, train_cfg) in stages {
        let name = model_name(prefix, plan.variant, horizon, compression);
        let meta = PredictorMeta {
            model: name.clone(),
            pipeline,
            compression,
            compression_id: compression_id.clone(),
            scaler: data.scaler.clone(),
            rollout_horizon: horizon,
            history: history.clone(),
        };
        let training = serde_json::json!({ "plan": plan, "stage": train_cfg });
        let mut ck = Checkpoint::new("predictor", trained.predictor.spec(), &training, history.best_epoch, train_cfg.seed, weights.clone())?;
        ck.header.extra = serde_json::to_value(&meta)?;
        let path = ctx.predictor_path(&name);
        ctx.save_checkpoint(&ck, &name, &path)?;
        names.push(name);
    }
    Ok(names)
}

pub fn load_engine(ctx: &mut Context, model: &str) -> Fallible<(InferenceEngine, PredictorMeta)> {
    let path = ctx.predictor_path(model);
    let ck = Checkpoint::load(&path)?;
    ctx.manifest.input(&ctx.root, &path, "checkpoint")?;
    let meta: PredictorMeta = serde_json::from_value(ck.header.extra.clone())?;
    let spec: PredictorSpec = ck.spec()?;
    let (predictor, mut store) = Predictor::seeded(&spec, 0)?;
    ck.restore_into(&mut store)?;
    let engine = match meta.pipeline {
        PipelineKind::Rom => {
            let kind = meta.compression.ok_or("reduced-order checkpoint without compression kind")?;
            let (cm, id) = load_compression(ctx, kind)?;
            if meta.compression_id.as_deref() != Some(id.as_str()) {
                return Err(format!("{model} was trained against a different compression-{} checkpoint", kind.name()).into());
            }
            InferenceEngine::rom(cm, predictor, store, meta.scaler.clone())?
        }
        PipelineKind::Gsi | PipelineKind::WholeDomain => InferenceEngine::gsi(predictor, store, meta.scaler.clone())?,
    };
    Ok((engine, meta))
}

/// Predictions per simulation, stored as a dataset whose first three snapshots are the initial window.
pub fn infer(ctx: &mut Context, data: &PreparedData, models: &[String], sims: &[String], handoff: bool) -> Fallible<()> {
    let ev = ctx.cfg.evaluation.clone();
    let chosen: Vec<&SimulationSeries> = if sims.is_empty() {
        data.raw_validation.iter().collect()
    } else {
        let all: Vec<&SimulationSeries> = data.raw_train.iter().chain(&data.raw_validation).collect();
        sims.iter()
            .map(|id| all.iter().copied().find(|s| &s.sim_id == id).ok_or_else(|| format!("unknown simulation `{id}`")))
            .collect::<Result<_, _>>()?
    };
    for model in models {
        let (engine, _) = load_engine(ctx, model)?;
        let mut out = Vec::new();
        let mut log = Vec::new();
        for s in &chosen {
            let req = RolloutRequest { clip: ev.clip, ..RolloutRequest::from_series(s, ev.start, ev.steps)? };
            let (pred, stop) = if handoff {
                let truth = s.snapshots().get(ev.start + HISTORY..).unwrap_or(&[]);
                let o = engine.predict_with_handoff(&req, truth, ev.handoff_threshold, HandoffMetric::Pcc)?;
                (o.series, Some(o.stop_step))
            } else {
                (engine.predict(&req)?, None)
            };
            let mut snaps = req.initial_window.clone();
            snaps.extend(pred.snapshots.iter().cloned());
            out.push(s.with_snapshots(snaps)?);
            log.push(serde_json::json!({ "sim_id": s.sim_id, "provenance": pred.provenance, "handoff_stop_step": stop }));
        }
        let dir = ctx.root.join("predictions").join(model);
        write_dataset(&out, &dir, false)?;
        ctx.output(&dir.join(DATASET_MANIFEST), "prediction")?;
        for s in &out {
            ctx.output(&dir.join(format!("{}.bin", s.sim_id)), "prediction")?;
        }
        ctx.write_json(&dir.join("provenance.json"), &log, "prediction")?;
    }
    Ok(())
}

fn field_mean(row: &[f64; 4]) -> f64 {
    row.iter().sum::<f64>() / row.len() as f64
}

/// Per-model step metrics, curves and plots, then the merged summary table and comparison plot.
pub fn evaluate(ctx: &mut Context, data: &PreparedData, models: &[String]) -> Fallible<Vec<SummaryRow>> {
    let ev = ctx.cfg.evaluation.clone();
    let mut rows = Vec::new();
    let mut comparison = Vec::new();
    let reports_dir = ctx.reports_dir();
    for model in models {
        let (engine, meta) = load_engine(ctx, model)?;
        let mut reports = evaluate_engine(model, &engine, &data.raw_validation, Split::Validation, ev.start, ev.steps, ev.clip, &meta.scaler)?;
        if ev.include_train {
            reports.extend(evaluate_engine(model, &engine, &data.raw_train, Split::Train, ev.start, ev.steps, ev.clip, &meta.scaler)?);
        }
        let dir = reports_dir.join(model);
        fs::create_dir_all(&dir)?;
        let steps_csv = dir.join("steps.csv");
        write_steps_csv(&reports, &steps_csv)?;
        ctx.output(&steps_csv, "report")?;
        let curves = per_timestep_curves(&reports, Split::Validation)?;
        ctx.write_json(&dir.join("curves_validation.json"), &curves, "report")?;
        let per_field: Vec<(String, Vec<f64>)> =
            FIELD_NAMES.iter().enumerate().map(|(f, n)| (n.to_string(), curves.pcc.iter().map(|r| r[f]).collect())).collect();
        let svg = dir.join("pcc_validation.svg");
        plots::line_chart(&svg, &format!("{model}: validation PCC"), &per_field, PCC_THRESHOLD)?;
        ctx.output(&svg, "plot")?;
        comparison.push((model.clone(), curves.pcc.iter().map(field_mean).collect::<Vec<f64>>()));
        rows.push(summarize(model, &reports)?);
    }
    let summary = reports_dir.join("summary.csv");
    write_summary_csv(&rows, &summary)?;
    ctx.output(&summary, "report")?;
    ctx.write_text(&reports_dir.join("tables.txt"), &render_tables(&rows), "report")?;
    if !comparison.is_empty() {
        let svg = reports_dir.join("pcc_validation.svg");
        plots::line_chart(&svg, "validation PCC, mean over fields", &comparison, PCC_THRESHOLD)?;
        ctx.output(&svg, "plot")?;
    }
    ctx.manifest.reports.push(summary.strip_prefix(&ctx.root).unwrap_or(&summary).to_string_lossy().into_owned());
    Ok(rows)
}

struct ProfileTarget {
    name: String,
    plan: PredictorPlan,
    compression: Option<CompressionKind>,
}

fn profile_targets(ctx: &Context) -> Vec<ProfileTarget> {
    let r = &ctx.cfg.reproduce;
    let mut out = Vec::new();
    for kind in [CompressionKind::Ae, CompressionKind::Aae] {
        if ctx.compression_path(kind).is_file() {
            for variant in [Variant::Unet, Variant::UnetPlusPlus] {
                let plan = PredictorPlan { variant, regime: Regime::WholeDomain, ..r.rom.clone() };
                out.push(ProfileTarget { name: model_name("rom", variant, None, Some(kind)), plan, compression: Some(kind) });
            }
        }
    }
    for variant in [Variant::Unet, Variant::UnetPlusPlus] {
        let plan = PredictorPlan { variant, ..r.gsi.clone() };
        out.push(ProfileTarget { name: model_name("gsi", variant, None, None), plan, compression: None });
    }
    let plan = PredictorPlan { regime: Regime::WholeDomain, ..r.baseline.clone() };
    out.push(ProfileTarget { name: model_name("baseline", plan.variant, None, None), plan, compression: None });
    out
}

/// Memory and time of a short one-step training run, plus a long autoregressive prediction.
pub fn profile(ctx: &mut Context, data: &PreparedData) -> Fallible<Vec<ProfileRecord>> {
    let p = ctx.cfg.profile.clone();
    let mut records = Vec::new();
    for target in profile_targets(ctx) {
        let mut plan = target.plan.clone();
        plan.one_step.epochs = p.epochs;
        plan.rollout_horizon = None;
        let (train, validation, compression) = match target.compression {
            Some(kind) => {
                let (m, _) = load_compression(ctx, kind)?;
                (encode_dataset(&m, &data.train)?, encode_dataset(&m, &data.validation)?, Some(m))
            }
            None => (data.train.clone(), data.validation.clone(), None),
        };
        let (trained, measurement) = measure(|| train_predictor_plan(&plan, &train, &validation));
        let trained = trained?;
        let weights = trained.final_weights().clone();
        let engine = match compression {
            Some(m) => InferenceEngine::rom(m, trained.predictor.clone(), weights, data.scaler.clone())?,
            None => InferenceEngine::gsi(trained.predictor.clone(), weights, data.scaler.clone())?,
        };
        let inference = match data.raw_validation.first().or(data.raw_train.first()) {
            Some(s) if p.inference_steps > 0 => {
                let t = Instant::now();
                engine.predict(&RolloutRequest::from_series(s, 0, p.inference_steps)?)?;
                Some(t.elapsed().as_secs_f64())
            }
            _ => None,
        };
        log::info!("profiled {} ({:.1} MB peak)", target.name, measurement.peak_bytes as f64 / 1e6);
        records.push(ProfileRecord::new(&target.name, count_parameters(&plan.spec()), measurement, inference));
    }
    let dir = ctx.reports_dir();
    ctx.write_text(&dir.join("profile.txt"), &render_profile_table(&records), "report")?;
    ctx.write_json(&dir.join("profile.json"), &records, "report")?;
    Ok(records)
}

/// Every model of the comparison, one after another, then the merged report and profile.
pub fn reproduce_all(ctx: &mut Context, data: &PreparedData) -> Result<Vec<SummaryRow>, CliError> {
    let r = ctx.cfg.reproduce.clone();
    for kind in [CompressionKind::Ae, CompressionKind::Aae] {
        ctx.stage(&format!("train-compression:{}", kind.name()), |ctx| train_compression(ctx, data, kind))?;
    }
    let mut models = Vec::new();
    for kind in [CompressionKind::Ae, CompressionKind::Aae] {
        for variant in [Variant::Unet, Variant::UnetPlusPlus] {
            let plan = PredictorPlan { variant, ..r.rom.clone() };
            let stage = format!("train-predictor:{}", model_name("rom", variant, None, Some(kind)));
            models.extend(ctx.stage(&stage, |ctx| train_predictor(ctx, data, PipelineKind::Rom, Some(kind), &plan))?);
        }
    }
    for variant in [Variant::Unet, Variant::UnetPlusPlus] {
        let plan = PredictorPlan { variant, ..r.gsi.clone() };
        let stage = format!("train-predictor:{}", model_name("gsi", variant, None, None));
        models.extend(ctx.stage(&stage, |ctx| train_predictor(ctx, data, PipelineKind::Gsi, None, &plan))?);
    }
    let baseline = r.baseline.clone();
    let stage = format!("train-predictor:{}", model_name("baseline", baseline.variant, None, None));
    models.extend(ctx.stage(&stage, |ctx| train_predictor(ctx, data, PipelineKind::WholeDomain, None, &baseline))?);
    let rows = ctx.stage("evaluate", |ctx| evaluate(ctx, data, &models))?;
    ctx.stage("profile", |ctx| profile(ctx, data))?;
    Ok(rows)
}
