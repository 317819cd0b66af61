//! End-to-end stages shared by the command line and the acceptance runs:
//! scaling, compression training, latent encoding, predictor training in the
//! patch / whole-domain / latent regimes, and rollout evaluation.

use rockflow_nn::ParamStore;
use serde::{Deserialize, Serialize};

use crate::compression::{train_compression, AutoencoderSpec, CompressionHistory, CompressionKind, CompressionModel, CompressionTrainConfig};
use crate::dataset::{fit_scaler, plan_patches, plan_whole_domain, split_by_simulation, PatchLayout, ScalerParams, SimulationSeries, HISTORY};
use crate::error::{Error, Result};
use crate::inference::{InferenceEngine, RolloutRequest};
use crate::predictor::{Predictor, PredictorSpec, Variant};
use crate::report::{evaluate_series, SeriesMetrics, Split};
use crate::training::{train_one_step, train_rollout, LambdaSchedule, TrainConfig, TrainHistory, WindowSet};

/// Raw and min-max scaled simulations split by id.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub scaler: ScalerParams,
    pub raw_train: Vec<SimulationSeries>,
    pub raw_validation: Vec<SimulationSeries>,
    pub train: Vec<SimulationSeries>,
    pub validation: Vec<SimulationSeries>,
}

impl PreparedData {
    /// Fit the scaler on the training simulations only.
    pub fn new(all: &[SimulationSeries], validation_ids: &[String]) -> Result<Self> {
        let (raw_train, raw_validation) = split_by_simulation(all, validation_ids)?;
        let scaler = fit_scaler(&raw_train)?;
        let degenerate = scaler.degenerate_fields();
        if !degenerate.is_empty() {
            log::warn!("fields {degenerate:?} are constant over the training set and scale to zero");
        }
        let scale = |v: &[SimulationSeries]| v.iter().map(|s| scaler.apply_series(s)).collect::<Result<Vec<_>>>();
        Ok(Self { train: scale(&raw_train)?, validation: scale(&raw_validation)?, scaler, raw_train, raw_validation })
    }

    /// Last `count` simulations (by dataset order) for validation.
    pub fn split_last(all: &[SimulationSeries], count: usize) -> Result<Self> {
        if count == 0 || count >= all.len() {
            return Err(Error::invalid(format!("cannot hold out {count} of {} simulations", all.len())));
        }
        let ids: Vec<String> = all[all.len() - count..].iter().map(|s| s.sim_id.clone()).collect();
        Self::new(all, &ids)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Regime {
    /// Square patches cut from the physical grid.
    Patches { size: usize, stride: usize },
    /// The whole grid as one sample.
    WholeDomain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorPlan {
    pub variant: Variant,
    pub depth: usize,
    pub base_width: usize,
    pub residual: bool,
    pub regime: Regime,
    pub one_step: TrainConfig,
    /// Rollout length for the curriculum stage; no rollout stage when unset.
    pub rollout_horizon: Option<usize>,
    pub rollout: TrainConfig,
    pub init_seed: u64,
}

impl Default for PredictorPlan {
    fn default() -> Self {
        Self {
            variant: Variant::Unet,
            depth: 5,
            base_width: 32,
            residual: false,
            regime: Regime::Patches { size: 64, stride: 32 },
            one_step: TrainConfig::default(),
            rollout_horizon: None,
            rollout: TrainConfig::default(),
            init_seed: 0,
        }
    }
}

impl PredictorPlan {
    pub fn spec(&self) -> PredictorSpec {
        PredictorSpec { depth: self.depth, ..PredictorSpec::full(self.variant).with_base_width(self.base_width).with_residual(self.residual) }
    }
}

/// Weights after one-step training and, if requested, after rollout training.
#[derive(Clone, Debug)]
pub struct TrainedPredictor {
    pub predictor: Predictor,
    pub one_step: ParamStore<f32>,
    pub one_step_history: TrainHistory,
    pub rollout: Option<(ParamStore<f32>, TrainHistory)>,
}

impl TrainedPredictor {
    /// Rollout weights when present, else one-step weights.
    pub fn final_weights(&self) -> &ParamStore<f32> {
        self.rollout.as_ref().map_or(&self.one_step, |(s, _)| s)
    }
}

fn windows(series: &[SimulationSeries], regime: Regime, horizon: usize) -> Result<WindowSet<'_>> {
    let windows = match regime {
        Regime::Patches { size, stride } => plan_patches(series, PatchLayout { patch_size: size, stride }, horizon)?,
        Regime::WholeDomain => plan_whole_domain(series, horizon)?,
    };
    Ok(WindowSet { series, windows })
}

/// Build a predictor from the plan's seed and train it on (scaled or latent) series.
pub fn train_predictor_plan(plan: &PredictorPlan, train: &[SimulationSeries], validation: &[SimulationSeries]) -> Result<TrainedPredictor> {
    let spec = plan.spec();
    let (predictor, mut store) = Predictor::seeded(&spec, plan.init_seed)?;
    if let Some(s) = train.first() {
        let (h, w) = match plan.regime {
            Regime::Patches { size, .. } => (size, size),
            Regime::WholeDomain => (s.height(), s.width()),
        };
        predictor.check_input_size(h, w)?;
    }
    let one_step_history =
        train_one_step(&predictor, &mut store, &windows(train, plan.regime, 1)?, &windows(validation, plan.regime, 1)?, &plan.one_step)?;
    let rollout = match plan.rollout_horizon {
        Some(t) if t >= 1 => {
            let mut weights = store.clone();
            let h = train_rollout(
                &predictor,
                &mut weights,
                &windows(train, plan.regime, t)?,
                &windows(validation, plan.regime, t)?,
                t,
                &plan.rollout,
            )?;
            Some((weights, h))
        }
        _ => None,
    };
    Ok(TrainedPredictor { predictor, one_step: store, one_step_history, rollout })
}

pub fn train_compression_model(
    spec: &AutoencoderSpec,
    data: &PreparedData,
    cfg: &CompressionTrainConfig,
    init_seed: u64,
) -> Result<(CompressionModel, CompressionHistory)> {
    let mut model = CompressionModel::new(spec, init_seed)?;
    let history = train_compression(&mut model, &data.train, &data.validation, cfg)?;
    Ok((model, history))
}

/// Latent series of each scaled series.
pub fn encode_dataset(model: &CompressionModel, series: &[SimulationSeries]) -> Result<Vec<SimulationSeries>> {
    series.iter().map(|s| model.autoencoder.encode_series(&model.store, s)).collect()
}

/// Roll each raw series forward from snapshots `start..start+3` for `steps`
/// steps and compare against the following ground truth.
pub fn evaluate_engine(
    model: &str,
    engine: &InferenceEngine,
    series: &[SimulationSeries],
    split: Split,
    start: usize,
    steps: usize,
    clip: bool,
    scaler: &ScalerParams,
) -> Result<Vec<SeriesMetrics>> {
    series
        .iter()
        .map(|s| {
            let first = start + HISTORY;
            if first + steps > s.len() {
                return Err(Error::invalid(format!(
                    "`{}` has {} snapshots; {steps} steps from {start} need {}",
                    s.sim_id,
                    s.len(),
                    first + steps
                )));
            }
            let req = RolloutRequest { clip, ..RolloutRequest::from_series(s, start, steps)? };
            let pred = engine.predict(&req)?;
            evaluate_series(model, &s.sim_id, split, &pred.snapshots, &s.snapshots()[first..first + steps], scaler)
        })
        .collect()
}

/// Model names of the full comparison.
pub fn model_name(pipeline: &str, variant: Variant, rollout: Option<usize>, compression: Option<CompressionKind>) -> String {
    let mut name = match compression {
        Some(k) => format!("{}-{}", k.name(), variant.name()),
        None => format!("{pipeline}-{}", variant.name()),
    };
    if let Some(t) = rollout {
        name += &format!("-rollT{t}");
    }
    name
}

/// Step schedule for boundary weighting: 0 until `first`, 0.5 until `second`, then 1.
pub fn standard_schedule(first: usize, second: usize) -> Result<LambdaSchedule> {
    LambdaSchedule::new(vec![(0, 0.0), (first, 0.5), (second, 1.0)])
}
