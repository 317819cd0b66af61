//! Autoregressive time marching on physical grids (grid-size-invariant
//! pipeline) or in latent space (reduced-order pipeline).

use std::time::Instant;

use rockflow_nn::{Graph, Tensor};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{sha256_hex, weights_digest};
use crate::compression::{CompressionModel, LATENT_CHANNELS};
use crate::dataset::{stack_snapshots, FieldSnapshot, ScalerParams, SimulationSeries, FIELD_COUNT, HISTORY};
use crate::error::{Error, Result};
use crate::metrics::{pcc, ssim, PCC_THRESHOLD};
use crate::predictor::{Predictor, StepModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Rom,
    Gsi,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutRequest {
    /// Snapshots `k-2, k-1, k` in physical units.
    pub initial_window: Vec<FieldSnapshot>,
    pub n_steps: usize,
    /// Clip scaled predictions to [0, 1] before feeding them back.
    pub clip: bool,
}

impl RolloutRequest {
    pub fn new(initial_window: Vec<FieldSnapshot>, n_steps: usize) -> Self {
        Self { initial_window, n_steps, clip: false }
    }

    /// Window starting at snapshot `start` of a series.
    pub fn from_series(series: &SimulationSeries, start: usize, n_steps: usize) -> Result<Self> {
        let window = series
            .snapshots()
            .get(start..start + HISTORY)
            .ok_or_else(|| Error::invalid(format!("series `{}` has no window at {start}", series.sim_id)))?;
        Ok(Self::new(window.to_vec(), n_steps))
    }

    fn validate(&self) -> Result<(usize, usize)> {
        if self.n_steps == 0 {
            return Err(Error::invalid("n_steps ≥ 1 required"));
        }
        if self.initial_window.len() != HISTORY {
            return Err(Error::invalid(format!("initial window needs {HISTORY} snapshots, got {}", self.initial_window.len())));
        }
        let (h, w) = (self.initial_window[0].height(), self.initial_window[0].width());
        if self.initial_window.iter().any(|s| s.height() != h || s.width() != w) {
            return Err(Error::invalid("initial window snapshots differ in size"));
        }
        Ok((h, w))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub pipeline: Pipeline,
    pub predictor_id: String,
    pub compression_id: Option<String>,
    pub config_hash: String,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictedSeries {
    /// Predictions for steps `k+1, k+2, ...` in physical units.
    pub snapshots: Vec<FieldSnapshot>,
    pub provenance: Provenance,
}

/// Which metric watches the rollout in [`InferenceEngine::predict_with_handoff`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandoffMetric {
    Pcc,
    Ssim,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HandoffOutcome {
    pub series: PredictedSeries,
    /// First step whose metric fell below the threshold on some field, or `n_steps`.
    pub stop_step: usize,
    pub triggered: bool,
}

/// Immutable after construction; concurrent requests only read it.
#[derive(Clone, Debug)]
pub enum InferenceEngine {
    Gsi { predictor: Predictor, weights: rockflow_nn::ParamStore<f32>, scaler: ScalerParams },
    Rom { compression: CompressionModel, predictor: Predictor, weights: rockflow_nn::ParamStore<f32>, scaler: ScalerParams },
}

impl InferenceEngine {
    pub fn gsi(predictor: Predictor, weights: rockflow_nn::ParamStore<f32>, scaler: ScalerParams) -> Result<Self> {
        let spec = predictor.spec();
        if spec.in_channels != HISTORY * FIELD_COUNT || spec.out_channels != FIELD_COUNT {
            return Err(Error::invalid(format!(
                "physical-grid predictor must map {} to {FIELD_COUNT} channels, got {} to {}",
                HISTORY * FIELD_COUNT,
                spec.in_channels,
                spec.out_channels
            )));
        }
        Ok(InferenceEngine::Gsi { predictor, weights, scaler })
    }

    /// Fails here, not mid-rollout, when latent and predictor channels disagree.
    pub fn rom(
        compression: CompressionModel,
        predictor: Predictor,
        weights: rockflow_nn::ParamStore<f32>,
        scaler: ScalerParams,
    ) -> Result<Self> {
        let spec = predictor.spec();
        if spec.in_channels != HISTORY * LATENT_CHANNELS || spec.out_channels != LATENT_CHANNELS {
            return Err(Error::invalid(format!(
                "latent predictor must map {} to {LATENT_CHANNELS} channels, got {} to {}",
                HISTORY * LATENT_CHANNELS,
                spec.in_channels,
                spec.out_channels
            )));
        }
        Ok(InferenceEngine::Rom { compression, predictor, weights, scaler })
    }

    pub fn pipeline(&self) -> Pipeline {
        match self {
            InferenceEngine::Gsi { .. } => Pipeline::Gsi,
            InferenceEngine::Rom { .. } => Pipeline::Rom,
        }
    }

    fn scaler(&self) -> &ScalerParams {
        match self {
            InferenceEngine::Gsi { scaler, .. } | InferenceEngine::Rom { scaler, .. } => scaler,
        }
    }

    fn provenance(&self, req: &RolloutRequest, wall_time_s: f64) -> Provenance {
        let (predictor_id, compression_id) = match self {
            InferenceEngine::Gsi { weights, .. } => (weights_digest(weights), None),
            InferenceEngine::Rom { weights, compression, .. } => (weights_digest(weights), Some(weights_digest(&compression.store))),
        };
        let key = format!(
            "{:?}|{predictor_id}|{compression_id:?}|{}|{}|{:?}",
            self.pipeline(),
            req.n_steps,
            req.clip,
            self.scaler()
        );
        Provenance {
            pipeline: self.pipeline(),
            predictor_id,
            compression_id,
            config_hash: sha256_hex(key.as_bytes())[..16].to_string(),
            wall_time_s,
        }
    }

    pub fn predict(&self, req: &RolloutRequest) -> Result<PredictedSeries> {
        self.run(req, |_, _| Ok(true))
    }

    /// Roll out while comparing each step against `truth` (physical units,
    /// aligned so `truth[i]` is the target of step `i + 1`). Stops at the first
    /// step where `metric` drops below `threshold` on any field; an undefined
    /// correlation counts as below.
    pub fn predict_with_handoff(
        &self,
        req: &RolloutRequest,
        truth: &[FieldSnapshot],
        threshold: f64,
        metric: HandoffMetric,
    ) -> Result<HandoffOutcome> {
        let (h, w) = req.validate()?;
        if truth.len() < req.n_steps {
            return Err(Error::invalid(format!("metric needs {} truth snapshots, got {}", req.n_steps, truth.len())));
        }
        if truth.iter().any(|t| t.height() != h || t.width() != w) {
            return Err(Error::invalid("truth snapshots differ in size from the window"));
        }
        if metric == HandoffMetric::Ssim && (h < 11 || w < 11) {
            return Err(Error::invalid(format!("SSIM unavailable on a {h}x{w} grid")));
        }
        let scaler = self.scaler().clone();
        let mut stop = None;
        let series = self.run(req, |step, scaled_pred| {
            let truth_scaled = scaler.apply(&truth[step - 1])?;
            for f in 0..FIELD_COUNT {
                let (a, b) = (truth_scaled.field(f), scaled_pred.field(f));
                let value = match metric {
                    HandoffMetric::Pcc => pcc(a, b)?,
                    HandoffMetric::Ssim => Some(ssim(a, b, h, w)?),
                };
                if value.map_or(true, |v| v < threshold) {
                    stop = Some(step);
                    return Ok(false);
                }
            }
            Ok(true)
        })?;
        Ok(HandoffOutcome { series, stop_step: stop.unwrap_or(req.n_steps), triggered: stop.is_some() })
    }

    /// Shared marching loop; `keep_going(step, scaled_prediction)` may stop it early.
    fn run(
        &self,
        req: &RolloutRequest,
        mut keep_going: impl FnMut(usize, &FieldSnapshot) -> Result<bool>,
    ) -> Result<PredictedSeries> {
        let start = Instant::now();
        req.validate()?;
        let scaler = self.scaler();
        let scaled: Vec<FieldSnapshot> = req.initial_window.iter().map(|s| scaler.apply(s)).collect::<Result<_>>()?;
        let mut outputs = Vec::with_capacity(req.n_steps);
        match self {
            InferenceEngine::Gsi { predictor, weights, .. } => {
                let mut window: Vec<Tensor<f32>> = scaled.iter().map(|s| s.to_tensor()).collect();
                for step in 1..=req.n_steps {
                    let next = forward_once(predictor, weights, &window, req.clip, step)?;
                    let snap = FieldSnapshot::from_tensor(&next, 0)?;
                    let go = keep_going(step, &snap)?;
                    outputs.push(scaler.invert(&snap)?);
                    if !go {
                        break;
                    }
                    window.remove(0);
                    window.push(next);
                }
            }
            InferenceEngine::Rom { compression, predictor, weights, .. } => {
                let refs: Vec<&FieldSnapshot> = scaled.iter().collect();
                let latent = compression.autoencoder.encode_tensor(&compression.store, stack_snapshots(&refs)?)?;
                let mut window: Vec<Tensor<f32>> = (0..HISTORY).map(|n| latent.batch_item(n)).collect();
                for step in 1..=req.n_steps {
                    let next = forward_once(predictor, weights, &window, false, step)?;
                    let decoded = compression.autoencoder.decode_tensor(&compression.store, next.clone())?;
                    let mut snap = FieldSnapshot::from_tensor(&decoded, 0)?;
                    if req.clip {
                        clip_unit(&mut snap);
                    }
                    let go = keep_going(step, &snap)?;
                    outputs.push(scaler.invert(&snap)?);
                    if !go {
                        break;
                    }
                    window.remove(0);
                    window.push(next);
                }
            }
        }
        let provenance = self.provenance(req, start.elapsed().as_secs_f64());
        Ok(PredictedSeries { snapshots: outputs, provenance })
    }
}

fn clip_unit(snap: &mut FieldSnapshot) {
    for f in 0..FIELD_COUNT {
        for v in snap.field_mut(f) {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

fn forward_once(
    predictor: &Predictor,
    weights: &rockflow_nn::ParamStore<f32>,
    window: &[Tensor<f32>],
    clip: bool,
    step: usize,
) -> Result<Tensor<f32>> {
    let refs: Vec<&Tensor<f32>> = window.iter().collect();
    let input = Tensor::concat_channels(&refs)?;
    let mut g = Graph::frozen(weights);
    let x = g.input(input);
    let y = predictor.forward(&mut g, x)?;
    let mut out = g.value(y).clone();
    if !out.is_finite() {
        return Err(Error::NonFinitePrediction { step });
    }
    if clip {
        out = out.map(|v| v.clamp(0.0, 1.0));
    }
    Ok(out)
}

/// Default correlation threshold for [`InferenceEngine::predict_with_handoff`].
pub const DEFAULT_HANDOFF_THRESHOLD: f64 = PCC_THRESHOLD;
