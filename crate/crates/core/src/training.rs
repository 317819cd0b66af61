//! Boundary-weighted loss, its schedule, and one-step / rollout training of predictors.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rockflow_nn::{Adam, AdamConfig, Graph, ParamStore, Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::dataset::{batch_windows, SimulationSeries, WindowIndex, HISTORY};
use crate::error::{Error, Result};
use crate::predictor::StepModel;

/// Piecewise-constant boundary weight: `(epoch, lambda)` steps, zero before the first.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(usize, f64)>", into = "Vec<(usize, f64)>")]
pub struct LambdaSchedule {
    steps: Vec<(usize, f64)>,
}

impl LambdaSchedule {
    pub fn new(steps: Vec<(usize, f64)>) -> Result<Self> {
        for w in steps.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::invalid(format!("schedule epochs must increase strictly: {} then {}", w[0].0, w[1].0)));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::invalid(format!("schedule weights must not decrease: {} then {}", w[0].1, w[1].1)));
            }
        }
        if let Some(&(_, l)) = steps.iter().find(|(_, l)| !(*l >= 0.0)) {
            return Err(Error::invalid(format!("boundary weight must be non-negative, got {l}")));
        }
        Ok(Self { steps })
    }

    pub fn constant(lambda: f64) -> Result<Self> {
        Self::new(vec![(0, lambda)])
    }

    pub fn steps(&self) -> &[(usize, f64)] {
        &self.steps
    }

    pub fn at(&self, epoch: usize) -> f64 {
        self.steps.iter().take_while(|(e, _)| *e <= epoch).last().map_or(0.0, |&(_, l)| l)
    }
}

impl TryFrom<Vec<(usize, f64)>> for LambdaSchedule {
    type Error = Error;

    fn try_from(steps: Vec<(usize, f64)>) -> Result<Self> {
        Self::new(steps)
    }
}

impl From<LambdaSchedule> for Vec<(usize, f64)> {
    fn from(s: LambdaSchedule) -> Self {
        s.steps
    }
}

/// Mean squared error over all elements and over the outer 1-pixel ring of each plane.
pub fn error_components<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, f64)> {
    if pred.dims() != target.dims() {
        return Err(Error::invalid(format!("shapes differ: {:?} vs {:?}", pred.dims(), target.dims())));
    }
    let [_, _, h, w] = pred.dims();
    let (mut all, mut ring, mut ring_n) = (0.0, 0.0, 0usize);
    for (pp, tp) in pred.data().chunks(h * w).zip(target.data().chunks(h * w)) {
        for y in 0..h {
            for x in 0..w {
                let d = (pp[y * w + x] - tp[y * w + x]).to_f64_lossy();
                all += d * d;
                if y == 0 || x == 0 || y + 1 == h || x + 1 == w {
                    ring += d * d;
                    ring_n += 1;
                }
            }
        }
    }
    Ok((all / pred.len() as f64, ring / ring_n as f64))
}

/// `MSE + lambda * ring MSE` evaluated directly on tensors.
pub fn boundary_weighted_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("boundary weight must be non-negative, got {lambda}")));
    }
    let (all, ring) = error_components(pred, target)?;
    Ok(all + lambda * ring)
}

/// Autoregressive predictions from a 12-channel history: each step drops the
/// oldest snapshot and appends the newest prediction. Returns one var per step.
pub fn rollout<T: Scalar, M: StepModel>(g: &mut Graph<'_, T>, model: &M, input: Var, steps: usize) -> Result<Vec<Var>> {
    let c = model.out_channels();
    if model.in_channels() != HISTORY * c {
        return Err(Error::invalid(format!(
            "model maps {} channels to {c}; rollout needs {} inputs",
            model.in_channels(),
            HISTORY * c
        )));
    }
    let mut window = input;
    let mut preds = Vec::with_capacity(steps);
    for t in 0..steps {
        let p = model.forward(g, window)?;
        preds.push(p);
        if t + 1 < steps {
            let kept = g.slice_channels(window, c, (HISTORY - 1) * c)?;
            window = g.concat(&[kept, p])?;
        }
    }
    Ok(preds)
}

/// Mean over the horizon of the boundary-weighted loss against each target.
pub fn rollout_loss<T: Scalar, M: StepModel>(
    g: &mut Graph<'_, T>,
    model: &M,
    input: Var,
    targets: &[Var],
    lambda: f64,
) -> Result<Var> {
    if targets.is_empty() {
        return Err(Error::invalid("rollout needs at least one target"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("boundary weight must be non-negative, got {lambda}")));
    }
    let preds = rollout(g, model, input, targets.len())?;
    let w = 1.0 / targets.len() as f64;
    let mut terms = Vec::with_capacity(preds.len());
    for (&p, &t) in preds.iter().zip(targets) {
        terms.push((g.boundary_mse(p, t, lambda)?, w));
    }
    Ok(g.weighted_sum(&terms))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Windows drawn (without replacement) per epoch; all when unset.
    pub samples_per_epoch: Option<usize>,
    /// Fixed validation subset size; all when unset.
    pub validation_samples: Option<usize>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub schedule: LambdaSchedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            samples_per_epoch: None,
            validation_samples: None,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            schedule: LambdaSchedule::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, epsilon: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lambda: f64,
    pub train_loss: f64,
    pub train_boundary_mse: f64,
    pub val_mse: f64,
    pub val_boundary_mse: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Model applications performed while training (one per rollout step per batch).
    pub forward_passes: u64,
    pub optimizer_steps: u64,
}

/// Scaled series plus the windows drawn from them.
#[derive(Clone, Debug)]
pub struct WindowSet<'a> {
    pub series: &'a [SimulationSeries],
    pub windows: Vec<WindowIndex>,
}

impl<'a> WindowSet<'a> {
    pub fn horizon(&self) -> Option<usize> {
        self.windows.first().map(|w| w.horizon)
    }
}

struct Evaluation {
    mse: f64,
    ring: f64,
}

fn evaluate<M: StepModel>(model: &M, store: &ParamStore<f32>, set: &WindowSet<'_>, picks: &[WindowIndex], batch: usize) -> Result<Evaluation> {
    let (mut mse, mut ring, mut n) = (0.0, 0.0, 0.0);
    for chunk in picks.chunks(batch.max(1)) {
        let (input, targets) = batch_windows(set.series, chunk)?;
        let mut g = Graph::frozen(store);
        let x = g.input(input);
        let preds = rollout(&mut g, model, x, targets.len())?;
        for (p, t) in preds.iter().zip(&targets) {
            let (a, r) = error_components(g.value(*p), t)?;
            let w = chunk.len() as f64 / targets.len() as f64;
            mse += a * w;
            ring += r * w;
        }
        n += chunk.len() as f64;
    }
    Ok(Evaluation { mse: mse / n, ring: ring / n })
}

/// Train on windows of any horizon; horizon 1 is one-step training, larger
/// horizons unroll the model through its own predictions.
///
/// On return `store` holds the weights of the epoch with the lowest validation
/// error (training error when there is no validation set).
pub fn train_predictor<M: StepModel>(
    model: &M,
    store: &mut ParamStore<f32>,
    train: &WindowSet<'_>,
    validation: &WindowSet<'_>,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    let horizon = train.horizon().ok_or_else(|| Error::invalid("no training windows"))?;
    if let Some(v) = validation.horizon() {
        if v != horizon {
            return Err(Error::invalid(format!("validation horizon {v} differs from training horizon {horizon}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut val_picks = validation.windows.clone();
    val_picks.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed));
    if let Some(n) = cfg.validation_samples {
        val_picks.truncate(n);
    }
    let mut opt = Adam::new(cfg.adam());
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ParamStore<f32>)> = None;
    let mut order = train.windows.clone();
    for epoch in 0..cfg.epochs {
        let lambda = cfg.schedule.at(epoch);
        order.shuffle(&mut rng);
        let take = cfg.samples_per_epoch.unwrap_or(order.len()).min(order.len());
        let (mut loss_sum, mut ring_sum, mut count) = (0.0, 0.0, 0.0);
        for chunk in order[..take].chunks(cfg.batch_size.max(1)) {
            let (input, targets) = batch_windows(train.series, chunk)?;
            let grads = {
                let mut g = Graph::new(store);
                let x = g.input(input);
                let ts: Vec<Var> = targets.into_iter().map(|t| g.input(t)).collect();
                let preds = rollout(&mut g, model, x, ts.len())?;
                history.forward_passes += preds.len() as u64;
                let w = 1.0 / ts.len() as f64;
                let mut terms = Vec::with_capacity(preds.len());
                let mut ring = 0.0;
                for (&p, &t) in preds.iter().zip(&ts) {
                    terms.push((g.boundary_mse(p, t, lambda)?, w));
                    ring += error_components(g.value(p), g.value(t))?.1 * w;
                }
                let loss = g.weighted_sum(&terms);
                let value = g.value(loss).item() as f64;
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch });
                }
                loss_sum += value * chunk.len() as f64;
                ring_sum += ring * chunk.len() as f64;
                count += chunk.len() as f64;
                g.backward(loss)
            };
            if !grads.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            opt.step(store, &grads);
            history.optimizer_steps += 1;
        }
        let train_loss = loss_sum / count.max(1.0);
        let (val_mse, val_ring) = if val_picks.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let e = evaluate(model, store, validation, &val_picks, cfg.batch_size)?;
            (e.mse, e.ring)
        };
        let score = if val_picks.is_empty() { train_loss } else { val_mse };
        if !score.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        log::debug!("epoch {epoch}: lambda {lambda} train {train_loss:.3e} val {val_mse:.3e}");
        if best.as_ref().map_or(true, |(b, _)| score < *b) {
            best = Some((score, store.clone()));
            history.best_epoch = epoch;
        }
        history.epochs.push(EpochRecord {
            epoch,
            lambda,
            train_loss,
            train_boundary_mse: ring_sum / count.max(1.0),
            val_mse,
            val_boundary_mse: val_ring,
        });
    }
    if let Some((_, weights)) = best {
        *store = weights;
    }
    Ok(history)
}

/// One-step training: every window must have horizon 1.
pub fn train_one_step<M: StepModel>(
    model: &M,
    store: &mut ParamStore<f32>,
    train: &WindowSet<'_>,
    validation: &WindowSet<'_>,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    if train.windows.iter().chain(&validation.windows).any(|w| w.horizon != 1) {
        return Err(Error::invalid("one-step training needs horizon-1 windows"));
    }
    train_predictor(model, store, train, validation, cfg)
}

/// Rollout training over `horizon` steps, continuing from the weights already in `store`.
pub fn train_rollout<M: StepModel>(
    model: &M,
    store: &mut ParamStore<f32>,
    train: &WindowSet<'_>,
    validation: &WindowSet<'_>,
    horizon: usize,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    if horizon == 0 {
        return Err(Error::invalid("rollout horizon must be at least 1"));
    }
    if let Some(w) = train.windows.iter().chain(&validation.windows).find(|w| w.horizon != horizon) {
        return Err(Error::invalid(format!("window horizon {} does not match rollout length {horizon}", w.horizon)));
    }
    train_predictor(model, store, train, validation, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_steps_at_configured_epochs() {
        let s = LambdaSchedule::new(vec![(0, 0.0), (100, 0.5), (200, 1.0)]).unwrap();
        assert_eq!((s.at(99), s.at(100), s.at(199), s.at(200), s.at(10_000)), (0.0, 0.5, 0.5, 1.0, 1.0));
    }

    #[test]
    fn empty_schedule_is_zero() {
        let s = LambdaSchedule::default();
        assert!((0..50).all(|e| s.at(e) == 0.0));
    }

    #[test]
    fn invalid_schedules_rejected() {
        assert!(LambdaSchedule::new(vec![(5, 0.0), (5, 1.0)]).is_err());
        assert!(LambdaSchedule::new(vec![(0, 1.0), (5, 0.5)]).is_err());
        assert!(LambdaSchedule::new(vec![(0, -1.0)]).is_err());
    }

    #[test]
    fn schedule_round_trips_through_json() {
        let s = LambdaSchedule::new(vec![(0, 0.0), (15, 0.5), (65, 1.0)]).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(text, "[[0,0.0],[15,0.5],[65,1.0]]");
        assert_eq!(serde_json::from_str::<LambdaSchedule>(&text).unwrap(), s);
        assert!(serde_json::from_str::<LambdaSchedule>("[[3,1.0],[1,2.0]]").is_err());
    }

    #[test]
    fn loss_decomposes_into_mse_and_ring_term() {
        let p = Tensor::from_vec([1, 1, 4, 4], (0..16).map(|v| v as f64 * 0.1).collect()).unwrap();
        let t = Tensor::zeros([1, 1, 4, 4]);
        let (all, ring) = error_components(&p, &t).unwrap();
        assert_eq!(boundary_weighted_loss(&p, &t, 0.0).unwrap(), all);
        for l in [0.5, 1.0, 2.0] {
            assert!((boundary_weighted_loss(&p, &t, l).unwrap() - (all + l * ring)).abs() < 1e-15);
        }
        assert_eq!(boundary_weighted_loss(&t, &t, 3.0).unwrap(), 0.0);
        assert!(boundary_weighted_loss(&p, &t, -0.1).is_err());
    }

    #[test]
    fn corner_toy_value() {
        let mut p = Tensor::<f64>::zeros([1, 1, 4, 4]);
        p.set(0, 0, 3, 3, 1.0);
        let l = boundary_weighted_loss(&p, &Tensor::zeros([1, 1, 4, 4]), 1.0).unwrap();
        assert!((l - (1.0 / 16.0 + 1.0 / 12.0)).abs() < 1e-15);
    }
}
