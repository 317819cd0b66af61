//! Convolutional autoencoders (plain and adversarial) that shrink each snapshot
//! 4x per dimension, plus classical down/up-sampling baselines.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rockflow_nn::{Activation, Adam, AdamConfig, Conv2d, Graph, NnError, ParamStore, Scalar, Tensor, UpConv2x2, Var};
use serde::{Deserialize, Serialize};

use crate::dataset::{stack_snapshots, unstack_snapshots, FieldSnapshot, SimulationSeries, FIELD_COUNT};
use crate::error::{Error, Result};

/// Spatial reduction per dimension.
pub const REDUCTION: usize = 4;
pub const LATENT_CHANNELS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressionKind {
    Ae,
    Aae,
}

impl CompressionKind {
    pub fn name(self) -> &'static str {
        match self {
            CompressionKind::Ae => "ae",
            CompressionKind::Aae => "aae",
        }
    }
}

impl std::str::FromStr for CompressionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ae" => Ok(CompressionKind::Ae),
            "aae" => Ok(CompressionKind::Aae),
            other => Err(Error::invalid(format!("unknown compression kind `{other}`"))),
        }
    }
}

/// Channel widths of the four hidden encoder layers; the decoder mirrors them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderSpec {
    pub kind: CompressionKind,
    pub widths: [usize; 4],
    /// Negative slope of the hidden activations (0 is a plain ReLU).
    pub leaky_slope: f64,
}

impl AutoencoderSpec {
    /// Widths 40, 200, 200, 40: 854,728 weights and biases.
    pub fn full(kind: CompressionKind) -> Self {
        Self { kind, widths: [40, 200, 200, 40], leaky_slope: 0.1 }
    }

    pub fn with_widths(mut self, widths: [usize; 4]) -> Self {
        self.widths = widths;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) || !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::invalid(format!("invalid autoencoder spec {self:?}")));
        }
        Ok(())
    }

    /// Weights and biases of encoder plus decoder.
    pub fn parameter_count(&self) -> usize {
        let [a, b, c, d] = self.widths;
        let f = FIELD_COUNT;
        let l = LATENT_CHANNELS;
        let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
        let encoder = conv(f, a, 3) + conv(a, b, 2) + conv(b, c, 3) + conv(c, d, 2) + conv(d, l, 3);
        let decoder = conv(l, d, 3) + conv(d, c, 2) + conv(c, b, 3) + conv(b, a, 2) + conv(a, f, 3);
        encoder + decoder
    }

    fn hidden(&self) -> Activation {
        if self.leaky_slope == 0.0 {
            Activation::Relu
        } else {
            Activation::LeakyRelu(self.leaky_slope)
        }
    }
}

/// Element-count ratio between a snapshot and its latent code.
pub fn compression_ratio() -> usize {
    FIELD_COUNT * REDUCTION * REDUCTION / LATENT_CHANNELS
}

fn check_divisible(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || h % REDUCTION != 0 || w % REDUCTION != 0 {
        return Err(NnError::Indivisible { height: h, width: w, divisor: REDUCTION }.into());
    }
    Ok(())
}

/// Layer handles of an autoencoder; parameters are named `enc.*` and `dec.*`.
#[derive(Clone, Debug)]
pub struct Autoencoder {
    spec: AutoencoderSpec,
    encoder: [Conv2d; 5],
    dec_in: Conv2d,
    dec_up1: UpConv2x2,
    dec_mid: Conv2d,
    dec_up2: UpConv2x2,
    dec_out: Conv2d,
}

impl Autoencoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(spec: &AutoencoderSpec, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let [a, b, c, d] = spec.widths;
        let (f, l) = (FIELD_COUNT, LATENT_CHANNELS);
        let encoder = [
            Conv2d::same(store, "enc.0", f, a, 3, rng),
            Conv2d::new(store, "enc.1", a, b, 2, 2, 0, rng),
            Conv2d::same(store, "enc.2", b, c, 3, rng),
            Conv2d::new(store, "enc.3", c, d, 2, 2, 0, rng),
            Conv2d::same(store, "enc.4", d, l, 3, rng),
        ];
        Ok(Self {
            spec: spec.clone(),
            encoder,
            dec_in: Conv2d::same(store, "dec.0", l, d, 3, rng),
            dec_up1: UpConv2x2::new(store, "dec.1", d, c, rng),
            dec_mid: Conv2d::same(store, "dec.2", c, b, 3, rng),
            dec_up2: UpConv2x2::new(store, "dec.3", b, a, rng),
            dec_out: Conv2d::same(store, "dec.4", a, f, 3, rng),
        })
    }

    pub fn spec(&self) -> &AutoencoderSpec {
        &self.spec
    }

    /// `[4, B, H, W] -> [4, B, H/4, W/4]`.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let [c, _, h, w] = g.value(x).dims();
        if c != FIELD_COUNT {
            return Err(Error::invalid(format!("encoder expects {FIELD_COUNT} channels, got {c}")));
        }
        check_divisible(h, w)?;
        let hidden = self.spec.hidden();
        let mut v = x;
        for (i, layer) in self.encoder.iter().enumerate() {
            v = layer.forward(g, v)?;
            let act = match (i, self.spec.kind) {
                (4, CompressionKind::Ae) => Activation::Sigmoid,
                (4, CompressionKind::Aae) => Activation::Identity,
                _ => hidden,
            };
            v = g.activation(v, act);
        }
        Ok(v)
    }

    /// `[4, B, h, w] -> [4, B, 4h, 4w]`, squashed to (0, 1).
    pub fn decode<T: Scalar>(&self, g: &mut Graph<'_, T>, z: Var) -> Result<Var> {
        let c = g.value(z).channels();
        if c != LATENT_CHANNELS {
            return Err(Error::invalid(format!("decoder expects {LATENT_CHANNELS} latent channels, got {c}")));
        }
        let hidden = self.spec.hidden();
        let v = self.dec_in.forward(g, z)?;
        let v = g.activation(v, hidden);
        let v = self.dec_up1.forward(g, v)?;
        let v = g.activation(v, hidden);
        let v = self.dec_mid.forward(g, v)?;
        let v = g.activation(v, hidden);
        let v = self.dec_up2.forward(g, v)?;
        let v = g.activation(v, hidden);
        let v = self.dec_out.forward(g, v)?;
        Ok(g.activation(v, Activation::Sigmoid))
    }

    pub fn encode_tensor(&self, store: &ParamStore<f32>, x: Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::frozen(store);
        let v = g.input(x);
        let z = self.encode(&mut g, v)?;
        Ok(g.value(z).clone())
    }

    pub fn decode_tensor(&self, store: &ParamStore<f32>, z: Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::frozen(store);
        let v = g.input(z);
        let x = self.decode(&mut g, v)?;
        Ok(g.value(x).clone())
    }

    pub fn encode_snapshots(&self, store: &ParamStore<f32>, snaps: &[&FieldSnapshot], batch: usize) -> Result<Vec<FieldSnapshot>> {
        let mut out = Vec::with_capacity(snaps.len());
        for chunk in snaps.chunks(batch.max(1)) {
            out.extend(unstack_snapshots(&self.encode_tensor(store, stack_snapshots(chunk)?)?)?);
        }
        Ok(out)
    }

    pub fn decode_snapshots(&self, store: &ParamStore<f32>, latents: &[&FieldSnapshot], batch: usize) -> Result<Vec<FieldSnapshot>> {
        let mut out = Vec::with_capacity(latents.len());
        for chunk in latents.chunks(batch.max(1)) {
            out.extend(unstack_snapshots(&self.decode_tensor(store, stack_snapshots(chunk)?)?)?);
        }
        Ok(out)
    }

    /// Latent counterpart of a scaled series, keeping its metadata.
    pub fn encode_series(&self, store: &ParamStore<f32>, series: &SimulationSeries) -> Result<SimulationSeries> {
        let snaps: Vec<&FieldSnapshot> = series.snapshots().iter().collect();
        series.with_snapshots(self.encode_snapshots(store, &snaps, 8)?)
    }
}

/// Two convolutions over the latent grid and a global average to one logit per sample.
/// Parameters are named `disc.*`.
#[derive(Clone, Copy, Debug)]
pub struct Discriminator {
    first: Conv2d,
    second: Conv2d,
}

impl Discriminator {
    pub const HIDDEN: usize = 32;

    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R) -> Self {
        Self {
            first: Conv2d::same(store, "disc.0", LATENT_CHANNELS, Self::HIDDEN, 3, rng),
            second: Conv2d::same(store, "disc.1", Self::HIDDEN, 1, 3, rng),
        }
    }

    pub fn parameter_count() -> usize {
        LATENT_CHANNELS * Self::HIDDEN * 9 + Self::HIDDEN + Self::HIDDEN * 9 + 1
    }

    /// Logits `[1, B, 1, 1]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, z: Var) -> Result<Var> {
        let h = self.first.forward(g, z)?;
        let h = g.activation(h, Activation::LeakyRelu(0.2));
        let h = self.second.forward(g, h)?;
        Ok(g.global_avg_pool(h))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarialConfig {
    pub lr_autoencoder: f64,
    pub lr_discriminator: f64,
    pub lr_generator: f64,
    pub discriminator_steps: usize,
    pub generator_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    /// Probability floor inside the logs of the cross-entropy terms.
    pub log_floor: f64,
    /// Discriminator loss below which adversarial updates stop.
    pub collapse_threshold: f64,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        Self {
            lr_autoencoder: 5e-4,
            lr_discriminator: 2.5e-4,
            lr_generator: 5e-4,
            discriminator_steps: 2,
            generator_steps: 1,
            beta1: 0.5,
            beta2: 0.999,
            log_floor: 1e-7,
            collapse_threshold: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressionTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Square random crop used for training samples; whole snapshots when unset.
    pub crop: Option<usize>,
    pub samples_per_epoch: Option<usize>,
    pub validation_samples: Option<usize>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adversarial: AdversarialConfig,
    pub seed: u64,
    /// Number of update steps kept in the trace.
    pub trace_limit: usize,
}

impl Default for CompressionTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            crop: None,
            samples_per_epoch: None,
            validation_samples: None,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adversarial: AdversarialConfig::default(),
            seed: 0,
            trace_limit: 64,
        }
    }
}

impl CompressionTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adversarial;
        let rates = [self.learning_rate, a.lr_autoencoder, a.lr_discriminator, a.lr_generator];
        if rates.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::invalid(format!("learning rates must be positive, got {rates:?}")));
        }
        if self.batch_size == 0 || a.discriminator_steps == 0 || a.generator_steps == 0 {
            return Err(Error::invalid("batch size and adversarial step counts must be at least 1"));
        }
        if let Some(c) = self.crop {
            check_divisible(c, c)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    Reconstruction,
    Discriminator,
    Generator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionEpoch {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub discriminator_loss: Option<f64>,
    pub generator_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompressionHistory {
    pub epochs: Vec<CompressionEpoch>,
    pub best_epoch: usize,
    pub reconstruction_updates: u64,
    pub discriminator_updates: u64,
    pub generator_updates: u64,
    /// First `trace_limit` updates in execution order.
    pub trace: Vec<UpdateKind>,
    /// Epoch at which the discriminator won and adversarial updates stopped.
    pub mode_transition: Option<usize>,
}

impl CompressionHistory {
    fn record(&mut self, kind: UpdateKind, limit: usize) {
        match kind {
            UpdateKind::Reconstruction => self.reconstruction_updates += 1,
            UpdateKind::Discriminator => self.discriminator_updates += 1,
            UpdateKind::Generator => self.generator_updates += 1,
        }
        if self.trace.len() < limit {
            self.trace.push(kind);
        }
    }
}

/// An autoencoder with its weights (and discriminator for the adversarial kind).
#[derive(Clone, Debug)]
pub struct CompressionModel {
    pub autoencoder: Autoencoder,
    pub discriminator: Option<Discriminator>,
    pub store: ParamStore<f32>,
}

impl CompressionModel {
    pub fn new(spec: &AutoencoderSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let autoencoder = Autoencoder::new(spec, &mut store, &mut rng)?;
        let discriminator = (spec.kind == CompressionKind::Aae).then(|| Discriminator::new(&mut store, &mut rng));
        Ok(Self { autoencoder, discriminator, store })
    }

    pub fn kind(&self) -> CompressionKind {
        self.autoencoder.spec().kind
    }

    pub fn reconstruct(&self, snaps: &[&FieldSnapshot]) -> Result<Vec<FieldSnapshot>> {
        let latents = self.autoencoder.encode_snapshots(&self.store, snaps, 8)?;
        let refs: Vec<&FieldSnapshot> = latents.iter().collect();
        self.autoencoder.decode_snapshots(&self.store, &refs, 8)
    }

    /// Mean squared reconstruction error over the given snapshots.
    pub fn reconstruction_mse(&self, snaps: &[&FieldSnapshot]) -> Result<f64> {
        let rec = self.reconstruct(snaps)?;
        let mut total = 0.0;
        for (a, b) in snaps.iter().zip(&rec) {
            total += crate::metrics::mse(a.data(), b.data())?;
        }
        Ok(total / snaps.len().max(1) as f64)
    }
}

fn all_snapshots(series: &[SimulationSeries]) -> Vec<(usize, usize)> {
    series.iter().enumerate().flat_map(|(s, ser)| (0..ser.len()).map(move |t| (s, t))).collect()
}

fn training_batch(
    series: &[SimulationSeries],
    picks: &[(usize, usize)],
    crop: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<f32>> {
    let snaps: Vec<FieldSnapshot> = picks
        .iter()
        .map(|&(s, t)| {
            let snap = &series[s].snapshots()[t];
            match crop {
                Some(c) if c < snap.height() || c < snap.width() => {
                    let c = c.min(snap.height()).min(snap.width());
                    let row = rng.gen_range(0..=snap.height() - c);
                    let col = rng.gen_range(0..=snap.width() - c);
                    snap.crop(row, col, c, c)
                }
                _ => snap.clone(),
            }
        })
        .collect();
    let refs: Vec<&FieldSnapshot> = snaps.iter().collect();
    stack_snapshots(&refs)
}

fn reconstruction_loss<'s>(
    model: &Autoencoder,
    g: &mut Graph<'s, f32>,
    x: Tensor<f32>,
) -> Result<Var> {
    let xv = g.input(x);
    let z = model.encode(g, xv)?;
    let y = model.decode(g, z)?;
    Ok(g.boundary_mse(y, xv, 0.0)?)
}

fn standard_normal(dims: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let n = dims.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect::<Vec<f64>>();
    Tensor::from_vec(dims, data.into_iter().map(|v| v as f32).collect()).expect("prior dims")
}

fn adam(lr: f64, beta1: f64, beta2: f64) -> Adam<f32> {
    Adam::new(AdamConfig { learning_rate: lr, beta1, beta2, epsilon: 1e-8 })
}

/// Train an autoencoder on scaled snapshots. For the adversarial kind each
/// batch performs one reconstruction update, then `discriminator_steps`
/// discriminator updates, then `generator_steps` encoder updates against a
/// standard-normal prior. The weights with the lowest validation error are kept.
pub fn train_compression(
    model: &mut CompressionModel,
    train: &[SimulationSeries],
    validation: &[SimulationSeries],
    cfg: &CompressionTrainConfig,
) -> Result<CompressionHistory> {
    cfg.validate()?;
    let adversarial = match (model.kind(), model.discriminator) {
        (CompressionKind::Aae, Some(d)) => Some(d),
        (CompressionKind::Aae, None) => return Err(Error::invalid("adversarial autoencoder without discriminator")),
        _ => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = all_snapshots(train);
    if order.is_empty() {
        return Err(Error::invalid("no training snapshots"));
    }
    let mut val_picks = all_snapshots(validation);
    val_picks.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed));
    if let Some(n) = cfg.validation_samples {
        val_picks.truncate(n);
    }
    let val_snaps: Vec<&FieldSnapshot> = val_picks.iter().map(|&(s, t)| &validation[s].snapshots()[t]).collect();

    let a = &cfg.adversarial;
    let (mut opt_ae, mut opt_disc, mut opt_gen) = match adversarial {
        Some(_) => (
            adam(a.lr_autoencoder, a.beta1, a.beta2),
            adam(a.lr_discriminator, a.beta1, a.beta2),
            adam(a.lr_generator, a.beta1, a.beta2),
        ),
        None => (adam(cfg.learning_rate, cfg.beta1, cfg.beta2), adam(1.0, 0.9, 0.999), adam(1.0, 0.9, 0.999)),
    };
    let ae = model.autoencoder.clone();
    let mut history = CompressionHistory::default();
    let mut best: Option<(f64, ParamStore<f32>)> = None;
    let is_ae_param = |_: rockflow_nn::ParamId, name: &str| name.starts_with("enc.") || name.starts_with("dec.");
    let is_disc_param = |_: rockflow_nn::ParamId, name: &str| name.starts_with("disc.");
    let is_enc_param = |_: rockflow_nn::ParamId, name: &str| name.starts_with("enc.");

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let take = cfg.samples_per_epoch.unwrap_or(order.len()).min(order.len());
        let (mut rec_sum, mut n_sum) = (0.0, 0.0);
        let (mut disc_sum, mut gen_sum, mut adv_batches) = (0.0, 0.0, 0.0);
        for chunk in order[..take].chunks(cfg.batch_size) {
            let x = training_batch(train, chunk, cfg.crop, &mut rng)?;
            let grads = {
                let mut g = Graph::with_trainable(&model.store, is_ae_param);
                let loss = reconstruction_loss(&ae, &mut g, x.clone())?;
                let value = g.value(loss).item() as f64;
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch });
                }
                rec_sum += value * chunk.len() as f64;
                n_sum += chunk.len() as f64;
                g.backward(loss)
            };
            if !grads.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            opt_ae.step(&mut model.store, &grads);
            history.record(UpdateKind::Reconstruction, cfg.trace_limit);

            let Some(disc) = adversarial else { continue };
            if history.mode_transition.is_some() {
                continue;
            }
            let fake = ae.encode_tensor(&model.store, x.clone())?;
            let mut last_disc = f64::NAN;
            for _ in 0..a.discriminator_steps {
                let real = standard_normal(fake.dims(), &mut rng);
                let grads = {
                    let mut g = Graph::with_trainable(&model.store, is_disc_param);
                    let r = g.input(real);
                    let f = g.input(fake.clone());
                    let lr = disc.forward(&mut g, r)?;
                    let lf = disc.forward(&mut g, f)?;
                    let br = g.bce_with_logits(lr, 1.0, a.log_floor);
                    let bf = g.bce_with_logits(lf, 0.0, a.log_floor);
                    let loss = g.weighted_sum(&[(br, 0.5), (bf, 0.5)]);
                    last_disc = g.value(loss).item() as f64;
                    g.backward(loss)
                };
                if !last_disc.is_finite() || !grads.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch });
                }
                opt_disc.step(&mut model.store, &grads);
                history.record(UpdateKind::Discriminator, cfg.trace_limit);
            }
            let mut last_gen = f64::NAN;
            for _ in 0..a.generator_steps {
                let grads = {
                    let mut g = Graph::with_trainable(&model.store, is_enc_param);
                    let xv = g.input(x.clone());
                    let z = ae.encode(&mut g, xv)?;
                    let logits = disc.forward(&mut g, z)?;
                    let loss = g.bce_with_logits(logits, 1.0, a.log_floor);
                    last_gen = g.value(loss).item() as f64;
                    g.backward(loss)
                };
                if !last_gen.is_finite() || !grads.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch });
                }
                opt_gen.step(&mut model.store, &grads);
                history.record(UpdateKind::Generator, cfg.trace_limit);
            }
            disc_sum += last_disc;
            gen_sum += last_gen;
            adv_batches += 1.0;
            if last_disc < a.collapse_threshold {
                log::warn!("epoch {epoch}: discriminator loss {last_disc:.2e}; encoder no longer fools it, continuing on reconstruction only");
                history.mode_transition = Some(epoch);
            }
        }
        let train_mse = rec_sum / n_sum.max(1.0);
        let val_mse = if val_snaps.is_empty() { f64::NAN } else { model.reconstruction_mse(&val_snaps)? };
        let score = if val_snaps.is_empty() { train_mse } else { val_mse };
        if !score.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        log::debug!("compression epoch {epoch}: train {train_mse:.3e} val {val_mse:.3e}");
        if best.as_ref().map_or(true, |(b, _)| score < *b) {
            best = Some((score, model.store.clone()));
            history.best_epoch = epoch;
        }
        let adv = (adv_batches > 0.0).then_some(adv_batches);
        history.epochs.push(CompressionEpoch {
            epoch,
            train_mse,
            val_mse,
            discriminator_loss: adv.map(|n| disc_sum / n),
            generator_loss: adv.map(|n| gen_sum / n),
        });
    }
    if let Some((_, weights)) = best {
        model.store = weights;
    }
    Ok(history)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentMoments {
    pub mean: f64,
    pub std: f64,
}

impl LatentMoments {
    /// `|mean|` and `|std - 1|`: distance from the standard-normal prior.
    pub fn prior_gap(&self) -> (f64, f64) {
        (self.mean.abs(), (self.std - 1.0).abs())
    }
}

/// Mean and standard deviation of all latent values of the given snapshots.
pub fn latent_moments(model: &CompressionModel, snaps: &[&FieldSnapshot]) -> Result<LatentMoments> {
    let latents = model.autoencoder.encode_snapshots(&model.store, snaps, 8)?;
    let (mut n, mut sum, mut sq) = (0.0, 0.0, 0.0);
    for z in &latents {
        for &v in z.data() {
            let v = v as f64;
            n += 1.0;
            sum += v;
            sq += v * v;
        }
    }
    if n == 0.0 {
        return Err(Error::invalid("no latents to summarise"));
    }
    let mean = sum / n;
    Ok(LatentMoments { mean, std: (sq / n - mean * mean).max(0.0).sqrt() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    /// 4x4 block means, then bicubic interpolation back up.
    AreaBicubic,
    /// Two blur-and-decimate levels, then two upsample-and-blur levels.
    GaussianPyramid,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 2] = [BaselineMethod::AreaBicubic, BaselineMethod::GaussianPyramid];

    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::AreaBicubic => "area_bicubic",
            BaselineMethod::GaussianPyramid => "gaussian_pyramid",
        }
    }
}

impl std::str::FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "area_bicubic" => Ok(BaselineMethod::AreaBicubic),
            "gaussian_pyramid" => Ok(BaselineMethod::GaussianPyramid),
            other => Err(Error::invalid(format!("unknown baseline method `{other}`"))),
        }
    }
}

/// Compress and restore each field with a classical resampling scheme.
pub fn baseline_roundtrip(snapshot: &FieldSnapshot, method: BaselineMethod) -> Result<FieldSnapshot> {
    let (h, w) = (snapshot.height(), snapshot.width());
    check_divisible(h, w)?;
    let mut out = FieldSnapshot::zeros(h, w);
    for f in 0..FIELD_COUNT {
        let plane: Vec<f64> = snapshot.field(f).iter().map(|&v| v as f64).collect();
        let rec = match method {
            BaselineMethod::AreaBicubic => {
                let (small, sh, sw) = area_down(&plane, h, w, REDUCTION);
                bicubic_up(&small, sh, sw, REDUCTION)
            }
            BaselineMethod::GaussianPyramid => {
                let (a, ah, aw) = pyr_down(&plane, h, w);
                let (b, bh, bw) = pyr_down(&a, ah, aw);
                let (c, ch, cw) = pyr_up(&b, bh, bw);
                pyr_up(&c, ch, cw).0
            }
        };
        for (dst, v) in out.field_mut(f).iter_mut().zip(rec) {
            *dst = v as f32;
        }
    }
    Ok(out)
}

fn area_down(src: &[f64], h: usize, w: usize, k: usize) -> (Vec<f64>, usize, usize) {
    let (sh, sw) = (h / k, w / k);
    let mut out = vec![0.0; sh * sw];
    let inv = 1.0 / (k * k) as f64;
    for y in 0..h {
        for x in 0..w {
            out[(y / k) * sw + x / k] += src[y * w + x] * inv;
        }
    }
    (out, sh, sw)
}

fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Pixel-centre-aligned bicubic upsampling with replicated borders.
fn bicubic_up(src: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let taps = |out: usize, n: usize| -> Vec<[(usize, f64); 4]> {
        (0..out * k)
            .map(|o| {
                let s = (o as f64 + 0.5) / k as f64 - 0.5;
                let base = s.floor();
                let frac = s - base;
                let mut t = [(0, 0.0); 4];
                for (m, slot) in t.iter_mut().enumerate() {
                    let idx = (base as i64 + m as i64 - 1).clamp(0, n as i64 - 1) as usize;
                    *slot = (idx, cubic_weight(frac - (m as f64 - 1.0)));
                }
                t
            })
            .collect()
    };
    let (ty, tx) = (taps(h, h), taps(w, w));
    let ow = w * k;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for (x, t) in tx.iter().enumerate() {
            rows[y * ow + x] = t.iter().map(|&(i, wt)| wt * src[y * w + i]).sum();
        }
    }
    let mut out = vec![0.0; h * k * ow];
    for (y, t) in ty.iter().enumerate() {
        for x in 0..ow {
            out[y * ow + x] = t.iter().map(|&(i, wt)| wt * rows[i * ow + x]).sum();
        }
    }
    out
}

const PYRAMID: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
fn reflect101(i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

fn blur(src: &[f64], h: usize, w: usize, gain: f64) -> Vec<f64> {
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            rows[y * w + x] =
                PYRAMID.iter().enumerate().map(|(t, k)| k * src[y * w + reflect101(x as i64 + t as i64 - 2, w)]).sum::<f64>() * gain;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] =
                PYRAMID.iter().enumerate().map(|(t, k)| k * rows[reflect101(y as i64 + t as i64 - 2, h) * w + x]).sum::<f64>() * gain;
        }
    }
    out
}

fn pyr_down(src: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let b = blur(src, h, w, 1.0);
    let (oh, ow) = (h / 2, w / 2);
    let out = (0..oh * ow).map(|i| b[(2 * (i / ow)) * w + 2 * (i % ow)]).collect();
    (out, oh, ow)
}

fn pyr_up(src: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (2 * h, 2 * w);
    let mut z = vec![0.0; oh * ow];
    for y in 0..h {
        for x in 0..w {
            z[2 * y * ow + 2 * x] = src[y * w + x];
        }
    }
    (blur(&z, oh, ow, 2.0), oh, ow)
}
