//! UNet and UNet++ next-step predictors.

use rand::{Rng, SeedableRng};
use rockflow_nn::{Activation, Conv2d, Graph, NnError, ParamStore, Scalar, UpConv2x2, Var};
use serde::{Deserialize, Serialize};

use crate::dataset::{FIELD_COUNT, HISTORY};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Unet,
    #[serde(rename = "unetpp")]
    UnetPlusPlus,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Unet => "unet",
            Variant::UnetPlusPlus => "unetpp",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unet" => Ok(Variant::Unet),
            "unetpp" | "unet++" => Ok(Variant::UnetPlusPlus),
            other => Err(Error::invalid(format!("unknown predictor variant `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorSpec {
    pub variant: Variant,
    /// Number of resolution levels, including the bottleneck.
    pub depth: usize,
    /// Channels at the finest level; doubles at each coarser level.
    pub base_width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Predict the change from the newest input snapshot instead of the snapshot itself.
    #[serde(default)]
    pub residual: bool,
}

impl PredictorSpec {
    /// Five levels, widths 32 to 512, three stacked snapshots in, one snapshot out.
    pub fn full(variant: Variant) -> Self {
        Self { variant, depth: 5, base_width: 32, in_channels: HISTORY * FIELD_COUNT, out_channels: FIELD_COUNT, residual: false }
    }

    pub fn with_residual(mut self, residual: bool) -> Self {
        self.residual = residual;
        self
    }

    pub fn with_base_width(mut self, base_width: usize) -> Self {
        self.base_width = base_width;
        self
    }

    pub fn widths(&self) -> Vec<usize> {
        (0..self.depth).map(|i| self.base_width << i).collect()
    }

    /// Spatial sizes must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << (self.depth - 1)
    }

    /// Upper bound on how far (in input pixels) an output pixel can see: two
    /// 3x3 convolutions per encoder and decoder level, plus one coarse pixel
    /// for each pooling and up-sampling step.
    pub fn receptive_radius(&self) -> usize {
        let encoder: usize = (0..self.depth).map(|i| 2 << i).sum();
        let per_decoder_level: usize = (0..self.depth - 1).map(|i| (1 << i) + (1 << i) + (2 << i)).sum();
        encoder + per_decoder_level
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 || self.depth > 8 || self.base_width == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid(format!("invalid predictor spec {self:?}")));
        }
        if self.residual && self.in_channels != HISTORY * self.out_channels {
            return Err(Error::invalid(format!(
                "residual output needs {} input channels for {} outputs",
                HISTORY * self.out_channels,
                self.out_channels
            )));
        }
        Ok(())
    }

    /// Decoder nodes `(level, column)` in evaluation order, with the skip columns they concatenate.
    fn nodes(&self) -> Vec<NodePlan> {
        let d = self.depth;
        let mut out = Vec::new();
        match self.variant {
            Variant::Unet => {
                for i in (0..d.saturating_sub(1)).rev() {
                    out.push(NodePlan { level: i, column: d - 1 - i, skips: vec![0] });
                }
            }
            Variant::UnetPlusPlus => {
                for j in 1..d {
                    for i in 0..d - j {
                        out.push(NodePlan { level: i, column: j, skips: (0..j).collect() });
                    }
                }
            }
        }
        out
    }
}

struct NodePlan {
    level: usize,
    column: usize,
    /// Columns of the same level whose outputs are concatenated.
    skips: Vec<usize>,
}

fn conv3_params(cin: usize, cout: usize) -> usize {
    cin * cout * 9 + cout
}

/// Exact number of weights and biases, computed without building the network.
pub fn count_parameters(spec: &PredictorSpec) -> usize {
    let w = spec.widths();
    let mut total = 0;
    for (i, &wi) in w.iter().enumerate() {
        let cin = if i == 0 { spec.in_channels } else { w[i - 1] };
        total += conv3_params(cin, wi) + conv3_params(wi, wi);
    }
    for node in spec.nodes() {
        let wi = w[node.level];
        let up = w[node.level + 1] * wi * 4 + wi;
        let cat = (node.skips.len() + 1) * wi;
        total += up + conv3_params(cat, wi) + conv3_params(wi, wi);
    }
    total + w[0] * spec.out_channels + spec.out_channels
}

#[derive(Clone, Copy, Debug)]
struct DoubleConv {
    first: Conv2d,
    second: Conv2d,
}

impl DoubleConv {
    fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, rng: &mut R) -> Self {
        Self {
            first: Conv2d::same(store, &format!("{name}.conv1"), cin, cout, 3, rng),
            second: Conv2d::same(store, &format!("{name}.conv2"), cout, cout, 3, rng),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let a = self.first.forward(g, x)?;
        let a = g.activation(a, Activation::Relu);
        let b = self.second.forward(g, a)?;
        Ok(g.activation(b, Activation::Relu))
    }
}

#[derive(Clone, Debug)]
struct DecoderNode {
    level: usize,
    column: usize,
    skips: Vec<usize>,
    up: UpConv2x2,
    block: DoubleConv,
}

/// Anything that maps a 12-channel history to the next 4-channel snapshot.
pub trait StepModel {
    fn in_channels(&self) -> usize;
    fn out_channels(&self) -> usize;
    fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var>;
}

/// Layer handles of a UNet or UNet++; weights live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Predictor {
    spec: PredictorSpec,
    encoder: Vec<DoubleConv>,
    decoder: Vec<DecoderNode>,
    head: Conv2d,
}

impl Predictor {
    pub fn new<T: Scalar, R: Rng + ?Sized>(spec: &PredictorSpec, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let w = spec.widths();
        let encoder = (0..spec.depth)
            .map(|i| {
                let cin = if i == 0 { spec.in_channels } else { w[i - 1] };
                DoubleConv::new(store, &format!("enc{i}"), cin, w[i], rng)
            })
            .collect();
        let decoder = spec
            .nodes()
            .into_iter()
            .map(|n| {
                let name = format!("dec{}_{}", n.level, n.column);
                let wi = w[n.level];
                DecoderNode {
                    level: n.level,
                    column: n.column,
                    up: UpConv2x2::new(store, &format!("{name}.up"), w[n.level + 1], wi, rng),
                    block: DoubleConv::new(store, &name, (n.skips.len() + 1) * wi, wi, rng),
                    skips: n.skips,
                }
            })
            .collect();
        let head = Conv2d::same(store, "head", w[0], spec.out_channels, 1, rng);
        if spec.residual {
            // starts as persistence of the newest snapshot
            store.get_mut(head.weight).data_mut().fill(T::zero());
        }
        Ok(Self { spec: spec.clone(), encoder, decoder, head })
    }

    /// Fresh `f32` weights drawn from a ChaCha8 stream seeded with `seed`.
    pub fn seeded(spec: &PredictorSpec, seed: u64) -> Result<(Self, ParamStore<f32>)> {
        let mut store = ParamStore::new();
        let p = Self::new(spec, &mut store, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed))?;
        Ok((p, store))
    }

    pub fn spec(&self) -> &PredictorSpec {
        &self.spec
    }

    pub fn check_input_size(&self, height: usize, width: usize) -> Result<()> {
        let d = self.spec.divisor();
        if height % d != 0 || width % d != 0 || height == 0 || width == 0 {
            return Err(NnError::Indivisible { height, width, divisor: d }.into());
        }
        Ok(())
    }
}

impl StepModel for Predictor {
    fn in_channels(&self) -> usize {
        self.spec.in_channels
    }

    fn out_channels(&self) -> usize {
        self.spec.out_channels
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let dims = g.value(x).dims();
        if dims[0] != self.spec.in_channels {
            return Err(Error::invalid(format!("predictor expects {} channels, got {}", self.spec.in_channels, dims[0])));
        }
        self.check_input_size(dims[2], dims[3])?;
        let depth = self.spec.depth;
        // outputs[level][column]
        let mut outputs: Vec<Vec<Option<Var>>> = vec![vec![None; depth]; depth];
        let mut h = x;
        for (i, block) in self.encoder.iter().enumerate() {
            if i > 0 {
                h = g.maxpool2(h)?;
            }
            h = block.forward(g, h)?;
            outputs[i][0] = Some(h);
        }
        for node in &self.decoder {
            let below = outputs[node.level + 1][node.column - 1].expect("decoder order");
            let up = node.up.forward(g, below)?;
            let mut parts: Vec<Var> = node.skips.iter().map(|&c| outputs[node.level][c].expect("skip order")).collect();
            parts.push(up);
            let cat = g.concat(&parts)?;
            outputs[node.level][node.column] = Some(node.block.forward(g, cat)?);
        }
        let top = outputs[0][depth - 1].expect("final node");
        let out = self.head.forward(g, top)?;
        if !self.spec.residual {
            return Ok(out);
        }
        let c = self.spec.out_channels;
        let newest = g.slice_channels(x, (HISTORY - 1) * c, c)?;
        Ok(g.add(out, newest)?)
    }
}
