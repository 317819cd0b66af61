//! Field snapshots, simulation series, min-max scaling and window sampling.

use std::collections::HashSet;

use rockflow_nn::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of physical fields per snapshot.
pub const FIELD_COUNT: usize = 4;

/// Number of past snapshots stacked into a predictor input.
pub const HISTORY: usize = 3;

/// Storage order of the physical fields. This order is part of the file format.
pub const FIELD_NAMES: [&str; FIELD_COUNT] = ["concentration", "porosity", "velocity_x", "velocity_y"];

/// Channel names used for encoded (latent) datasets.
pub const LATENT_FIELD_NAMES: [&str; FIELD_COUNT] = ["latent_0", "latent_1", "latent_2", "latent_3"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Concentration,
    Porosity,
    VelocityX,
    VelocityY,
}

impl Field {
    pub const ALL: [Field; FIELD_COUNT] = [Field::Concentration, Field::Porosity, Field::VelocityX, Field::VelocityY];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        FIELD_NAMES[self.index()]
    }
}

/// One timestep of the four fields on an `height x width` grid, field-major, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSnapshot {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FieldSnapshot {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != FIELD_COUNT * height * width {
            return Err(Error::invalid(format!(
                "snapshot of {height}x{width} needs {} values, got {}",
                FIELD_COUNT * height * width,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at flat index {pos}")));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.0; FIELD_COUNT * height * width] }
    }

    /// Build from four separate grids in storage order.
    pub fn from_fields(height: usize, width: usize, fields: [&[f32]; FIELD_COUNT]) -> Result<Self> {
        let mut data = Vec::with_capacity(FIELD_COUNT * height * width);
        for f in fields {
            data.extend_from_slice(f);
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn field(&self, index: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[index * n..(index + 1) * n]
    }

    pub fn field_mut(&mut self, index: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[index * n..(index + 1) * n]
    }

    /// Checks the physical invariant that porosity lies in `[0, 1]`.
    pub fn check_physical(&self) -> Result<()> {
        let por = self.field(Field::Porosity.index());
        if let Some(v) = por.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("porosity {v} outside [0, 1]")));
        }
        Ok(())
    }

    /// Rectangular crop `[row, row + h) x [col, col + w)`.
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> FieldSnapshot {
        let mut data = Vec::with_capacity(FIELD_COUNT * h * w);
        for f in 0..FIELD_COUNT {
            let plane = self.field(f);
            for y in row..row + h {
                data.extend_from_slice(&plane[y * self.width + col..y * self.width + col + w]);
            }
        }
        FieldSnapshot { height: h, width: w, data }
    }

    /// `[4, 1, h, w]` tensor view for the networks.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec([FIELD_COUNT, 1, self.height, self.width], self.data.clone()).expect("snapshot dims")
    }

    /// Batch element `n` of a `[4, batch, h, w]` tensor.
    pub fn from_tensor(t: &Tensor<f32>, n: usize) -> Result<Self> {
        if t.channels() != FIELD_COUNT {
            return Err(Error::invalid(format!("expected {FIELD_COUNT} channels, got {}", t.channels())));
        }
        let item = t.batch_item(n);
        Self::new(t.height(), t.width(), item.into_vec())
    }
}

/// Stack equally sized snapshots into a `[4, B, h, w]` tensor.
pub fn stack_snapshots(snaps: &[&FieldSnapshot]) -> Result<Tensor<f32>> {
    let first = snaps.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let (h, w) = (first.height, first.width);
    if snaps.iter().any(|s| s.height != h || s.width != w) {
        return Err(Error::invalid("batch snapshots differ in size"));
    }
    let b = snaps.len();
    let hw = h * w;
    let mut out = Tensor::zeros([FIELD_COUNT, b, h, w]);
    let data = out.data_mut();
    for (n, s) in snaps.iter().enumerate() {
        for f in 0..FIELD_COUNT {
            data[(f * b + n) * hw..][..hw].copy_from_slice(s.field(f));
        }
    }
    Ok(out)
}

/// Split a `[4, B, h, w]` tensor back into snapshots.
pub fn unstack_snapshots(t: &Tensor<f32>) -> Result<Vec<FieldSnapshot>> {
    (0..t.batch()).map(|n| FieldSnapshot::from_tensor(t, n)).collect()
}

/// Ordered snapshots of one simulation plus metadata. Unit of train/validation splitting.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationSeries {
    pub sim_id: String,
    pub seed: u64,
    pub dx: f64,
    pub dt_snapshot: f64,
    snapshots: Vec<FieldSnapshot>,
}

impl SimulationSeries {
    pub fn new(sim_id: impl Into<String>, seed: u64, dx: f64, dt_snapshot: f64, snapshots: Vec<FieldSnapshot>) -> Result<Self> {
        let sim_id = sim_id.into();
        if snapshots.len() < HISTORY + 1 {
            return Err(Error::Simulation {
                sim_id,
                message: format!("needs at least {} snapshots, got {}", HISTORY + 1, snapshots.len()),
            });
        }
        let (h, w) = (snapshots[0].height, snapshots[0].width);
        if let Some(t) = snapshots.iter().position(|s| s.height != h || s.width != w) {
            return Err(Error::Simulation { sim_id, message: format!("snapshot {t} changes grid size") });
        }
        Ok(Self { sim_id, seed, dx, dt_snapshot, snapshots })
    }

    pub fn snapshots(&self) -> &[FieldSnapshot] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn height(&self) -> usize {
        self.snapshots[0].height
    }

    pub fn width(&self) -> usize {
        self.snapshots[0].width
    }

    /// Same metadata with replaced snapshots (e.g. scaled or encoded).
    pub fn with_snapshots(&self, snapshots: Vec<FieldSnapshot>) -> Result<Self> {
        Self::new(self.sim_id.clone(), self.seed, self.dx, self.dt_snapshot, snapshots)
    }

    /// Keep every `stride`-th snapshot starting from the first.
    pub fn subsample(&self, stride: usize) -> Result<Self> {
        let stride = stride.max(1);
        self.with_snapshots(self.snapshots.iter().step_by(stride).cloned().collect())
    }
}

/// Per-field global minimum and maximum for reversible `[0, 1]` scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalerParams {
    /// A field whose extrema coincide; it scales to all zeros.
    pub fn is_degenerate(&self, field: usize) -> bool {
        self.max[field] <= self.min[field]
    }

    pub fn degenerate_fields(&self) -> Vec<usize> {
        (0..self.min.len()).filter(|&f| self.is_degenerate(f)).collect()
    }

    fn check(&self) -> Result<()> {
        if self.min.len() != FIELD_COUNT || self.max.len() != FIELD_COUNT {
            return Err(Error::invalid(format!(
                "scaler has {}/{} min/max entries for {FIELD_COUNT} fields",
                self.min.len(),
                self.max.len()
            )));
        }
        Ok(())
    }

    pub fn scale_value(&self, field: usize, v: f64) -> f64 {
        if self.is_degenerate(field) {
            0.0
        } else {
            (v - self.min[field]) / (self.max[field] - self.min[field])
        }
    }

    pub fn invert_value(&self, field: usize, v: f64) -> f64 {
        if self.is_degenerate(field) {
            self.min[field]
        } else {
            self.min[field] + v * (self.max[field] - self.min[field])
        }
    }

    pub fn apply(&self, snapshot: &FieldSnapshot) -> Result<FieldSnapshot> {
        self.check()?;
        let mut out = snapshot.clone();
        for f in 0..FIELD_COUNT {
            for v in out.field_mut(f) {
                *v = self.scale_value(f, *v as f64) as f32;
            }
        }
        Ok(out)
    }

    pub fn invert(&self, scaled: &FieldSnapshot) -> Result<FieldSnapshot> {
        self.check()?;
        let mut out = scaled.clone();
        for f in 0..FIELD_COUNT {
            for v in out.field_mut(f) {
                *v = self.invert_value(f, *v as f64) as f32;
            }
        }
        Ok(out)
    }

    pub fn apply_series(&self, series: &SimulationSeries) -> Result<SimulationSeries> {
        let snaps = series.snapshots().iter().map(|s| self.apply(s)).collect::<Result<Vec<_>>>()?;
        series.with_snapshots(snaps)
    }
}

/// Fit global per-field extrema over every snapshot of the training series.
pub fn fit_scaler(train: &[SimulationSeries]) -> Result<ScalerParams> {
    if train.is_empty() {
        return Err(Error::invalid("cannot fit a scaler on zero simulations"));
    }
    let mut min = vec![f64::INFINITY; FIELD_COUNT];
    let mut max = vec![f64::NEG_INFINITY; FIELD_COUNT];
    for s in train {
        for snap in s.snapshots() {
            for f in 0..FIELD_COUNT {
                for &v in snap.field(f) {
                    min[f] = min[f].min(v as f64);
                    max[f] = max[f].max(v as f64);
                }
            }
        }
    }
    let params = ScalerParams { min, max };
    for f in params.degenerate_fields() {
        log::warn!("field `{}` is constant over the training split; it scales to zeros", FIELD_NAMES[f]);
    }
    Ok(params)
}

/// Split whole simulations into (train, validation) by id.
pub fn split_by_simulation(
    series: &[SimulationSeries],
    validation_ids: &[String],
) -> Result<(Vec<SimulationSeries>, Vec<SimulationSeries>)> {
    let known: HashSet<&str> = series.iter().map(|s| s.sim_id.as_str()).collect();
    if let Some(missing) = validation_ids.iter().find(|id| !known.contains(id.as_str())) {
        return Err(Error::invalid(format!("validation simulation `{missing}` not in dataset")));
    }
    let (val, train): (Vec<_>, Vec<_>) = series.iter().cloned().partition(|s| validation_ids.contains(&s.sim_id));
    Ok((train, val))
}

/// How patch origins are laid out along each axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchLayout {
    pub patch_size: usize,
    /// Distance between neighbouring origins; equal to `patch_size` for non-overlapping tiling.
    pub stride: usize,
}

impl PatchLayout {
    pub fn tiling(patch_size: usize) -> Self {
        Self { patch_size, stride: patch_size }
    }
}

/// Origins along one axis: a uniform grid with the last origin shifted inward to fit.
pub fn axis_origins(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let mut out: Vec<usize> = (0..).map(|k| k * stride).take_while(|&o| o + patch <= extent).collect();
    if out.last().map_or(true, |&o| o + patch < extent) && patch <= extent {
        out.push(extent - patch);
    }
    out.dedup();
    out
}

/// Address of one training window: series, first history index, spatial crop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct WindowIndex {
    pub series: usize,
    pub start: usize,
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
    pub horizon: usize,
}

/// Number of complete windows in a series of `len` snapshots.
pub fn temporal_window_count(len: usize, horizon: usize) -> usize {
    (len + 1).saturating_sub(HISTORY + horizon)
}

/// Every spatial patch at every valid temporal window of every series.
pub fn plan_patches(series: &[SimulationSeries], layout: PatchLayout, horizon: usize) -> Result<Vec<WindowIndex>> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    let mut out = Vec::new();
    for (si, s) in series.iter().enumerate() {
        let (h, w) = (s.height(), s.width());
        if layout.patch_size > h.min(w) || layout.patch_size == 0 {
            return Err(Error::invalid(format!(
                "patch size {} does not fit the {h}x{w} grid of `{}`",
                layout.patch_size, s.sim_id
            )));
        }
        let rows = axis_origins(h, layout.patch_size, layout.stride);
        let cols = axis_origins(w, layout.patch_size, layout.stride);
        for start in 0..temporal_window_count(s.len(), horizon) {
            for &row in &rows {
                for &col in &cols {
                    out.push(WindowIndex {
                        series: si,
                        start,
                        row,
                        col,
                        height: layout.patch_size,
                        width: layout.patch_size,
                        horizon,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Whole-domain windows (one per temporal window).
pub fn plan_whole_domain(series: &[SimulationSeries], horizon: usize) -> Result<Vec<WindowIndex>> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    let mut out = Vec::new();
    for (si, s) in series.iter().enumerate() {
        for start in 0..temporal_window_count(s.len(), horizon) {
            out.push(WindowIndex { series: si, start, row: 0, col: 0, height: s.height(), width: s.width(), horizon });
        }
    }
    Ok(out)
}

/// Materialised window: 12-channel history plus `horizon` targets.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    /// `[12, 1, h, w]`: fields of `t-2`, then `t-1`, then `t`.
    pub input: Tensor<f32>,
    /// Each `[4, 1, h, w]`.
    pub targets: Vec<Tensor<f32>>,
    pub row: usize,
    pub col: usize,
    pub size: (usize, usize),
}

impl WindowIndex {
    pub fn materialize(&self, series: &[SimulationSeries]) -> WindowSample {
        let s = &series[self.series];
        let crop = |t: usize| s.snapshots()[t].crop(self.row, self.col, self.height, self.width);
        let mut input = Vec::with_capacity(HISTORY * FIELD_COUNT * self.height * self.width);
        for t in self.start..self.start + HISTORY {
            input.extend_from_slice(crop(t).data());
        }
        let dims = [HISTORY * FIELD_COUNT, 1, self.height, self.width];
        let targets = (0..self.horizon)
            .map(|k| crop(self.start + HISTORY + k).to_tensor())
            .collect();
        WindowSample {
            input: Tensor::from_vec(dims, input).expect("window dims"),
            targets,
            row: self.row,
            col: self.col,
            size: (self.height, self.width),
        }
    }
}

/// `sample_patches` in materialised form; see [`plan_patches`] for the index-only variant.
pub fn sample_patches(
    series: &[SimulationSeries],
    layout: PatchLayout,
    horizon: usize,
) -> Result<Vec<WindowSample>> {
    Ok(plan_patches(series, layout, horizon)?.iter().map(|w| w.materialize(series)).collect())
}

/// Stack windows into batched tensors: input `[12, B, h, w]`, targets `horizon x [4, B, h, w]`.
pub fn batch_windows(series: &[SimulationSeries], windows: &[WindowIndex]) -> Result<(Tensor<f32>, Vec<Tensor<f32>>)> {
    let first = windows.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let (h, w, horizon) = (first.height, first.width, first.horizon);
    if windows.iter().any(|x| x.height != h || x.width != w || x.horizon != horizon) {
        return Err(Error::invalid("batch windows differ in size or horizon"));
    }
    let b = windows.len();
    let hw = h * w;
    let mut input = Tensor::zeros([HISTORY * FIELD_COUNT, b, h, w]);
    let mut targets: Vec<Tensor<f32>> = (0..horizon).map(|_| Tensor::zeros([FIELD_COUNT, b, h, w])).collect();
    for (n, win) in windows.iter().enumerate() {
        let s = &series[win.series];
        for k in 0..HISTORY + horizon {
            let snap = &s.snapshots()[win.start + k];
            for f in 0..FIELD_COUNT {
                let plane = snap.field(f);
                let (dst, channel) = if k < HISTORY {
                    (&mut input, k * FIELD_COUNT + f)
                } else {
                    (&mut targets[k - HISTORY], f)
                };
                let nb = dst.batch();
                let base = (channel * nb + n) * hw;
                let out = &mut dst.data_mut()[base..base + hw];
                for y in 0..h {
                    let src = &plane[(win.row + y) * snap.width() + win.col..][..w];
                    out[y * w..(y + 1) * w].copy_from_slice(src);
                }
            }
        }
    }
    Ok((input, targets))
}
