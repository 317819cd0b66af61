//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass. Calling
//! [`Graph::backward`] consumes the tape and returns parameter gradients;
//! intermediate values are released as soon as their gradient has been
//! propagated, so peak memory is reached at the end of the forward pass.

use std::sync::Arc;

use crate::error::{NnError, Result};
use crate::kernels::{self, ConvGeometry};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
}

impl Activation {
    fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(T::zero()),
            Activation::LeakyRelu(a) => {
                if v > T::zero() {
                    v
                } else {
                    v * T::from_f64_lossy(a)
                }
            }
            Activation::Sigmoid => T::one() / (T::one() + (-v).exp()),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu(a) => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::from_f64_lossy(a)
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Tanh => T::one() - y * y,
        }
    }
}

enum Op {
    Input,
    Param(ParamId),
    Conv { x: Var, w: Var, b: Option<Var>, geo: ConvGeometry },
    UpConv { x: Var, w: Var, b: Option<Var> },
    MaxPool { x: Var, arg: Vec<u8> },
    Act { x: Var, act: Activation },
    Concat { parts: Vec<Var> },
    Slice { x: Var, start: usize },
    GlobalAvgPool { x: Var },
    BoundaryMse { pred: Var, target: Var, lambda: f64 },
    Bce { logits: Var, label: f64, eps: f64 },
    WeightedSum { terms: Vec<(Var, f64)> },
    Add { a: Var, b: Var },
}

struct Node<T> {
    value: Option<Arc<Tensor<T>>>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'s, T: Scalar> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    trainable: Vec<bool>,
}

/// Gradients produced by one backward pass.
pub struct Gradients<T> {
    params: Vec<Option<Tensor<T>>>,
    inputs: Vec<(Var, Tensor<T>)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(id.index()).and_then(|g| g.as_ref())
    }

    pub fn input(&self, v: Var) -> Option<&Tensor<T>> {
        self.inputs.iter().find(|(var, _)| *var == v).map(|(_, t)| t)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().flatten().all(|g| g.is_finite())
    }
}

impl<'s, T: Scalar> Graph<'s, T> {
    /// Graph whose parameters receive gradients.
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self { store, nodes: Vec::new(), param_vars: vec![None; store.len()], trainable: vec![true; store.len()] }
    }

    /// Graph in which only parameters accepted by `select` receive gradients;
    /// gradients still flow through the others to reach earlier layers.
    pub fn with_trainable(store: &'s ParamStore<T>, select: impl Fn(ParamId, &str) -> bool) -> Self {
        let trainable = store.ids().map(|id| select(id, store.name(id))).collect();
        Self { trainable, ..Self::new(store) }
    }

    /// Graph with frozen parameters; used for inference and detached passes.
    pub fn frozen(store: &'s ParamStore<T>) -> Self {
        Self { trainable: vec![false; store.len()], ..Self::new(store) }
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: Some(Arc::new(value)), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.nodes[v.0].value.as_ref().expect("value already released")
    }

    fn shared(&self, v: Var) -> Arc<Tensor<T>> {
        Arc::clone(self.nodes[v.0].value.as_ref().expect("value already released"))
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Leaf whose gradient is reported by [`Gradients::input`].
    pub fn input_with_grad(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let value = self.store.shared(id);
        self.nodes.push(Node { value: Some(value), op: Op::Param(id), requires_grad: self.trainable[id.index()] });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn conv2d(&mut self, x: Var, weight: ParamId, bias: Option<ParamId>, geo: ConvGeometry) -> Result<Var> {
        let w = self.param(weight);
        let b = bias.map(|id| self.param(id));
        let out = kernels::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geo)?;
        let rg = self.needs(x) || self.needs(w);
        Ok(self.push(out, Op::Conv { x, w, b, geo }, rg))
    }

    pub fn upconv2x2(&mut self, x: Var, weight: ParamId, bias: Option<ParamId>) -> Result<Var> {
        let w = self.param(weight);
        let b = bias.map(|id| self.param(id));
        let out = kernels::upconv2x2_forward(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let rg = self.needs(x) || self.needs(w);
        Ok(self.push(out, Op::UpConv { x, w, b }, rg))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (out, arg) = kernels::maxpool2_forward(self.value(x))?;
        let rg = self.needs(x);
        Ok(self.push(out, Op::MaxPool { x, arg }, rg))
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        if act == Activation::Identity {
            return x;
        }
        let out = self.value(x).map(|v| act.apply(v));
        let rg = self.needs(x);
        self.push(out, Op::Act { x, act }, rg)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let out = {
            let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
            Tensor::concat_channels(&tensors)?
        };
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::Concat { parts: parts.to_vec() }, rg))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(x);
        if start + len > src.channels() {
            return Err(NnError::Shape(format!(
                "channel slice {start}..{} out of range for {:?}",
                start + len,
                src.dims()
            )));
        }
        let out = src.channel_slice(start, len);
        let rg = self.needs(x);
        Ok(self.push(out, Op::Slice { x, start }, rg))
    }

    /// Mean over the spatial axes: `[c, n, h, w] -> [c, n, 1, 1]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let [c, n, h, w] = src.dims();
        let hw = h * w;
        let inv = T::from_f64_lossy(1.0 / hw as f64);
        let data = src.data().chunks(hw).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let out = Tensor::from_vec([c, n, 1, 1], data).expect("pool dims");
        let rg = self.needs(x);
        self.push(out, Op::GlobalAvgPool { x }, rg)
    }

    /// `MSE(pred, target) + lambda * MSE restricted to the outer 1-pixel ring`.
    ///
    /// Both means are over every element they cover (channels and batch included).
    pub fn boundary_mse(&mut self, pred: Var, target: Var, lambda: f64) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.dims() != t.dims() {
            return Err(NnError::Shape(format!("loss shapes {:?} vs {:?}", p.dims(), t.dims())));
        }
        let [_, _, h, w] = p.dims();
        let (mut all, mut ring) = (0.0f64, 0.0f64);
        let mut ring_count = 0usize;
        for (plane_p, plane_t) in p.data().chunks(h * w).zip(t.data().chunks(h * w)) {
            for y in 0..h {
                for x in 0..w {
                    let d = (plane_p[y * w + x] - plane_t[y * w + x]).to_f64_lossy();
                    all += d * d;
                    if on_ring(y, x, h, w) {
                        ring += d * d;
                        ring_count += 1;
                    }
                }
            }
        }
        let mut loss = all / p.len() as f64;
        if lambda != 0.0 {
            loss += lambda * ring / ring_count as f64;
        }
        let rg = self.needs(pred) || self.needs(target);
        Ok(self.push(Tensor::scalar(T::from_f64_lossy(loss)), Op::BoundaryMse { pred, target, lambda }, rg))
    }

    /// Binary cross-entropy of `sigmoid(logits)` against a constant label,
    /// with probabilities clamped to `[eps, 1 - eps]`.
    pub fn bce_with_logits(&mut self, logits: Var, label: f64, eps: f64) -> Var {
        let z = self.value(logits);
        let n = z.len() as f64;
        let loss: f64 = z
            .data()
            .iter()
            .map(|&v| {
                let p = clamp_prob(sigmoid(v.to_f64_lossy()), eps);
                -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / n;
        let rg = self.needs(logits);
        self.push(Tensor::scalar(T::from_f64_lossy(loss)), Op::Bce { logits, label, eps }, rg)
    }

    /// Elementwise sum of two tensors of equal shape.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.dims() != y.dims() {
            return Err(NnError::Shape(format!("add shapes {:?} vs {:?}", x.dims(), y.dims())));
        }
        let mut out = x.clone();
        out.add_assign(y);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    /// `sum_i weight_i * term_i` over scalar terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let total: f64 = terms.iter().map(|&(v, w)| w * self.value(v).item().to_f64_lossy()).sum();
        let rg = terms.iter().any(|&(v, _)| self.needs(v));
        self.push(Tensor::scalar(T::from_f64_lossy(total)), Op::WeightedSum { terms: terms.to_vec() }, rg)
    }

    /// Number of recorded nodes (for tests and diagnostics).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(mut self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward from non-scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        let mut out = Gradients { params: vec![None; self.store.len()], inputs: Vec::new() };

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                self.nodes[i].value = None;
                continue;
            };
            if !self.nodes[i].requires_grad {
                self.nodes[i].value = None;
                continue;
            }
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Input);
            match op {
                Op::Input => out.inputs.push((Var(i), g)),
                Op::Param(id) => out.params[id.index()] = Some(g),
                Op::Conv { x, w, b, geo } => {
                    let xv = self.shared(x);
                    let wv = self.shared(w);
                    let r = kernels::conv2d_backward(&xv, &wv, &g, geo, self.needs(x));
                    self.accumulate(&mut grads, w, r.weight);
                    if let Some(b) = b {
                        self.accumulate(&mut grads, b, r.bias);
                    }
                    if let Some(dx) = r.input {
                        self.accumulate(&mut grads, x, dx);
                    }
                }
                Op::UpConv { x, w, b } => {
                    let xv = self.shared(x);
                    let wv = self.shared(w);
                    let r = kernels::upconv2x2_backward(&xv, &wv, &g, self.needs(x));
                    self.accumulate(&mut grads, w, r.weight);
                    if let Some(b) = b {
                        self.accumulate(&mut grads, b, r.bias);
                    }
                    if let Some(dx) = r.input {
                        self.accumulate(&mut grads, x, dx);
                    }
                }
                Op::MaxPool { x, arg } => {
                    let dims = self.value(x).dims();
                    let dx = kernels::maxpool2_backward(dims, &arg, &g);
                    self.accumulate(&mut grads, x, dx);
                }
                Op::Act { x, act } => {
                    let y = self.shared(Var(i));
                    let mut dx = g;
                    for (d, &yv) in dx.data_mut().iter_mut().zip(y.data()) {
                        *d *= act.derivative_from_output(yv);
                    }
                    self.accumulate(&mut grads, x, dx);
                }
                Op::Concat { parts } => {
                    let mut offset = 0;
                    for p in parts {
                        let c = self.value(p).channels();
                        if self.needs(p) {
                            let part = g.channel_slice(offset, c);
                            self.accumulate(&mut grads, p, part);
                        }
                        offset += c;
                    }
                }
                Op::Slice { x, start } => {
                    let dims = self.value(x).dims();
                    let mut dx = Tensor::zeros(dims);
                    let plane = dx.plane_len();
                    dx.data_mut()[start * plane..start * plane + g.len()].copy_from_slice(g.data());
                    self.accumulate(&mut grads, x, dx);
                }
                Op::GlobalAvgPool { x } => {
                    let dims = self.value(x).dims();
                    let hw = dims[2] * dims[3];
                    let inv = T::from_f64_lossy(1.0 / hw as f64);
                    let mut dx = Tensor::zeros(dims);
                    for (chunk, &gv) in dx.data_mut().chunks_mut(hw).zip(g.data()) {
                        chunk.fill(gv * inv);
                    }
                    self.accumulate(&mut grads, x, dx);
                }
                Op::BoundaryMse { pred, target, lambda } => {
                    let gs = g.item().to_f64_lossy();
                    let (p, t) = (self.shared(pred), self.shared(target));
                    let [_, _, h, w] = p.dims();
                    let ring_count = ring_len(h, w) * (p.len() / (h * w));
                    let scale_all = 2.0 * gs / p.len() as f64;
                    let scale_ring = 2.0 * gs * lambda / ring_count as f64;
                    let mut dp = Tensor::zeros(p.dims());
                    for ((dpl, ppl), tpl) in dp
                        .data_mut()
                        .chunks_mut(h * w)
                        .zip(p.data().chunks(h * w))
                        .zip(t.data().chunks(h * w))
                    {
                        for y in 0..h {
                            for x in 0..w {
                                let k = y * w + x;
                                let d = (ppl[k] - tpl[k]).to_f64_lossy();
                                let mut s = scale_all;
                                if lambda != 0.0 && on_ring(y, x, h, w) {
                                    s += scale_ring;
                                }
                                dpl[k] = T::from_f64_lossy(s * d);
                            }
                        }
                    }
                    if self.needs(target) {
                        let dt = dp.map(|v| -v);
                        self.accumulate(&mut grads, target, dt);
                    }
                    if self.needs(pred) {
                        self.accumulate(&mut grads, pred, dp);
                    }
                }
                Op::Bce { logits, label, eps } => {
                    let gs = g.item().to_f64_lossy();
                    let z = self.shared(logits);
                    let n = z.len() as f64;
                    let dz = z.map(|v| {
                        let p = sigmoid(v.to_f64_lossy());
                        if p < eps || p > 1.0 - eps {
                            // clamped region is flat
                            T::zero()
                        } else {
                            T::from_f64_lossy(gs * (p - label) / n)
                        }
                    });
                    self.accumulate(&mut grads, logits, dz);
                }
                Op::WeightedSum { terms } => {
                    for (v, wgt) in terms {
                        if self.needs(v) {
                            let t = Tensor::scalar(g.item() * T::from_f64_lossy(wgt));
                            self.accumulate(&mut grads, v, t);
                        }
                    }
                }
                Op::Add { a, b } => {
                    if self.needs(a) {
                        self.accumulate(&mut grads, a, g.clone());
                    }
                    self.accumulate(&mut grads, b, g);
                }
            }
            self.nodes[i].value = None;
        }
        out
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

fn on_ring(y: usize, x: usize, h: usize, w: usize) -> bool {
    y == 0 || x == 0 || y + 1 == h || x + 1 == w
}

/// Number of pixels on the outer 1-pixel ring of an `h x w` grid.
pub fn ring_len(h: usize, w: usize) -> usize {
    if h <= 2 || w <= 2 {
        h * w
    } else {
        2 * (h + w) - 4
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn clamp_prob(p: f64, eps: f64) -> f64 {
    p.clamp(eps, 1.0 - eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[(&str, Tensor<f64>)]) -> (ParamStore<f64>, Vec<ParamId>) {
        let mut s = ParamStore::new();
        let ids = values.iter().map(|(n, t)| s.add(*n, t.clone())).collect();
        (s, ids)
    }

    #[test]
    fn ring_length_counts_perimeter_once() {
        assert_eq!(ring_len(4, 4), 12);
        assert_eq!(ring_len(64, 64), 252);
        assert_eq!(ring_len(2, 5), 10);
    }

    #[test]
    fn corner_error_on_4x4_toy() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let mut p = Tensor::zeros([1, 1, 4, 4]);
        p.set(0, 0, 0, 0, 1.0);
        let pv = g.input(p);
        let tv = g.input(Tensor::zeros([1, 1, 4, 4]));
        let l = g.boundary_mse(pv, tv, 1.0).unwrap();
        assert!((g.value(l).item() - (1.0 / 16.0 + 1.0 / 12.0)).abs() < 1e-15);
    }

    #[test]
    fn shared_parameter_gradients_accumulate() {
        // y = conv(conv(x)) with the same 1x1 weight w: d/dw (w^2 x) = 2 w x
        let (store, ids) = store_with(&[("w", Tensor::full([1, 1, 1, 1], 3.0))]);
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::full([1, 1, 1, 1], 2.0));
        let geo = ConvGeometry { kernel: 1, stride: 1, padding: 0 };
        let y1 = g.conv2d(x, ids[0], None, geo).unwrap();
        let y2 = g.conv2d(y1, ids[0], None, geo).unwrap();
        let l = g.weighted_sum(&[(y2, 1.0)]);
        assert_eq!(g.value(l).item(), 18.0);
        let grads = g.backward(l);
        assert_eq!(grads.param(ids[0]).unwrap().item(), 12.0);
    }

    #[test]
    fn frozen_graph_yields_no_param_grads() {
        let (store, ids) = store_with(&[("w", Tensor::full([1, 1, 1, 1], 3.0))]);
        let mut g = Graph::frozen(&store);
        let x = g.input_with_grad(Tensor::full([1, 1, 1, 1], 2.0));
        let geo = ConvGeometry { kernel: 1, stride: 1, padding: 0 };
        let y = g.conv2d(x, ids[0], None, geo).unwrap();
        let l = g.weighted_sum(&[(y, 1.0)]);
        let grads = g.backward(l);
        assert!(grads.param(ids[0]).is_none());
        assert_eq!(grads.input(x).unwrap().item(), 3.0);
    }

    #[test]
    fn trainable_subset_passes_gradient_through_frozen_layers() {
        // l = b * (a * x): only `a` is trainable, so its gradient must cross `b`
        let (store, ids) = store_with(&[("enc.a", Tensor::full([1, 1, 1, 1], 3.0)), ("disc.b", Tensor::full([1, 1, 1, 1], 5.0))]);
        let mut g = Graph::with_trainable(&store, |_, name| name.starts_with("enc."));
        let x = g.input(Tensor::full([1, 1, 1, 1], 2.0));
        let geo = ConvGeometry { kernel: 1, stride: 1, padding: 0 };
        let h = g.conv2d(x, ids[0], None, geo).unwrap();
        let y = g.conv2d(h, ids[1], None, geo).unwrap();
        let l = g.weighted_sum(&[(y, 1.0)]);
        let grads = g.backward(l);
        assert_eq!(grads.param(ids[0]).unwrap().item(), 10.0);
        assert!(grads.param(ids[1]).is_none());
    }

    #[test]
    fn bce_saturates_at_clamp_floor() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        // sigmoid(-40) is far below 1e-7, so -log clamps to -log(1e-7)
        let z = g.input_with_grad(Tensor::full([1, 1, 1, 1], -40.0));
        let l = g.bce_with_logits(z, 1.0, 1e-7);
        assert!((g.value(l).item() - (-(1e-7f64).ln())).abs() < 1e-9);
        let grads = g.backward(l);
        assert_eq!(grads.input(z).unwrap().item(), 0.0);
    }

    #[test]
    fn bce_gradient_is_p_minus_label() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let z = g.input_with_grad(Tensor::from_vec([1, 2, 1, 1], vec![0.3, -0.7]).unwrap());
        let l = g.bce_with_logits(z, 0.0, 1e-7);
        let grads = g.backward(l);
        let dz = grads.input(z).unwrap();
        assert!((dz.data()[0] - sigmoid(0.3) / 2.0).abs() < 1e-12);
        assert!((dz.data()[1] - sigmoid(-0.7) / 2.0).abs() < 1e-12);
    }
}
