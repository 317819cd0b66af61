use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::kernels::ConvGeometry;
use crate::params::{he_uniform, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 2D convolution with square kernel and channel bias.
#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geometry: ConvGeometry,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let dims = [out_channels, in_channels, kernel, kernel];
        let weight = store.add(format!("{name}.weight"), he_uniform(dims, in_channels * kernel * kernel, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([out_channels, 1, 1, 1]));
        Self { weight, bias, geometry: ConvGeometry { kernel, stride, padding }, in_channels, out_channels }
    }

    /// Stride 1 with "same" zero padding.
    pub fn same<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        Self::new(store, name, in_channels, out_channels, kernel, 1, kernel / 2, rng)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        g.conv2d(x, self.weight, Some(self.bias), self.geometry)
    }

    pub fn parameter_count(&self) -> usize {
        let k = self.geometry.kernel;
        self.out_channels * self.in_channels * k * k + self.out_channels
    }
}

/// Kernel-2, stride-2 transposed convolution.
#[derive(Clone, Copy, Debug)]
pub struct UpConv2x2 {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl UpConv2x2 {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), he_uniform([in_channels, out_channels, 2, 2], in_channels, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([out_channels, 1, 1, 1]));
        Self { weight, bias, in_channels, out_channels }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        g.upconv2x2(x, self.weight, Some(self.bias))
    }

    pub fn parameter_count(&self) -> usize {
        self.in_channels * self.out_channels * 4 + self.out_channels
    }
}
